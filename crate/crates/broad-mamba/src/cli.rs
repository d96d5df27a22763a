//! Command-line entry points. Every subcommand returns a process exit code:
//! `0` success, `2` configuration/file problems, `3` numeric aborts.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench;
use crate::data::{EmotionBatch, SyntheticTask};
use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::io::{checkpoint, dataset, tensor};
use crate::model::Model;
use crate::ssm::{ContinuousSsm, DiscreteSsm};
use crate::train::{self, EpochRecord, TrainSettings};

#[derive(Parser)]
#[command(
    name = "broad-mamba",
    about = "Bidirectional SSM sequence models with broad learning and probability-guided fusion",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic or exported conversations and write checkpoint,
    /// metrics history, and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print the metrics table.
    Eval(EvalArgs),
    /// Time naive/FFT convolution and the scan over a length sweep.
    Bench(BenchArgs),
    /// Finite-difference check of every gradient of a small pipeline.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset directory.
    Gendata(GendataArgs),
    /// Materialize an SSM convolution kernel into a tensor file.
    KernelDump(KernelDumpArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint/, metrics.csv, config.txt.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config modalities, e.g. `t,a` (ablation subsetting).
    #[arg(long)]
    modalities: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; omitted means the held-out synthetic split from
    /// the checkpoint config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional output directory for metrics.csv and the config echo.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sequence lengths.
    #[arg(long, default_value = "1024,4096,16384,65536")]
    lengths: String,
    /// Timed repetitions per length (median is reported).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Discarded warmup runs per length.
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory for bench.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Config for the checked pipeline; omitted uses a small built-in one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GendataArgs {
    /// Config carrying the synthetic task fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory to write labels.csv and the dialogue tensors into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct KernelDumpArgs {
    /// Output tensor file.
    #[arg(long)]
    out: PathBuf,
    /// Kernel length.
    #[arg(long, default_value_t = 64)]
    length: usize,
    /// Explicit single-state discrete system: state transition.
    #[arg(long)]
    abar: Option<f64>,
    /// Explicit single-state discrete system: input gain.
    #[arg(long, requires = "abar")]
    bbar: Option<f64>,
    /// Explicit single-state discrete system: output gain.
    #[arg(long, requires = "abar")]
    cout: Option<f64>,
    /// Config for the seeded random system (ignored with --abar).
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Parses `args` and runs the chosen subcommand, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version to stdout with status 0 via this path
            return e.exit_code_with_print();
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Gendata(args) => cmd_gendata(args),
        Command::KernelDump(args) => cmd_kernel_dump(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => 3,
                _ => 2,
            }
        }
    }
}

trait ClapExit {
    fn exit_code_with_print(self) -> i32;
}

impl ClapExit for clap::Error {
    fn exit_code_with_print(self) -> i32 {
        use clap::error::ErrorKind;
        let code = match self.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
            _ => 2,
        };
        let _ = self.print();
        code
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_overrides(
    config: &mut RunConfig,
    seed: Option<u64>,
    modalities: &Option<String>,
) -> Result<()> {
    if let Some(s) = seed {
        config.set("seed", &s.to_string())?;
    }
    if let Some(m) = modalities {
        config.set("modalities", m)?;
    }
    Ok(())
}

/// Synthetic train/eval splits: the eval split continues the same stream,
/// so it never overlaps the training draw.
fn synthetic_splits(config: &RunConfig) -> Result<(Vec<EmotionBatch>, Vec<EmotionBatch>)> {
    let task = SyntheticTask::new(config.synthetic_spec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let train_set = task.sample(config.dialogues, &mut rng);
    let eval_set = task.sample(config.eval_dialogues, &mut rng);
    Ok((train_set, eval_set))
}

fn metrics_history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,L_norm,L_emo,L,W-Acc,W-F1\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.l_norm, r.l_emo, r.total, r.w_acc, r.w_f1
        ));
    }
    out
}

fn widths_from_data(config: &mut RunConfig, data: &[EmotionBatch]) -> Result<()> {
    use crate::embedding::Modality;
    let first = data.first().ok_or(Error::EmptyDataset)?;
    config.set("d_text", &first.width(Modality::Text).to_string())?;
    config.set("d_audio", &first.width(Modality::Audio).to_string())?;
    config.set("d_video", &first.width(Modality::Video).to_string())?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, args.seed, &args.modalities)?;
    let (train_set, eval_set) = if config.train_data.is_empty() {
        synthetic_splits(&config)?
    } else {
        let train_set = dataset::load_dataset(Path::new(&config.train_data), config.classes)?;
        let eval_set = if config.eval_data.is_empty() {
            Vec::new()
        } else {
            dataset::load_dataset(Path::new(&config.eval_data), config.classes)?
        };
        widths_from_data(&mut config, &train_set)?;
        (train_set, eval_set)
    };
    let mut model = Model::init(config.model_config())?;
    let settings = TrainSettings {
        log: true,
        ..config.train_settings()
    };
    let records = train::train(&mut model, &train_set, &eval_set, &settings)?;
    // checkpoint precision is f32; round first so reloads reproduce exactly
    model.quantize_to_f32();
    std::fs::create_dir_all(&args.out)?;
    tensor::write_atomic(&args.out.join("config.txt"), config.to_text().as_bytes())?;
    tensor::write_atomic(
        &args.out.join("metrics.csv"),
        metrics_history_csv(&records).as_bytes(),
    )?;
    checkpoint::save_checkpoint(&args.out.join("checkpoint"), &model, &config)?;
    let final_metrics = train::evaluate(
        &model,
        if eval_set.is_empty() {
            &train_set
        } else {
            &eval_set
        },
    )?;
    println!(
        "done: {} epochs, {} parameters, held-out W-Acc {:.4}, W-F1 {:.4}",
        records.len(),
        final_metrics.param_count,
        final_metrics.weighted_accuracy,
        final_metrics.weighted_f1
    );
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let (config, model) = checkpoint::load_checkpoint(&args.checkpoint)?;
    let data = match &args.data {
        Some(dir) => dataset::load_dataset(dir, config.classes)?,
        None => synthetic_splits(&config)?.1,
    };
    let start = std::time::Instant::now();
    let mut report = train::evaluate(&model, &data)?;
    report.wall_seconds = start.elapsed().as_secs_f64();
    println!("{}", report.table());
    println!("parameters: {}", report.param_count);
    println!("evaluation seconds: {:.3}", report.wall_seconds);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        tensor::write_atomic(&out.join("metrics.csv"), report.to_csv().as_bytes())?;
        tensor::write_atomic(&out.join("config.txt"), config.to_text().as_bytes())?;
    }
    Ok(0)
}

fn cmd_bench(args: BenchArgs) -> Result<i32> {
    let lengths: Vec<usize> = args
        .lengths
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad length '{s}'")))
        })
        .collect::<Result<_>>()?;
    if args.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let points = bench::run(&lengths, args.repeats, args.warmup, args.seed)?;
    let csv = bench::to_csv(&points);
    print!("{csv}");
    let naive: Vec<(usize, u128)> = points.iter().map(|p| (p.length, p.naive_ns)).collect();
    let fft: Vec<(usize, u128)> = points.iter().map(|p| (p.length, p.fft_ns)).collect();
    let scan: Vec<(usize, u128)> = points.iter().map(|p| (p.length, p.scan_ns)).collect();
    if points.len() >= 2 {
        println!(
            "log-log slopes: naive {:.3}, fft {:.3}, scan {:.3}",
            bench::log_log_slope(&naive),
            bench::log_log_slope(&fft),
            bench::log_log_slope(&scan)
        );
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        tensor::write_atomic(&out.join("bench.csv"), csv.as_bytes())?;
    }
    Ok(0)
}

/// Small pipeline used when `gradcheck` runs without a config.
fn gradcheck_config(seed: u64) -> RunConfig {
    let mut config = RunConfig::default();
    for (k, v) in [
        ("classes", "3"),
        ("d_m", "4"),
        ("state_size", "3"),
        ("layers", "1"),
        ("n_feature_nodes", "2"),
        ("m_enhance_nodes", "2"),
        ("d_z", "3"),
        ("d_h", "3"),
        ("h_fusion", "4"),
        ("h_classifier", "5"),
        ("utterances", "6"),
        ("d_text", "6"),
        ("d_audio", "5"),
        ("d_video", "4"),
        ("dialogues", "1"),
        ("sigma", "0.3"),
    ] {
        config.set(k, v).expect("static keys");
    }
    config.seed = seed;
    config
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => gradcheck_config(args.seed.unwrap_or(42)),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let task = SyntheticTask::new(config.synthetic_spec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let batch = task.sample(1, &mut rng).pop().expect("one dialogue");
    let mut model = Model::init(config.model_config())?;
    let report = train::grad_check(&mut model, &batch, args.eps)?;
    let pass = report.max_rel_err <= 1e-4;
    println!(
        "{}: max rel err {:.3e} at {} ({} scalars checked)",
        if pass { "PASS" } else { "FAIL" },
        report.max_rel_err,
        report.worst_param,
        report.checked
    );
    Ok(if pass { 0 } else { 3 })
}

fn cmd_gendata(args: GendataArgs) -> Result<i32> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, args.seed, &None)?;
    let (train_set, _) = synthetic_splits(&config)?;
    dataset::save_dataset(&args.out, &train_set)?;
    tensor::write_atomic(&args.out.join("config.txt"), config.to_text().as_bytes())?;
    println!(
        "wrote {} dialogues ({} utterances each) to {}",
        config.dialogues,
        config.utterances,
        args.out.display()
    );
    Ok(0)
}

fn cmd_kernel_dump(args: KernelDumpArgs) -> Result<i32> {
    if args.length == 0 {
        return Err(Error::Config("length must be >= 1".into()));
    }
    let kernel = match args.abar {
        Some(abar) => {
            let bbar = args.bbar.unwrap_or(1.0);
            let cout = args.cout.unwrap_or(1.0);
            let disc =
                DiscreteSsm::from_parts(array![[abar]], array![[bbar]], array![[cout]], array![0.0])?;
            disc.materialize_kernel(args.length)?
        }
        None => {
            let config = load_config(&args.config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let sys = ContinuousSsm::init(config.state_size, config.d_m, &mut rng);
            sys.discretize(config.discretization)?
                .materialize_kernel(args.length)?
        }
    };
    let taps = kernel.taps();
    let data: Vec<f32> = taps.iter().map(|&v| v as f32).collect();
    tensor::write_tensor(&args.out, &[taps.nrows(), taps.ncols()], &data)?;
    println!(
        "wrote {} x {} kernel to {} (tap 0 = {:.6})",
        taps.nrows(),
        taps.ncols(),
        args.out.display(),
        taps[[0, 0]]
    );
    Ok(0)
}
