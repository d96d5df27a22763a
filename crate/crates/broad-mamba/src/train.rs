//! Training loop, evaluation, finite-difference gradient checking, and the
//! fusion ablation helpers.
//!
//! One gradient step per dialogue (the block context is the dialogue),
//! shuffled each epoch with a seeded generator. The ridge output maps are
//! re-solved once per epoch on a fixed probe prefix of the training set and
//! held constant between refreshes, so the reconstruction term regularizes
//! the features while its solution stays closed-form.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::broad::ridge_solve;
use crate::data::EmotionBatch;
use crate::error::{Error, Result};
use crate::fusion;
use crate::metrics::MetricsReport;
use crate::model::{BlsTarget, FusionMode, Model};

/// Knobs of one training run.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Seed for the per-epoch dialogue shuffle.
    pub seed: u64,
    /// Ridge refresh probe size (whole dialogues are taken until at least
    /// this many utterances are covered).
    pub probe_utterances: usize,
    /// Print one line per epoch to stdout.
    pub log: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-4,
            weight_decay: 1e-2,
            seed: 42,
            probe_utterances: 256,
            log: false,
        }
    }
}

/// Loss components and held-out metrics of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_norm: f64,
    pub l_emo: f64,
    pub total: f64,
    pub w_acc: f64,
    pub w_f1: f64,
}

/// Re-solves the ridge output map of every modality on a fixed probe prefix
/// of `dataset` and installs the solutions in the model.
pub fn refresh_ridge(
    model: &mut Model,
    dataset: &[EmotionBatch],
    probe_utterances: usize,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let modality_count = model.config().modalities.len();
    let mut parts: Vec<Vec<Array2<f64>>> = vec![Vec::new(); modality_count];
    let mut labels: Vec<usize> = Vec::new();
    let mut rows = 0;
    for batch in dataset {
        let reps = model.broad_representations(batch)?;
        for (i, y) in reps.into_iter().enumerate() {
            parts[i].push(y);
        }
        labels.extend_from_slice(batch.labels());
        rows += batch.len();
        if rows >= probe_utterances {
            break;
        }
    }
    let lambda = model.config().lambda;
    let bls_target = model.config().bls_target;
    let classes = model.config().classes;
    for (i, stack) in parts.into_iter().enumerate() {
        let views: Vec<_> = stack.iter().map(|y| y.view()).collect();
        let f = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let w = match bls_target {
            BlsTarget::SelfReconstruction => ridge_solve(&f, &f, lambda)?,
            BlsTarget::Labels => {
                let mut target = Array2::zeros((labels.len(), classes));
                for (t, &l) in labels.iter().enumerate() {
                    target[[t, l]] = 1.0;
                }
                ridge_solve(&f, &target, lambda)?
            }
        };
        model.set_ridge(i, w)?;
    }
    Ok(())
}

/// Full training run. Metrics in the returned records are computed on
/// `eval_set`, falling back to the training set when it is empty.
pub fn train(
    model: &mut Model,
    train_set: &[EmotionBatch],
    eval_set: &[EmotionBatch],
    settings: &TrainSettings,
) -> Result<Vec<EpochRecord>> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut optimizer =
        crate::optim::AdamW::new(settings.lr, settings.weight_decay, model.param_count());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        refresh_ridge(model, train_set, settings.probe_utterances)?;
        order.shuffle(&mut shuffle_rng);
        let mut sum_norm = 0.0;
        let mut sum_emo = 0.0;
        for &idx in &order {
            let batch = &train_set[idx];
            let pass = model.forward(batch)?;
            let total = pass.total_loss();
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "total loss {total} at epoch {epoch}, dialogue {idx} \
                     (learning rate or initialization pathology)"
                )));
            }
            sum_norm += pass.norm_loss();
            sum_emo += pass.emotion_loss();
            let grads = model.backward(batch, &pass)?;
            let grad_tensors = grads.params();
            let grad_slices: Vec<&[f64]> = grad_tensors.iter().map(|t| t.data).collect();
            let mut param_tensors = model.params_mut();
            let mut param_slices: Vec<&mut [f64]> =
                param_tensors.iter_mut().map(|t| &mut *t.data).collect();
            optimizer.step(&mut param_slices, &grad_slices);
        }
        let count = train_set.len() as f64;
        let l_norm = sum_norm / count;
        let l_emo = sum_emo / count;
        let held_out = if eval_set.is_empty() { train_set } else { eval_set };
        let metrics = evaluate(model, held_out)?;
        let record = EpochRecord {
            epoch,
            l_norm,
            l_emo,
            total: l_norm + l_emo,
            w_acc: metrics.weighted_accuracy,
            w_f1: metrics.weighted_f1,
        };
        if settings.log {
            println!(
                "epoch {:>4}  L_norm {:>10.6}  L_emo {:>10.6}  L {:>10.6}  W-Acc {:.4}  W-F1 {:.4}",
                record.epoch, record.l_norm, record.l_emo, record.total, record.w_acc, record.w_f1
            );
        }
        records.push(record);
    }
    Ok(records)
}

/// Single evaluation pass over a dataset.
pub fn evaluate(model: &Model, dataset: &[EmotionBatch]) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = std::time::Instant::now();
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for batch in dataset {
        let pass = model.forward(batch)?;
        predictions.extend_from_slice(pass.predictions());
        labels.extend_from_slice(batch.labels());
    }
    let mut report = MetricsReport::compute(&predictions, &labels, model.config().classes)?;
    report.param_count = model.param_count();
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Worst finite-difference discrepancy over the model's parameters.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central-difference check of the analytic backward pass on the total loss,
/// parameter scalar by parameter scalar. The ridge maps are solved once on
/// the batch itself before the check and held fixed throughout, matching the
/// trainer's constant-map treatment.
pub fn grad_check(model: &mut Model, batch: &EmotionBatch, eps: f64) -> Result<GradCheckReport> {
    if model.ridge_map(0).is_none() {
        refresh_ridge(model, std::slice::from_ref(batch), usize::MAX)?;
    }
    let pass = model.forward(batch)?;
    let grads = model.backward(batch, &pass)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .params()
        .iter()
        .map(|t| (t.name.clone(), t.data.to_vec()))
        .collect();
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut checked = 0;
    for (tensor_idx, (name, values)) in analytic.iter().enumerate() {
        for j in 0..values.len() {
            let base = {
                let mut tensors = model.params_mut();
                let slot = &mut tensors[tensor_idx];
                debug_assert_eq!(&slot.name, name);
                let base = slot.data[j];
                slot.data[j] = base + eps;
                base
            };
            let up = model.forward(batch)?.total_loss();
            {
                let mut tensors = model.params_mut();
                tensors[tensor_idx].data[j] = base - eps;
            }
            let down = model.forward(batch)?.total_loss();
            {
                let mut tensors = model.params_mut();
                tensors[tensor_idx].data[j] = base;
            }
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(values[j], numeric);
            if err > worst {
                worst = err;
                worst_name = format!("{name}[{j}]");
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: worst,
        worst_param: worst_name,
        checked,
    })
}

/// Ablation fusion variants. `Add` needs equal widths, `Concat` accepts any,
/// and `Probability` delegates to [`fusion::fuse`] with the given weights.
pub fn ablation_fuse(
    mode: FusionMode,
    ys: &[ArrayView2<f64>],
    weights: Option<&[ArrayView1<f64>]>,
) -> Result<Array2<f64>> {
    if ys.is_empty() {
        return Err(Error::InvalidParameter("no representations to fuse".into()));
    }
    match mode {
        FusionMode::Add => {
            let dim = ys[0].dim();
            for y in ys {
                if y.dim() != dim {
                    return Err(Error::ShapeMismatch {
                        what: "additive fusion widths",
                        expected: format!("{dim:?}"),
                        got: format!("{:?}", y.dim()),
                    });
                }
            }
            let mut out = Array2::zeros(dim);
            for y in ys {
                out += y;
            }
            Ok(out)
        }
        FusionMode::Concat => {
            let rows = ys[0].nrows();
            for y in ys {
                if y.nrows() != rows {
                    return Err(Error::ShapeMismatch {
                        what: "concat fusion rows",
                        expected: format!("{rows}"),
                        got: format!("{}", y.nrows()),
                    });
                }
            }
            Ok(ndarray::concatenate(Axis(1), ys).expect("aligned rows"))
        }
        FusionMode::Probability => {
            let weights = weights.ok_or_else(|| {
                Error::InvalidParameter("probability fusion needs weight vectors".into())
            })?;
            fusion::fuse(ys, weights)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SyntheticSpec, SyntheticTask};
    use crate::embedding::Modality;
    use crate::model::ModelConfig;
    use crate::ssm::Discretization;
    use ndarray::array;

    fn small_config(fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            modalities: vec![Modality::Text, Modality::Audio, Modality::Video],
            raw_widths: vec![6, 5, 4],
            d_model: 4,
            state_size: 2,
            layers: 1,
            kernel_width: 3,
            feature_groups: 2,
            enhance_groups: 2,
            feature_width: 3,
            enhance_width: 2,
            lambda: 0.01,
            hidden_fuse: 4,
            hidden_cls: 6,
            classes: 3,
            discretization: Discretization::Zoh,
            fusion,
            bls_target: BlsTarget::SelfReconstruction,
            seed: 21,
        }
    }

    fn small_task(noise: f64, seed: u64) -> SyntheticTask {
        SyntheticTask::new(SyntheticSpec {
            classes: 3,
            utterances: 6,
            dialogues: 1,
            d_text: 6,
            d_audio: 5,
            d_video: 4,
            noise,
            separation: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut model = Model::init(small_config(FusionMode::Probability)).unwrap();
        let task = small_task(0.2, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = task.sample(4, &mut rng);
        let before: Vec<Vec<f64>> = model.params().iter().map(|t| t.data.to_vec()).collect();
        let settings = TrainSettings {
            epochs: 3,
            lr: 0.0,
            weight_decay: 0.0,
            seed: 1,
            probe_utterances: 8,
            log: false,
        };
        train(&mut model, &data, &[], &settings).unwrap();
        for (a, b) in model.params().iter().zip(before.iter()) {
            assert_eq!(a.data, b.as_slice(), "{} drifted at lr 0", a.name);
        }
    }

    #[test]
    fn totals_equal_component_sum_every_epoch() {
        let mut model = Model::init(small_config(FusionMode::Probability)).unwrap();
        let task = small_task(0.3, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let data = task.sample(5, &mut rng);
        let settings = TrainSettings {
            epochs: 4,
            lr: 1e-3,
            weight_decay: 1e-2,
            seed: 2,
            probe_utterances: 12,
            log: false,
        };
        let records = train(&mut model, &data, &[], &settings).unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            assert_eq!(r.total, r.l_norm + r.l_emo);
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let run = || {
            let mut model = Model::init(small_config(FusionMode::Probability)).unwrap();
            let task = small_task(0.3, 33);
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let train_set = task.sample(6, &mut rng);
            let eval_set = task.sample(2, &mut rng);
            let settings = TrainSettings {
                epochs: 5,
                lr: 1e-3,
                weight_decay: 1e-2,
                seed: 3,
                probe_utterances: 12,
                log: false,
            };
            let records = train(&mut model, &train_set, &eval_set, &settings).unwrap();
            let params: Vec<Vec<f64>> =
                model.params().iter().map(|t| t.data.to_vec()).collect();
            (records, params)
        };
        let (records_a, params_a) = run();
        let (records_b, params_b) = run();
        assert_eq!(records_a, records_b);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn loss_decreases_on_easy_task() {
        let mut model = Model::init(small_config(FusionMode::Probability)).unwrap();
        let task = small_task(0.1, 34);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let data = task.sample(10, &mut rng);
        let settings = TrainSettings {
            epochs: 15,
            lr: 3e-3,
            weight_decay: 1e-3,
            seed: 4,
            probe_utterances: 30,
            log: false,
        };
        let records = train(&mut model, &data, &[], &settings).unwrap();
        let first = records.first().unwrap().l_emo;
        let last = records.last().unwrap().l_emo;
        assert!(
            last < first,
            "classification loss failed to improve: {first} -> {last}"
        );
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let model = Model::init(small_config(FusionMode::Probability)).unwrap();
        assert!(matches!(evaluate(&model, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn central_difference_is_exact_on_linear_functions() {
        // the harness itself: central differences are exact (up to roundoff)
        // for linear maps, so a linear toy must agree to 1e-10
        let weights = [3.0, -1.5, 0.25];
        let f = |x: &[f64]| -> f64 { x.iter().zip(weights.iter()).map(|(a, w)| a * w).sum() };
        let x = [0.3, -0.7, 1.1];
        for (j, &w) in weights.iter().enumerate() {
            for eps in [1e-3, 1e-4, 1e-5] {
                let mut up = x;
                up[j] += eps;
                let mut down = x;
                down[j] -= eps;
                let numeric = (f(&up) - f(&down)) / (2.0 * eps);
                assert!(
                    (numeric - w).abs() <= 1e-10,
                    "eps {eps}, weight {j}: {numeric} vs {w}"
                );
            }
        }
    }

    #[test]
    fn grad_check_passes_on_small_pipeline() {
        for fusion in [FusionMode::Probability, FusionMode::Add, FusionMode::Concat] {
            let mut model = Model::init(small_config(fusion)).unwrap();
            let task = small_task(0.3, 35);
            let mut rng = ChaCha8Rng::seed_from_u64(35);
            let batch = task.sample(1, &mut rng).pop().unwrap();
            let report = grad_check(&mut model, &batch, 1e-4).unwrap();
            assert!(
                report.max_rel_err <= 1e-4,
                "{fusion:?}: worst {} at {}",
                report.max_rel_err,
                report.worst_param
            );
        }
    }

    #[test]
    fn grad_check_with_label_target() {
        let mut config = small_config(FusionMode::Probability);
        config.bls_target = BlsTarget::Labels;
        let mut model = Model::init(config).unwrap();
        let task = small_task(0.3, 36);
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let batch = task.sample(1, &mut rng).pop().unwrap();
        let report = grad_check(&mut model, &batch, 1e-4).unwrap();
        assert!(report.max_rel_err <= 1e-4, "worst {}", report.max_rel_err);
    }

    #[test]
    fn grad_check_error_shrinks_with_smaller_step() {
        // compare in the truncation-dominated regime (large step); at tiny
        // steps the roundoff floor takes over and the comparison is noise
        let mut model = Model::init(small_config(FusionMode::Probability)).unwrap();
        let task = small_task(0.3, 37);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let batch = task.sample(1, &mut rng).pop().unwrap();
        let full = grad_check(&mut model, &batch, 4e-3).unwrap();
        let half = grad_check(&mut model, &batch, 2e-3).unwrap();
        assert!(
            half.max_rel_err <= full.max_rel_err + 1e-9,
            "halving the step made the check worse: {} -> {}",
            full.max_rel_err,
            half.max_rel_err
        );
    }

    #[test]
    fn ablation_add_ignores_zero_modalities() {
        let yt = array![[1.0, 2.0], [3.0, 4.0]];
        let zero = Array2::zeros((2, 2));
        let out = ablation_fuse(
            FusionMode::Add,
            &[yt.view(), zero.view(), zero.view()],
            None,
        )
        .unwrap();
        assert_eq!(out, yt);
    }

    #[test]
    fn ablation_concat_width_is_sum() {
        let a = Array2::zeros((3, 2));
        let b = Array2::zeros((3, 5));
        let out = ablation_fuse(FusionMode::Concat, &[a.view(), b.view()], None).unwrap();
        assert_eq!(out.dim(), (3, 7));
    }

    #[test]
    fn ablation_probability_delegates_to_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let ys: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let ws: Vec<ndarray::Array1<f64>> = (0..3)
            .map(|_| ndarray::Array1::from_shape_fn(4, |_| rng.gen_range(0.0..1.0)))
            .collect();
        let views: Vec<_> = ys.iter().map(|y| y.view()).collect();
        let w_views: Vec<_> = ws.iter().map(|w| w.view()).collect();
        let a = ablation_fuse(FusionMode::Probability, &views, Some(&w_views)).unwrap();
        let b = fusion::fuse(&views, &w_views).unwrap();
        assert_eq!(a, b);
    }

    use rand::Rng;
}
