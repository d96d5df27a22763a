//! Plain-text run configuration: `key = value` lines, `#` comments, every
//! key has a default, unknown keys are rejected, and the fully-resolved
//! config echoes back to text so output directories always carry the exact
//! settings that produced them.

use std::path::Path;

use crate::data::SyntheticSpec;
use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::model::{BlsTarget, FusionMode, ModelConfig};
use crate::ssm::Discretization;
use crate::train::TrainSettings;

/// Resolved settings of one run (training, evaluation, or generation).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub d_m: usize,
    pub state_size: usize,
    pub layers: usize,
    pub n_feature_nodes: usize,
    pub m_enhance_nodes: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub lambda: f64,
    pub h_fusion: usize,
    pub h_classifier: usize,
    pub discretization: Discretization,
    pub fusion: FusionMode,
    pub bls_target: BlsTarget,
    pub modalities: Vec<Modality>,
    pub dialogues: usize,
    pub eval_dialogues: usize,
    pub utterances: usize,
    pub sigma: f64,
    pub sep: f64,
    pub d_text: usize,
    pub d_audio: usize,
    pub d_video: usize,
    /// Dataset directory for training; empty means synthetic.
    pub train_data: String,
    /// Dataset directory for evaluation; empty means synthetic.
    pub eval_data: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            classes: 4,
            epochs: 200,
            lr: 1e-4,
            weight_decay: 1e-2,
            d_m: 16,
            state_size: 8,
            layers: 1,
            n_feature_nodes: 10,
            m_enhance_nodes: 30,
            d_z: 16,
            d_h: 16,
            lambda: 1e-2,
            h_fusion: 64,
            h_classifier: 128,
            discretization: Discretization::Zoh,
            fusion: FusionMode::Probability,
            bls_target: BlsTarget::SelfReconstruction,
            modalities: Modality::ALL.to_vec(),
            dialogues: 200,
            eval_dialogues: 50,
            utterances: 10,
            sigma: 0.1,
            sep: 1.0,
            d_text: 24,
            d_audio: 20,
            d_video: 16,
            train_data: String::new(),
            eval_data: String::new(),
        }
    }
}

fn parse_modalities(value: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let m = Modality::from_short(part)?;
        if out.contains(&m) {
            return Err(Error::Config(format!("modality '{part}' listed twice")));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::Config("at least one modality is required".into()));
    }
    // canonical text/audio/video order regardless of input order
    let mut canonical = Vec::new();
    for m in Modality::ALL {
        if out.contains(&m) {
            canonical.push(m);
        }
    }
    Ok(canonical)
}

fn format_modalities(modalities: &[Modality]) -> String {
    modalities
        .iter()
        .map(|m| m.short())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(idx) => &raw[..idx],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "d_m" => self.d_m = num(key, value)?,
            "state_size" => self.state_size = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "n_feature_nodes" => self.n_feature_nodes = num(key, value)?,
            "m_enhance_nodes" => self.m_enhance_nodes = num(key, value)?,
            "d_z" => self.d_z = num(key, value)?,
            "d_h" => self.d_h = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "h_fusion" => self.h_fusion = num(key, value)?,
            "h_classifier" => self.h_classifier = num(key, value)?,
            "discretization" => self.discretization = value.parse()?,
            "fusion" => self.fusion = value.parse()?,
            "bls_target" => self.bls_target = value.parse()?,
            "modalities" => self.modalities = parse_modalities(value)?,
            "dialogues" => self.dialogues = num(key, value)?,
            "eval_dialogues" => self.eval_dialogues = num(key, value)?,
            "utterances" => self.utterances = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "sep" => self.sep = num(key, value)?,
            "d_text" => self.d_text = num(key, value)?,
            "d_audio" => self.d_audio = num(key, value)?,
            "d_video" => self.d_video = num(key, value)?,
            "train_data" => self.train_data = value.to_string(),
            "eval_data" => self.eval_data = value.to_string(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("classes must be >= 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("lambda must be > 0".into()));
        }
        if self.d_m % 2 != 0 {
            return Err(Error::Config(
                "d_m must be even (sinusoidal encoding pairs)".into(),
            ));
        }
        if self.sigma < 0.0 || self.sep <= 0.0 {
            return Err(Error::Config("sigma must be >= 0 and sep > 0".into()));
        }
        Ok(())
    }

    /// The resolved config in canonical key order; `parse` of this text
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("classes", self.classes.to_string());
        push("epochs", self.epochs.to_string());
        push("lr", self.lr.to_string());
        push("weight_decay", self.weight_decay.to_string());
        push("d_m", self.d_m.to_string());
        push("state_size", self.state_size.to_string());
        push("layers", self.layers.to_string());
        push("n_feature_nodes", self.n_feature_nodes.to_string());
        push("m_enhance_nodes", self.m_enhance_nodes.to_string());
        push("d_z", self.d_z.to_string());
        push("d_h", self.d_h.to_string());
        push("lambda", self.lambda.to_string());
        push("h_fusion", self.h_fusion.to_string());
        push("h_classifier", self.h_classifier.to_string());
        push("discretization", self.discretization.to_string());
        push("fusion", self.fusion.to_string());
        push("bls_target", self.bls_target.to_string());
        push("modalities", format_modalities(&self.modalities));
        push("dialogues", self.dialogues.to_string());
        push("eval_dialogues", self.eval_dialogues.to_string());
        push("utterances", self.utterances.to_string());
        push("sigma", self.sigma.to_string());
        push("sep", self.sep.to_string());
        push("d_text", self.d_text.to_string());
        push("d_audio", self.d_audio.to_string());
        push("d_video", self.d_video.to_string());
        push("train_data", self.train_data.clone());
        push("eval_data", self.eval_data.clone());
        out
    }

    /// Raw width of one modality under the synthetic widths.
    pub fn raw_width(&self, m: Modality) -> usize {
        match m {
            Modality::Text => self.d_text,
            Modality::Audio => self.d_audio,
            Modality::Video => self.d_video,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            modalities: self.modalities.clone(),
            raw_widths: self.modalities.iter().map(|&m| self.raw_width(m)).collect(),
            d_model: self.d_m,
            state_size: self.state_size,
            layers: self.layers,
            kernel_width: 3,
            feature_groups: self.n_feature_nodes,
            enhance_groups: self.m_enhance_nodes,
            feature_width: self.d_z,
            enhance_width: self.d_h,
            lambda: self.lambda,
            hidden_fuse: self.h_fusion,
            hidden_cls: self.h_classifier,
            classes: self.classes,
            discretization: self.discretization,
            fusion: self.fusion,
            bls_target: self.bls_target,
            seed: self.seed,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            utterances: self.utterances,
            dialogues: self.dialogues,
            d_text: self.d_text,
            d_audio: self.d_audio,
            d_video: self.d_video,
            noise: self.sigma,
            separation: self.sep,
            seed: self.seed,
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            seed: self.seed,
            probe_utterances: 256,
            log: true,
        }
    }
}
