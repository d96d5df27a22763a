//! The assembled per-utterance classifier: convolution front-ends with
//! positional encoding, stacked bidirectional SSM blocks, frozen broad
//! spaces, the fusion head, and both loss terms, with a hand-written
//! backward pass over every learnable tensor.
//!
//! The ridge output map of each modality is solved outside the gradient loop
//! (see the trainer) and held constant inside it: the reconstruction term
//! contributes gradients to the features only.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bissm::{BiSsmBlock, BranchGrads};
use crate::broad::{
    ridge_loss, ridge_loss_grad_fixed, ridge_loss_grad_self, BroadFeatures, BroadSpace,
};
use crate::data::EmotionBatch;
use crate::embedding::{positional_encoding, Conv1dGrads, Conv1dLayer, Modality};
use crate::error::{Error, Result};
use crate::fusion::{
    argmax_rows, cross_entropy_logit_grad, emotion_loss, softmax_rows, total_loss, FusionHead,
    Mlp, MlpGrads, PROB_FLOOR,
};
use crate::ssm::{sigmoid, Discretization};

/// How modality representations are combined ahead of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Confidence-weighted sum (the full head with per-modality scorers).
    Probability,
    /// Plain elementwise addition.
    Add,
    /// Column concatenation (classifier width scales with modality count).
    Concat,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(FusionMode::Probability),
            "add" => Ok(FusionMode::Add),
            "concat" => Ok(FusionMode::Concat),
            other => Err(Error::Config(format!(
                "unknown fusion mode '{other}' (expected probability|add|concat)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Probability => "probability",
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
        })
    }
}

/// Target of the ridge reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlsTarget {
    /// The broad representation reconstructs itself.
    SelfReconstruction,
    /// One-hot labels as the regression target.
    Labels,
}

impl std::str::FromStr for BlsTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(BlsTarget::SelfReconstruction),
            "labels" => Ok(BlsTarget::Labels),
            other => Err(Error::Config(format!(
                "unknown bls target '{other}' (expected self|labels)"
            ))),
        }
    }
}

impl std::fmt::Display for BlsTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlsTarget::SelfReconstruction => "self",
            BlsTarget::Labels => "labels",
        })
    }
}

/// Everything needed to build a [`Model`].
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Active modalities in canonical text/audio/video order.
    pub modalities: Vec<Modality>,
    /// Raw feature widths aligned with `modalities`.
    pub raw_widths: Vec<usize>,
    /// Common width after the convolution front-end (must be even for the
    /// positional encoding).
    pub d_model: usize,
    pub state_size: usize,
    pub layers: usize,
    pub kernel_width: usize,
    pub feature_groups: usize,
    pub enhance_groups: usize,
    pub feature_width: usize,
    pub enhance_width: usize,
    pub lambda: f64,
    pub hidden_fuse: usize,
    pub hidden_cls: usize,
    pub classes: usize,
    pub discretization: Discretization,
    pub fusion: FusionMode,
    pub bls_target: BlsTarget,
    pub seed: u64,
}

impl ModelConfig {
    pub fn broad_width(&self) -> usize {
        self.feature_groups * self.feature_width + self.enhance_groups * self.enhance_width
    }

    fn classifier_width(&self) -> usize {
        match self.fusion {
            FusionMode::Concat => self.broad_width() * self.modalities.len(),
            _ => self.broad_width(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        let mut seen = [false; 3];
        for m in &self.modalities {
            let idx = Modality::ALL.iter().position(|x| x == m).unwrap();
            if seen[idx] {
                return Err(Error::Config(format!("modality {m} listed twice")));
            }
            seen[idx] = true;
        }
        if self.raw_widths.len() != self.modalities.len() {
            return Err(Error::Config(
                "raw widths must align with the modality list".into(),
            ));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_m must be even for the positional encoding, got {}",
                self.d_model
            )));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!(
                "conv kernel width must be odd, got {}",
                self.kernel_width
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.layers == 0 || self.state_size == 0 || self.d_model == 0 {
            return Err(Error::Config(
                "layers, state size, and d_m must be >= 1".into(),
            ));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Named view of one tensor's storage.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable named view of one tensor's storage.
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// The full pipeline for a fixed modality subset.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    convs: Vec<Conv1dLayer>,
    blocks: Vec<Vec<BiSsmBlock>>,
    spaces: Vec<BroadSpace>,
    head: FusionHead,
    /// Current ridge output map per modality; `None` until the first solve.
    ridge: Vec<Option<Array2<f64>>>,
}

impl Model {
    /// Builds and initializes every component from the config seed. The
    /// frozen broad spaces are part of this deterministic construction, so a
    /// config fully determines them.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut convs = Vec::new();
        let mut blocks = Vec::new();
        let mut spaces = Vec::new();
        for (i, &m) in config.modalities.iter().enumerate() {
            convs.push(Conv1dLayer::init(
                m,
                config.kernel_width,
                config.raw_widths[i],
                config.d_model,
                &mut rng,
            )?);
            blocks.push(
                (0..config.layers)
                    .map(|_| {
                        BiSsmBlock::init(
                            config.d_model,
                            config.state_size,
                            config.discretization,
                            &mut rng,
                        )
                    })
                    .collect(),
            );
            spaces.push(BroadSpace::init(
                config.d_model,
                config.feature_groups,
                config.enhance_groups,
                config.feature_width,
                config.enhance_width,
                config.lambda,
                &mut rng,
            )?);
        }
        let scorer_count = match config.fusion {
            FusionMode::Probability => config.modalities.len(),
            _ => 0,
        };
        let head = FusionHead::init(
            scorer_count,
            config.broad_width(),
            config.hidden_fuse,
            config.classifier_width(),
            config.hidden_cls,
            config.classes,
            &mut rng,
        );
        let ridge = vec![None; config.modalities.len()];
        Ok(Self {
            config,
            convs,
            blocks,
            spaces,
            head,
            ridge,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> &FusionHead {
        &self.head
    }

    pub fn space(&self, index: usize) -> &BroadSpace {
        &self.spaces[index]
    }

    pub fn ridge_map(&self, index: usize) -> Option<&Array2<f64>> {
        self.ridge[index].as_ref()
    }

    fn ridge_target_width(&self) -> usize {
        match self.config.bls_target {
            BlsTarget::SelfReconstruction => self.config.broad_width(),
            BlsTarget::Labels => self.config.classes,
        }
    }

    /// Installs the ridge output map for one modality slot.
    pub fn set_ridge(&mut self, index: usize, w: Array2<f64>) -> Result<()> {
        let expect = (self.config.broad_width(), self.ridge_target_width());
        if w.dim() != expect {
            return Err(Error::ShapeMismatch {
                what: "ridge output map",
                expected: format!("{expect:?}"),
                got: format!("{:?}", w.dim()),
            });
        }
        self.ridge[index] = Some(w);
        Ok(())
    }

    fn check_batch(&self, batch: &EmotionBatch) -> Result<()> {
        if batch.classes() != self.config.classes {
            return Err(Error::ShapeMismatch {
                what: "batch class count",
                expected: format!("{}", self.config.classes),
                got: format!("{}", batch.classes()),
            });
        }
        for (i, &m) in self.config.modalities.iter().enumerate() {
            if batch.width(m) != self.config.raw_widths[i] {
                return Err(Error::ShapeMismatch {
                    what: "batch modality width",
                    expected: format!("{} ({m})", self.config.raw_widths[i]),
                    got: format!("{}", batch.width(m)),
                });
            }
        }
        Ok(())
    }

    /// Forward pass over one dialogue, caching every intermediate the
    /// backward pass needs.
    pub fn forward(&self, batch: &EmotionBatch) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let len = batch.len();
        let pe = positional_encoding(len, self.config.d_model)?;
        let mut traces = Vec::with_capacity(self.config.modalities.len());
        for (i, &m) in self.config.modalities.iter().enumerate() {
            let conv_out = self.convs[i].forward_raw(batch.modality(m));
            let mut current = conv_out + &pe;
            let mut inputs = Vec::with_capacity(self.blocks[i].len());
            for block in &self.blocks[i] {
                let next = block.forward_raw(&current)?;
                inputs.push(current);
                current = next;
            }
            let feats = self.spaces[i].features(&current)?;
            traces.push(ModalityTrace {
                block_inputs: inputs,
                feats,
                weight: None,
                scorer_hidden: None,
            });
        }
        let fused = match self.config.fusion {
            FusionMode::Probability => {
                let mut fused =
                    Array2::zeros((len, self.config.broad_width()));
                for (i, trace) in traces.iter_mut().enumerate() {
                    let (scores, hidden) = self.head.scorers[i].forward_cached(trace.feats.y());
                    let w: Array1<f64> = scores
                        .column(0)
                        .mapv(|s| sigmoid(s).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
                    for t in 0..len {
                        for c in 0..self.config.broad_width() {
                            fused[[t, c]] += w[t] * trace.feats.y()[[t, c]];
                        }
                    }
                    trace.weight = Some(w);
                    trace.scorer_hidden = Some(hidden);
                }
                fused
            }
            FusionMode::Add => {
                let mut fused = Array2::zeros((len, self.config.broad_width()));
                for trace in &traces {
                    fused += trace.feats.y();
                }
                fused
            }
            FusionMode::Concat => {
                let views: Vec<_> = traces.iter().map(|t| t.feats.y().view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("aligned rows")
            }
        };
        let (logits, cls_hidden) = self.head.classifier.forward_cached(&fused);
        let probs = softmax_rows(&logits);
        let predictions = argmax_rows(&probs);
        let (l_emo, clamped) = emotion_loss(&probs, batch.labels())?;
        let mut l_norm = 0.0;
        for (i, trace) in traces.iter().enumerate() {
            if let Some(w_b) = &self.ridge[i] {
                let y = trace.feats.y();
                l_norm += match self.config.bls_target {
                    BlsTarget::SelfReconstruction => {
                        ridge_loss(y, y, w_b, self.config.lambda)
                    }
                    BlsTarget::Labels => {
                        let target = one_hot(batch.labels(), self.config.classes);
                        ridge_loss(y, &target, w_b, self.config.lambda)
                    }
                };
            }
        }
        Ok(ForwardPass {
            traces,
            fused,
            cls_hidden,
            probs,
            predictions,
            l_emo,
            l_norm,
            clamped,
        })
    }

    /// Backward pass over the cached forward state. The ridge maps are
    /// treated as constants.
    pub fn backward(&self, batch: &EmotionBatch, pass: &ForwardPass) -> Result<ModelGrads> {
        let len = batch.len();
        let width = self.config.broad_width();
        let g_logits = cross_entropy_logit_grad(&pass.probs, batch.labels());
        let (classifier, g_fused) =
            self.head
                .classifier
                .backward(&pass.fused, &pass.cls_hidden, &g_logits);
        let mut grads = ModelGrads::zeros(self);
        grads.classifier = classifier;
        for (i, trace) in pass.traces.iter().enumerate() {
            let y = trace.feats.y();
            let mut g_y = match self.config.fusion {
                FusionMode::Probability => {
                    let w = trace.weight.as_ref().expect("cached by forward");
                    let hidden = trace.scorer_hidden.as_ref().expect("cached by forward");
                    let mut g_y = Array2::zeros((len, width));
                    let mut g_score = Array2::zeros((len, 1));
                    for t in 0..len {
                        let mut g_w = 0.0;
                        for c in 0..width {
                            g_y[[t, c]] = w[t] * g_fused[[t, c]];
                            g_w += g_fused[[t, c]] * y[[t, c]];
                        }
                        g_score[[t, 0]] = g_w * w[t] * (1.0 - w[t]);
                    }
                    let (scorer_grads, g_y_scorer) =
                        self.head.scorers[i].backward(y, hidden, &g_score);
                    grads.scorers[i] = scorer_grads;
                    g_y + g_y_scorer
                }
                FusionMode::Add => g_fused.clone(),
                FusionMode::Concat => g_fused
                    .slice(ndarray::s![.., i * width..(i + 1) * width])
                    .to_owned(),
            };
            if let Some(w_b) = &self.ridge[i] {
                match self.config.bls_target {
                    BlsTarget::SelfReconstruction => {
                        g_y += &ridge_loss_grad_self(y, w_b);
                    }
                    BlsTarget::Labels => {
                        let target = one_hot(batch.labels(), self.config.classes);
                        g_y += &ridge_loss_grad_fixed(y, &target, w_b);
                    }
                }
            }
            let mut g_u = self.spaces[i].backward(&trace.feats, &g_y);
            for (l, block) in self.blocks[i].iter().enumerate().rev() {
                let bg = block.gradients(&trace.block_inputs[l], &g_u)?;
                grads.blocks[i][l] = BlockGrads {
                    forward: bg.forward,
                    backward: bg.backward,
                    skip: bg.skip,
                };
                g_u = bg.input;
            }
            // embedded = conv_out + positional encoding, so the encoding
            // contributes nothing to the parameter chain
            let m = self.config.modalities[i];
            grads.convs[i] = self.convs[i].backward(batch.modality(m), &g_u);
        }
        Ok(grads)
    }

    /// Broad representations per active modality (the trainer's ridge probe).
    pub fn broad_representations(&self, batch: &EmotionBatch) -> Result<Vec<Array2<f64>>> {
        let pass = self.forward(batch)?;
        Ok(pass
            .traces
            .iter()
            .map(|t| t.feats.y().clone())
            .collect())
    }

    /// Learnable tensors in their fixed traversal order.
    pub fn params(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, &m) in self.config.modalities.iter().enumerate() {
            let conv = &self.convs[i];
            push3(&mut out, format!("conv.{}.weight", m.short()), &conv.weight);
            push1(&mut out, format!("conv.{}.bias", m.short()), &conv.bias);
            for (l, block) in self.blocks[i].iter().enumerate() {
                let base = format!("bissm.{}.{}", m.short(), l);
                for (tag, branch) in [("fwd", &block.forward), ("bwd", &block.backward)] {
                    push2(&mut out, format!("{base}.{tag}.a_log"), &branch.a_log);
                    push1(&mut out, format!("{base}.{tag}.log_delta"), &branch.log_delta);
                    push2(&mut out, format!("{base}.{tag}.b"), &branch.b);
                    push2(&mut out, format!("{base}.{tag}.c"), &branch.c);
                }
                push1(&mut out, format!("{base}.skip"), &block.skip);
            }
        }
        for (i, &m) in self.config.modalities.iter().enumerate() {
            if i < self.head.scorers.len() {
                let mlp = &self.head.scorers[i];
                let base = format!("head.scorer.{}", m.short());
                push_mlp(&mut out, &base, mlp);
            }
        }
        push_mlp(&mut out, "head.classifier", &self.head.classifier);
        out
    }

    /// Mutable view of [`Model::params`] in the identical order.
    pub fn params_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Model {
            config,
            convs,
            blocks,
            head,
            ..
        } = self;
        let mut out = Vec::new();
        for ((conv, layer_blocks), &m) in convs
            .iter_mut()
            .zip(blocks.iter_mut())
            .zip(config.modalities.iter())
        {
            push3_mut(&mut out, format!("conv.{}.weight", m.short()), &mut conv.weight);
            push1_mut(&mut out, format!("conv.{}.bias", m.short()), &mut conv.bias);
            for (l, block) in layer_blocks.iter_mut().enumerate() {
                let base = format!("bissm.{}.{}", m.short(), l);
                for (tag, branch) in [
                    ("fwd", &mut block.forward),
                    ("bwd", &mut block.backward),
                ] {
                    push2_mut(&mut out, format!("{base}.{tag}.a_log"), &mut branch.a_log);
                    push1_mut(
                        &mut out,
                        format!("{base}.{tag}.log_delta"),
                        &mut branch.log_delta,
                    );
                    push2_mut(&mut out, format!("{base}.{tag}.b"), &mut branch.b);
                    push2_mut(&mut out, format!("{base}.{tag}.c"), &mut branch.c);
                }
                push1_mut(&mut out, format!("{base}.skip"), &mut block.skip);
            }
        }
        for (scorer, &m) in head.scorers.iter_mut().zip(config.modalities.iter()) {
            let base = format!("head.scorer.{}", m.short());
            push_mlp_mut(&mut out, &base, scorer);
        }
        push_mlp_mut(&mut out, "head.classifier", &mut head.classifier);
        out
    }

    /// Solved ridge maps as named tensors (absent slots are skipped).
    pub fn ridge_tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, &m) in self.config.modalities.iter().enumerate() {
            if let Some(w) = &self.ridge[i] {
                push2(&mut out, format!("ridge.{}", m.short()), w);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.data.len()).sum()
    }

    /// Rounds every learnable and solved tensor through `f32`, the checkpoint
    /// precision, so a saved-then-reloaded model reproduces this one exactly.
    pub fn quantize_to_f32(&mut self) {
        for tensor in self.params_mut() {
            for v in tensor.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        for slot in self.ridge.iter_mut() {
            if let Some(w) = slot {
                w.mapv_inplace(|v| v as f32 as f64);
            }
        }
    }
}

/// Cached intermediates of one forward pass.
pub struct ForwardPass {
    traces: Vec<ModalityTrace>,
    fused: Array2<f64>,
    cls_hidden: Array2<f64>,
    probs: Array2<f64>,
    predictions: Vec<usize>,
    l_emo: f64,
    l_norm: f64,
    clamped: usize,
}

impl ForwardPass {
    pub fn probabilities(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    pub fn emotion_loss(&self) -> f64 {
        self.l_emo
    }

    pub fn norm_loss(&self) -> f64 {
        self.l_norm
    }

    pub fn total_loss(&self) -> f64 {
        total_loss(self.l_norm, self.l_emo)
    }

    /// How many rows hit the cross-entropy probability floor.
    pub fn clamped_rows(&self) -> usize {
        self.clamped
    }

    /// Broad representation of one active modality.
    pub fn representation(&self, index: usize) -> &Array2<f64> {
        self.traces[index].feats.y()
    }

    /// Fusion weight vector of one active modality (probability mode only).
    pub fn fusion_weight(&self, index: usize) -> Option<&Array1<f64>> {
        self.traces[index].weight.as_ref()
    }
}

struct ModalityTrace {
    block_inputs: Vec<Array2<f64>>,
    feats: BroadFeatures,
    weight: Option<Array1<f64>>,
    scorer_hidden: Option<Array2<f64>>,
}

/// Gradients mirroring [`Model::params`] slot for slot.
pub struct ModelGrads {
    convs: Vec<Conv1dGrads>,
    blocks: Vec<Vec<BlockGrads>>,
    scorers: Vec<MlpGrads>,
    classifier: MlpGrads,
    modalities: Vec<Modality>,
}

struct BlockGrads {
    forward: BranchGrads,
    backward: BranchGrads,
    skip: Array1<f64>,
}

impl ModelGrads {
    fn zeros(model: &Model) -> Self {
        let convs = model
            .convs
            .iter()
            .map(|c| Conv1dGrads {
                weight: ndarray::Array3::zeros(c.weight.dim()),
                bias: Array1::zeros(c.bias.len()),
            })
            .collect();
        let blocks = model
            .blocks
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|b| BlockGrads {
                        forward: BranchGrads::zeros(b.channels(), b.state_size()),
                        backward: BranchGrads::zeros(b.channels(), b.state_size()),
                        skip: Array1::zeros(b.channels()),
                    })
                    .collect()
            })
            .collect();
        let scorers = model
            .head
            .scorers
            .iter()
            .map(MlpGrads::zeros_like)
            .collect();
        let classifier = MlpGrads::zeros_like(&model.head.classifier);
        Self {
            convs,
            blocks,
            scorers,
            classifier,
            modalities: model.config.modalities.clone(),
        }
    }

    /// Same traversal order as [`Model::params`].
    pub fn params(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, &m) in self.modalities.iter().enumerate() {
            push3(&mut out, format!("conv.{}.weight", m.short()), &self.convs[i].weight);
            push1(&mut out, format!("conv.{}.bias", m.short()), &self.convs[i].bias);
            for (l, block) in self.blocks[i].iter().enumerate() {
                let base = format!("bissm.{}.{}", m.short(), l);
                for (tag, branch) in [("fwd", &block.forward), ("bwd", &block.backward)] {
                    push2(&mut out, format!("{base}.{tag}.a_log"), &branch.a_log);
                    push1(&mut out, format!("{base}.{tag}.log_delta"), &branch.log_delta);
                    push2(&mut out, format!("{base}.{tag}.b"), &branch.b);
                    push2(&mut out, format!("{base}.{tag}.c"), &branch.c);
                }
                push1(&mut out, format!("{base}.skip"), &block.skip);
            }
        }
        for (i, &m) in self.modalities.iter().enumerate() {
            if i < self.scorers.len() {
                push_mlp(&mut out, &format!("head.scorer.{}", m.short()), &self.scorers[i]);
            }
        }
        push_mlp(&mut out, "head.classifier", &self.classifier);
        out
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut target = Array2::zeros((labels.len(), classes));
    for (t, &l) in labels.iter().enumerate() {
        target[[t, l]] = 1.0;
    }
    target
}

fn push1<'a>(out: &mut Vec<TensorRef<'a>>, name: String, arr: &'a Array1<f64>) {
    out.push(TensorRef {
        name,
        shape: vec![arr.len()],
        data: arr.as_slice().expect("standard layout"),
    });
}

fn push2<'a>(out: &mut Vec<TensorRef<'a>>, name: String, arr: &'a Array2<f64>) {
    out.push(TensorRef {
        name,
        shape: arr.shape().to_vec(),
        data: arr.as_slice().expect("standard layout"),
    });
}

fn push3<'a>(out: &mut Vec<TensorRef<'a>>, name: String, arr: &'a ndarray::Array3<f64>) {
    out.push(TensorRef {
        name,
        shape: arr.shape().to_vec(),
        data: arr.as_slice().expect("standard layout"),
    });
}

fn push1_mut<'a>(out: &mut Vec<TensorMut<'a>>, name: String, arr: &'a mut Array1<f64>) {
    let shape = vec![arr.len()];
    out.push(TensorMut {
        name,
        shape,
        data: arr.as_slice_mut().expect("standard layout"),
    });
}

fn push2_mut<'a>(out: &mut Vec<TensorMut<'a>>, name: String, arr: &'a mut Array2<f64>) {
    let shape = arr.shape().to_vec();
    out.push(TensorMut {
        name,
        shape,
        data: arr.as_slice_mut().expect("standard layout"),
    });
}

fn push3_mut<'a>(out: &mut Vec<TensorMut<'a>>, name: String, arr: &'a mut ndarray::Array3<f64>) {
    let shape = arr.shape().to_vec();
    out.push(TensorMut {
        name,
        shape,
        data: arr.as_slice_mut().expect("standard layout"),
    });
}

trait MlpLike {
    fn pieces(&self) -> (&Array2<f64>, &Array1<f64>, &Array2<f64>, &Array1<f64>);
}

impl MlpLike for Mlp {
    fn pieces(&self) -> (&Array2<f64>, &Array1<f64>, &Array2<f64>, &Array1<f64>) {
        (&self.w1, &self.b1, &self.w2, &self.b2)
    }
}

impl MlpLike for MlpGrads {
    fn pieces(&self) -> (&Array2<f64>, &Array1<f64>, &Array2<f64>, &Array1<f64>) {
        (&self.w1, &self.b1, &self.w2, &self.b2)
    }
}

fn push_mlp<'a, M: MlpLike>(out: &mut Vec<TensorRef<'a>>, base: &str, mlp: &'a M) {
    let (w1, b1, w2, b2) = mlp.pieces();
    push2(out, format!("{base}.w1"), w1);
    push1(out, format!("{base}.b1"), b1);
    push2(out, format!("{base}.w2"), w2);
    push1(out, format!("{base}.b2"), b2);
}

fn push_mlp_mut<'a>(out: &mut Vec<TensorMut<'a>>, base: &str, mlp: &'a mut Mlp) {
    push2_mut(out, format!("{base}.w1"), &mut mlp.w1);
    push1_mut(out, format!("{base}.b1"), &mut mlp.b1);
    push2_mut(out, format!("{base}.w2"), &mut mlp.w2);
    push1_mut(out, format!("{base}.b2"), &mut mlp.b2);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SyntheticSpec, SyntheticTask};

    pub(crate) fn tiny_config() -> ModelConfig {
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
            fusion: FusionMode::Probability,
            bls_target: BlsTarget::SelfReconstruction,
            seed: 11,
        }
    }

    fn tiny_batch(seed: u64) -> EmotionBatch {
        let spec = SyntheticSpec {
            classes: 3,
            utterances: 5,
            dialogues: 1,
            d_text: 6,
            d_audio: 5,
            d_video: 4,
            noise: 0.2,
            separation: 1.0,
            seed,
        };
        let task = SyntheticTask::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        task.sample(1, &mut rng).pop().unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::init(tiny_config()).unwrap();
        let b = Model::init(tiny_config()).unwrap();
        for (x, y) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn grads_share_param_order() {
        let model = Model::init(tiny_config()).unwrap();
        let grads = ModelGrads::zeros(&model);
        let p: Vec<_> = model.params();
        let g: Vec<_> = grads.params();
        assert_eq!(p.len(), g.len());
        for (a, b) in p.iter().zip(g.iter()) {
            assert_eq!(a.name, b.name, "traversal orders diverged");
            assert_eq!(a.data.len(), b.data.len(), "{}", a.name);
        }
        let mut model = model;
        let pm = model.params_mut();
        for (a, b) in pm.iter().zip(p_names(&grads).iter()) {
            assert_eq!(&a.name, b);
        }
    }

    fn p_names(grads: &ModelGrads) -> Vec<String> {
        grads.params().iter().map(|t| t.name.clone()).collect()
    }

    #[test]
    fn param_count_matches_hand_count() {
        // single modality keeps the arithmetic small
        let config = ModelConfig {
            modalities: vec![Modality::Text],
            raw_widths: vec![5],
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
            fusion: FusionMode::Probability,
            bls_target: BlsTarget::SelfReconstruction,
            seed: 1,
        };
        let model = Model::init(config).unwrap();
        // conv: 3*5*4 + 4 = 64
        // block: 2 branches * (a_log 4*2 + log_delta 4 + b 4*2 + c 4*2) = 56, skip 4
        // broad width p = 2*3 + 2*2 = 10
        // scorer: 10*4 + 4 + 4*1 + 1 = 49
        // classifier: 10*6 + 6 + 6*3 + 3 = 87
        assert_eq!(model.param_count(), 64 + 56 + 4 + 49 + 87);
    }

    #[test]
    fn forward_shapes_and_losses() {
        let mut model = Model::init(tiny_config()).unwrap();
        let batch = tiny_batch(5);
        let pass = model.forward(&batch).unwrap();
        assert_eq!(pass.probabilities().dim(), (5, 3));
        assert_eq!(pass.predictions().len(), 5);
        assert!(pass.emotion_loss() > 0.0);
        // no ridge installed yet -> reconstruction term inactive
        assert_eq!(pass.norm_loss(), 0.0);
        assert_eq!(pass.total_loss(), pass.emotion_loss());

        // install ridge maps and check the term becomes active
        let reps = model.broad_representations(&batch).unwrap();
        for (i, y) in reps.iter().enumerate() {
            let w = crate::broad::ridge_solve(y, y, model.config().lambda).unwrap();
            model.set_ridge(i, w).unwrap();
        }
        let pass = model.forward(&batch).unwrap();
        assert!(pass.norm_loss() > 0.0);
        assert_eq!(
            pass.total_loss(),
            pass.norm_loss() + pass.emotion_loss()
        );
    }

    #[test]
    fn probability_weights_stay_in_unit_interval() {
        let model = Model::init(tiny_config()).unwrap();
        let batch = tiny_batch(6);
        let pass = model.forward(&batch).unwrap();
        for i in 0..3 {
            let w = pass.fusion_weight(i).unwrap();
            assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn add_and_concat_modes_forward() {
        for fusion in [FusionMode::Add, FusionMode::Concat] {
            let mut config = tiny_config();
            config.fusion = fusion;
            let model = Model::init(config).unwrap();
            let batch = tiny_batch(7);
            let pass = model.forward(&batch).unwrap();
            assert_eq!(pass.probabilities().dim(), (5, 3));
            assert!(pass.fusion_weight(0).is_none());
        }
    }

    #[test]
    fn rejects_width_mismatch() {
        let model = Model::init(tiny_config()).unwrap();
        let mut spec = SyntheticSpec {
            classes: 3,
            utterances: 4,
            dialogues: 1,
            d_text: 9,
            d_audio: 5,
            d_video: 4,
            noise: 0.1,
            separation: 1.0,
            seed: 4,
        };
        spec.d_text = 9; // model expects 6
        let task = SyntheticTask::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = task.sample(1, &mut rng).pop().unwrap();
        assert!(model.forward(&batch).is_err());
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut model = Model::init(tiny_config()).unwrap();
        model.quantize_to_f32();
        let snapshot: Vec<Vec<f64>> = model.params().iter().map(|t| t.data.to_vec()).collect();
        model.quantize_to_f32();
        for (a, b) in model.params().iter().zip(snapshot.iter()) {
            assert_eq!(a.data, b.as_slice());
        }
    }
}
