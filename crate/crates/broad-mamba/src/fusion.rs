//! Probability-guided fusion and the classification head.
//!
//! Each modality's broad representation is scored by a small MLP whose
//! sigmoid output is that modality's per-utterance confidence weight; the
//! fused representation is the confidence-weighted sum
//! `h = w_t Y_t + w_a Y_a + w_v Y_v`. A second MLP maps the fused vector to
//! class logits; training minimizes the mean cross-entropy plus the broad
//! reconstruction loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ssm::sigmoid;

/// Numeric floor for probabilities inside the cross-entropy; hits are
/// counted and reported rather than silently absorbed.
pub const PROB_FLOOR: f64 = 1e-12;

/// One-hidden-layer perceptron with a ReLU hidden activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array2<f64>,
    pub(crate) b2: Array1<f64>,
}

impl Mlp {
    pub fn init<R: Rng>(in_width: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        let first = Normal::new(0.0, (1.0 / in_width as f64).sqrt()).unwrap();
        let second = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).unwrap();
        Self {
            w1: Array2::from_shape_fn((in_width, hidden), |_| first.sample(rng)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((hidden, out), |_| second.sample(rng)),
            b2: Array1::zeros(out),
        }
    }

    pub fn in_width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.w2.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    /// Returns the output and the post-activation hidden layer needed by
    /// [`Mlp::backward`].
    pub(crate) fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hidden = x.dot(&self.w1) + &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let out = hidden.dot(&self.w2) + &self.b2;
        (out, hidden)
    }

    /// Gradients of parameters and input given the cached hidden activation.
    pub(crate) fn backward(
        &self,
        x: &Array2<f64>,
        hidden: &Array2<f64>,
        g_out: &Array2<f64>,
    ) -> (MlpGrads, Array2<f64>) {
        let g_w2 = hidden.t().dot(g_out);
        let g_b2 = g_out.sum_axis(Axis(0));
        let mut g_hidden = g_out.dot(&self.w2.t());
        g_hidden.zip_mut_with(hidden, |g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
        let g_w1 = x.t().dot(&g_hidden);
        let g_b1 = g_hidden.sum_axis(Axis(0));
        let g_x = g_hidden.dot(&self.w1.t());
        (
            MlpGrads {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
            g_x,
        )
    }
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpGrads {
    pub(crate) fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            w1: Array2::zeros(mlp.w1.dim()),
            b1: Array1::zeros(mlp.b1.len()),
            w2: Array2::zeros(mlp.w2.dim()),
            b2: Array1::zeros(mlp.b2.len()),
        }
    }
}

/// Confidence scorers (one per fused modality, identical shapes, scalar
/// output) plus the classifier.
#[derive(Debug, Clone)]
pub struct FusionHead {
    pub(crate) scorers: Vec<Mlp>,
    pub(crate) classifier: Mlp,
}

impl FusionHead {
    pub fn new(scorers: Vec<Mlp>, classifier: Mlp) -> Result<Self> {
        for mlp in &scorers {
            if mlp.out_width() != 1 {
                return Err(Error::InvalidParameter(
                    "modality scorers must produce one scalar".into(),
                ));
            }
            if mlp.in_width() != scorers[0].in_width()
                || mlp.hidden_width() != scorers[0].hidden_width()
            {
                return Err(Error::InvalidParameter(
                    "modality scorers must share one shape".into(),
                ));
            }
        }
        Ok(Self {
            scorers,
            classifier,
        })
    }

    /// `scorer_count` scorers of width `in_width -> hidden_fuse -> 1` and a
    /// classifier `cls_in_width -> hidden_cls -> classes`.
    pub fn init<R: Rng>(
        scorer_count: usize,
        in_width: usize,
        hidden_fuse: usize,
        cls_in_width: usize,
        hidden_cls: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let scorers = (0..scorer_count)
            .map(|_| Mlp::init(in_width, hidden_fuse, 1, rng))
            .collect();
        let classifier = Mlp::init(cls_in_width, hidden_cls, classes, rng);
        Self {
            scorers,
            classifier,
        }
    }

    pub fn scorer_count(&self) -> usize {
        self.scorers.len()
    }

    pub fn classes(&self) -> usize {
        self.classifier.out_width()
    }

    pub fn classifier(&self) -> &Mlp {
        &self.classifier
    }

    /// Per-utterance confidence of one modality, strictly inside (0, 1):
    /// the sigmoid of the scorer output (clamped away from the endpoints so
    /// saturation cannot round to exactly 0 or 1).
    pub fn modality_weight(&self, scorer: usize, y: &Array2<f64>) -> Result<Array1<f64>> {
        let mlp = self
            .scorers
            .get(scorer)
            .ok_or_else(|| Error::InvalidParameter(format!("no scorer {scorer}")))?;
        if y.ncols() != mlp.in_width() {
            return Err(Error::ShapeMismatch {
                what: "modality weight input",
                expected: format!("{}", mlp.in_width()),
                got: format!("{}", y.ncols()),
            });
        }
        let scores = mlp.forward(y);
        Ok(scores
            .column(0)
            .mapv(|s| sigmoid(s).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)))
    }

    /// Class probabilities and predicted labels for fused features.
    /// Ties in the probabilities resolve to the lowest class index.
    pub fn classify(&self, fused: &Array2<f64>) -> Result<(Array2<f64>, Vec<usize>)> {
        if fused.ncols() != self.classifier.in_width() {
            return Err(Error::ShapeMismatch {
                what: "classifier input",
                expected: format!("{}", self.classifier.in_width()),
                got: format!("{}", fused.ncols()),
            });
        }
        let logits = self.classifier.forward(fused);
        let probs = softmax_rows(&logits);
        let labels = argmax_rows(&probs);
        Ok((probs, labels))
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Index of the row maximum; the first index wins a tie.
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Confidence-weighted sum of modality representations; the weights are
/// per-utterance scalars broadcast across the feature axis.
pub fn fuse(ys: &[ArrayView2<f64>], weights: &[ArrayView1<f64>]) -> Result<Array2<f64>> {
    if ys.is_empty() || ys.len() != weights.len() {
        return Err(Error::InvalidParameter(
            "fuse needs one weight vector per representation".into(),
        ));
    }
    let dim = ys[0].dim();
    for (y, w) in ys.iter().zip(weights.iter()) {
        if y.dim() != dim || w.len() != dim.0 {
            return Err(Error::ShapeMismatch {
                what: "fuse inputs",
                expected: format!("{dim:?}"),
                got: format!("{:?}/({},)", y.dim(), w.len()),
            });
        }
    }
    let mut fused = Array2::zeros(dim);
    for (y, w) in ys.iter().zip(weights.iter()) {
        for t in 0..dim.0 {
            let scale = w[t];
            for c in 0..dim.1 {
                fused[[t, c]] += scale * y[[t, c]];
            }
        }
    }
    Ok(fused)
}

/// Mean negative log-probability of the true class. Probabilities below
/// [`PROB_FLOOR`] are clamped; the second return value counts how many rows
/// hit the floor.
pub fn emotion_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, usize)> {
    if probs.nrows() != labels.len() {
        return Err(Error::ShapeMismatch {
            what: "loss labels",
            expected: format!("{}", probs.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    if probs.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let classes = probs.ncols();
    let mut total = 0.0;
    let mut clamped = 0;
    for (row, &label) in probs.axis_iter(Axis(0)).zip(labels.iter()) {
        if label >= classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let mut p = row[label];
        if p < PROB_FLOOR {
            p = PROB_FLOOR;
            clamped += 1;
        }
        total -= p.ln();
    }
    Ok((total / labels.len() as f64, clamped))
}

/// The training objective is the plain sum of the reconstruction and
/// classification terms.
pub fn total_loss(l_norm: f64, l_emo: f64) -> f64 {
    l_norm + l_emo
}

/// Gradient of the mean cross-entropy with respect to the classifier
/// logits: `(softmax - onehot) / batch`.
pub(crate) fn cross_entropy_logit_grad(probs: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let batch = labels.len() as f64;
    let mut g = probs / batch;
    for (t, &label) in labels.iter().enumerate() {
        g[[t, label]] -= 1.0 / batch;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(seed: u64, in_width: usize, classes: usize) -> FusionHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FusionHead::init(3, in_width, 6, in_width, 8, classes, &mut rng)
    }

    #[test]
    fn weight_is_half_for_zero_scorer() {
        let mut h = head(1, 4, 3);
        for s in &mut h.scorers {
            s.w1.fill(0.0);
            s.b1.fill(0.0);
            s.w2.fill(0.0);
            s.b2.fill(0.0);
        }
        let y = Array2::from_elem((5, 4), 0.3);
        let w = h.modality_weight(0, &y).unwrap();
        assert!(w.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn weight_saturates_near_one() {
        let mut h = head(2, 2, 3);
        h.scorers[0].w1.fill(0.0);
        h.scorers[0].b1.fill(0.0);
        h.scorers[0].w2.fill(0.0);
        h.scorers[0].b2.fill(20.0);
        let w = h.modality_weight(0, &Array2::zeros((3, 2))).unwrap();
        assert!(w.iter().all(|&v| v >= 1.0 - 1e-8 && v < 1.0));
    }

    #[test]
    fn identical_scorers_and_inputs_give_identical_weights() {
        let mut h = head(3, 4, 3);
        h.scorers[1] = h.scorers[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
        let a = h.modality_weight(0, &y).unwrap();
        let b = h.modality_weight(1, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weights_strictly_inside_unit_interval() {
        let h = head(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let y = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1e3..1e3));
            let w = h.modality_weight(0, &y).unwrap();
            assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn fuse_drops_zero_weighted_modalities() {
        let yt = array![[1.0, 2.0], [3.0, 4.0]];
        let ya = array![[10.0, 10.0], [10.0, 10.0]];
        let yv = array![[-5.0, 5.0], [5.0, -5.0]];
        let wt = array![0.7, 0.2];
        let zero = array![0.0, 0.0];
        let fused = fuse(
            &[yt.view(), ya.view(), yv.view()],
            &[wt.view(), zero.view(), zero.view()],
        )
        .unwrap();
        for t in 0..2 {
            for c in 0..2 {
                assert_eq!(fused[[t, c]], wt[t] * yt[[t, c]]);
            }
        }
    }

    #[test]
    fn fuse_equal_inputs_scale_linearly() {
        let y = array![[1.0, -2.0], [0.5, 3.0]];
        let w = array![0.4, 0.9];
        let fused = fuse(
            &[y.view(), y.view(), y.view()],
            &[w.view(), w.view(), w.view()],
        )
        .unwrap();
        for t in 0..2 {
            for c in 0..2 {
                assert!((fused[[t, c]] - 3.0 * w[t] * y[[t, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ys: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let ws: Vec<Array1<f64>> = (0..3)
            .map(|_| Array1::from_shape_fn(4, |_| rng.gen_range(0.0..1.0)))
            .collect();
        let fused = fuse(
            &ys.iter().map(|y| y.view()).collect::<Vec<_>>(),
            &ws.iter().map(|w| w.view()).collect::<Vec<_>>(),
        )
        .unwrap();
        for t in 0..4 {
            for c in 0..5 {
                let expect: f64 = (0..3).map(|m| ws[m][t] * ys[m][[t, c]]).sum();
                assert!((fused[[t, c]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classify_zero_classifier_is_uniform() {
        let mut h = head(8, 4, 5);
        h.classifier.w1.fill(0.0);
        h.classifier.b1.fill(0.0);
        h.classifier.w2.fill(0.0);
        h.classifier.b2.fill(0.0);
        let (probs, labels) = h.classify(&Array2::ones((3, 4))).unwrap();
        for row in probs.axis_iter(Axis(0)) {
            for &p in row {
                assert!((p - 0.2).abs() < 1e-12);
            }
        }
        assert_eq!(labels, vec![0, 0, 0]);
    }

    #[test]
    fn softmax_dominant_logit_wins() {
        let probs = softmax_rows(&array![[30.0, 0.0, -1.0]]);
        assert!(probs[[0, 0]] >= 1.0 - 1e-9);
        assert_eq!(argmax_rows(&probs), vec![0]);
    }

    #[test]
    fn softmax_matches_exponent_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-5.0..5.0));
        let probs = softmax_rows(&logits);
        for t in 0..6 {
            let denom: f64 = (0..4).map(|k| logits[[t, k]].exp()).sum();
            for k in 0..4 {
                let expect = logits[[t, k]].exp() / denom;
                assert!(
                    (probs[[t, k]] - expect).abs() < 1e-12,
                    "({t},{k}): {} vs {expect}",
                    probs[[t, k]]
                );
            }
            assert!((probs.row(t).sum() - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_invariant_to_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let logits = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-3.0..3.0));
        let shifted = &logits + 7.5;
        let a = softmax_rows(&logits);
        let b = softmax_rows(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn loss_zero_for_perfect_prediction() {
        let probs = array![[1.0, 0.0], [0.0, 1.0]];
        let (loss, clamped) = emotion_loss(&probs, &[0, 1]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn loss_uniform_four_classes_is_ln_four() {
        let probs = Array2::from_elem((3, 4), 0.25);
        let (loss, _) = emotion_loss(&probs, &[0, 1, 2]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn loss_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-2.0..2.0));
        let probs = softmax_rows(&logits);
        let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..3)).collect();
        let (loss, clamped) = emotion_loss(&probs, &labels).unwrap();
        let expect: f64 = labels
            .iter()
            .enumerate()
            .map(|(t, &l)| -probs[[t, l]].ln())
            .sum::<f64>()
            / 8.0;
        assert!((loss - expect).abs() < 1e-12);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn loss_clamps_zero_probability() {
        let probs = array![[1.0, 0.0]];
        let (loss, clamped) = emotion_loss(&probs, &[1]).unwrap();
        assert_eq!(clamped, 1);
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn total_loss_is_plain_sum() {
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        assert_eq!(total_loss(1.5, 2.5), 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let a = rng.gen_range(-10.0..10.0);
            let b = rng.gen_range(-10.0..10.0);
            assert_eq!(total_loss(a, b), a + b);
        }
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let logits = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0));
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
        let probs = softmax_rows(&logits);
        let grad = cross_entropy_logit_grad(&probs, &labels);
        let h = 1e-6;
        for t in 0..5 {
            for k in 0..3 {
                let mut up = logits.clone();
                up[[t, k]] += h;
                let mut down = logits.clone();
                down[[t, k]] -= h;
                let lp = emotion_loss(&softmax_rows(&up), &labels).unwrap().0;
                let lm = emotion_loss(&softmax_rows(&down), &labels).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                assert!(
                    (grad[[t, k]] - numeric).abs() < 1e-8,
                    "logit ({t},{k}): {} vs {numeric}",
                    grad[[t, k]]
                );
            }
        }
    }

    /// Full-head gradient check: all four MLPs through weighting, fusion,
    /// classification, and the cross-entropy.
    #[test]
    fn head_gradients_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let in_width = 5;
        let head = FusionHead::init(3, in_width, 4, in_width, 6, 3, &mut rng);
        let ys: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((4, in_width), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();

        let loss = |h: &FusionHead| -> f64 {
            let weights: Vec<Array1<f64>> = (0..3)
                .map(|m| h.modality_weight(m, &ys[m]).unwrap())
                .collect();
            let fused = fuse(
                &ys.iter().map(|y| y.view()).collect::<Vec<_>>(),
                &weights.iter().map(|w| w.view()).collect::<Vec<_>>(),
            )
            .unwrap();
            let (probs, _) = h.classify(&fused).unwrap();
            emotion_loss(&probs, &labels).unwrap().0
        };

        // analytic pass, mirroring the model's backward wiring
        let weights: Vec<Array1<f64>> = (0..3)
            .map(|m| head.modality_weight(m, &ys[m]).unwrap())
            .collect();
        let fused = fuse(
            &ys.iter().map(|y| y.view()).collect::<Vec<_>>(),
            &weights.iter().map(|w| w.view()).collect::<Vec<_>>(),
        )
        .unwrap();
        let (logits, cls_hidden) = head.classifier.forward_cached(&fused);
        let probs = softmax_rows(&logits);
        let g_logits = cross_entropy_logit_grad(&probs, &labels);
        let (cls_grads, g_fused) = head.classifier.backward(&fused, &cls_hidden, &g_logits);
        let mut scorer_grads = Vec::new();
        for m in 0..3 {
            let g_w: Array1<f64> = (0..4)
                .map(|t| (0..in_width).map(|c| g_fused[[t, c]] * ys[m][[t, c]]).sum())
                .collect();
            // d sigmoid = w (1 - w)
            let g_score: Array2<f64> = Array2::from_shape_fn((4, 1), |(t, _)| {
                g_w[t] * weights[m][t] * (1.0 - weights[m][t])
            });
            let (scores, hidden) = head.scorers[m].forward_cached(&ys[m]);
            let _ = scores;
            let (grads, _gy) = head.scorers[m].backward(&ys[m], &hidden, &g_score);
            scorer_grads.push(grads);
        }

        let h_step = 1e-5;
        let mut worst = 0.0f64;
        let mut check = |analytic: f64, read_write: &mut dyn FnMut(&mut FusionHead, f64)| {
            let mut hp = head.clone();
            read_write(&mut hp, h_step);
            let mut hm = head.clone();
            read_write(&mut hm, -h_step);
            let numeric = (loss(&hp) - loss(&hm)) / (2.0 * h_step);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        };
        for m in 0..3 {
            for i in 0..in_width {
                for j in 0..4 {
                    check(scorer_grads[m].w1[[i, j]], &mut |h, eps| {
                        h.scorers[m].w1[[i, j]] += eps
                    });
                }
            }
            for j in 0..4 {
                check(scorer_grads[m].b1[j], &mut |h, eps| {
                    h.scorers[m].b1[j] += eps
                });
                check(scorer_grads[m].w2[[j, 0]], &mut |h, eps| {
                    h.scorers[m].w2[[j, 0]] += eps
                });
            }
            check(scorer_grads[m].b2[0], &mut |h, eps| {
                h.scorers[m].b2[0] += eps
            });
        }
        for i in 0..in_width {
            for j in 0..6 {
                check(cls_grads.w1[[i, j]], &mut |h, eps| {
                    h.classifier.w1[[i, j]] += eps
                });
            }
        }
        for j in 0..6 {
            check(cls_grads.b1[j], &mut |h, eps| h.classifier.b1[j] += eps);
            for k in 0..3 {
                check(cls_grads.w2[[j, k]], &mut |h, eps| {
                    h.classifier.w2[[j, k]] += eps
                });
            }
        }
        for k in 0..3 {
            check(cls_grads.b2[k], &mut |h, eps| h.classifier.b2[k] += eps);
        }
        assert!(worst <= 1e-4, "worst head gradient relative error {worst}");
    }
}
