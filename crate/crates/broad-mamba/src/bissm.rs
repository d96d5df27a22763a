//! Bidirectional SSM convolution block.
//!
//! Position `j` of the output mixes a causal kernel over the past, an
//! anti-causal kernel over the future, and an elementwise skip; both sums
//! include `l = j`, so the center position is weighted
//! `kf[0] + kb[0] + skip`:
//!
//! ```text
//! y_j = sum_{l <= j} kf[j-l] . x_l + sum_{l >= j} kb[l-j] . x_l + skip . x_j
//! ```
//!
//! Kernels are elementwise per channel: each channel owns an independent
//! forward/backward SISO system pair. Channel mixing happens downstream in
//! the broad layer. The per-system skip gain is fixed to zero inside the
//! block because the block supplies its own skip term.
//!
//! Rates are trained through `A = -exp(a_log)`, which keeps every system
//! strictly stable regardless of the optimizer's steps.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::embedding::ModalitySequence;
use crate::error::{Error, Result};
use crate::ssm::{
    causal_conv_grad_input, causal_conv_grad_kernel, causal_conv_naive, kernel_param_grads,
    softplus_inv, ContinuousSsm, ConvKernel, Discretization,
};

/// Trainable parameterization of one directional kernel.
#[derive(Debug, Clone)]
pub struct SsmBranch {
    /// `A = -exp(a_log)`, `(channels, state_size)`.
    pub(crate) a_log: Array2<f64>,
    pub(crate) log_delta: Array1<f64>,
    pub(crate) b: Array2<f64>,
    pub(crate) c: Array2<f64>,
}

impl SsmBranch {
    fn init<R: Rng>(channels: usize, state_size: usize, rng: &mut R) -> Self {
        let rate = Uniform::new(0.5f64.ln(), 8.0f64.ln());
        let delta = Uniform::new(0.001, 0.1);
        let proj = Normal::new(0.0, (1.0 / state_size as f64).sqrt()).unwrap();
        Self {
            a_log: Array2::from_shape_fn((channels, state_size), |_| rate.sample(rng)),
            log_delta: Array1::from_shape_fn(channels, |_| softplus_inv(delta.sample(rng))),
            b: Array2::from_shape_fn((channels, state_size), |_| proj.sample(rng)),
            c: Array2::from_shape_fn((channels, state_size), |_| proj.sample(rng)),
        }
    }

    /// Materializes the stable continuous system `A = -exp(a_log)` with a
    /// zero per-system skip.
    pub(crate) fn to_system(&self) -> ContinuousSsm {
        let channels = self.a_log.nrows();
        ContinuousSsm::new(
            self.a_log.mapv(|u| -u.exp()),
            self.b.clone(),
            self.c.clone(),
            Array1::zeros(channels),
            self.log_delta.clone(),
        )
        .expect("negative-exponential rates are always valid")
    }
}

/// Gradients for one directional kernel's parameters.
#[derive(Debug, Clone)]
pub struct BranchGrads {
    pub a_log: Array2<f64>,
    pub log_delta: Array1<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
}

impl BranchGrads {
    pub(crate) fn zeros(channels: usize, state_size: usize) -> Self {
        Self {
            a_log: Array2::zeros((channels, state_size)),
            log_delta: Array1::zeros(channels),
            b: Array2::zeros((channels, state_size)),
            c: Array2::zeros((channels, state_size)),
        }
    }
}

/// Gradients of a [`BiSsmBlock`] for one upstream gradient.
#[derive(Debug, Clone)]
pub struct BiSsmGrads {
    pub forward: BranchGrads,
    pub backward: BranchGrads,
    pub skip: Array1<f64>,
    /// Gradient with respect to the block input, `(T, channels)`.
    pub input: Array2<f64>,
}

/// The bidirectional block: a forward system, a backward system, and the
/// elementwise skip vector.
#[derive(Debug, Clone)]
pub struct BiSsmBlock {
    channels: usize,
    state_size: usize,
    mode: Discretization,
    pub(crate) forward: SsmBranch,
    pub(crate) backward: SsmBranch,
    pub(crate) skip: Array1<f64>,
}

impl BiSsmBlock {
    pub fn init<R: Rng>(
        channels: usize,
        state_size: usize,
        mode: Discretization,
        rng: &mut R,
    ) -> Self {
        Self {
            channels,
            state_size,
            mode,
            forward: SsmBranch::init(channels, state_size, rng),
            backward: SsmBranch::init(channels, state_size, rng),
            skip: Array1::ones(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn state_size(&self) -> usize {
        self.state_size
    }

    pub fn mode(&self) -> Discretization {
        self.mode
    }

    pub fn skip(&self) -> &Array1<f64> {
        &self.skip
    }

    /// Materializes the causal and anti-causal kernels at length `len`.
    pub fn kernels(&self, len: usize) -> Result<(ConvKernel, ConvKernel)> {
        let kf = self
            .forward
            .to_system()
            .discretize(self.mode)?
            .materialize_kernel(len)?;
        let kb = self
            .backward
            .to_system()
            .discretize(self.mode)?
            .materialize_kernel(len)?;
        Ok((kf, kb))
    }

    /// Applies the block:
    /// `conv(x, kf) + reverse(conv(reverse(x), kb)) + skip . x`,
    /// both convolutions on the naive path with zero per-system skip.
    pub fn forward(&self, x: &ModalitySequence) -> Result<ModalitySequence> {
        let y = self.forward_raw(x.data())?;
        ModalitySequence::new(x.modality(), y)
    }

    pub(crate) fn forward_raw(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.channels {
            return Err(Error::ShapeMismatch {
                what: "bidirectional block input width",
                expected: format!("{}", self.channels),
                got: format!("{}", x.ncols()),
            });
        }
        let len = x.nrows();
        let (kf, kb) = self.kernels(len)?;
        let zeros = Array1::zeros(self.channels);
        let causal = causal_conv_naive(x, &kf, &zeros)?;
        let reversed = reverse_rows(x);
        let anti = reverse_rows(&causal_conv_naive(&reversed, &kb, &zeros)?);
        let mut y = causal + anti;
        for t in 0..len {
            for ch in 0..self.channels {
                y[[t, ch]] += self.skip[ch] * x[[t, ch]];
            }
        }
        Ok(y)
    }

    /// Analytic gradients of every block parameter and of the input for an
    /// upstream gradient shaped like the block output.
    pub fn gradients(&self, x: &Array2<f64>, upstream: &Array2<f64>) -> Result<BiSsmGrads> {
        if x.dim() != upstream.dim() {
            return Err(Error::ShapeMismatch {
                what: "bidirectional block upstream gradient",
                expected: format!("{:?}", x.dim()),
                got: format!("{:?}", upstream.dim()),
            });
        }
        if x.ncols() != self.channels {
            return Err(Error::ShapeMismatch {
                what: "bidirectional block input width",
                expected: format!("{}", self.channels),
                got: format!("{}", x.ncols()),
            });
        }
        let len = x.nrows();
        let sys_f = self.forward.to_system();
        let sys_b = self.backward.to_system();
        let disc_f = sys_f.discretize(self.mode)?;
        let disc_b = sys_b.discretize(self.mode)?;
        let kf = disc_f.materialize_kernel(len)?;
        let kb = disc_b.materialize_kernel(len)?;

        // forward-kernel path
        let g_input_causal = causal_conv_grad_input(upstream, &kf);
        let g_kf = causal_conv_grad_kernel(upstream, x, len);

        // backward-kernel path: y2 = rev(conv(rev(x), kb))
        let upstream_rev = reverse_rows(upstream);
        let x_rev = reverse_rows(x);
        let g_input_anti = reverse_rows(&causal_conv_grad_input(&upstream_rev, &kb));
        let g_kb = causal_conv_grad_kernel(&upstream_rev, &x_rev, len);

        // skip path
        let mut g_skip = Array1::zeros(self.channels);
        let mut input = g_input_causal + g_input_anti;
        for t in 0..len {
            for ch in 0..self.channels {
                g_skip[ch] += upstream[[t, ch]] * x[[t, ch]];
                input[[t, ch]] += self.skip[ch] * upstream[[t, ch]];
            }
        }

        let forward = branch_grads(&sys_f, &disc_f, self.mode, &g_kf);
        let backward = branch_grads(&sys_b, &disc_b, self.mode, &g_kb);
        Ok(BiSsmGrads {
            forward,
            backward,
            skip: g_skip,
            input,
        })
    }
}

fn branch_grads(
    sys: &ContinuousSsm,
    disc: &crate::ssm::DiscreteSsm,
    mode: Discretization,
    gtaps: &Array2<f64>,
) -> BranchGrads {
    let core = kernel_param_grads(sys, disc, mode, gtaps);
    // A = -exp(a_log) so dA/da_log = A
    BranchGrads {
        a_log: &core.a * sys.a(),
        log_delta: core.log_delta,
        b: core.b,
        c: core.c,
    }
}

pub(crate) fn reverse_rows(x: &Array2<f64>) -> Array2<f64> {
    let len = x.nrows();
    let mut out = Array2::zeros(x.dim());
    for t in 0..len {
        out.row_mut(t).assign(&x.row(len - 1 - t));
    }
    out
}

/// Literal evaluation of the bidirectional sum, kept as an independent
/// reference for tests:
/// `y_j = sum_{l<=j} kf[j-l] x_l + sum_{l>=j} kb[l-j] x_l + skip x_j`.
pub fn bissm_reference(
    x: &Array2<f64>,
    kf: &ConvKernel,
    kb: &ConvKernel,
    skip: &Array1<f64>,
) -> Array2<f64> {
    let (len, channels) = x.dim();
    let mut y = Array2::zeros((len, channels));
    for ch in 0..channels {
        for j in 0..len {
            let mut acc = 0.0;
            for l in 0..=j {
                if j - l < kf.len() {
                    acc += kf.taps()[[ch, j - l]] * x[[l, ch]];
                }
            }
            for l in j..len {
                if l - j < kb.len() {
                    acc += kb.taps()[[ch, l - j]] * x[[l, ch]];
                }
            }
            y[[j, ch]] = acc + skip[ch] * x[[j, ch]];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Modality;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(channels: usize, states: usize, seed: u64) -> BiSsmBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BiSsmBlock::init(channels, states, Discretization::Zoh, &mut rng)
    }

    #[test]
    fn single_step_collapses_to_center_weights() {
        let blk = block(3, 2, 1);
        let x = Array2::from_shape_fn((1, 3), |(_, c)| 1.0 + c as f64);
        let y = blk.forward_raw(&x).unwrap();
        let (kf, kb) = blk.kernels(1).unwrap();
        for ch in 0..3 {
            let expect =
                (kf.taps()[[ch, 0]] + kb.taps()[[ch, 0]] + blk.skip[ch]) * x[[0, ch]];
            assert!(
                (y[[0, ch]] - expect).abs() < 1e-14,
                "channel {ch}: {} vs {expect}",
                y[[0, ch]]
            );
        }
    }

    #[test]
    fn zero_backward_and_skip_reduce_to_causal_conv() {
        let mut blk = block(2, 3, 2);
        blk.backward.c.fill(0.0);
        blk.skip.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((10, 2), |_| rng.gen_range(-1.0..1.0));
        let y = blk.forward_raw(&x).unwrap();
        let (kf, _) = blk.kernels(10).unwrap();
        let expect =
            causal_conv_naive(&x, &kf, &Array1::zeros(2)).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn matches_literal_double_loop() {
        let blk = block(4, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((32, 4), |_| rng.gen_range(-1.0..1.0));
        let y = blk.forward_raw(&x).unwrap();
        let (kf, kb) = blk.kernels(32).unwrap();
        let reference = bissm_reference(&x, &kf, &kb, &blk.skip);
        let dev = y
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(dev <= 1e-10, "deviation from literal form: {dev}");
    }

    #[test]
    fn forward_preserves_modality_tag() {
        let blk = block(2, 2, 6);
        let x = ModalitySequence::new(Modality::Audio, Array2::ones((4, 2))).unwrap();
        let y = blk.forward(&x).unwrap();
        assert_eq!(y.modality(), Modality::Audio);
        assert_eq!(y.len(), 4);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let blk = block(2, 2, 7);
        let x = Array2::ones((5, 2));
        let g = blk.gradients(&x, &Array2::zeros((5, 2))).unwrap();
        assert!(g.forward.b.iter().all(|&v| v == 0.0));
        assert!(g.backward.c.iter().all(|&v| v == 0.0));
        assert!(g.skip.iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn skip_gradient_is_upstream_dot_input() {
        let blk = block(2, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let gy = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let g = blk.gradients(&x, &gy).unwrap();
        for ch in 0..2 {
            let expect: f64 = (0..6).map(|t| gy[[t, ch]] * x[[t, ch]]).sum();
            assert!((g.skip[ch] - expect).abs() < 1e-12);
        }
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    #[test]
    fn full_parameter_gradients_match_finite_difference() {
        for &mode in &[Discretization::Zoh, Discretization::Taylor] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut blk = BiSsmBlock::init(3, 3, mode, &mut rng);
            let x = Array2::from_shape_fn((9, 3), |_| rng.gen_range(-1.0..1.0));
            let gy = Array2::from_shape_fn((9, 3), |_| rng.gen_range(-1.0..1.0));
            let grads = blk.gradients(&x, &gy).unwrap();
            let loss = |b: &BiSsmBlock| -> f64 {
                b.forward_raw(&x)
                    .unwrap()
                    .iter()
                    .zip(gy.iter())
                    .map(|(y, g)| y * g)
                    .sum()
            };
            let h = 1e-4;
            let mut worst = 0.0f64;
            // every scalar parameter of both branches plus the skip
            for branch in 0..2 {
                for field in 0..4 {
                    let dims = match field {
                        1 => (3, 1),
                        _ => (3, 3),
                    };
                    for ch in 0..dims.0 {
                        for n in 0..dims.1 {
                            let read = |b: &BiSsmBlock| {
                                let br = if branch == 0 { &b.forward } else { &b.backward };
                                match field {
                                    0 => br.a_log[[ch, n]],
                                    1 => br.log_delta[ch],
                                    2 => br.b[[ch, n]],
                                    _ => br.c[[ch, n]],
                                }
                            };
                            let write = |b: &mut BiSsmBlock, v: f64| {
                                let br =
                                    if branch == 0 { &mut b.forward } else { &mut b.backward };
                                match field {
                                    0 => br.a_log[[ch, n]] = v,
                                    1 => br.log_delta[ch] = v,
                                    2 => br.b[[ch, n]] = v,
                                    _ => br.c[[ch, n]] = v,
                                }
                            };
                            let base = read(&blk);
                            write(&mut blk, base + h);
                            let up = loss(&blk);
                            write(&mut blk, base - h);
                            let down = loss(&blk);
                            write(&mut blk, base);
                            let numeric = (up - down) / (2.0 * h);
                            let gb = if branch == 0 { &grads.forward } else { &grads.backward };
                            let analytic = match field {
                                0 => gb.a_log[[ch, n]],
                                1 => gb.log_delta[ch],
                                2 => gb.b[[ch, n]],
                                _ => gb.c[[ch, n]],
                            };
                            worst = worst.max(rel_err(analytic, numeric));
                        }
                    }
                }
            }
            assert!(
                worst <= 1e-4,
                "{mode:?}: worst parameter relative error {worst}"
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let blk = block(2, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let gy = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let grads = blk.gradients(&x, &gy).unwrap();
        let h = 1e-5;
        for t in 0..5 {
            for ch in 0..2 {
                let mut xp = x.clone();
                xp[[t, ch]] += h;
                let mut xm = x.clone();
                xm[[t, ch]] -= h;
                let loss = |input: &Array2<f64>| -> f64 {
                    blk.forward_raw(input)
                        .unwrap()
                        .iter()
                        .zip(gy.iter())
                        .map(|(y, g)| y * g)
                        .sum()
                };
                let numeric = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!(
                    rel_err(grads.input[[t, ch]], numeric) < 1e-6,
                    "input[{t},{ch}]"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_reversal_symmetry(seed in 0u64..500, len in 1usize..24) {
            // swapping the directions on reversed input reverses the output
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blk = BiSsmBlock::init(2, 2, Discretization::Zoh, &mut rng);
            let mut swapped = blk.clone();
            std::mem::swap(&mut swapped.forward, &mut swapped.backward);
            let x = Array2::from_shape_fn((len, 2), |_| rng.gen_range(-1.0..1.0));
            let y = blk.forward_raw(&x).unwrap();
            let y_swapped = swapped.forward_raw(&reverse_rows(&x)).unwrap();
            prop_assert_eq!(y, reverse_rows(&y_swapped));
        }

        #[test]
        fn prop_linearity_in_input(seed in 0u64..500, len in 1usize..16, alpha in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blk = BiSsmBlock::init(2, 2, Discretization::Zoh, &mut rng);
            let x1 = Array2::from_shape_fn((len, 2), |_| rng.gen_range(-1.0..1.0));
            let x2 = Array2::from_shape_fn((len, 2), |_| rng.gen_range(-1.0..1.0));
            let lhs = blk.forward_raw(&(alpha * &x1 + &x2)).unwrap();
            let rhs = alpha * &blk.forward_raw(&x1).unwrap() + &blk.forward_raw(&x2).unwrap();
            let dev = lhs.iter().zip(rhs.iter()).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
            prop_assert!(dev <= 1e-9, "deviation {}", dev);
        }
    }
}
