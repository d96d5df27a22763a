//! Kernel-scaling benchmark: direct convolution vs the FFT path vs the
//! sequential scan over a sweep of sequence lengths.
//!
//! Before any timing, both convolution paths must agree on f32-rounded
//! inputs within `1e-5`; the sweep aborts otherwise. Reported times are the
//! median of `repetitions` runs after `warmup` discarded runs.

use std::hint::black_box;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ssm::{causal_conv_fft, causal_conv_naive, ContinuousSsm};

pub const DEFAULT_LENGTHS: [usize; 4] = [1024, 4096, 16384, 65536];
pub const BENCH_CHANNELS: usize = 8;
pub const BENCH_STATES: usize = 8;

/// Median timings at one sequence length.
#[derive(Debug, Clone)]
pub struct BenchPoint {
    pub length: usize,
    pub naive_ns: u128,
    pub fft_ns: u128,
    pub scan_ns: u128,
}

fn median(mut samples: Vec<u128>) -> u128 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Runs the sweep. `repetitions` must be at least 1; 5 or more gives a
/// stable median.
pub fn run(lengths: &[usize], repetitions: usize, warmup: usize, seed: u64) -> Result<Vec<BenchPoint>> {
    if lengths.is_empty() || repetitions == 0 {
        return Err(Error::InvalidParameter(
            "need at least one length and one repetition".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let disc = ContinuousSsm::init(BENCH_STATES, BENCH_CHANNELS, &mut rng).discretize_zoh()?;
        let x = Array2::from_shape_fn((len, BENCH_CHANNELS), |_| {
            rng.gen_range(-1.0f64..1.0) as f32 as f64
        });
        let kernel = disc.materialize_kernel(len)?;
        // correctness gate at single precision ahead of any timing
        let naive = causal_conv_naive(&x, &kernel, disc.d_skip())?;
        let fft = causal_conv_fft(&x, &kernel, disc.d_skip())?;
        let deviation = naive
            .iter()
            .zip(fft.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if deviation > 1e-5 {
            return Err(Error::NonFinite(format!(
                "fft/naive deviation {deviation} at length {len} fails the 1e-5 gate"
            )));
        }

        let time = |f: &dyn Fn() -> Array2<f64>| -> u128 {
            for _ in 0..warmup {
                black_box(f());
            }
            let mut samples = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let start = Instant::now();
                black_box(f());
                samples.push(start.elapsed().as_nanos());
            }
            median(samples)
        };
        let naive_ns = time(&|| causal_conv_naive(&x, &kernel, disc.d_skip()).unwrap());
        let fft_ns = time(&|| causal_conv_fft(&x, &kernel, disc.d_skip()).unwrap());
        let scan_ns = time(&|| disc.scan(&x, None).unwrap());
        out.push(BenchPoint {
            length: len,
            naive_ns,
            fft_ns,
            scan_ns,
        });
    }
    Ok(out)
}

/// CSV dump, one row per length.
pub fn to_csv(points: &[BenchPoint]) -> String {
    let mut out = String::from("L,naive_ns,fft_ns,scan_ns\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.length, p.naive_ns, p.fft_ns, p.scan_ns
        ));
    }
    out
}

/// Least-squares slope of `ln(time)` against `ln(length)`.
pub fn log_log_slope(points: &[(usize, u128)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(l, _)| (l as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| (t.max(1) as f64).ln()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let var: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    cov / var
}
