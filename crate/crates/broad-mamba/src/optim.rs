//! AdamW: Adam moment estimates with decoupled weight decay.
//!
//! The decay is applied directly to the parameter (`p -= lr * wd * p`),
//! not folded into the gradient, and the adaptive step uses bias-corrected
//! first/second moments.

/// Optimizer state over a fixed flat parameter layout. Callers must pass
/// parameter and gradient slices in the same order every step.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, param_count: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One update over the flattened parameters.
    ///
    /// Panics if the joint length of the slices does not match the state
    /// allocated at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "tensor count mismatch");
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut offset = 0;
        for (p_slice, g_slice) in params.iter_mut().zip(grads.iter()) {
            assert_eq!(p_slice.len(), g_slice.len(), "tensor length mismatch");
            for (p, &g) in p_slice.iter_mut().zip(g_slice.iter()) {
                let m = &mut self.m[offset];
                let v = &mut self.v[offset];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= self.lr * self.weight_decay * *p;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                offset += 1;
            }
        }
        assert_eq!(offset, self.m.len(), "total parameter count mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_apply_pure_decay() {
        let mut opt = AdamW::new(0.01, 0.1, 3);
        let mut data = vec![1.0, -2.0, 4.0];
        let original = data.clone();
        let grads = vec![0.0; 3];
        {
            let (a, rest) = data.split_at_mut(1);
            let (b, c) = rest.split_at_mut(1);
            opt.step(&mut [a, b, c], &[&grads[..1], &grads[1..2], &grads[2..]]);
        }
        for (after, before) in data.iter().zip(original.iter()) {
            assert!((after - before * (1.0 - 0.01 * 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut opt = AdamW::new(0.0, 0.1, 2);
        let mut data = vec![1.5, -0.5];
        let grads = vec![3.0, -1.0];
        for _ in 0..5 {
            let (a, b) = data.split_at_mut(1);
            opt.step(&mut [a, b], &[&grads[..1], &grads[1..]]);
        }
        assert_eq!(data, vec![1.5, -0.5]);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        let mut opt = AdamW::new(0.1, 0.0, 1);
        let mut data = vec![0.0];
        let grads = vec![2.0];
        opt.step(&mut [&mut data[..]], &[&grads[..]]);
        // bias-corrected first step is close to -lr * sign(g)
        assert!(data[0] < 0.0);
        assert!((data[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn deterministic_across_replays() {
        let run = || {
            let mut opt = AdamW::new(0.05, 0.01, 2);
            let mut data = vec![0.3, -0.7];
            for step in 0..20 {
                let grads = vec![(step as f64 * 0.1).sin(), (step as f64 * 0.2).cos()];
                let (a, b) = data.split_at_mut(1);
                opt.step(&mut [a, b], &[&grads[..1], &grads[1..]]);
            }
            data
        };
        assert_eq!(run(), run());
    }
}
