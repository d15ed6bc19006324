use kdforge_core::optim::{adamw_step, lr_at_step, AdamWConfig, AdamWState, ScheduleConfig};
use kdforge_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook bias-corrected Adam, written without reference to the crate.
struct ReferenceAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ReferenceAdam {
    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        self.t += 1;
        for i in 0..w.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn matches_reference_adam_over_100_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 7;
    let init: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut w = Tensor::new(vec![n], init.clone()).unwrap();
    let mut reference = init;
    let mut state = AdamWState::new([&w]);
    let mut oracle = ReferenceAdam { m: vec![0.0; n], v: vec![0.0; n], t: 0 };
    let config = AdamWConfig { lr: 1e-3, weight_decay: 0.0, ..AdamWConfig::default() };
    for step in 0..100 {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lr = 1e-3 * (1.0 + (step % 5) as f64);
        let gt = Tensor::new(vec![n], g.clone()).unwrap();
        adamw_step(&mut [&mut w], &[&gt], &[true], &mut state, &config, lr).unwrap();
        oracle.step(&mut reference, &g, lr);
        for (a, b) in w.data().iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12, "step {step}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_gradient_decay_matches_closed_form() {
    let (lr, lambda) = (0.05, 0.3);
    let config = AdamWConfig { lr, weight_decay: lambda, ..AdamWConfig::default() };
    let mut w = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
    let g = Tensor::<f64>::zeros(vec![3]);
    let mut state = AdamWState::new([&w]);
    for t in 1..=50 {
        adamw_step(&mut [&mut w], &[&g], &[true], &mut state, &config, lr).unwrap();
        let factor = (1.0 - lr * lambda).powi(t);
        for (a, w0) in w.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - w0 * factor).abs() <= 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn schedule_is_bounded_and_continuous(warmup in 0u64..200, extra in 1u64..2000, step in 0u64..3000) {
        let s = ScheduleConfig::new(warmup, warmup + extra).unwrap();
        let lr = lr_at_step(step, 1.0, &s);
        prop_assert!((0.0..=1.0).contains(&lr));
        if warmup > 0 {
            let before = lr_at_step(warmup - 1, 1.0, &s);
            let at = lr_at_step(warmup, 1.0, &s);
            prop_assert!((at - before - 1.0 / warmup as f64).abs() < 1e-12);
        }
    }
}
