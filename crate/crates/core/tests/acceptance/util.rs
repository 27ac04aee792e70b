use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Named sub-checks of one criterion.
#[derive(Default)]
pub struct Outcome {
    pub checks: Vec<(String, bool, String)>,
}

impl Outcome {
    pub fn new() -> Self {
        Self::default()
    }

    /// `value ≤ tol`.
    pub fn check(&mut self, name: &str, value: f64, tol: f64) {
        self.checks.push((name.to_string(), value <= tol, format!("{value:.3e} (tol {tol:.0e})")));
    }

    pub fn flag(&mut self, name: &str, ok: bool) {
        self.checks.push((name.to_string(), ok, String::new()));
    }

    /// A pass/fail condition with a free-form measurement.
    pub fn note(&mut self, name: &str, ok: bool, detail: String) {
        self.checks.push((name.to_string(), ok, detail));
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.1)
    }
}
