use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// `(index, finite difference, reverse-mode value)` per checked coordinate.
    pub samples: Vec<(usize, f64, f64)>,
}

/// Compare `grad` against central differences of `f` on `samples` random
/// coordinates of `point`.
///
/// The relative error of a coordinate is `|fd - ad| / max(|fd|, |ad|, floor)`
/// where `floor = 1e-3 * max|grad|`, so coordinates whose derivative is
/// negligible next to the gradient's scale are not judged on roundoff.
pub fn fd_check(
    f: impl Fn(&[f64]) -> Result<f64>,
    point: &[f64],
    grad: &[f64],
    step: f64,
    samples: usize,
    seed: u64,
) -> Result<FdReport> {
    if grad.len() != point.len() {
        return Err(Error::shape("fd_check", format!("gradient {} for point {}", grad.len(), point.len())));
    }
    if point.is_empty() {
        return Err(Error::shape("fd_check", "empty point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, point.len(), samples.min(point.len()));
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = 1e-3 * scale;
    let mut x = point.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: 0,
        samples: Vec::new(),
    };
    for i in picks.iter() {
        x[i] = point[i] + step;
        let up = f(&x)?;
        x[i] = point[i] - step;
        let down = f(&x)?;
        x[i] = point[i];
        let fd = (up - down) / (2.0 * step);
        let ad = grad[i];
        let denom = fd.abs().max(ad.abs()).max(floor);
        let err = if denom == 0.0 { 0.0 } else { (fd - ad).abs() / denom };
        if err > report.max_rel_error || report.samples.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_index = i;
        }
        report.samples.push((i, fd, ad));
    }
    Ok(report)
}

/// Dot-product test of a map `f` against its transpose action `vjp`.
///
/// Draws a random direction `d` and cotangent `w`, and returns the relative
/// gap between `<(f(x+hd) - f(x-hd)) / 2h, w>` and `<d, vjp(x, w)>`.
pub fn dot_product_test(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    vjp: impl Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
    point: &[f64],
    step: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d: Vec<f64> = (0..point.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y0 = f(point)?;
    let w: Vec<f64> = (0..y0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let shifted = |s: f64| -> Vec<f64> { point.iter().zip(&d).map(|(x, di)| x + s * di).collect() };
    let up = f(&shifted(step))?;
    let down = f(&shifted(-step))?;
    let lhs: f64 = up
        .iter()
        .zip(&down)
        .zip(&w)
        .map(|((a, b), wi)| (a - b) / (2.0 * step) * wi)
        .sum();
    let jt = vjp(point, &w)?;
    if jt.len() != point.len() {
        return Err(Error::shape("dot_product_test", format!("vjp returned {} for {}", jt.len(), point.len())));
    }
    let rhs: f64 = jt.iter().zip(&d).map(|(a, b)| a * b).sum();
    let denom = lhs.abs().max(rhs.abs());
    Ok(if denom == 0.0 { 0.0 } else { (lhs - rhs).abs() / denom })
}
