use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::spectral::SpectralGrid;

/// One Gaussian bump of a spectral mixture, in angular-frequency units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Mean frequency per axis.
    pub mean: Vec<f64>,
    /// Diagonal covariance per axis.
    pub variance: Vec<f64>,
}

/// Stationary covariance kernel, identified by its spectral density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `σ² exp(-r²/(2ℓ²))`
    Rbf { variance: f64, length_scale: f64 },
    Matern { variance: f64, length_scale: f64, nu: f64 },
    /// `σ² (1 + r²/(2αℓ²))^{-α}`
    Rq { variance: f64, length_scale: f64, alpha: f64 },
    /// `σ² Π_axis exp(-2 sin²(π r/p)/ℓ²)`
    Periodic { variance: f64, length_scale: f64, period: f64 },
    SpectralMixture { components: Vec<MixtureComponent> },
    /// Flat per-mode weight `σ²` (uncorrelated grid values).
    White { variance: f64 },
}

impl KernelSpec {
    pub fn rbf(variance: f64, length_scale: f64) -> Self {
        KernelSpec::Rbf { variance, length_scale }
    }

    pub fn matern(variance: f64, length_scale: f64, nu: f64) -> Self {
        KernelSpec::Matern { variance, length_scale, nu }
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Matern { .. } => "matern",
            KernelSpec::Rq { .. } => "rq",
            KernelSpec::Periodic { .. } => "periodic",
            KernelSpec::SpectralMixture { .. } => "spectral_mixture",
            KernelSpec::White { .. } => "white",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{} {name} must be positive, got {v}", self.family())))
            }
        };
        match self {
            KernelSpec::Rbf { variance, length_scale } => {
                positive("variance", *variance)?;
                positive("length_scale", *length_scale)
            }
            KernelSpec::Matern { variance, length_scale, nu } => {
                positive("variance", *variance)?;
                positive("length_scale", *length_scale)?;
                positive("nu", *nu)
            }
            KernelSpec::Rq { variance, length_scale, alpha } => {
                positive("variance", *variance)?;
                positive("length_scale", *length_scale)?;
                positive("alpha", *alpha)
            }
            KernelSpec::Periodic { variance, length_scale, period } => {
                positive("variance", *variance)?;
                positive("length_scale", *length_scale)?;
                positive("period", *period)
            }
            KernelSpec::SpectralMixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidParameter("spectral mixture needs at least one component".into()));
                }
                for c in components {
                    positive("weight", c.weight)?;
                    for &v in &c.variance {
                        positive("component variance", v)?;
                    }
                    if c.mean.iter().any(|m| !m.is_finite()) {
                        return Err(Error::InvalidParameter("mixture mean must be finite".into()));
                    }
                }
                Ok(())
            }
            KernelSpec::White { variance } => positive("variance", *variance),
        }
    }

    /// Covariance `k(r)` as a function of the per-axis lag. Not defined for
    /// the white kernel, whose covariance lives on the grid only.
    pub fn covariance(&self, lag: &[f64]) -> Option<f64> {
        let r2: f64 = lag.iter().map(|x| x * x).sum();
        match self {
            KernelSpec::Rbf { variance, length_scale } => Some(variance * (-r2 / (2.0 * length_scale.powi(2))).exp()),
            KernelSpec::Matern { variance, length_scale, nu } => {
                let r = r2.sqrt();
                if r == 0.0 {
                    return Some(*variance);
                }
                let s = (2.0 * nu).sqrt() * r / length_scale;
                let bessel = bessel_k(*nu, s)?;
                Some(variance * 2f64.powf(1.0 - nu) / gamma(*nu) * s.powf(*nu) * bessel)
            }
            KernelSpec::Rq { variance, length_scale, alpha } => {
                Some(variance * (1.0 + r2 / (2.0 * alpha * length_scale.powi(2))).powf(-alpha))
            }
            KernelSpec::Periodic { variance, length_scale, period } => Some(
                variance
                    * lag
                        .iter()
                        .map(|x| (-2.0 * (PI * x / period).sin().powi(2) / length_scale.powi(2)).exp())
                        .product::<f64>(),
            ),
            KernelSpec::SpectralMixture { components } => Some(
                components
                    .iter()
                    .map(|c| {
                        let mut v = c.weight;
                        for (a, x) in lag.iter().enumerate() {
                            v *= (-0.5 * c.variance[a] * x * x).exp() * (c.mean[a] * x).cos();
                        }
                        v
                    })
                    .sum(),
            ),
            KernelSpec::White { .. } => None,
        }
    }

    /// Continuous spectral density `S(ω)` with `k(r) = (2π)^{-d} ∫ S(ω) e^{iω·r} dω`.
    /// The periodic kernel has a line spectrum and the white kernel a flat
    /// per-mode weight; both return `None`.
    pub fn density(&self, omega: &[f64]) -> Option<f64> {
        let d = omega.len() as f64;
        let w2: f64 = omega.iter().map(|x| x * x).sum();
        match self {
            KernelSpec::Rbf { variance, length_scale } => {
                let l2 = length_scale * length_scale;
                Some(variance * (2.0 * PI * l2).powf(d / 2.0) * (-0.5 * l2 * w2).exp())
            }
            KernelSpec::Matern { variance, length_scale, nu } => {
                let l2 = length_scale * length_scale;
                let log_c = d * 2f64.ln() + 0.5 * d * PI.ln() + ln_gamma(nu + d / 2.0) + nu * (2.0 * nu).ln()
                    - ln_gamma(*nu)
                    - 2.0 * nu * length_scale.ln();
                Some(variance * (log_c - (nu + d / 2.0) * (2.0 * nu / l2 + w2).ln()).exp())
            }
            KernelSpec::Rq { variance, length_scale, alpha } => {
                // Gamma(α, rate αℓ²) mixture over the RBF precision τ = 1/ℓ_τ²
                let (nodes, weights) = gauss_laguerre(16, alpha - 1.0);
                let rate = alpha * length_scale * length_scale;
                let s: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| {
                        let tau = x / rate;
                        w * (2.0 * PI / tau).powf(d / 2.0) * (-0.5 * w2 / tau).exp()
                    })
                    .sum();
                Some(variance * s)
            }
            KernelSpec::SpectralMixture { components } => {
                let s: f64 = components
                    .iter()
                    .map(|c| {
                        let gauss = |sign: f64| {
                            let mut p = 1.0;
                            for (a, &w) in omega.iter().enumerate() {
                                let v = c.variance[a];
                                let z = w - sign * c.mean[a];
                                p *= (-0.5 * z * z / v).exp() / (2.0 * PI * v).sqrt();
                            }
                            p
                        };
                        c.weight * 0.5 * (gauss(1.0) + gauss(-1.0))
                    })
                    .sum();
                Some((2.0 * PI).powf(d) * s)
            }
            KernelSpec::Periodic { .. } | KernelSpec::White { .. } => None,
        }
    }
}

/// Nodes and normalized weights of `n`-point generalized Gauss–Laguerre
/// quadrature for `∫ x^a e^{-x} f(x) dx / Γ(a+1)` (Golub–Welsch).
pub fn gauss_laguerre(n: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let fi = i as f64;
        j[(i, i)] = 2.0 * fi + a + 1.0;
        if i + 1 < n {
            let off = ((fi + 1.0) * (fi + 1.0 + a)).sqrt();
            j[(i, i + 1)] = off;
            j[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.into_iter().unzip()
}

/// `e^{-z} I_m(z)` by the trapezoid rule on `(1/π)∫_0^π e^{z(cos θ - 1)} cos(mθ) dθ`.
fn scaled_bessel_i(m: usize, z: f64) -> f64 {
    const PANELS: usize = 4096;
    let h = PI / PANELS as f64;
    let f = |t: f64| (z * (t.cos() - 1.0)).exp() * (m as f64 * t).cos();
    let mut s = 0.5 * (f(0.0) + f(PI));
    for i in 1..PANELS {
        s += f(i as f64 * h);
    }
    s * h / PI
}

/// Modified Bessel function of the second kind `K_ν(x)` by quadrature of
/// `∫_0^∞ e^{-x cosh t} cosh(νt) dt`.
fn bessel_k(nu: f64, x: f64) -> Option<f64> {
    if !(x > 0.0) {
        return None;
    }
    let upper = ((50.0 / x).max(1.0)).acosh() + 5.0;
    let panels = 20_000;
    let h = upper / panels as f64;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut s = 0.5 * (f(0.0) + f(upper));
    for i in 1..panels {
        s += f(i as f64 * h);
    }
    Some(s * h)
}

/// Per-mode weights `λ_k` in the half-spectrum layout, so that a field with
/// spectrum `sqrt(N^d λ) ξ` has circulant covariance `F^{-1} diag(λ) F`.
///
/// For densities, `λ_k = (N/L)^d S(2πk/L)`; the periodic kernel places each
/// spectral line on its nearest grid mode.
pub fn spectral_density(kernel: &KernelSpec, grid: &SpectralGrid) -> Result<Vec<f64>> {
    kernel.validate()?;
    let d = grid.dims();
    if let KernelSpec::SpectralMixture { components } = kernel {
        if components.iter().any(|c| c.mean.len() != d || c.variance.len() != d) {
            return Err(Error::InvalidParameter(format!("mixture components must have {d} axes")));
        }
    }
    let modes = grid.mode_wavenumbers();
    let out = match kernel {
        KernelSpec::White { variance } => vec![*variance; modes.len()],
        KernelSpec::Periodic { variance, length_scale, period } => {
            let lines = periodic_lines(grid, *length_scale, *period);
            let pts = grid.points() as f64;
            modes
                .iter()
                .map(|k| {
                    let per_axis: f64 = k[..d]
                        .iter()
                        .map(|&kk| lines.get(kk.unsigned_abs() as usize).copied().unwrap_or(0.0))
                        .product();
                    variance * pts * per_axis
                })
                .collect()
        }
        _ => {
            let scale = 2.0 * PI / grid.len();
            let norm = (grid.n() as f64 / grid.len()).powi(d as i32);
            modes
                .iter()
                .map(|k| {
                    let omega: Vec<f64> = k[..d].iter().map(|&kk| kk as f64 * scale).collect();
                    norm * kernel.density(&omega).expect("density kernel")
                })
                .collect()
        }
    };
    if let Some(i) = out.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("spectral density invalid at mode {i}: {}", out[i])));
    }
    Ok(out)
}

/// Line amplitudes of the 1D periodic kernel on the grid's `|k|` axis,
/// truncated below `1e-14` of the peak.
fn periodic_lines(grid: &SpectralGrid, length_scale: f64, period: f64) -> Vec<f64> {
    let half = grid.n() / 2;
    let z = 1.0 / (length_scale * length_scale);
    let step = grid.len() / period;
    let mut lines = vec![0.0; half + 1];
    let peak = scaled_bessel_i(0, z);
    for m in 0.. {
        let k = (m as f64 * step).round() as usize;
        if k > half {
            break;
        }
        let amp = scaled_bessel_i(m, z);
        if amp < 1e-14 * peak {
            break;
        }
        // lines at ±m coincide on the zero and Nyquist modes
        let copies = if (k == 0 && m > 0) || k == half { 2.0 } else { 1.0 };
        lines[k] += copies * amp;
    }
    lines
}
