//! Stationary Gaussian random fields by spectral synthesis, plus the other
//! input generators used for out-of-distribution pools.

mod kernel;

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::{gauss_laguerre, spectral_density, KernelSpec, MixtureComponent};

use crate::error::{Error, Result};
use crate::spectral::fft::{fft_full, half_to_full};
use crate::spectral::{irfft_batch, Field, SpectralGrid};

/// Target value interval for [`normalize_range`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub lo: f64,
    pub hi: f64,
}

impl RangeSpec {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = RangeSpec { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo < self.hi && self.lo.is_finite() && self.hi.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("range needs lo < hi, got ({}, {})", self.lo, self.hi)))
        }
    }

    /// Short tag such as `(0,1)`.
    pub fn tag(&self) -> String {
        format!("({},{})", self.lo, self.hi)
    }
}

/// Counter-based stream for sample `index` under `seed`.
pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Hermitian white noise in the half-spectrum layout: unit complex normals
/// (`E|ξ|² = 1`) on the non-redundant modes, real normals on self-conjugate
/// modes, and conjugate pairs wherever the half layout stores both members.
pub(crate) fn hermitian_noise(grid: &SpectralGrid, rng: &mut impl Rng) -> Vec<Complex64> {
    let n = grid.n();
    let h = grid.half_n();
    let mut xi = vec![Complex64::default(); grid.modes()];
    let complex = |rng: &mut dyn rand::RngCore| {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
    };
    let real = |rng: &mut dyn rand::RngCore| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0);
    if grid.dims() == 1 {
        for (j, x) in xi.iter_mut().enumerate() {
            *x = if j == 0 || j == n / 2 { real(rng) } else { complex(rng) };
        }
        return xi;
    }
    for i in 0..n {
        let partner = (n - i) % n;
        for j in 0..h {
            let self_paired_col = j == 0 || j == n / 2;
            if !self_paired_col {
                xi[i * h + j] = complex(rng);
            } else if partner == i {
                xi[i * h + j] = real(rng);
            } else if i < partner {
                let z = complex(rng);
                xi[i * h + j] = z;
                xi[partner * h + j] = z.conj();
            }
        }
    }
    xi
}

/// Spectrum `sqrt(N^d λ) ξ` of one sample.
pub(crate) fn synthesize(grid: &SpectralGrid, weights: &[f64], rng: &mut impl Rng) -> Vec<Complex64> {
    let pts = grid.points() as f64;
    hermitian_noise(grid, rng)
        .into_iter()
        .zip(weights)
        .map(|(x, &l)| x * (pts * l).sqrt())
        .collect()
}

/// Draw `count` real fields with covariance `F^{-1} diag(λ) F`, where `λ`
/// comes from [`spectral_density`]. Sample `i` depends only on
/// `(kernel, grid, seed, i)`.
pub fn sample_grf(kernel: &KernelSpec, grid: &Arc<SpectralGrid>, seed: u64, count: usize) -> Result<Vec<Field>> {
    sample_grf_range(kernel, grid, seed, 0..count)
}

/// Samples with indices in `range` of the stream defined by `seed`.
pub fn sample_grf_range(
    kernel: &KernelSpec,
    grid: &Arc<SpectralGrid>,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<Field>> {
    let weights = spectral_density(kernel, grid)?;
    range
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let spec = synthesize(grid, &weights, &mut rng);
            Field::new(grid.clone(), irfft_batch(grid, &spec))
        })
        .collect()
}

/// Sample `index` of the stream as a full complex field, inverted without
/// assuming Hermitian symmetry. Its imaginary part measures how well the
/// synthesized spectrum is symmetrized.
pub fn sample_grf_complex(kernel: &KernelSpec, grid: &SpectralGrid, seed: u64, index: usize) -> Result<Vec<Complex64>> {
    let weights = spectral_density(kernel, grid)?;
    let spec = synthesize(grid, &weights, &mut sample_rng(seed, index as u64));
    let mut full = half_to_full(grid, &spec);
    fft_full(grid.n(), grid.dims(), &mut full, true);
    let scale = 1.0 / grid.points() as f64;
    full.iter_mut().for_each(|z| *z *= scale);
    Ok(full)
}

/// Affine map of `[min, max]` onto `[lo, hi]`; a constant field maps to the
/// range midpoint.
pub fn normalize_range(field: &Field, range: RangeSpec) -> Result<Field> {
    range.validate()?;
    let v = field.values();
    let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::NonFinite { what: "field to normalize", index: v.iter().position(|x| !x.is_finite()).unwrap_or(0) });
    }
    let values = if max == min {
        vec![0.5 * (range.lo + range.hi); v.len()]
    } else {
        let s = (range.hi - range.lo) / (max - min);
        v.iter()
            .map(|&x| {
                if x == min {
                    range.lo
                } else if x == max {
                    range.hi
                } else {
                    range.lo + (x - min) * s
                }
            })
            .collect()
    };
    Field::new(field.grid().clone(), values)
}

/// Continuous periodic piecewise-linear field on a 1D grid with `n_pieces`
/// segments between equally spaced knots (rounded to grid points) whose
/// values are uniform on `[0, 1]`.
pub fn zigzag(grid: &Arc<SpectralGrid>, n_pieces: usize, seed: u64) -> Result<Field> {
    zigzag_indexed(grid, n_pieces, seed, 0)
}

pub(crate) fn zigzag_indexed(grid: &Arc<SpectralGrid>, n_pieces: usize, seed: u64, index: u64) -> Result<Field> {
    if n_pieces < 2 {
        return Err(Error::InvalidParameter(format!("zigzag needs at least 2 pieces, got {n_pieces}")));
    }
    if grid.dims() != 1 {
        return Err(Error::InvalidGrid("zigzag fields are one-dimensional".into()));
    }
    let n = grid.n();
    if n_pieces > n / 2 {
        return Err(Error::InvalidParameter(format!("{n_pieces} pieces do not fit on {n} points")));
    }
    let mut rng = sample_rng(seed, index);
    let knots: Vec<usize> = (0..n_pieces).map(|j| (j * n + n_pieces / 2) / n_pieces).collect();
    let vals: Vec<f64> = (0..n_pieces).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; n];
    for p in 0..n_pieces {
        let (a, b) = (knots[p], if p + 1 < n_pieces { knots[p + 1] } else { n });
        let (va, vb) = (vals[p], vals[(p + 1) % n_pieces]);
        for (i, o) in out[a..b].iter_mut().enumerate() {
            *o = va + (vb - va) * i as f64 / (b - a) as f64;
        }
    }
    Field::new(grid.clone(), out)
}
