//! Periodic-grid Fourier infrastructure shared by the solvers, the neural
//! operators and the diagnostics.
//!
//! Transform normalization: forward unscaled, inverse divides by the point
//! count (see [`fft`]). Spectra are stored half-complex along the last axis.

pub mod fft;
mod grid;

use std::sync::Arc;

use num_complex::Complex64;

pub use fft::{irfft_batch, rfft_batch};
pub use grid::{make_grid, SpectralGrid};

use crate::error::{Error, Result};

/// Real samples of a periodic function on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Arc<SpectralGrid>,
    values: Vec<f64>,
}

/// Half-complex Fourier coefficients of a real field.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Arc<SpectralGrid>,
    coeffs: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Arc<SpectralGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::shape(
                "field",
                format!("{} values for a grid of {} points", values.len(), grid.points()),
            ));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Arc<SpectralGrid>) -> Self {
        let values = vec![0.0; grid.points()];
        Field { grid, values }
    }

    pub fn constant(grid: Arc<SpectralGrid>, c: f64) -> Self {
        let values = vec![c; grid.points()];
        Field { grid, values }
    }

    /// Sample `f(x)` (1D) or `f(x, y)` (2D) at the grid points.
    pub fn from_fn(grid: Arc<SpectralGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = grid.coords();
        let values = if grid.dims() == 1 {
            xs.iter().map(|&x| f(x, 0.0)).collect()
        } else {
            let mut v = Vec::with_capacity(grid.points());
            for &x in &xs {
                for &y in &xs {
                    v.push(f(x, y));
                }
            }
            v
        };
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Circularly shift by whole cells (`shift[axis]`, positive moves content
    /// towards larger coordinates).
    pub fn shifted(&self, shift: [isize; 2]) -> Field {
        Field {
            grid: self.grid.clone(),
            values: shift_values(&self.values, self.grid.n(), self.grid.dims(), shift),
        }
    }
}

/// Circular shift of a raw `n^dims` array.
pub fn shift_values(values: &[f64], n: usize, dims: usize, shift: [isize; 2]) -> Vec<f64> {
    let wrap = |i: usize, s: isize| ((i as isize + s).rem_euclid(n as isize)) as usize;
    let mut out = vec![0.0; values.len()];
    if dims == 1 {
        for (i, &v) in values.iter().enumerate() {
            out[wrap(i, shift[0])] = v;
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                out[wrap(i, shift[0]) * n + wrap(j, shift[1])] = values[i * n + j];
            }
        }
    }
    out
}

impl Spectrum {
    pub fn new(grid: Arc<SpectralGrid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.modes() {
            return Err(Error::shape(
                "spectrum",
                format!("{} coefficients for {} modes", coeffs.len(), grid.modes()),
            ));
        }
        Ok(Spectrum { grid, coeffs })
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    fn map(&self, factor: impl Fn(usize) -> Complex64) -> Spectrum {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * factor(i))
            .collect();
        Spectrum {
            grid: self.grid.clone(),
            coeffs,
        }
    }
}

/// Forward transform; rejects non-finite input.
pub fn fft_forward(field: &Field) -> Result<Spectrum> {
    if let Some(index) = field.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "field",
            index,
        });
    }
    Ok(Spectrum {
        grid: field.grid.clone(),
        coeffs: rfft_batch(&field.grid, &field.values),
    })
}

pub fn fft_inverse(spectrum: &Spectrum) -> Field {
    Field {
        grid: spectrum.grid.clone(),
        values: irfft_batch(&spectrum.grid, &spectrum.coeffs),
    }
}

/// Multiply by `(i 2πk/L)^order` along `axis`. Odd orders zero the Nyquist
/// mode so real fields stay real.
pub fn spectral_derivative(spectrum: &Spectrum, axis: usize, order: u32) -> Result<Spectrum> {
    let grid = spectrum.grid.clone();
    if axis >= grid.dims() {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} out of range for a {}D grid",
            grid.dims()
        )));
    }
    match order {
        1 => {
            let f = grid.ddx_factor(axis).clone();
            Ok(spectrum.map(|i| f[i]))
        }
        2 => {
            let scale = 2.0 * std::f64::consts::PI / grid.len();
            Ok(spectrum.map(|i| {
                let k = grid.mode_wavenumber(i)[axis] as f64 * scale;
                Complex64::new(-k * k, 0.0)
            }))
        }
        _ => Err(Error::InvalidParameter(format!(
            "derivative order must be 1 or 2, got {order}"
        ))),
    }
}

/// Per-mode factors mapping ω̂ to ψ̂ for `-Δψ = ω`, zero mode dropped.
pub(crate) fn poisson_factor(grid: &SpectralGrid) -> Vec<Complex64> {
    grid.k2_safe()
        .iter()
        .enumerate()
        .map(|(i, &k2)| {
            if i == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0 / k2, 0.0)
            }
        })
        .collect()
}

/// Streamfunction from vorticity: `ψ̂ = ω̂ / k²` with `ψ̂(0,0) = 0`.
pub fn poisson_stream(omega_hat: &Spectrum) -> Result<Spectrum> {
    let grid = omega_hat.grid.clone();
    if grid.dims() != 2 {
        return Err(Error::GridMismatch("poisson solve needs a 2D grid".into()));
    }
    let f = poisson_factor(&grid);
    Ok(omega_hat.map(|i| f[i]))
}

/// Velocity `(u, v) = (∂yψ, -∂xψ)` in spectral form.
pub fn velocity_from_stream(psi_hat: &Spectrum) -> Result<(Spectrum, Spectrum)> {
    if psi_hat.grid.dims() != 2 {
        return Err(Error::GridMismatch("velocity needs a 2D grid".into()));
    }
    let dx = psi_hat.grid.ddx_factor(0).clone();
    let dy = psi_hat.grid.ddx_factor(1).clone();
    Ok((psi_hat.map(|i| dy[i]), psi_hat.map(|i| -dx[i])))
}

/// Zero every mode outside the 2/3-rule band.
pub fn dealias(spectrum: &Spectrum) -> Spectrum {
    let mask = spectrum.grid.dealias_mask().to_vec();
    spectrum.map(|i| Complex64::new(if mask[i] { 1.0 } else { 0.0 }, 0.0))
}

/// Per-axis target slots for a source index when resizing a spectrum.
fn resize_targets(k: i64, n_src: usize, n_dst: usize) -> Vec<(usize, f64)> {
    let idx = |k: i64| k.rem_euclid(n_dst as i64) as usize;
    let half = (n_src / 2) as i64;
    if n_dst > n_src {
        if k == -half {
            vec![(idx(half), 0.5), (idx(-half), 0.5)]
        } else {
            vec![(idx(k), 1.0)]
        }
    } else if n_dst == n_src {
        vec![(idx(k), 1.0)]
    } else {
        let dst_half = (n_dst / 2) as i64;
        if k.abs() < dst_half {
            vec![(idx(k), 1.0)]
        } else {
            Vec::new()
        }
    }
}

fn resize(field: &Field, new_n: usize) -> Result<Field> {
    let grid = field.grid.clone();
    let new_grid = make_grid(grid.dims(), new_n, grid.len())?;
    let n = grid.n();
    let dims = grid.dims();
    let mut full: Vec<Complex64> = field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::fft_full(n, dims, &mut full, false);
    let scale = (new_n as f64 / n as f64).powi(dims as i32);
    let mut out = vec![Complex64::default(); new_grid.points()];
    let ks = grid.wavenumbers();
    if dims == 1 {
        for (i, &k) in ks.iter().enumerate() {
            for (t, w) in resize_targets(k, n, new_n) {
                out[t] += full[i] * w * scale;
            }
        }
    } else {
        for (i, &kx) in ks.iter().enumerate() {
            let tx = resize_targets(kx, n, new_n);
            for (j, &ky) in ks.iter().enumerate() {
                for &(a, wa) in &tx {
                    for (b, wb) in resize_targets(ky, n, new_n) {
                        out[a * new_n + b] += full[i * n + j] * (wa * wb * scale);
                    }
                }
            }
        }
    }
    fft::fft_full(new_n, dims, &mut out, true);
    let inv = 1.0 / new_grid.points() as f64;
    Field::new(new_grid, out.iter().map(|c| c.re * inv).collect())
}

/// Zero-pad the spectrum to `new_n` points per axis. The source Nyquist mode
/// is split evenly between `±n/2` so values at coincident points are kept.
pub fn spectral_upsample(field: &Field, new_n: usize) -> Result<Field> {
    if new_n < field.grid.n() {
        return Err(Error::InvalidParameter(format!(
            "upsample target {new_n} is below the source size {}",
            field.grid.n()
        )));
    }
    resize(field, new_n)
}

/// Truncate the spectrum to `new_n` points per axis (modes `|k| < new_n/2`).
pub fn spectral_truncate(field: &Field, new_n: usize) -> Result<Field> {
    if new_n > field.grid.n() {
        return Err(Error::InvalidParameter(format!(
            "truncation target {new_n} exceeds the source size {}",
            field.grid.n()
        )));
    }
    resize(field, new_n)
}

/// `‖ω‖²` over the domain: grid mean of `ω²` times the domain measure.
pub fn enstrophy(field: &Field) -> f64 {
    let mean_sq = field.values.iter().map(|v| v * v).sum::<f64>() / field.values.len() as f64;
    mean_sq * field.grid.volume()
}

/// Shell-summed spectral enstrophy: entry `s` collects modes with
/// `round(|k|) = s` (integer wavenumbers). Sums to [`enstrophy`].
pub fn energy_spectrum(field: &Field) -> Vec<f64> {
    let grid = &field.grid;
    let coeffs = rfft_batch(grid, &field.values);
    let p = grid.points() as f64;
    let norm = grid.volume() / (p * p);
    let shell = |k: [i64; 2]| ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt().round() as usize;
    let max_shell = grid
        .mode_wavenumbers()
        .iter()
        .map(|&k| shell(k))
        .max()
        .unwrap_or(0);
    let mut out = vec![0.0; max_shell + 1];
    for (i, c) in coeffs.iter().enumerate() {
        let k = grid.mode_wavenumber(i);
        out[shell(k)] += norm * grid.hermitian_weight(i) * c.norm_sqr();
    }
    out
}
