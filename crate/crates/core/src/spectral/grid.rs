use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Periodic square grid on `[0, L)^dims` with precomputed wavenumber tables.
///
/// Fields are stored row-major with axis 0 = x first. Spectra use the
/// half-complex layout: the last axis keeps modes `0..=n/2` only, the first
/// axis (2D) keeps all `n` modes in FFT order. The last-axis Nyquist index
/// `n/2` carries wavenumber `-n/2`.
pub struct SpectralGrid {
    dims: usize,
    n: usize,
    len: f64,
    k_axis: Vec<i64>,
    /// Wavenumbers of every half-spectrum mode, one entry per axis.
    mode_k: Vec<[i64; 2]>,
    k2: Vec<f64>,
    k2_safe: Vec<f64>,
    mask: Vec<bool>,
    /// First-derivative factors `i 2πk/L` per axis, Nyquist zeroed.
    ddx: Vec<Arc<[Complex64]>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("dims", &self.dims)
            .field("n", &self.n)
            .field("len", &self.len)
            .finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.n == other.n && self.len == other.len
    }
}

/// Build a grid; `n` must be even and at least 8, `len` positive.
pub fn make_grid(dims: usize, n: usize, len: f64) -> Result<Arc<SpectralGrid>> {
    SpectralGrid::new(dims, n, len).map(Arc::new)
}

impl SpectralGrid {
    pub fn new(dims: usize, n: usize, len: f64) -> Result<Self> {
        if dims != 1 && dims != 2 {
            return Err(Error::InvalidGrid(format!("dims must be 1 or 2, got {dims}")));
        }
        if n % 2 != 0 || n < 8 {
            return Err(Error::InvalidGrid(format!("n must be even and >= 8, got {n}")));
        }
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidGrid(format!("domain length must be positive, got {len}")));
        }
        let half = n / 2;
        let k_axis: Vec<i64> = (0..n)
            .map(|i| if i < half { i as i64 } else { i as i64 - n as i64 })
            .collect();
        let k_last: Vec<i64> = (0..=half)
            .map(|j| if j < half { j as i64 } else { -(half as i64) })
            .collect();

        let mut mode_k = Vec::new();
        if dims == 1 {
            mode_k.extend(k_last.iter().map(|&k| [k, 0]));
        } else {
            for &kx in &k_axis {
                for &ky in &k_last {
                    mode_k.push([kx, ky]);
                }
            }
        }
        let cut = (n / 3) as i64;
        let scale = 2.0 * PI / len;
        let mut k2 = Vec::with_capacity(mode_k.len());
        let mut mask = Vec::with_capacity(mode_k.len());
        for k in &mode_k {
            let (a, b) = (k[0] as f64 * scale, k[1] as f64 * scale);
            k2.push(a * a + b * b);
            mask.push(k[..dims].iter().all(|&c| c.abs() <= cut));
        }
        let mut k2_safe = k2.clone();
        k2_safe[0] = 1.0;

        let nyq = -(half as i64);
        let ddx = (0..dims)
            .map(|axis| {
                mode_k
                    .iter()
                    .map(|k| {
                        if k[axis] == nyq {
                            Complex64::new(0.0, 0.0)
                        } else {
                            Complex64::new(0.0, k[axis] as f64 * scale)
                        }
                    })
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect();

        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(SpectralGrid {
            dims,
            n,
            len,
            k_axis,
            mode_k,
            k2,
            k2_safe,
            mask,
            ddx,
            fwd,
            inv,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Domain length per axis.
    pub fn len(&self) -> f64 {
        self.len
    }

    /// Total number of grid points.
    pub fn points(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    /// Number of stored half-spectrum modes.
    pub fn modes(&self) -> usize {
        self.mode_k.len()
    }

    /// Last-axis length of the half spectrum (`n/2 + 1`).
    pub fn half_n(&self) -> usize {
        self.n / 2 + 1
    }

    /// Domain measure `L^dims`.
    pub fn volume(&self) -> f64 {
        self.len.powi(self.dims as i32)
    }

    /// Spacing between grid points.
    pub fn dx(&self) -> f64 {
        self.len / self.n as f64
    }

    /// Signed integer wavenumbers of one full axis in FFT order.
    pub fn wavenumbers(&self) -> &[i64] {
        &self.k_axis
    }

    /// Integer wavenumbers (per axis) of half-spectrum mode `idx`.
    pub fn mode_wavenumber(&self, idx: usize) -> [i64; 2] {
        self.mode_k[idx]
    }

    pub fn mode_wavenumbers(&self) -> &[[i64; 2]] {
        &self.mode_k
    }

    /// Squared angular wavenumber `Σ (2πk/L)^2` per half-spectrum mode.
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// `k2` with the zero mode replaced by 1.
    pub fn k2_safe(&self) -> &[f64] {
        &self.k2_safe
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.mask
    }

    pub(crate) fn ddx_factor(&self, axis: usize) -> &Arc<[Complex64]> {
        &self.ddx[axis]
    }

    /// Spatial coordinates along one axis, `x_j = j L / n`.
    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.dx()).collect()
    }

    /// Index of the last-axis half coordinate of mode `idx`.
    pub(crate) fn last_index(&self, idx: usize) -> usize {
        idx % self.half_n()
    }

    /// Weight of a half-spectrum mode when summing over the full spectrum:
    /// 1 for self-paired last-axis entries (0 and n/2), 2 otherwise.
    pub fn hermitian_weight(&self, idx: usize) -> f64 {
        let j = self.last_index(idx);
        if j == 0 || j == self.n / 2 {
            1.0
        } else {
            2.0
        }
    }

    pub(crate) fn fft_plan(&self) -> &Arc<dyn Fft<f64>> {
        &self.fwd
    }

    pub(crate) fn ifft_plan(&self) -> &Arc<dyn Fft<f64>> {
        &self.inv
    }
}
