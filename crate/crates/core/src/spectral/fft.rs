//! Real-to-half-complex transforms on stacked fields.
//!
//! Normalization is fixed repo-wide: the forward transform is unscaled and
//! the inverse divides by the number of grid points, so for a field `u`
//! with spectrum `û` Parseval reads `mean(u²) = Σ_full |û|² / points²`.
//! The inverse reads only the real part of self-paired last-axis entries
//! (index 0 and `n/2`), which makes it a real-linear map with a clean
//! adjoint.

use num_complex::Complex64;

use super::grid::SpectralGrid;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

struct Work<'a> {
    grid: &'a SpectralGrid,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl<'a> Work<'a> {
    fn new(grid: &'a SpectralGrid) -> Self {
        let n = grid.n();
        let s = grid
            .fft_plan()
            .get_inplace_scratch_len()
            .max(grid.ifft_plan().get_inplace_scratch_len());
        Work {
            grid,
            buf: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); s],
        }
    }

    fn forward(&mut self) {
        self.grid
            .fft_plan()
            .process_with_scratch(&mut self.buf, &mut self.scratch);
    }

    fn inverse(&mut self) {
        self.grid
            .ifft_plan()
            .process_with_scratch(&mut self.buf, &mut self.scratch);
    }

    /// Real row -> half row (unscaled).
    fn r2c(&mut self, input: &[f64], out: &mut [Complex64]) {
        for (b, &x) in self.buf.iter_mut().zip(input) {
            *b = c(x);
        }
        self.forward();
        out.copy_from_slice(&self.buf[..out.len()]);
    }

    /// Half row -> real row (unscaled), real part of self-paired entries.
    fn c2r(&mut self, input: &[Complex64], out: &mut [f64]) {
        let n = self.grid.n();
        let h = n / 2;
        self.buf[0] = c(input[0].re);
        self.buf[h] = c(input[h].re);
        for k in 1..h {
            self.buf[k] = input[k];
            self.buf[n - k] = input[k].conj();
        }
        self.inverse();
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }
}

/// Forward transform of `input.len() / points` stacked fields.
pub fn rfft_batch(grid: &SpectralGrid, input: &[f64]) -> Vec<Complex64> {
    let p = grid.points();
    let m = grid.modes();
    debug_assert_eq!(input.len() % p, 0);
    let batch = input.len() / p;
    let mut out = vec![Complex64::default(); batch * m];
    let mut w = Work::new(grid);
    let n = grid.n();
    let h = grid.half_n();
    for (src, dst) in input.chunks_exact(p).zip(out.chunks_exact_mut(m)) {
        if grid.dims() == 1 {
            w.r2c(src, dst);
        } else {
            for (row, drow) in src.chunks_exact(n).zip(dst.chunks_exact_mut(h)) {
                w.r2c(row, drow);
            }
            for j in 0..h {
                for i in 0..n {
                    w.buf[i] = dst[i * h + j];
                }
                w.forward();
                for i in 0..n {
                    dst[i * h + j] = w.buf[i];
                }
            }
        }
    }
    out
}

/// Inverse transform (divides by point count) of stacked half spectra.
pub fn irfft_batch(grid: &SpectralGrid, input: &[Complex64]) -> Vec<f64> {
    let p = grid.points();
    let m = grid.modes();
    debug_assert_eq!(input.len() % m, 0);
    let batch = input.len() / m;
    let mut out = vec![0.0; batch * p];
    let mut w = Work::new(grid);
    let n = grid.n();
    let h = grid.half_n();
    let scale = 1.0 / p as f64;
    let mut tmp = vec![Complex64::default(); m];
    for (src, dst) in input.chunks_exact(m).zip(out.chunks_exact_mut(p)) {
        if grid.dims() == 1 {
            w.c2r(src, dst);
        } else {
            tmp.copy_from_slice(src);
            for j in 0..h {
                for i in 0..n {
                    w.buf[i] = tmp[i * h + j];
                }
                w.inverse();
                for i in 0..n {
                    tmp[i * h + j] = w.buf[i];
                }
            }
            for (row, drow) in tmp.chunks_exact(h).zip(dst.chunks_exact_mut(n)) {
                w.c2r(row, drow);
            }
        }
        for v in dst.iter_mut() {
            *v *= scale;
        }
    }
    out
}

/// Unscaled complex transform over every axis of an `n^dims` array.
pub(crate) fn fft_full(n: usize, dims: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = rustfft::FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    if dims == 1 {
        plan.process(data);
        return;
    }
    for row in data.chunks_exact_mut(n) {
        plan.process(row);
    }
    let mut col = vec![Complex64::default(); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        plan.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
}

/// Expand a half spectrum into the full Hermitian spectrum (`n^dims` entries).
pub(crate) fn half_to_full(grid: &SpectralGrid, half: &[Complex64]) -> Vec<Complex64> {
    let n = grid.n();
    let h = grid.half_n();
    let mut full = vec![Complex64::default(); grid.points()];
    if grid.dims() == 1 {
        full[0] = half[0];
        full[n / 2] = half[n / 2];
        for k in 1..n / 2 {
            full[k] = half[k];
            full[n - k] = half[k].conj();
        }
    } else {
        for i in 0..n {
            let ni = (n - i) % n;
            for j in 0..h {
                let v = half[i * h + j];
                full[i * n + j] = v;
                if j > 0 && j < n / 2 {
                    full[ni * n + (n - j)] = v.conj();
                }
            }
        }
    }
    full
}
