//! Post-hoc diagnostics: perturbation averaging against a forcing pattern,
//! the tiling seam check, spectral/enstrophy reports and run manifests.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{num, read_field, write_atomic, write_pgm, CsvTable};
use crate::spectral::fft::{irfft_batch, rfft_batch};
use crate::spectral::{energy_spectrum, enstrophy, Field};
use crate::timing::Timings;

/// Cellwise mean of equally shaped fields.
pub fn avg_perturbation(fields: &[Field]) -> Result<Field> {
    let first = fields.first().ok_or_else(|| Error::InvalidParameter("no perturbations to average".into()))?;
    let mut acc = vec![0.0; first.values().len()];
    for f in fields {
        if f.grid() != first.grid() {
            return Err(Error::GridMismatch("perturbations live on different grids".into()));
        }
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += v;
        }
    }
    let k = fields.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Field::new(first.grid().clone(), acc)
}

/// [`avg_perturbation`] over SGF1 files.
pub fn avg_perturbation_files(paths: &[PathBuf]) -> Result<Field> {
    let fields = paths.iter().map(|p| read_field(p)).collect::<Result<Vec<_>>>()?;
    avg_perturbation(&fields)
}

fn centered(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - m).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c, norm)
}

/// Normalized cross-correlation of the mean-removed fields, maximized over
/// circular shifts of `pattern`. Zero when either field is constant.
pub fn correlate(field: &Field, pattern: &Field) -> Result<f64> {
    if field.grid() != pattern.grid() {
        return Err(Error::GridMismatch("field and pattern live on different grids".into()));
    }
    let grid = field.grid();
    let (a, na) = centered(field.values());
    let (b, nb) = centered(pattern.values());
    let scale = na * nb;
    if scale <= f64::MIN_POSITIVE || !scale.is_finite() {
        return Ok(0.0);
    }
    let fa = rfft_batch(grid, &a);
    let fb = rfft_batch(grid, &b);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    let cross = irfft_batch(grid, &prod);
    let best = cross.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((best / scale).clamp(-1.0, 1.0))
}

/// Largest first difference across the seam of a periodic tiling divided by
/// the largest first difference inside one tile, over every axis. Values
/// near or below 1 mean the tiling is seamless.
pub fn periodicity_check(field: &Field) -> f64 {
    let g = field.grid();
    let n = g.n();
    let v = field.values();
    let two_d = g.dims() == 2;
    let rows = if two_d { n } else { 1 };
    let at = |axis: usize, line: usize, i: usize| match (two_d, axis) {
        (false, _) => v[i],
        (true, 0) => v[i * n + line],
        _ => v[line * n + i],
    };
    let mut seam = 0.0f64;
    let mut interior = 0.0f64;
    for axis in 0..g.dims() {
        for line in 0..rows {
            for i in 0..n - 1 {
                interior = interior.max((at(axis, line, i + 1) - at(axis, line, i)).abs());
            }
            seam = seam.max((at(axis, line, 0) - at(axis, line, n - 1)).abs());
        }
    }
    if interior > 0.0 {
        seam / interior
    } else if seam > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Per-frame spectral summary of a frame stack.
#[derive(Clone, Debug, Default)]
pub struct SpectralReport {
    /// Shell-summed spectra, one per frame.
    pub radial: Vec<Vec<f64>>,
    pub enstrophy: Vec<f64>,
    /// `log10(|c| + 1e-16)` of the Fourier coefficients, zero frequency
    /// centred.
    pub log_abs: Vec<Field>,
}

pub fn spectral_report(frames: &[Field]) -> SpectralReport {
    SpectralReport {
        radial: frames.iter().map(energy_spectrum).collect(),
        enstrophy: frames.iter().map(enstrophy).collect(),
        log_abs: frames.iter().map(log_abs_map).collect(),
    }
}

/// Record-averaged report over frame stacks of equal length: spectra,
/// enstrophy and log-magnitude maps are averaged per frame.
pub fn mean_spectral_report(stacks: &[Vec<Field>]) -> Result<SpectralReport> {
    let first = stacks.first().ok_or_else(|| Error::Config("no frame stacks to report on".into()))?;
    if stacks.iter().any(|s| s.len() != first.len()) {
        return Err(Error::GridMismatch("frame stacks differ in length".into()));
    }
    let reports: Vec<SpectralReport> = stacks.iter().map(|s| spectral_report(s)).collect();
    let k = reports.len() as f64;
    let mut out = reports[0].clone();
    for r in &reports[1..] {
        for (a, b) in out.radial.iter_mut().zip(&r.radial) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        out.enstrophy.iter_mut().zip(&r.enstrophy).for_each(|(x, y)| *x += y);
    }
    out.radial.iter_mut().flatten().for_each(|x| *x /= k);
    out.enstrophy.iter_mut().for_each(|x| *x /= k);
    out.log_abs = (0..first.len())
        .map(|f| avg_perturbation(&reports.iter().map(|r| r.log_abs[f].clone()).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    Ok(out)
}

fn log_abs_map(field: &Field) -> Field {
    let g = field.grid();
    let n = g.n();
    let h = g.half_n();
    let coeffs = rfft_batch(g, field.values());
    let mag = |c: Complex64| (c.norm() + 1e-16).log10();
    let mut out = vec![0.0; g.points()];
    let wrap = |k: i64| k.rem_euclid(n as i64) as usize;
    let centre = |k: i64| (k + n as i64 / 2).rem_euclid(n as i64) as usize;
    if g.dims() == 1 {
        for k in -(n as i64 / 2)..(n as i64 - n as i64 / 2) {
            let c = coeffs[k.unsigned_abs() as usize];
            out[centre(k)] = mag(c);
        }
    } else {
        for kx in -(n as i64 / 2)..(n as i64 - n as i64 / 2) {
            for ky in -(n as i64 / 2)..(n as i64 - n as i64 / 2) {
                // Negative last-axis modes are conjugates of stored ones.
                let c = if ky >= 0 {
                    coeffs[wrap(kx) * h + ky as usize]
                } else {
                    coeffs[wrap(-kx) * h + (-ky) as usize].conj()
                };
                out[centre(kx) * n + centre(ky)] = mag(c);
            }
        }
    }
    Field::new(g.clone(), out).expect("same grid")
}

impl SpectralReport {
    /// Columns `frame,enstrophy`.
    pub fn enstrophy_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["frame", "enstrophy"]);
        for (i, e) in self.enstrophy.iter().enumerate() {
            t.push(vec![i.to_string(), num(*e)]);
        }
        t
    }

    /// Columns `frame,shell,value`.
    pub fn radial_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["frame", "shell", "value"]);
        for (i, s) in self.radial.iter().enumerate() {
            for (k, v) in s.iter().enumerate() {
                t.push(vec![i.to_string(), k.to_string(), num(*v)]);
            }
        }
        t
    }

    /// Write both CSVs and one graymap per frame; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = vec![dir.join("enstrophy.csv"), dir.join("radial_spectrum.csv")];
        self.enstrophy_csv().write(&paths[0])?;
        self.radial_csv().write(&paths[1])?;
        for (i, f) in self.log_abs.iter().enumerate() {
            let p = dir.join(format!("log_abs_{i:03}.pgm"));
            write_pgm(&p, f)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

pub const RUN_SCHEMA: &str = "specgrad-run/1";

/// Record of one command invocation and everything it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    /// Verbatim configuration text.
    pub config: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn new(command: &str, config: &str) -> Self {
        RunManifest {
            schema: RUN_SCHEMA.into(),
            command: command.into(),
            config: config.into(),
            seeds: Vec::new(),
            artifacts: Vec::new(),
            timings: Timings::default(),
        }
    }

    pub fn add_artifact(&mut self, path: impl Into<PathBuf>) {
        let p = path.into();
        if !self.artifacts.contains(&p) {
            self.artifacts.push(p);
        }
    }

    /// Atomically (re)write `dir/run.toml`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("run.toml");
        let text = toml::to_string(self).map_err(|e| Error::format(&path, e.to_string()))?;
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.schema != RUN_SCHEMA {
            return Err(Error::format(path, format!("unsupported schema {:?}", m.schema)));
        }
        Ok(m)
    }
}
