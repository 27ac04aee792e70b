use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{fft_forward, fft_inverse, make_grid, Field, Spectrum, SpectralGrid};

/// Blow-up guard on `max |value|`.
pub const DEFAULT_GUARD: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Burgers1d,
    Ns2d,
}

/// Time integrator.
///
/// `CnEuler` treats advection and forcing with explicit Euler, `Ab2cn` with
/// second-order Adams–Bashforth; diffusion is Crank–Nicolson in both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ab2cn,
    CnEuler,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForcingPattern {
    #[serde(rename = "diagonal")]
    Diagonal,
    #[serde(rename = "isoCircles")]
    IsoCircles,
    #[serde(rename = "petals")]
    Petals,
    #[default]
    #[serde(rename = "none")]
    None,
    /// Supplied by the caller as a field.
    #[serde(rename = "custom")]
    Custom,
}

impl ForcingPattern {
    pub fn name(self) -> &'static str {
        match self {
            ForcingPattern::Diagonal => "diagonal",
            ForcingPattern::IsoCircles => "isoCircles",
            ForcingPattern::Petals => "petals",
            ForcingPattern::None => "none",
            ForcingPattern::Custom => "custom",
        }
    }
}

/// Steady vorticity forcing `g = amplitude * pattern`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSpec {
    pub pattern: ForcingPattern,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

fn default_guard() -> f64 {
    DEFAULT_GUARD
}

impl Default for ForcingSpec {
    fn default() -> Self {
        ForcingSpec {
            pattern: ForcingPattern::None,
            amplitude: 1.0,
        }
    }
}

impl ForcingSpec {
    /// The diagonal pattern at the amplitude used by the classic NS dataset.
    pub fn diagonal() -> Self {
        ForcingSpec {
            pattern: ForcingPattern::Diagonal,
            amplitude: 0.1,
        }
    }

    pub fn none() -> Self {
        ForcingSpec::default()
    }
}

/// Everything needed to run the teacher `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub equation: Equation,
    pub scheme: Scheme,
    /// Kinematic viscosity.
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Times at which states are recorded; each must be a step time.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    /// Points per axis.
    pub n: usize,
    #[serde(default = "unit")]
    pub domain_len: f64,
    #[serde(default)]
    pub forcing: ForcingSpec,
    #[serde(default = "default_guard")]
    pub guard: f64,
}

impl SolverConfig {
    pub fn burgers(n: usize, nu: f64, dt: f64, t_end: f64) -> Self {
        SolverConfig {
            equation: Equation::Burgers1d,
            scheme: Scheme::Ab2cn,
            nu,
            dt,
            t_end,
            snapshots: Vec::new(),
            n,
            domain_len: 1.0,
            forcing: ForcingSpec::none(),
            guard: DEFAULT_GUARD,
        }
    }

    /// NS with frames recorded at every whole time unit from 0 to `t_end`.
    pub fn ns(n: usize, nu: f64, dt: f64, t_end: f64, forcing: ForcingSpec) -> Self {
        let frames = t_end.round() as usize;
        SolverConfig {
            equation: Equation::Ns2d,
            scheme: Scheme::CnEuler,
            nu,
            dt,
            t_end,
            snapshots: (0..=frames).map(|t| t as f64).collect(),
            n,
            domain_len: 1.0,
            forcing,
            guard: DEFAULT_GUARD,
        }
    }

    pub fn dims(&self) -> usize {
        match self.equation {
            Equation::Burgers1d => 1,
            Equation::Ns2d => 2,
        }
    }

    pub fn grid(&self) -> Result<Arc<SpectralGrid>> {
        make_grid(self.dims(), self.n, self.domain_len)
    }

    fn step_of(&self, t: f64, what: &str) -> Result<usize> {
        let s = t / self.dt;
        let r = s.round();
        if !(t >= 0.0) || (s - r).abs() > 1e-6 * r.max(1.0) {
            return Err(Error::Config(format!("{what} {t} is not a multiple of dt {}", self.dt)));
        }
        Ok(r as usize)
    }

    /// Number of time steps to reach `t_end`.
    pub fn steps(&self) -> Result<usize> {
        self.step_of(self.t_end, "t_end")
    }

    /// Step indices of the snapshot times.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let total = self.steps()?;
        let mut out = Vec::with_capacity(self.snapshots.len());
        for &t in &self.snapshots {
            let s = self.step_of(t, "snapshot time")?;
            if s > total {
                return Err(Error::Config(format!("snapshot time {t} is beyond t_end {}", self.t_end)));
            }
            out.push(s);
        }
        if out.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("snapshot times must be strictly increasing".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!("nu must be non-negative, got {}", self.nu)));
        }
        if !(self.guard > 0.0) {
            return Err(Error::Config(format!("guard must be positive, got {}", self.guard)));
        }
        if self.equation == Equation::Burgers1d && self.forcing.pattern != ForcingPattern::None {
            return Err(Error::Config("forcing is only supported for ns2d".into()));
        }
        self.snapshot_steps()?;
        self.grid()?;
        Ok(())
    }
}

/// Vorticity forcing `g = ∂x fy − ∂y fx`, computed spectrally.
pub fn curl_forcing(fx: &Field, fy: &Field) -> Result<Field> {
    if fx.grid().dims() != 2 || fx.grid() != fy.grid() {
        return Err(Error::GridMismatch("curl needs two fields on the same 2D grid".into()));
    }
    let grid = fx.grid();
    let (ax, ay) = (fft_forward(fy)?, fft_forward(fx)?);
    let dx = grid.ddx_factor(0);
    let dy = grid.ddx_factor(1);
    let coeffs = ax
        .coeffs()
        .iter()
        .zip(ay.coeffs())
        .enumerate()
        .map(|(i, (a, b))| dx[i] * a - dy[i] * b)
        .collect();
    Ok(fft_inverse(&Spectrum::new(grid.clone(), coeffs)?))
}

/// Named unit-amplitude vorticity forcing on a 2D grid (coordinates scaled
/// to the unit square).
pub fn forcing_pattern(pattern: ForcingPattern, grid: &Arc<SpectralGrid>) -> Result<Field> {
    if grid.dims() != 2 {
        return Err(Error::InvalidGrid("forcing patterns are two-dimensional".into()));
    }
    let l = grid.len();
    let f: Box<dyn Fn(f64, f64) -> f64> = match pattern {
        ForcingPattern::Diagonal => Box::new(|x, y| {
            let s = 2.0 * PI * (x + y);
            s.sin() + s.cos()
        }),
        ForcingPattern::IsoCircles => Box::new(|x, y| {
            // periodic radius about the centre; cos is even so the field stays smooth
            let r2 = (PI * (x - 0.5)).sin().powi(2) + (PI * (y - 0.5)).sin().powi(2);
            (4.0 * PI * r2.sqrt()).cos()
        }),
        ForcingPattern::Petals => Box::new(|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin()),
        ForcingPattern::None => Box::new(|_, _| 0.0),
        ForcingPattern::Custom => {
            return Err(Error::Config("custom forcing must be supplied as a field".into()));
        }
    };
    Ok(Field::from_fn(grid.clone(), move |x, y| f(x / l, y / l)))
}

/// True iff any value is non-finite or exceeds `guard` in magnitude.
pub fn detect_blowup(field: &Field, guard: f64) -> bool {
    values_blown(field.values(), guard)
}

pub(crate) fn values_blown(values: &[f64], guard: f64) -> bool {
    values.iter().any(|v| !v.is_finite() || v.abs() > guard)
}
