//! Teacher solvers: 1D viscous Burgers and 2D Navier–Stokes in
//! vorticity–streamfunction form, Fourier pseudospectral on periodic grids.
//!
//! Every step is built from diff-engine primitives, so the same code runs
//! forward-only (one scratch tape per step) or recorded on a caller's tape
//! for reverse-mode differentiation through the whole trajectory.

mod config;

use std::sync::Arc;

use num_complex::Complex64;

pub use config::{
    curl_forcing, detect_blowup, forcing_pattern, Equation, ForcingPattern, ForcingSpec, Scheme,
    SolverConfig, DEFAULT_GUARD,
};

use crate::diff::{Tape, Value, Var};
use crate::error::{Error, Result};
use crate::spectral::{irfft_batch, poisson_factor, rfft_batch, Field, SpectralGrid};
use config::values_blown;

type Factor = Arc<[Complex64]>;

fn factor(values: impl Iterator<Item = Complex64>) -> Factor {
    values.collect::<Vec<_>>().into()
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// How the first multistep update treats the missing `N̂^{-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bootstrap {
    /// `N̂^{-1} = 0`: the first step uses `3/2 N̂^0`.
    Zero,
    /// Explicit Euler first step.
    Euler,
}

/// A solver bound to one configuration with precomputed per-mode factors.
#[derive(Debug)]
pub struct Solver {
    cfg: SolverConfig,
    grid: Arc<SpectralGrid>,
    steps: usize,
    snapshot_steps: Vec<usize>,
    advection: bool,
    /// `(1 - ½Δtνk²) / (1 + ½Δtνk²)`
    decay: Factor,
    /// Coefficient of `N̂^n` (mask and sign folded in).
    adv_now: Factor,
    /// Coefficient of `N̂^n` on the first step.
    adv_first: Factor,
    /// Coefficient of `N̂^{n-1}` (AB2 only).
    adv_prev: Option<Factor>,
    /// `Δt ĝ / (1 + ½Δtνk²)`, NS only.
    forcing: Option<Vec<Complex64>>,
    ns: Option<NsFactors>,
    ddx: Factor,
}

#[derive(Debug)]
struct NsFactors {
    u: Factor,
    v: Factor,
    wy: Factor,
}

/// Recorded states of one forward solve.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub frames: Vec<Field>,
    /// State at `t_end`; `None` after a blow-up.
    pub final_state: Option<Field>,
    /// First step whose state was non-finite or beyond the guard.
    pub blowup: Option<usize>,
}

impl Trajectory {
    pub fn output(&self) -> Result<&Field> {
        match (&self.final_state, self.blowup) {
            (Some(f), None) => Ok(f),
            (_, Some(step)) => Err(Error::Blowup { step }),
            (None, None) => unreachable!("trajectory without final state or blow-up"),
        }
    }
}

/// Handles of a solve recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeSolve {
    /// Real frames at the snapshot times.
    pub frames: Vec<Var>,
    /// Real state at `t_end`.
    pub output: Var,
}

impl Solver {
    pub fn new(cfg: &SolverConfig) -> Result<Self> {
        Self::with_forcing(cfg, None)
    }

    /// Build a solver; `custom` supplies the field for the custom pattern.
    pub fn with_forcing(cfg: &SolverConfig, custom: Option<&Field>) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let steps = cfg.steps()?;
        let snapshot_steps = cfg.snapshot_steps()?;
        let dt = cfg.dt;
        let half = |k2: f64| 0.5 * dt * cfg.nu * k2;
        let denom: Vec<f64> = grid.k2().iter().map(|&k2| 1.0 + half(k2)).collect();
        let decay = factor(grid.k2().iter().zip(&denom).map(|(&k2, b)| re((1.0 - half(k2)) / b)));
        let masked = |c: f64| {
            factor(
                grid.dealias_mask()
                    .iter()
                    .zip(&denom)
                    .map(move |(&m, b)| re(if m { c * dt / b } else { 0.0 })),
            )
        };
        let bootstrap = match cfg.equation {
            Equation::Burgers1d => Bootstrap::Zero,
            Equation::Ns2d => Bootstrap::Euler,
        };
        let (adv_now, adv_first, adv_prev) = match cfg.scheme {
            Scheme::CnEuler => (masked(-1.0), masked(-1.0), None),
            Scheme::Ab2cn => {
                let first = match bootstrap {
                    Bootstrap::Zero => masked(-1.5),
                    Bootstrap::Euler => masked(-1.0),
                };
                (masked(-1.5), first, Some(masked(0.5)))
            }
        };

        let (forcing, ns) = match cfg.equation {
            Equation::Burgers1d => (None, None),
            Equation::Ns2d => {
                let g = match (cfg.forcing.pattern, custom) {
                    (ForcingPattern::None, _) => None,
                    (ForcingPattern::Custom, Some(f)) => {
                        if **f.grid() != *grid {
                            return Err(Error::GridMismatch("custom forcing grid differs from solver grid".into()));
                        }
                        Some(f.clone())
                    }
                    (ForcingPattern::Custom, None) => {
                        return Err(Error::Config("custom forcing selected but no field supplied".into()));
                    }
                    (p, _) => Some(forcing_pattern(p, &grid)?),
                };
                let forcing = g.map(|g| {
                    let amp = cfg.forcing.amplitude;
                    rfft_batch(&grid, g.values())
                        .into_iter()
                        .zip(&denom)
                        .map(|(c, b)| c * (amp * dt / b))
                        .collect()
                });
                let inv = poisson_factor(&grid);
                let dx = grid.ddx_factor(0);
                let dy = grid.ddx_factor(1);
                let ns = NsFactors {
                    u: factor(dy.iter().zip(&inv).map(|(d, p)| d * p)),
                    v: factor(dx.iter().zip(&inv).map(|(d, p)| -d * p)),
                    wy: dy.clone(),
                };
                (forcing, Some(ns))
            }
        };
        Ok(Solver {
            cfg: cfg.clone(),
            ddx: grid.ddx_factor(0).clone(),
            grid,
            steps,
            snapshot_steps,
            advection: true,
            decay,
            adv_now,
            adv_first,
            adv_prev,
            forcing,
            ns,
        })
    }

    /// Drop the nonlinear term (pure diffusion plus forcing).
    pub fn without_advection(mut self) -> Self {
        self.advection = false;
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Snapshot times, in order.
    pub fn snapshot_times(&self) -> &[f64] {
        &self.cfg.snapshots
    }

    /// Nonlinear term `N̂` of the state: `u u_x` (Burgers) or
    /// `u ω_x + v ω_y` (NS), undealiased.
    fn nonlinear(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        let g = &self.grid;
        let phys = match &self.ns {
            None => {
                let u = tape.irfft(g, state)?;
                let ux = tape.mode_mul(state, &self.ddx)?;
                let ux = tape.irfft(g, ux)?;
                tape.mul(u, ux)?
            }
            Some(f) => {
                let uh = tape.mode_mul(state, &f.u)?;
                let vh = tape.mode_mul(state, &f.v)?;
                let wxh = tape.mode_mul(state, &self.ddx)?;
                let wyh = tape.mode_mul(state, &f.wy)?;
                let u = tape.irfft(g, uh)?;
                let v = tape.irfft(g, vh)?;
                let wx = tape.irfft(g, wxh)?;
                let wy = tape.irfft(g, wyh)?;
                let a = tape.mul(u, wx)?;
                let b = tape.mul(v, wy)?;
                tape.add(a, b)?
            }
        };
        tape.rfft(g, phys)
    }

    /// One step on `tape`: returns `(state', N̂^n)`. `prev` is `N̂^{n-1}`,
    /// absent on the first step; `forcing` is the constant forcing term.
    pub fn step_on(&self, tape: &mut Tape, state: Var, prev: Option<Var>, forcing: Option<Var>) -> Result<(Var, Option<Var>)> {
        let mut next = tape.mode_mul(state, &self.decay)?;
        let mut nh = None;
        if self.advection {
            let n = self.nonlinear(tape, state)?;
            let coef = if prev.is_some() { &self.adv_now } else { &self.adv_first };
            let term = tape.mode_mul(n, coef)?;
            next = tape.add(next, term)?;
            if let (Some(p), Some(c)) = (prev, &self.adv_prev) {
                let term = tape.mode_mul(p, c)?;
                next = tape.add(next, term)?;
            }
            nh = Some(n);
        }
        if let Some(f) = forcing {
            next = tape.add(next, f)?;
        }
        Ok((next, nh))
    }

    fn forcing_value(&self) -> Option<Value> {
        self.forcing.as_ref().map(|f| Value::Complex(f.clone()))
    }

    fn check(&self, state: &[Complex64], step: usize) -> Result<()> {
        if values_blown(&irfft_batch(&self.grid, state), self.cfg.guard) {
            return Err(Error::Blowup { step });
        }
        Ok(())
    }

    /// Record the whole solve from the real input `a` on `tape`.
    ///
    /// Fails with [`Error::Blowup`] at the first step whose state is
    /// non-finite or beyond the guard.
    pub fn solve_on(&self, tape: &mut Tape, a: Var) -> Result<TapeSolve> {
        if tape.value(a).len() != self.grid.points() || tape.value(a).is_complex() {
            return Err(Error::shape("solve", format!("input of {} values for {} points", tape.value(a).len(), self.grid.points())));
        }
        let forcing = self.forcing_value().map(|v| tape.constant(v));
        let mut state = tape.rfft(&self.grid, a)?;
        let mut prev = None;
        let mut frames = Vec::with_capacity(self.snapshot_steps.len());
        let mut snaps = self.snapshot_steps.iter().peekable();
        if snaps.peek() == Some(&&0) {
            frames.push(a);
            snaps.next();
        }
        for k in 1..=self.steps {
            let (next, nh) = self.step_on(tape, state, prev, forcing)?;
            state = next;
            prev = nh;
            self.check(tape.complex(state), k)?;
            if snaps.peek() == Some(&&k) {
                frames.push(tape.irfft(&self.grid, state)?);
                snaps.next();
            }
        }
        let output = match (self.snapshot_steps.last(), frames.last()) {
            (Some(&s), Some(&f)) if s == self.steps => f,
            _ => tape.irfft(&self.grid, state)?,
        };
        Ok(TapeSolve { frames, output })
    }

    /// Advance a spectral state by one step without keeping history.
    fn advance(&self, state: Vec<Complex64>, prev: Option<Vec<Complex64>>) -> Result<(Vec<Complex64>, Option<Vec<Complex64>>)> {
        let mut tape = Tape::new();
        let s = tape.constant(Value::Complex(state));
        let p = prev.map(|p| tape.constant(Value::Complex(p)));
        let f = self.forcing_value().map(|v| tape.constant(v));
        let (next, nh) = self.step_on(&mut tape, s, p, f)?;
        let next = tape.complex(next).to_vec();
        let nh = nh.map(|v| tape.complex(v).to_vec());
        Ok((next, nh))
    }

    /// Forward solve; a blow-up is reported in the trajectory, keeping the
    /// frames recorded before it.
    pub fn solve(&self, a: &Field) -> Result<Trajectory> {
        if **a.grid() != *self.grid {
            return Err(Error::GridMismatch(format!("input grid {:?} vs solver grid {:?}", a.grid(), self.grid)));
        }
        if let Some(index) = a.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "initial condition", index });
        }
        let mut traj = Trajectory {
            times: Vec::new(),
            frames: Vec::new(),
            final_state: None,
            blowup: None,
        };
        let mut snaps = self.snapshot_steps.iter().peekable();
        if snaps.peek() == Some(&&0) {
            traj.times.push(0.0);
            traj.frames.push(a.clone());
            snaps.next();
        }
        let mut state = rfft_batch(&self.grid, a.values());
        let mut prev = None;
        let mut phys = a.values().to_vec();
        for k in 1..=self.steps {
            let (next, nh) = self.advance(state, prev)?;
            state = next;
            prev = nh;
            phys = irfft_batch(&self.grid, &state);
            if values_blown(&phys, self.cfg.guard) {
                traj.blowup = Some(k);
                return Ok(traj);
            }
            if snaps.peek() == Some(&&k) {
                traj.times.push(k as f64 * self.cfg.dt);
                traj.frames.push(Field::new(self.grid.clone(), phys.clone())?);
                snaps.next();
            }
        }
        traj.final_state = Some(Field::new(self.grid.clone(), phys)?);
        Ok(traj)
    }

    /// Forward solve returning only the final state.
    pub fn final_state(&self, a: &Field) -> Result<Field> {
        self.solve(a)?.output().cloned()
    }
}

/// One Burgers step in spectral form: `(û', N̂^n)`.
pub fn burgers_step(solver: &Solver, u_hat: &[Complex64], prev_nonlinear: Option<&[Complex64]>) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if solver.cfg.equation != Equation::Burgers1d {
        return Err(Error::Config("burgers_step needs a burgers1d solver".into()));
    }
    let (next, nh) = solver.advance(u_hat.to_vec(), prev_nonlinear.map(|p| p.to_vec()))?;
    Ok((next, nh.unwrap_or_else(|| vec![Complex64::default(); u_hat.len()])))
}

/// One NS step in spectral form: `(ω̂', N̂^n)`; forcing comes from the
/// solver configuration.
pub fn ns_step(solver: &Solver, omega_hat: &[Complex64], prev_nonlinear: Option<&[Complex64]>) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if solver.cfg.equation != Equation::Ns2d {
        return Err(Error::Config("ns_step needs an ns2d solver".into()));
    }
    let (next, nh) = solver.advance(omega_hat.to_vec(), prev_nonlinear.map(|p| p.to_vec()))?;
    Ok((next, nh.unwrap_or_else(|| vec![Complex64::default(); omega_hat.len()])))
}
