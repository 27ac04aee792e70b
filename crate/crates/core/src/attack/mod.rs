//! Projected-gradient attacks on student operators: sign/normalized PGD in
//! L∞ and L2 balls, the Adam-direction variant, adaptive substepping when a
//! step blows up, and batch execution.

mod objective;

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use objective::{Dictionary, GradMode, Pipeline, TeacherStudent};

use crate::error::{Error, Result};
use crate::grf::sample_rng;
use crate::io::{num, CsvTable};
use crate::timing::{secs, Timings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Inf,
    L2,
}

/// Ascent direction rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `sign(g)` in the L∞ ball, `g / (‖g‖₂ + δ)` in the L2 ball.
    #[default]
    Pgd,
    /// Bias-corrected Adam moments, L2-normalized direction.
    Adam,
}

pub const DEFAULT_LADDER: [f64; 7] = [1.0, 0.5, 0.25, 0.1, 0.05, 0.01, 0.001];

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

fn default_stab() -> f64 {
    1e-12
}

fn default_ladder() -> Vec<f64> {
    DEFAULT_LADDER.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub norm: Norm,
    #[serde(default)]
    pub method: Method,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    #[serde(default)]
    pub random_start: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// `δ` in `g / (‖g‖ + δ)` and `δ_stab` in the Adam normalization.
    #[serde(default = "default_stab")]
    pub delta_stab: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<[f64; 2]>,
    /// Step-size multipliers tried in order when a step blows up.
    #[serde(default = "default_ladder")]
    pub ladder: Vec<f64>,
}

impl AttackConfig {
    pub fn new(norm: Norm, method: Method, epsilon: f64, alpha: f64, steps: usize) -> Self {
        AttackConfig {
            norm,
            method,
            epsilon,
            alpha,
            steps,
            random_start: false,
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            delta_stab: default_stab(),
            clip: None,
            ladder: default_ladder(),
        }
    }

    /// A zero radius is accepted: every iterate stays at the nominal input.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and non-negative, got {}", self.epsilon));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.steps == 0 {
            return bad("attack needs at least one step".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0 && self.delta_stab > 0.0) {
            return bad("adam_eps and delta_stab must be positive".into());
        }
        let l = &self.ladder;
        if l.is_empty() || l.windows(2).any(|w| w[1] >= w[0]) || l[0] > 1.0 || *l.last().unwrap() < 1e-3 {
            return bad(format!("ladder must be strictly decreasing within [1e-3, 1], got {l:?}"));
        }
        if let Some([lo, hi]) = self.clip {
            if !(lo < hi) {
                return bad(format!("clip needs lo < hi, got [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

/// Loss and input gradient at one iterate. `true_loss` is set when the
/// optimized loss is a surrogate.
#[derive(Clone, Debug, Default)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub true_loss: Option<f64>,
    pub timings: Timings,
}

impl LossEval {
    fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.true_loss.is_none_or(f64::is_finite) && self.grad.iter().all(|g| g.is_finite())
    }
}

/// Something the attack can maximize.
pub trait Objective: Sync {
    fn eval(&self, x: &[f64]) -> Result<LossEval>;
}

impl<F: Fn(&[f64]) -> Result<LossEval> + Sync> Objective for F {
    fn eval(&self, x: &[f64]) -> Result<LossEval> {
        self(x)
    }
}

/// One logged iterate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub true_loss: f64,
    pub surrogate_loss: f64,
    /// Step size actually applied (0 for the start and for frozen steps).
    pub alpha_used: f64,
    /// A larger step was rejected as non-finite before this one.
    pub blowup: bool,
    /// `‖x - x0‖` in the attack norm.
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub records: Vec<StepRecord>,
    pub final_input: Vec<f64>,
    pub perturbation: Vec<f64>,
    /// Every ladder entry blew up; the last finite iterate was kept.
    pub frozen: bool,
    pub timings: Timings,
}

impl AttackResult {
    pub fn initial_loss(&self) -> f64 {
        self.records[0].true_loss
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().unwrap().true_loss
    }

    pub fn true_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.true_loss).collect()
    }

    pub fn surrogate_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.surrogate_loss).collect()
    }

    /// Loss curve with columns `step,true_loss,surrogate_loss,alpha_used,blowup_flag`.
    pub fn curve_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["step", "true_loss", "surrogate_loss", "alpha_used", "blowup_flag"]);
        for r in &self.records {
            t.push(vec![
                r.step.to_string(),
                num(r.true_loss),
                num(r.surrogate_loss),
                num(r.alpha_used),
                (r.blowup as u8).to_string(),
            ]);
        }
        t
    }
}

pub fn norm_l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn radius(norm: Norm, x: &[f64], x0: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    match norm {
        Norm::Inf => norm_inf(&d),
        Norm::L2 => norm_l2(&d),
    }
}

/// Adam moment state of one attack.
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Direction `u` for gradient `g`, before scaling by the step size.
fn direction(cfg: &AttackConfig, g: &[f64], moments: &mut Moments) -> Vec<f64> {
    match (cfg.method, cfg.norm) {
        (Method::Pgd, Norm::Inf) => g.iter().map(|&x| if x == 0.0 { 0.0 } else { x.signum() }).collect(),
        (Method::Pgd, Norm::L2) => {
            let s = norm_l2(g) + cfg.delta_stab;
            g.iter().map(|x| x / s).collect()
        }
        (Method::Adam, _) => {
            let mo = moments;
            mo.t += 1;
            let (b1, b2) = (cfg.beta1, cfg.beta2);
            let c1 = 1.0 - b1.powi(mo.t);
            let c2 = 1.0 - b2.powi(mo.t);
            let d: Vec<f64> = g
                .iter()
                .zip(mo.m.iter_mut().zip(mo.v.iter_mut()))
                .map(|(&gi, (m, v))| {
                    *m = b1 * *m + (1.0 - b1) * gi;
                    *v = b2 * *v + (1.0 - b2) * gi * gi;
                    (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps)
                })
                .collect();
            let dn = norm_l2(&d);
            if dn < 1e-12 {
                d
            } else {
                d.iter().map(|x| x / (dn + cfg.delta_stab)).collect()
            }
        }
    }
}

/// Project `x` onto the ball around `x0`, then apply the optional clip.
fn project(cfg: &AttackConfig, x: &mut [f64], x0: &[f64]) {
    let eps = cfg.epsilon;
    match cfg.norm {
        Norm::Inf => {
            for (xi, &ci) in x.iter_mut().zip(x0) {
                *xi = xi.clamp(ci - eps, ci + eps);
            }
        }
        Norm::L2 => {
            let dn = radius(Norm::L2, x, x0);
            if dn > eps {
                let s = match cfg.method {
                    Method::Pgd => eps / dn,
                    Method::Adam => eps / (dn + 1e-12),
                };
                for (xi, &ci) in x.iter_mut().zip(x0) {
                    *xi = ci + (*xi - ci) * s;
                }
            }
        }
    }
    if let Some([lo, hi]) = cfg.clip {
        x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
}

fn random_start(cfg: &AttackConfig, x0: &[f64], index: u64) -> Vec<f64> {
    let mut rng = sample_rng(cfg.seed, index);
    let d = x0.len();
    let noise: Vec<f64> = match cfg.norm {
        Norm::Inf => (0..d).map(|_| cfg.epsilon * (2.0 * rng.random::<f64>() - 1.0)).collect(),
        Norm::L2 => {
            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let r = cfg.epsilon * rng.random::<f64>().powf(1.0 / d as f64) / norm_l2(&g).max(f64::MIN_POSITIVE);
            g.iter().map(|v| v * r).collect()
        }
    };
    let mut x: Vec<f64> = x0.iter().zip(&noise).map(|(a, b)| a + b).collect();
    project(cfg, &mut x, x0);
    x
}

fn eval_checked(obj: &dyn Objective, x: &[f64]) -> Result<Option<LossEval>> {
    match obj.eval(x) {
        Ok(e) if e.is_finite() => Ok(Some(e)),
        Ok(_) => Ok(None),
        Err(e) if e.is_non_finite() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Run the attack configured by `cfg` from `x0`. `index` selects the
/// random-start stream so that batched runs match sequential ones.
pub fn attack_indexed(x0: &[f64], obj: &dyn Objective, cfg: &AttackConfig, index: u64) -> Result<AttackResult> {
    cfg.validate()?;
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "attack start", index: i });
    }
    let mut x = if cfg.random_start { random_start(cfg, x0, index) } else { x0.to_vec() };
    let start = Instant::now();
    let mut cur = eval_checked(obj, &x)?.ok_or(Error::NonFinite { what: "loss at the attack start", index: 0 })?;
    if cur.grad.len() != x.len() {
        return Err(Error::shape("attack", format!("gradient of {} values for {} inputs", cur.grad.len(), x.len())));
    }
    let mut timings = cur.timings;
    let rec = |step, e: &LossEval, alpha_used, blowup, x: &[f64]| StepRecord {
        step,
        true_loss: e.true_loss.unwrap_or(e.loss),
        surrogate_loss: e.loss,
        alpha_used,
        blowup,
        radius: radius(cfg.norm, x, x0),
    };
    let mut records = vec![rec(0, &cur, 0.0, false, &x)];
    let mut moments = Moments {
        m: vec![0.0; x.len()],
        v: vec![0.0; x.len()],
        t: 0,
    };
    let mut frozen = false;
    for step in 1..=cfg.steps {
        let t_upd = Instant::now();
        let u = direction(cfg, &cur.grad, &mut moments);
        timings.update += secs(t_upd.elapsed());
        let mut accepted = None;
        for (k, &mult) in cfg.ladder.iter().enumerate() {
            let t_upd = Instant::now();
            let a = cfg.alpha * mult;
            let mut cand: Vec<f64> = x.iter().zip(&u).map(|(xi, ui)| xi + a * ui).collect();
            project(cfg, &mut cand, x0);
            timings.update += secs(t_upd.elapsed());
            if let Some(e) = eval_checked(obj, &cand)? {
                timings += e.timings;
                accepted = Some((cand, e, a, k > 0));
                break;
            }
        }
        match accepted {
            Some((cand, e, a, blew)) => {
                let t_upd = Instant::now();
                x = cand;
                cur = e;
                records.push(rec(step, &cur, a, blew, &x));
                timings.update += secs(t_upd.elapsed());
            }
            None => {
                frozen = true;
                records.push(rec(step, &cur, 0.0, true, &x));
                break;
            }
        }
    }
    timings.total = secs(start.elapsed());
    let perturbation = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    Ok(AttackResult {
        records,
        final_input: x,
        perturbation,
        frozen,
        timings,
    })
}

pub fn attack(x0: &[f64], obj: &dyn Objective, cfg: &AttackConfig) -> Result<AttackResult> {
    attack_indexed(x0, obj, cfg, 0)
}

/// Sign PGD in the L∞ ball.
pub fn pgd_linf(x0: &[f64], obj: &dyn Objective, cfg: &AttackConfig) -> Result<AttackResult> {
    let cfg = AttackConfig {
        norm: Norm::Inf,
        method: Method::Pgd,
        ..cfg.clone()
    };
    attack(x0, obj, &cfg)
}

/// Normalized-gradient PGD in the L2 ball.
pub fn pgd_l2(x0: &[f64], obj: &dyn Objective, cfg: &AttackConfig) -> Result<AttackResult> {
    let cfg = AttackConfig {
        norm: Norm::L2,
        method: Method::Pgd,
        ..cfg.clone()
    };
    attack(x0, obj, &cfg)
}

/// Adam-direction PGD in the L2 ball.
pub fn pgd_adam(x0: &[f64], obj: &dyn Objective, cfg: &AttackConfig) -> Result<AttackResult> {
    let cfg = AttackConfig {
        norm: Norm::L2,
        method: Method::Adam,
        ..cfg.clone()
    };
    attack(x0, obj, &cfg)
}

/// Independent attacks on each input, run in parallel and returned in input
/// order. `objective(i, x0)` builds the objective of sample `i`; sample `i`
/// uses random-start stream `i`, so any schedule gives the same results as
/// sequential runs.
pub fn batch_attack<O, F>(inputs: &[Vec<f64>], cfg: &AttackConfig, objective: F) -> Result<Vec<AttackResult>>
where
    O: Objective,
    F: Fn(usize, &[f64]) -> Result<O> + Sync,
{
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let obj = objective(i, x0)?;
            attack_indexed(x0, &obj, cfg, i as u64).map_err(|e| Error::Sample {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}
