//! Outer minimization: round-by-round active learning, batch-by-batch
//! adversarial training, the random-constant baseline, and out-of-distribution
//! evaluation against a frozen reference model.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack_indexed, AttackConfig, GradMode, Pipeline, TeacherStudent};
use crate::dataset::{build_dataset, Dataset, GeneratorSpec};
use crate::error::{Error, Result};
use crate::grf::sample_rng;
use crate::io::{num, CsvTable};
use crate::losses::{mae, mse, LossSpec};
use crate::operators::{samples_from, train, train_with, ArchSpec, History, Model, Sample, TrainConfig};
use crate::solvers::{Solver, SolverConfig};
use crate::spectral::Field;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    RoundByRound,
    BatchByBatch,
    RandomConstant,
}

/// What happens to the attacked subset of the training pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPolicy {
    /// Attacked samples take the place of their originals.
    #[default]
    Replace,
    /// Attacked samples are appended to the pool.
    Expand,
}

fn default_rounds() -> usize {
    6
}

fn default_fraction() -> f64 {
    0.5
}

fn default_mode() -> GradMode {
    GradMode::WithSolver
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvTrainConfig {
    pub variant: Variant,
    /// Rounds of the round-by-round variant.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub policy: PoolPolicy,
    /// Share of the pool attacked per round, in `(0, 1]`.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_mode")]
    pub mode: GradMode,
    #[serde(default)]
    pub loss: LossSpec,
    /// Range of the per-sample constant of the random-constant baseline.
    #[serde(default)]
    pub constant_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    /// Epochs per round for round-by-round; total epochs otherwise.
    pub train: TrainConfig,
    pub attack: AttackConfig,
}

impl AdvTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("fraction must be in (0, 1], got {}", self.fraction)));
        }
        let [lo, hi] = self.constant_range;
        if !(lo <= hi) {
            return Err(Error::InvalidParameter(format!("constant range needs lo <= hi, got [{lo}, {hi}]")));
        }
        self.train.validate()?;
        self.attack.validate()?;
        self.loss.validate()
    }
}

/// Named labelled datasets for out-of-distribution evaluation.
#[derive(Clone, Debug, Default)]
pub struct OodPool {
    pub datasets: Vec<Dataset>,
}

impl OodPool {
    /// Label `count` samples from each generator; entry `i` uses seed
    /// `seed + i`.
    pub fn build(entries: &[(String, GeneratorSpec)], solver: &SolverConfig, count: usize, seed: u64) -> Result<Self> {
        let datasets = entries
            .iter()
            .enumerate()
            .map(|(i, (name, g))| build_dataset(name, g, solver, count, seed + i as u64, None))
            .collect::<Result<_>>()?;
        Ok(OodPool { datasets })
    }

    pub fn push(&mut self, data: Dataset) {
        self.datasets.push(data);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OodRow {
    pub name: String,
    pub rmse: f64,
    pub mae: f64,
    pub delta_rmse: f64,
    pub delta_mae: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OodTable {
    pub rows: Vec<OodRow>,
}

impl OodTable {
    pub fn row(&self, name: &str) -> Option<&OodRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Columns `name,rmse,mae,delta_rmse,delta_mae,round`.
    pub fn csv(&self, round: usize) -> CsvTable {
        let mut t = CsvTable::new(&["name", "rmse", "mae", "delta_rmse", "delta_mae", "round"]);
        self.append_to(&mut t, round);
        t
    }

    pub fn append_to(&self, t: &mut CsvTable, round: usize) {
        for r in &self.rows {
            t.push(vec![
                r.name.clone(),
                num(r.rmse),
                num(r.mae),
                num(r.delta_rmse),
                num(r.delta_mae),
                round.to_string(),
            ]);
        }
    }
}

/// RMSE and MAE of `model` over all output cells of `data`.
pub fn dataset_errors(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let samples = samples_from(model.arch(), data)?;
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let y = model.predict(&s.input)?;
            Ok((mse(&y, &s.target)?, mae(&y, &s.target)?))
        })
        .collect::<Result<_>>()?;
    let k = per.len() as f64;
    let m = per.iter().map(|p| p.0).sum::<f64>() / k;
    let a = per.iter().map(|p| p.1).sum::<f64>() / k;
    Ok((m.sqrt(), a))
}

/// Metric table of `model` on every pool dataset, with deltas against
/// `reference` (`model - reference`).
pub fn eval_ood(model: &Model, pool: &OodPool, reference: &Model) -> Result<OodTable> {
    let rows = pool
        .datasets
        .iter()
        .map(|d| {
            let (rmse, mae) = dataset_errors(model, d)?;
            let (r0, m0) = dataset_errors(reference, d)?;
            Ok(OodRow {
                name: d.manifest.name.clone(),
                rmse,
                mae,
                delta_rmse: rmse - r0,
                delta_mae: mae - m0,
            })
        })
        .collect::<Result<_>>()?;
    Ok(OodTable { rows })
}

/// First-frame slice of a sample input.
fn first_frame(model: &Model, input: &[f64]) -> Vec<f64> {
    let p = model.grid().points();
    input[..p.min(input.len())].to_vec()
}

fn pipeline_for(model: &Model, mode: GradMode) -> Pipeline {
    match model.arch() {
        ArchSpec::Fno2d { t_in, direct: false, .. } => Pipeline::Frames { modes: vec![mode; *t_in] },
        _ => Pipeline::Direct { mode },
    }
}

/// Teacher-labelled sample for the initial condition `a`; `None` on blow-up.
fn relabel(model: &Model, solver: &Solver, a: &[f64]) -> Result<Option<Sample>> {
    let field = Field::new(solver.grid().clone(), a.to_vec())?;
    let traj = solver.solve(&field)?;
    let Ok(out) = traj.output() else {
        return Ok(None);
    };
    let sample = match model.arch() {
        ArchSpec::Fno2d { t_in, t_out, direct, .. } => {
            let need = t_in + t_out;
            if traj.frames.len() < need {
                return Err(Error::Config(format!("teacher records {} frames, need {need}", traj.frames.len())));
            }
            let cat = |r: std::ops::Range<usize>| traj.frames[r].iter().flat_map(|f| f.values().iter().copied()).collect();
            if *direct {
                Sample {
                    input: cat(0..1),
                    target: cat(need - 1..need),
                }
            } else {
                Sample {
                    input: cat(0..*t_in),
                    target: cat(*t_in..need),
                }
            }
        }
        _ => Sample {
            input: a.to_vec(),
            target: out.values().to_vec(),
        },
    };
    Ok(Some(sample))
}

/// Attack the first frame of each sample against `model` and re-label the
/// results. Samples whose attack leaves the input unchanged are returned
/// as-is; samples whose teacher blows up keep their original and are
/// counted in the second return value.
fn attack_samples(
    model: &Model,
    solver: &Solver,
    samples: &[Sample],
    cfg: &AdvTrainConfig,
    stream: u64,
) -> Result<(Vec<Sample>, usize)> {
    let results: Vec<Option<Sample>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let x0 = first_frame(model, &s.input);
            let obj = TeacherStudent::new(model, solver, cfg.loss, pipeline_for(model, cfg.mode), None, &x0)?;
            let res = attack_indexed(&x0, &obj, &cfg.attack, stream.wrapping_add(i as u64))?;
            if res.final_input == x0 {
                return Ok(Some(s.clone()));
            }
            relabel(model, solver, &res.final_input)
        })
        .collect::<Result<_>>()?;
    let dropped = results.iter().filter(|r| r.is_none()).count();
    let out = results
        .into_iter()
        .zip(samples)
        .map(|(r, s)| r.unwrap_or_else(|| s.clone()))
        .collect();
    Ok((out, dropped))
}

#[derive(Clone, Debug)]
pub struct RoundReport {
    pub round: usize,
    pub attacked: usize,
    /// Attacked samples discarded because the teacher blew up.
    pub dropped: usize,
    pub pool_size: usize,
    pub table: Option<OodTable>,
}

#[derive(Clone, Debug)]
pub struct AdvOutcome {
    pub model: Model,
    pub rounds: Vec<RoundReport>,
    pub history: History,
}

/// Each round attacks a uniformly drawn subset of the pool (without
/// replacement, `fraction` of it) against the current model with the model
/// frozen, re-labels the attacked inputs with the teacher, replaces or
/// extends the pool, then trains for `train.epochs` with the inputs frozen.
/// When `ood` is given, each round ends with a delta table against the
/// model passed in.
pub fn round_by_round(
    model: &Model,
    data: &Dataset,
    solver_cfg: &SolverConfig,
    cfg: &AdvTrainConfig,
    ood: Option<&OodPool>,
) -> Result<AdvOutcome> {
    cfg.validate()?;
    let solver = Solver::new(solver_cfg)?;
    let reference = model.clone();
    let mut current = model.clone();
    let mut pool = samples_from(model.arch(), data)?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut history = History::default();
    for round in 1..=cfg.rounds {
        let k = ((cfg.fraction * pool.len() as f64).round() as usize).max(1).min(pool.len());
        let mut rng = sample_rng(cfg.seed, 1_000 + round as u64);
        let mut picked = sample_indices(&mut rng, pool.len(), k).into_vec();
        picked.sort_unstable();
        let chosen: Vec<Sample> = picked.iter().map(|&i| pool[i].clone()).collect();
        let (attacked, dropped) = attack_samples(&current, &solver, &chosen, cfg, (round as u64) << 32)?;
        match cfg.policy {
            PoolPolicy::Replace => {
                for (&i, s) in picked.iter().zip(attacked) {
                    pool[i] = s;
                }
            }
            PoolPolicy::Expand => {
                let fresh = attacked.into_iter().zip(&chosen).filter(|(a, c)| a != *c).map(|(a, _)| a);
                pool.extend(fresh.collect::<Vec<_>>());
            }
        }
        let tc = TrainConfig {
            seed: cfg.train.seed.wrapping_add(round as u64),
            ..cfg.train.clone()
        };
        let (next, h) = train(&current, &pool, &[], &tc)?;
        current = next;
        history.train.extend(h.train);
        let table = ood.map(|p| eval_ood(&current, p, &reference)).transpose()?;
        reports.push(RoundReport {
            round,
            attacked: k,
            dropped,
            pool_size: pool.len(),
            table,
        });
    }
    Ok(AdvOutcome {
        model: current,
        rounds: reports,
        history,
    })
}

/// Every minibatch is attacked against the current model and re-labelled
/// before the gradient step, so the model only sees attacked inputs.
pub fn batch_by_batch(model: &Model, data: &Dataset, solver_cfg: &SolverConfig, cfg: &AdvTrainConfig) -> Result<AdvOutcome> {
    cfg.validate()?;
    let solver = Solver::new(solver_cfg)?;
    let samples = samples_from(model.arch(), data)?;
    let mut batch_no = 0u64;
    let (trained, history) = train_with(model, &samples, &[], &cfg.train, |m, batch| {
        batch_no += 1;
        attack_samples(m, &solver, batch, cfg, batch_no << 32).map(|(s, _)| s)
    })?;
    Ok(AdvOutcome {
        model: trained,
        rounds: Vec::new(),
        history,
    })
}

/// Each training sample's initial condition is shifted by a constant drawn
/// uniformly from `constant_range` and re-labelled before the gradient step.
pub fn random_constant_baseline(model: &Model, data: &Dataset, solver_cfg: &SolverConfig, cfg: &AdvTrainConfig) -> Result<AdvOutcome> {
    cfg.validate()?;
    let solver = Solver::new(solver_cfg)?;
    let samples = samples_from(model.arch(), data)?;
    let [lo, hi] = cfg.constant_range;
    let mut batch_no = 0u64;
    let (trained, history) = train_with(model, &samples, &[], &cfg.train, |m, batch| {
        batch_no += 1;
        let mut rng = sample_rng(cfg.seed, batch_no);
        let shifts: Vec<f64> = batch.iter().map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
        let out: Vec<Option<Sample>> = batch
            .par_iter()
            .zip(&shifts)
            .map(|(s, &c)| {
                if c == 0.0 {
                    return Ok(Some(s.clone()));
                }
                let a: Vec<f64> = first_frame(m, &s.input).iter().map(|v| v + c).collect();
                relabel(m, &solver, &a)
            })
            .collect::<Result<_>>()?;
        Ok(out.into_iter().zip(batch).map(|(r, s)| r.unwrap_or_else(|| s.clone())).collect())
    })?;
    Ok(AdvOutcome {
        model: trained,
        rounds: Vec::new(),
        history,
    })
}

/// Dispatch on the configured variant.
pub fn adversarial_train(
    model: &Model,
    data: &Dataset,
    solver_cfg: &SolverConfig,
    cfg: &AdvTrainConfig,
    ood: Option<&OodPool>,
) -> Result<AdvOutcome> {
    match cfg.variant {
        Variant::RoundByRound => round_by_round(model, data, solver_cfg, cfg, ood),
        Variant::BatchByBatch => batch_by_batch(model, data, solver_cfg, cfg),
        Variant::RandomConstant => random_constant_baseline(model, data, solver_cfg, cfg),
    }
}

/// Re-solve a seeded random share of `data` and return the largest absolute
/// difference from the stored labels.
pub fn audit_labels(data: &Dataset, share: f64, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let solver = Solver::new(&data.manifest.solver)?;
    let k = ((share * data.len() as f64).ceil() as usize).clamp(1, data.len());
    let picked = sample_indices(&mut sample_rng(seed, 0), data.len(), k).into_vec();
    let diffs = picked
        .par_iter()
        .map(|&i| {
            let out = solver.final_state(&data.inputs[i])?;
            Ok(out
                .values()
                .iter()
                .zip(data.outputs[i].values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}
