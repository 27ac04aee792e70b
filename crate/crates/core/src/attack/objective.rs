//! Student-versus-teacher objectives with the teacher gradient modes.

use serde::{Deserialize, Serialize};

use super::{LossEval, Objective};
use crate::dataset::Dataset;
use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::operators::{ArchSpec, Model};
use crate::solvers::Solver;
use crate::timing::{timed, Timings};

/// How the teacher enters the loss and its gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Teacher re-solved at the iterate; gradients flow through it.
    WithSolver,
    /// Teacher re-solved at the iterate; its gradient is stopped.
    Detached,
    /// Output of the nearest dictionary input; no solver call.
    Approximated,
    /// Frozen at the teacher output for the unperturbed input.
    Constant,
}

/// Stored teacher evaluations used as a surrogate.
#[derive(Clone, Debug, Default)]
pub struct Dictionary {
    inputs: Vec<Vec<f64>>,
    /// Teacher frames per entry; the last one is the final state.
    frames: Vec<Vec<Vec<f64>>>,
}

impl Dictionary {
    pub fn new(inputs: Vec<Vec<f64>>, frames: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if inputs.len() != frames.len() || frames.iter().any(|f| f.is_empty()) {
            return Err(Error::shape("dictionary", "every input needs at least one teacher frame"));
        }
        Ok(Dictionary { inputs, frames })
    }

    /// Entries from a dataset: its frame stacks, or the final outputs.
    pub fn from_dataset(data: &Dataset) -> Self {
        let inputs = data.inputs.iter().map(|f| f.values().to_vec()).collect();
        let frames = if data.frames.is_empty() {
            data.outputs.iter().map(|u| vec![u.values().to_vec()]).collect()
        } else {
            data.frames
                .iter()
                .map(|fr| fr.iter().map(|f| f.values().to_vec()).collect())
                .collect()
        };
        Dictionary { inputs, frames }
    }

    /// The first `size` entries.
    pub fn truncated(&self, size: usize) -> Self {
        let k = size.min(self.len());
        Dictionary {
            inputs: self.inputs[..k].to_vec(),
            frames: self.frames[..k].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Index of the stored input nearest to `x` in the L2 norm.
    pub fn nearest(&self, x: &[f64]) -> Result<usize> {
        let d2 = |b: &[f64]| x.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, b)| (i, d2(b)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .ok_or(Error::EmptyDictionary)
    }
}

/// Which teacher values the student is compared against.
#[derive(Clone, Debug, PartialEq)]
pub enum Pipeline {
    /// The student maps the input to the teacher's final state.
    Direct { mode: GradMode },
    /// A recurrent student fed with teacher frames `1..t_in` after the
    /// attacked input; its last prediction is compared with the teacher's
    /// frame `t_in + t_out - 1`. `modes` holds one entry per teacher frame
    /// in that order (`t_in` entries).
    Frames { modes: Vec<GradMode> },
}

const LAST: usize = usize::MAX;

fn pick(frames: &[Vec<f64>], slot: usize) -> &[f64] {
    if slot == LAST {
        frames.last().unwrap()
    } else {
        &frames[slot]
    }
}

/// `loss(G(x), g(x))` with per-slot teacher modes.
pub struct TeacherStudent<'a> {
    model: &'a Model,
    solver: &'a Solver,
    loss: LossSpec,
    modes: Vec<GradMode>,
    /// Teacher frame index per mode (`LAST` for the final state).
    slots: Vec<usize>,
    window: Option<(usize, usize)>,
    dict: Option<&'a Dictionary>,
    reference: Option<Vec<Vec<f64>>>,
}

impl<'a> TeacherStudent<'a> {
    /// `x0` is the unperturbed input, used to freeze constant-mode slots.
    pub fn new(
        model: &'a Model,
        solver: &'a Solver,
        loss: LossSpec,
        pipeline: Pipeline,
        dict: Option<&'a Dictionary>,
        x0: &[f64],
    ) -> Result<Self> {
        loss.validate()?;
        let (modes, slots, window) = match pipeline {
            Pipeline::Direct { mode } => (vec![mode], vec![LAST], None),
            Pipeline::Frames { modes } => {
                let (t_in, t_out) = match model.arch() {
                    ArchSpec::Fno2d { t_in, t_out, direct: false, .. } => (*t_in, *t_out),
                    _ => return Err(Error::Config("frame pipelines need a recurrent FNO-2D student".into())),
                };
                if modes.len() != t_in {
                    return Err(Error::Config(format!("{} frame modes for a window of {t_in} frames", modes.len())));
                }
                let k = t_in + t_out - 1;
                if solver.snapshot_times().len() <= k {
                    return Err(Error::Config(format!("teacher records {} frames, need {}", solver.snapshot_times().len(), k + 1)));
                }
                let slots = (1..t_in).chain(std::iter::once(k)).collect();
                (modes, slots, Some((t_in, t_out)))
            }
        };
        if modes.contains(&GradMode::Approximated) && dict.is_none_or(Dictionary::is_empty) {
            return Err(Error::EmptyDictionary);
        }
        let mut this = TeacherStudent {
            model,
            solver,
            loss,
            modes,
            slots,
            window,
            dict,
            reference: None,
        };
        if this.modes.contains(&GradMode::Constant) {
            let mut t = Timings::default();
            this.reference = Some(this.teacher_frames(x0, &mut t)?);
        }
        Ok(this)
    }

    fn teacher_frames(&self, x: &[f64], tm: &mut Timings) -> Result<Vec<Vec<f64>>> {
        let grid = self.solver.grid().clone();
        let a = crate::spectral::Field::new(grid, x.to_vec())?;
        let traj = timed(&mut tm.solver_forward, || self.solver.solve(&a))?;
        let out = traj.output()?.values().to_vec();
        Ok(match self.window {
            None => vec![out],
            Some(_) => traj.frames.into_iter().map(|f| f.into_values()).collect(),
        })
    }

    fn student_input(&self, x: &[f64], frames: &[Vec<f64>]) -> Vec<f64> {
        let mut input = x.to_vec();
        if let Some((t_in, _)) = self.window {
            for f in &frames[1..t_in] {
                input.extend_from_slice(f);
            }
        }
        input
    }

    fn last_frame<'b>(&self, y: &'b [f64]) -> &'b [f64] {
        let p = self.model.grid().points();
        &y[y.len() - p..]
    }

    /// Student-teacher loss with the teacher re-solved at `x`.
    pub fn true_loss(&self, x: &[f64]) -> Result<f64> {
        self.true_loss_timed(x, &mut Timings::default())
    }

    fn true_loss_timed(&self, x: &[f64], tm: &mut Timings) -> Result<f64> {
        let frames = self.teacher_frames(x, tm)?;
        let y = timed(&mut tm.student_forward, || self.model.predict(&self.student_input(x, &frames)))?;
        self.loss.eval(self.last_frame(&y), frames.last().unwrap())
    }
}

impl Objective for TeacherStudent<'_> {
    fn eval(&self, x: &[f64]) -> Result<LossEval> {
        let mut tm = Timings::default();
        let mut tape = Tape::new();
        let (pv, a) = timed(&mut tm.student_forward, || (self.model.register(&mut tape, false), tape.leaf_real(x.to_vec())));
        let on_tape = self.modes.iter().any(|m| matches!(m, GradMode::WithSolver | GradMode::Detached));
        let solved = if on_tape {
            Some(timed(&mut tm.solver_forward, || self.solver.solve_on(&mut tape, a))?)
        } else {
            None
        };
        let mut nearest = None;
        let mut teacher: Vec<Var> = Vec::with_capacity(self.modes.len());
        for (&mode, &slot) in self.modes.iter().zip(&self.slots) {
            let solved_var = || {
                let s = solved.as_ref().expect("tape solve recorded");
                if slot == LAST {
                    s.output
                } else {
                    s.frames[slot]
                }
            };
            let v = match mode {
                GradMode::WithSolver => solved_var(),
                GradMode::Detached => tape.stop_gradient(solved_var())?,
                GradMode::Approximated => {
                    let dict = self.dict.ok_or(Error::EmptyDictionary)?;
                    let i = match nearest {
                        Some(i) => i,
                        None => *nearest.insert(dict.nearest(x)?),
                    };
                    tape.constant_real(pick(&dict.frames[i], slot).to_vec())
                }
                GradMode::Constant => {
                    let r = self.reference.as_ref().expect("reference frames computed");
                    tape.constant_real(pick(r, slot).to_vec())
                }
            };
            teacher.push(v);
        }
        let target = *teacher.last().unwrap();
        let (pred, target) = timed(&mut tm.student_forward, || -> Result<(Var, Var)> {
            match self.window {
                None => Ok((self.model.forward_on(&mut tape, &pv, a)?, target)),
                Some((t_in, t_out)) => {
                    let mut parts = vec![a];
                    parts.extend_from_slice(&teacher[..t_in - 1]);
                    let input = tape.concat(&parts)?;
                    let y = self.model.forward_on(&mut tape, &pv, input)?;
                    let p = self.model.grid().points();
                    Ok((tape.slice(y, (t_out - 1) * p, p)?, target))
                }
            }
        })?;
        let l = self.loss.record(&mut tape, pred, target)?;
        let loss = tape.scalar(l);
        // tape teardown is part of the backward cost
        let grad = timed(&mut tm.backward, || -> Result<Vec<f64>> {
            let g = tape.backward(l)?.real(a, x.len());
            drop(tape);
            Ok(g)
        })?;
        let surrogate = self.modes.iter().any(|m| matches!(m, GradMode::Approximated | GradMode::Constant));
        let true_loss = if surrogate { Some(self.true_loss_timed(x, &mut tm)?) } else { None };
        Ok(LossEval {
            loss,
            grad,
            true_loss,
            timings: tm,
        })
    }
}
