//! Minibatch Adam training of a [`Model`] on teacher-labelled samples.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ArchSpec, Model};
use crate::dataset::Dataset;
use crate::diff::{Tape, Value};
use crate::error::{Error, Result};
use crate::grf::sample_rng;
use crate::losses::LossSpec;

/// One flattened training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Training pairs for `arch`: input/output fields, or frame windows for the
/// recurrent FNO-2D (first `t_in` frames in, next `t_out` frames out; the
/// direct variant maps the first frame to frame `t_in + t_out`).
pub fn samples_from(arch: &ArchSpec, data: &Dataset) -> Result<Vec<Sample>> {
    match arch {
        ArchSpec::Fno2d { t_in, t_out, direct, .. } => {
            let need = t_in + t_out;
            if data.frames.len() != data.len() {
                return Err(Error::Config("FNO-2D training needs frame stacks".into()));
            }
            data.frames
                .iter()
                .enumerate()
                .map(|(i, fr)| {
                    if fr.len() < need {
                        return Err(Error::shape("samples", format!("sample {i} has {} frames, need {need}", fr.len())));
                    }
                    let cat = |r: std::ops::Range<usize>| fr[r].iter().flat_map(|f| f.values().iter().copied()).collect();
                    Ok(if *direct {
                        Sample {
                            input: cat(0..1),
                            target: cat(need - 1..need),
                        }
                    } else {
                        Sample {
                            input: cat(0..*t_in),
                            target: cat(*t_in..need),
                        }
                    })
                })
                .collect()
        }
        _ => Ok(data
            .inputs
            .iter()
            .zip(&data.outputs)
            .map(|(a, u)| Sample {
                input: a.values().to_vec(),
                target: u.values().to_vec(),
            })
            .collect()),
    }
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossSpec,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            lr,
            adam: AdamConfig::default(),
            seed,
            loss: LossSpec::mse(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        self.loss.validate()
    }
}

/// Adam over real and complex tensors; real and imaginary parts keep
/// separate moments.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<Value>,
    v: Vec<Value>,
    t: i32,
}

impl Adam {
    pub fn new(params: &[Value], lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            lr,
            m: params.iter().map(Value::zeros_like).collect(),
            v: params.iter().map(Value::zeros_like).collect(),
            t: 0,
        }
    }

    /// One descent step `p -= lr m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut [Value], grads: &[Value]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let lr = self.lr;
        let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            match (p, g, m, v) {
                (Value::Real(p), Value::Real(g), Value::Real(m), Value::Real(v)) => {
                    for i in 0..p.len() {
                        upd(&mut p[i], g[i], &mut m[i], &mut v[i]);
                    }
                }
                (Value::Complex(p), Value::Complex(g), Value::Complex(m), Value::Complex(v)) => {
                    for i in 0..p.len() {
                        upd(&mut p[i].re, g[i].re, &mut m[i].re, &mut v[i].re);
                        upd(&mut p[i].im, g[i].im, &mut m[i].im, &mut v[i].im);
                    }
                }
                _ => unreachable!("parameter and gradient kinds differ"),
            }
        }
    }
}

/// Per-epoch mean losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

/// Loss and parameter gradient of one sample.
pub(crate) fn sample_grad(model: &Model, sample: &Sample, loss: &LossSpec) -> Result<(f64, Vec<Value>)> {
    let mut tape = Tape::new();
    let pv = model.register(&mut tape, true);
    let x = tape.constant_real(sample.input.clone());
    let y = model.forward_on(&mut tape, &pv, x)?;
    let t = tape.constant_real(sample.target.clone());
    let l = loss.record(&mut tape, y, t)?;
    let value = tape.scalar(l);
    let mut g = tape.backward(l)?;
    let grads = pv
        .iter()
        .zip(model.params())
        .map(|(v, p)| g.take(*v).unwrap_or_else(|| p.zeros_like()))
        .collect();
    Ok((value, grads))
}

/// Mean loss of `model` over `samples` without gradients.
pub(crate) fn eval_loss(model: &Model, samples: &[Sample], loss: &LossSpec) -> Result<f64> {
    let losses = samples
        .par_iter()
        .map(|s| loss.eval(&model.predict(&s.input)?, &s.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn accumulate(total: &mut [Value], g: &[Value]) {
    for (t, g) in total.iter_mut().zip(g) {
        match (t, g) {
            (Value::Real(t), Value::Real(g)) => t.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            (Value::Complex(t), Value::Complex(g)) => t.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            _ => unreachable!("gradient kinds differ"),
        }
    }
}

fn scale_all(total: &mut [Value], s: f64) {
    for t in total {
        match t {
            Value::Real(t) => t.iter_mut().for_each(|a| *a *= s),
            Value::Complex(t) => t.iter_mut().for_each(|a| *a *= s),
        }
    }
}

/// Train with Adam on minibatch mean loss. Each epoch visits the samples in
/// a seeded permutation; per-sample gradients run in parallel and are summed
/// in sample order, so results do not depend on the thread count.
pub fn train(model: &Model, samples: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<(Model, History)> {
    train_with(model, samples, val, cfg, |_, batch| Ok(batch.to_vec()))
}

/// [`train`] with a hook that may replace each minibatch (e.g. by attacked
/// and re-labelled samples) before the gradient step. The hook sees the
/// current model but cannot change it.
pub fn train_with(
    model: &Model,
    samples: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut prepare: impl FnMut(&Model, &[Sample]) -> Result<Vec<Sample>>,
) -> Result<(Model, History)> {
    cfg.validate()?;
    let mut model = model.clone();
    let mut adam = Adam::new(model.params(), cfg.lr, cfg.adam);
    let mut history = History::default();
    let diverged = |epoch: usize| move |e: Error| if e.is_non_finite() { Error::Diverged { epoch } } else { e };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let batch = prepare(&model, &batch)?;
            let results = batch
                .par_iter()
                .map(|s| sample_grad(&model, s, &cfg.loss))
                .collect::<Result<Vec<_>>>()
                .map_err(diverged(epoch))?;
            let mut grads: Vec<Value> = model.params().iter().map(Value::zeros_like).collect();
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                accumulate(&mut grads, g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            scale_all(&mut grads, 1.0 / batch.len() as f64);
            adam.step(model.params_mut(), &grads);
            total += batch_loss;
        }
        history.train.push(total / samples.len().max(1) as f64);
        if !val.is_empty() {
            let v = eval_loss(&model, val, &cfg.loss).map_err(diverged(epoch))?;
            history.val.push(v);
        }
    }
    Ok((model, history))
}
