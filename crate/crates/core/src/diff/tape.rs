use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{irfft_batch, rfft_batch, SpectralGrid};

/// Node payload: real samples or complex (half-spectrum) coefficients.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Value {
    pub fn len(&self) -> usize {
        match self {
            Value::Real(v) => v.len(),
            Value::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Value::Complex(_))
    }

    pub fn zeros_like(&self) -> Value {
        match self {
            Value::Real(v) => Value::Real(vec![0.0; v.len()]),
            Value::Complex(v) => Value::Complex(vec![Complex64::default(); v.len()]),
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Value::Real(v) => Some(v),
            Value::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[Complex64]> {
        match self {
            Value::Complex(v) => Some(v),
            Value::Real(_) => None,
        }
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        match self {
            Value::Real(v) => v.iter().position(|x| !x.is_finite()),
            Value::Complex(v) => v.iter().position(|x| !x.re.is_finite() || !x.im.is_finite()),
        }
    }

    /// Real inner product (complex entries count as `(re, im)` pairs).
    pub fn dot(&self, other: &Value) -> f64 {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            (Value::Complex(a), Value::Complex(b)) => {
                a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
            }
            _ => panic!("dot of mismatched value kinds"),
        }
    }

    fn add_assign(&mut self, other: &Value) {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (Value::Complex(a), Value::Complex(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y)
            }
            _ => unreachable!("cotangent kind mismatch"),
        }
    }

    fn scaled(&self, s: f64) -> Value {
        match self {
            Value::Real(a) => Value::Real(a.iter().map(|x| x * s).collect()),
            Value::Complex(a) => Value::Complex(a.iter().map(|x| x * s).collect()),
        }
    }

    fn kind(&self) -> &'static str {
        if self.is_complex() {
            "complex"
        } else {
            "real"
        }
    }
}

/// Pointwise nonlinearities with `σ(0) = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// tanh-approximated GELU.
    #[default]
    Gelu,
    Tanh,
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gelu" => Some(Activation::Gelu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Retained modes of a spectral channel mix: half-spectrum indices.
#[derive(Clone, Debug, PartialEq)]
pub struct MixLayout {
    pub modes: Vec<usize>,
    pub spectrum_len: usize,
    pub c_in: usize,
    pub c_out: usize,
}

/// The fixed primitive vocabulary understood by the tape.
#[derive(Clone, Debug)]
pub enum Primitive {
    /// Real stacked fields -> half spectra (unscaled).
    Rfft(Arc<SpectralGrid>),
    /// Half spectra -> real stacked fields (divides by point count).
    Irfft(Arc<SpectralGrid>),
    /// Per-mode complex factor, broadcast over stacked spectra.
    ModeMul(Arc<[Complex64]>),
    /// Per-mode complex division by a nonzero factor.
    ModeDiv(Arc<[Complex64]>),
    Add,
    Sub,
    /// Pointwise product of two real values.
    Mul,
    Scale(f64),
    Activation(Activation),
    /// `out[o,p] = Σ_i w[o,i] x[i,p] + b[o]`; inputs `x, w, b`.
    ChannelAffine { c_in: usize, c_out: usize },
    /// `out[o,m] = Σ_i w[i,o,r] v[i,m]` on retained modes; inputs `v, w`.
    SpectralMix(Arc<MixLayout>),
    Slice { offset: usize, len: usize },
    Concat,
    Sum,
    MeanSquare,
    /// Soft-DTW value of two real sequences with squared-Euclidean cost.
    SoftminDp { gamma: f64 },
    StopGradient,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Rfft(_) => "rfft",
            Primitive::Irfft(_) => "irfft",
            Primitive::ModeMul(_) => "mode_mul",
            Primitive::ModeDiv(_) => "mode_div",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Activation(_) => "activation",
            Primitive::ChannelAffine { .. } => "channel_affine",
            Primitive::SpectralMix(_) => "spectral_mix",
            Primitive::Slice { .. } => "slice",
            Primitive::Concat => "concat",
            Primitive::Sum => "sum",
            Primitive::MeanSquare => "mean_square",
            Primitive::SoftminDp { .. } => "softmin_dp",
            Primitive::StopGradient => "stop_gradient",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    Prim(Primitive),
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Value,
    saved: Option<Vec<f64>>,
    requires_grad: bool,
}

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered record of primitive applications for one reverse sweep.
///
/// Values are evaluated eagerly when recorded; every node keeps its value so
/// the reverse sweep can read saved intermediates. The first non-finite value
/// poisons the tape: recording continues, but [`Tape::vjp`] refuses to run.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    poisoned: Option<usize>,
}

/// Cotangents for every leaf reached by a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Value> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Real cotangent of a leaf; zeros when the leaf was not reached.
    pub fn real(&self, var: Var, len: usize) -> Vec<f64> {
        match self.get(var) {
            Some(Value::Real(v)) => v.clone(),
            _ => vec![0.0; len],
        }
    }

    pub fn take(&mut self, var: Var) -> Option<Value> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the first record whose value was non-finite.
    pub fn poisoned(&self) -> Option<usize> {
        self.poisoned
    }

    pub fn value(&self, var: Var) -> &Value {
        &self.nodes[var.0].value
    }

    pub fn real(&self, var: Var) -> &[f64] {
        self.nodes[var.0]
            .value
            .as_real()
            .expect("real value expected")
    }

    pub fn complex(&self, var: Var) -> &[Complex64] {
        self.nodes[var.0]
            .value
            .as_complex()
            .expect("complex value expected")
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.real(var)[0]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Value, saved: Option<Vec<f64>>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.poisoned.is_none() && value.first_non_finite().is_some() {
            self.poisoned = Some(idx);
        }
        self.nodes.push(Node {
            op,
            inputs,
            value,
            saved,
            requires_grad,
        });
        Var(idx)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Value) -> Var {
        self.push(Op::Leaf, Vec::new(), value, None, true)
    }

    pub fn leaf_real(&mut self, v: Vec<f64>) -> Var {
        self.leaf(Value::Real(v))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Value) -> Var {
        self.push(Op::Const, Vec::new(), value, None, false)
    }

    pub fn constant_real(&mut self, v: Vec<f64>) -> Var {
        self.constant(Value::Real(v))
    }

    /// Evaluate `prim` on `inputs` and append the record.
    pub fn record(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = match &prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::SpectralMix(_) | Primitive::SoftminDp { .. } => Some(2),
            Primitive::ChannelAffine { .. } => Some(3),
            Primitive::Concat => None,
            _ => Some(1),
        };
        if let Some(a) = arity {
            if inputs.len() != a {
                return Err(Error::shape(prim.name(), format!("expected {a} inputs, got {}", inputs.len())));
            }
        } else if inputs.is_empty() {
            return Err(Error::shape(prim.name(), "needs at least one input"));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::shape(prim.name(), format!("unknown input record {}", bad.0)));
        }
        let (value, saved) = self.eval(&prim, inputs)?;
        let requires_grad = !matches!(prim, Primitive::StopGradient)
            && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(
            Op::Prim(prim),
            inputs.iter().map(|v| v.0).collect(),
            value,
            saved,
            requires_grad,
        ))
    }

    fn want_real<'a>(&'a self, prim: &Primitive, v: Var) -> Result<&'a [f64]> {
        self.nodes[v.0].value.as_real().ok_or_else(|| Error::Unsupported {
            op: prim.name(),
            detail: "complex input".into(),
        })
    }

    fn want_complex<'a>(&'a self, prim: &Primitive, v: Var) -> Result<&'a [Complex64]> {
        self.nodes[v.0].value.as_complex().ok_or_else(|| Error::Unsupported {
            op: prim.name(),
            detail: "real input".into(),
        })
    }

    fn eval(&self, prim: &Primitive, inputs: &[Var]) -> Result<(Value, Option<Vec<f64>>)> {
        let node = |i: usize| &self.nodes[inputs[i].0].value;
        let out = match prim {
            Primitive::Rfft(grid) => {
                let x = self.want_real(prim, inputs[0])?;
                if x.len() % grid.points() != 0 {
                    return Err(Error::shape("rfft", format!("{} values on a grid of {} points", x.len(), grid.points())));
                }
                Value::Complex(rfft_batch(grid, x))
            }
            Primitive::Irfft(grid) => {
                let z = self.want_complex(prim, inputs[0])?;
                if z.len() % grid.modes() != 0 {
                    return Err(Error::shape("irfft", format!("{} coefficients for {} modes", z.len(), grid.modes())));
                }
                Value::Real(irfft_batch(grid, z))
            }
            Primitive::ModeMul(f) | Primitive::ModeDiv(f) => {
                let z = self.want_complex(prim, inputs[0])?;
                if f.is_empty() || z.len() % f.len() != 0 {
                    return Err(Error::shape(prim.name(), format!("{} coefficients for {} factors", z.len(), f.len())));
                }
                let div = matches!(prim, Primitive::ModeDiv(_));
                Value::Complex(
                    z.chunks_exact(f.len())
                        .flat_map(|c| c.iter().zip(f.iter()).map(move |(a, b)| if div { a / b } else { a * b }))
                        .collect(),
                )
            }
            Primitive::Add | Primitive::Sub => {
                let (a, b) = (node(0), node(1));
                if a.len() != b.len() || a.is_complex() != b.is_complex() {
                    return Err(Error::shape(prim.name(), format!("{} {} vs {} {}", a.len(), a.kind(), b.len(), b.kind())));
                }
                let sign = if matches!(prim, Primitive::Add) { 1.0 } else { -1.0 };
                match (a, b) {
                    (Value::Real(a), Value::Real(b)) => Value::Real(a.iter().zip(b).map(|(x, y)| x + sign * y).collect()),
                    (Value::Complex(a), Value::Complex(b)) => {
                        Value::Complex(a.iter().zip(b).map(|(x, y)| x + y * sign).collect())
                    }
                    _ => unreachable!(),
                }
            }
            Primitive::Mul => {
                let a = self.want_real(prim, inputs[0])?;
                let b = self.want_real(prim, inputs[1])?;
                if a.len() != b.len() {
                    return Err(Error::shape("mul", format!("{} vs {}", a.len(), b.len())));
                }
                Value::Real(a.iter().zip(b).map(|(x, y)| x * y).collect())
            }
            Primitive::Scale(s) => node(0).scaled(*s),
            Primitive::Activation(act) => {
                let x = self.want_real(prim, inputs[0])?;
                Value::Real(x.iter().map(|&v| act.apply(v)).collect())
            }
            Primitive::ChannelAffine { c_in, c_out } => {
                let x = self.want_real(prim, inputs[0])?;
                let w = self.want_real(prim, inputs[1])?;
                let b = self.want_real(prim, inputs[2])?;
                if *c_in == 0 || x.len() % c_in != 0 || w.len() != c_in * c_out || b.len() != *c_out {
                    return Err(Error::shape(
                        "channel_affine",
                        format!("x {} w {} b {} for {c_in}->{c_out}", x.len(), w.len(), b.len()),
                    ));
                }
                Value::Real(channel_affine(x, w, b, *c_in, *c_out))
            }
            Primitive::SpectralMix(layout) => {
                let v = self.want_complex(prim, inputs[0])?;
                let w = self.want_complex(prim, inputs[1])?;
                let r = layout.modes.len();
                if v.len() != layout.c_in * layout.spectrum_len || w.len() != layout.c_in * layout.c_out * r {
                    return Err(Error::shape("spectral_mix", format!("v {} w {}", v.len(), w.len())));
                }
                Value::Complex(spectral_mix(v, w, layout))
            }
            Primitive::Slice { offset, len } => {
                let n = node(0).len();
                if offset + len > n {
                    return Err(Error::shape("slice", format!("{offset}+{len} exceeds {n}")));
                }
                match node(0) {
                    Value::Real(a) => Value::Real(a[*offset..offset + len].to_vec()),
                    Value::Complex(a) => Value::Complex(a[*offset..offset + len].to_vec()),
                }
            }
            Primitive::Concat => {
                let complex = node(0).is_complex();
                if inputs.iter().any(|v| self.nodes[v.0].value.is_complex() != complex) {
                    return Err(Error::shape("concat", "mixed value kinds"));
                }
                if complex {
                    Value::Complex(inputs.iter().flat_map(|v| self.complex(*v).iter().copied()).collect())
                } else {
                    Value::Real(inputs.iter().flat_map(|v| self.real(*v).iter().copied()).collect())
                }
            }
            Primitive::Sum => match node(0) {
                Value::Real(a) => Value::Real(vec![a.iter().sum()]),
                Value::Complex(_) => return Err(Error::Unsupported { op: "sum", detail: "complex input".into() }),
            },
            Primitive::MeanSquare => {
                let a = self.want_real(prim, inputs[0])?;
                if a.is_empty() {
                    return Err(Error::shape("mean_square", "empty input"));
                }
                Value::Real(vec![a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64])
            }
            Primitive::SoftminDp { gamma } => {
                if !(*gamma > 0.0) {
                    return Err(Error::InvalidParameter(format!("soft-DTW gamma must be positive, got {gamma}")));
                }
                let x = self.want_real(prim, inputs[0])?;
                let y = self.want_real(prim, inputs[1])?;
                if x.is_empty() || y.is_empty() {
                    return Err(Error::shape("softmin_dp", "empty sequence"));
                }
                let r = softdtw_table(x, y, *gamma);
                let v = r[x.len() * (y.len() + 1) + y.len()];
                return Ok((Value::Real(vec![v]), Some(r)));
            }
            Primitive::StopGradient => node(0).clone(),
        };
        Ok((out, None))
    }

    /// Stop-gradient: forward identity, zero adjoint.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::StopGradient, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Primitive::Scale(s), &[a])
    }

    pub fn rfft(&mut self, grid: &Arc<SpectralGrid>, x: Var) -> Result<Var> {
        self.record(Primitive::Rfft(grid.clone()), &[x])
    }

    pub fn irfft(&mut self, grid: &Arc<SpectralGrid>, z: Var) -> Result<Var> {
        self.record(Primitive::Irfft(grid.clone()), &[z])
    }

    pub fn mode_mul(&mut self, z: Var, factor: &Arc<[Complex64]>) -> Result<Var> {
        self.record(Primitive::ModeMul(factor.clone()), &[z])
    }

    pub fn mode_div(&mut self, z: Var, factor: &Arc<[Complex64]>) -> Result<Var> {
        self.record(Primitive::ModeDiv(factor.clone()), &[z])
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        self.record(Primitive::Activation(act), &[x])
    }

    pub fn channel_affine(&mut self, x: Var, w: Var, b: Var, c_in: usize, c_out: usize) -> Result<Var> {
        self.record(Primitive::ChannelAffine { c_in, c_out }, &[x, w, b])
    }

    pub fn spectral_mix(&mut self, v: Var, w: Var, layout: &Arc<MixLayout>) -> Result<Var> {
        self.record(Primitive::SpectralMix(layout.clone()), &[v, w])
    }

    pub fn slice(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        self.record(Primitive::Slice { offset, len }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Primitive::Concat, parts)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::Sum, &[x])
    }

    pub fn mean_square(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::MeanSquare, &[x])
    }

    pub fn softdtw(&mut self, x: Var, y: Var, gamma: f64) -> Result<Var> {
        self.record(Primitive::SoftminDp { gamma }, &[x, y])
    }

    /// Reverse sweep from `output` seeded with `seed`; returns cotangents of
    /// every leaf that the output depends on.
    pub fn vjp(&self, output: Var, seed: Value) -> Result<Gradients> {
        if let Some(record) = self.poisoned {
            if record <= output.0 {
                return Err(Error::PoisonedTape { record });
            }
        }
        let out_node = &self.nodes[output.0];
        if seed.len() != out_node.value.len() || seed.is_complex() != out_node.value.is_complex() {
            return Err(Error::shape(
                "vjp",
                format!("seed {} {} for output {} {}", seed.len(), seed.kind(), out_node.value.len(), out_node.value.kind()),
            ));
        }
        let mut grads: Vec<Option<Value>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        if out_node.requires_grad {
            grads[output.0] = Some(seed);
        }
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Op::Prim(prim) = &node.op else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.adjoint(prim, node, &g);
            for (slot, contrib) in node.inputs.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !self.nodes[*slot].requires_grad {
                    continue;
                }
                if c.first_non_finite().is_some() {
                    return Err(Error::NonFiniteCotangent { record: idx });
                }
                match &mut grads[*slot] {
                    Some(acc) => acc.add_assign(&c),
                    empty => *empty = Some(c),
                }
            }
        }
        // keep only leaf cotangents
        for (i, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Reverse sweep from a scalar output with unit seed.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::shape("backward", "output is not a scalar"));
        }
        self.vjp(output, Value::Real(vec![1.0]))
    }

    fn adjoint(&self, prim: &Primitive, node: &Node, g: &Value) -> Vec<Option<Value>> {
        let input = |i: usize| &self.nodes[node.inputs[i]].value;
        let needs = |i: usize| self.nodes[node.inputs[i]].requires_grad;
        match prim {
            Primitive::Rfft(grid) => {
                let g = g.as_complex().expect("complex cotangent");
                let half = grid.half_n();
                let weighted: Vec<Complex64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let j = i % half;
                        if j == 0 || j == half - 1 {
                            *c
                        } else {
                            c * 0.5
                        }
                    })
                    .collect();
                let p = grid.points() as f64;
                let x = irfft_batch(grid, &weighted);
                vec![Some(Value::Real(x.into_iter().map(|v| v * p).collect()))]
            }
            Primitive::Irfft(grid) => {
                let g = g.as_real().expect("real cotangent");
                let half = grid.half_n();
                let p = grid.points() as f64;
                let z = rfft_batch(grid, g)
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let j = i % half;
                        if j == 0 || j == half - 1 {
                            c / p
                        } else {
                            c * (2.0 / p)
                        }
                    })
                    .collect();
                vec![Some(Value::Complex(z))]
            }
            Primitive::ModeMul(f) | Primitive::ModeDiv(f) => {
                let g = g.as_complex().expect("complex cotangent");
                let div = matches!(prim, Primitive::ModeDiv(_));
                let out = g
                    .chunks_exact(f.len())
                    .flat_map(|c| {
                        c.iter().zip(f.iter()).map(move |(a, b)| {
                            if div {
                                a / b.conj()
                            } else {
                                a * b.conj()
                            }
                        })
                    })
                    .collect();
                vec![Some(Value::Complex(out))]
            }
            Primitive::Add => vec![Some(g.clone()), Some(g.clone())],
            Primitive::Sub => vec![Some(g.clone()), Some(g.scaled(-1.0))],
            Primitive::Mul => {
                let g = g.as_real().expect("real cotangent");
                let a = input(0).as_real().unwrap();
                let b = input(1).as_real().unwrap();
                vec![
                    needs(0).then(|| Value::Real(g.iter().zip(b).map(|(x, y)| x * y).collect())),
                    needs(1).then(|| Value::Real(g.iter().zip(a).map(|(x, y)| x * y).collect())),
                ]
            }
            Primitive::Scale(s) => vec![Some(g.scaled(*s))],
            Primitive::Activation(act) => {
                let g = g.as_real().expect("real cotangent");
                let x = input(0).as_real().unwrap();
                vec![Some(Value::Real(g.iter().zip(x).map(|(gi, &xi)| gi * act.derivative(xi)).collect()))]
            }
            Primitive::ChannelAffine { c_in, c_out } => {
                let g = g.as_real().expect("real cotangent");
                let x = input(0).as_real().unwrap();
                let w = input(1).as_real().unwrap();
                let p = x.len() / c_in;
                let gx = needs(0).then(|| {
                    let mut gx = vec![0.0; x.len()];
                    for o in 0..*c_out {
                        let grow = &g[o * p..(o + 1) * p];
                        for i in 0..*c_in {
                            let wi = w[o * c_in + i];
                            if wi == 0.0 {
                                continue;
                            }
                            for (d, &s) in gx[i * p..(i + 1) * p].iter_mut().zip(grow) {
                                *d += wi * s;
                            }
                        }
                    }
                    Value::Real(gx)
                });
                let gw = needs(1).then(|| {
                    let mut gw = vec![0.0; w.len()];
                    for o in 0..*c_out {
                        let grow = &g[o * p..(o + 1) * p];
                        for i in 0..*c_in {
                            gw[o * c_in + i] = grow.iter().zip(&x[i * p..(i + 1) * p]).map(|(a, b)| a * b).sum();
                        }
                    }
                    Value::Real(gw)
                });
                let gb = needs(2).then(|| Value::Real((0..*c_out).map(|o| g[o * p..(o + 1) * p].iter().sum()).collect()));
                vec![gx, gw, gb]
            }
            Primitive::SpectralMix(layout) => {
                let g = g.as_complex().expect("complex cotangent");
                let v = input(0).as_complex().unwrap();
                let w = input(1).as_complex().unwrap();
                let (s, r) = (layout.spectrum_len, layout.modes.len());
                let gv = needs(0).then(|| {
                    let mut gv = vec![Complex64::default(); v.len()];
                    for i in 0..layout.c_in {
                        for o in 0..layout.c_out {
                            let wrow = &w[(i * layout.c_out + o) * r..(i * layout.c_out + o + 1) * r];
                            for (ri, &m) in layout.modes.iter().enumerate() {
                                gv[i * s + m] += wrow[ri].conj() * g[o * s + m];
                            }
                        }
                    }
                    Value::Complex(gv)
                });
                let gw = needs(1).then(|| {
                    let mut gw = vec![Complex64::default(); w.len()];
                    for i in 0..layout.c_in {
                        for o in 0..layout.c_out {
                            let base = (i * layout.c_out + o) * r;
                            for (ri, &m) in layout.modes.iter().enumerate() {
                                gw[base + ri] = g[o * s + m] * v[i * s + m].conj();
                            }
                        }
                    }
                    Value::Complex(gw)
                });
                vec![gv, gw]
            }
            Primitive::Slice { offset, len } => {
                let mut full = input(0).zeros_like();
                match (&mut full, g) {
                    (Value::Real(f), Value::Real(g)) => f[*offset..offset + len].copy_from_slice(g),
                    (Value::Complex(f), Value::Complex(g)) => f[*offset..offset + len].copy_from_slice(g),
                    _ => unreachable!(),
                }
                vec![Some(full)]
            }
            Primitive::Concat => {
                let mut offset = 0;
                node.inputs
                    .iter()
                    .map(|&i| {
                        let n = self.nodes[i].value.len();
                        let part = match g {
                            Value::Real(g) => Value::Real(g[offset..offset + n].to_vec()),
                            Value::Complex(g) => Value::Complex(g[offset..offset + n].to_vec()),
                        };
                        offset += n;
                        self.nodes[i].requires_grad.then_some(part)
                    })
                    .collect()
            }
            Primitive::Sum => {
                let s = g.as_real().unwrap()[0];
                vec![Some(Value::Real(vec![s; input(0).len()]))]
            }
            Primitive::MeanSquare => {
                let s = g.as_real().unwrap()[0];
                let x = input(0).as_real().unwrap();
                let k = 2.0 * s / x.len() as f64;
                vec![Some(Value::Real(x.iter().map(|v| k * v).collect()))]
            }
            Primitive::SoftminDp { gamma } => {
                let s = g.as_real().unwrap()[0];
                let x = input(0).as_real().unwrap();
                let y = input(1).as_real().unwrap();
                let table = node.saved.as_ref().expect("soft-DTW table saved");
                let e = softdtw_alignment(x, y, table, *gamma);
                let (n, m) = (x.len(), y.len());
                let mut gx = vec![0.0; n];
                let mut gy = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        let d = 2.0 * (x[i] - y[j]) * e[i * m + j] * s;
                        gx[i] += d;
                        gy[j] -= d;
                    }
                }
                vec![Some(Value::Real(gx)), Some(Value::Real(gy))]
            }
            Primitive::StopGradient => vec![None],
        }
    }
}

pub(crate) fn channel_affine(x: &[f64], w: &[f64], b: &[f64], c_in: usize, c_out: usize) -> Vec<f64> {
    let p = x.len() / c_in;
    let mut out = vec![0.0; c_out * p];
    for o in 0..c_out {
        let orow = &mut out[o * p..(o + 1) * p];
        orow.fill(b[o]);
        for i in 0..c_in {
            let wi = w[o * c_in + i];
            if wi == 0.0 {
                continue;
            }
            for (d, &s) in orow.iter_mut().zip(&x[i * p..(i + 1) * p]) {
                *d += wi * s;
            }
        }
    }
    out
}

fn spectral_mix(v: &[Complex64], w: &[Complex64], layout: &MixLayout) -> Vec<Complex64> {
    let (s, r) = (layout.spectrum_len, layout.modes.len());
    let mut out = vec![Complex64::default(); layout.c_out * s];
    for i in 0..layout.c_in {
        for o in 0..layout.c_out {
            let wrow = &w[(i * layout.c_out + o) * r..(i * layout.c_out + o + 1) * r];
            for (ri, &m) in layout.modes.iter().enumerate() {
                out[o * s + m] += wrow[ri] * v[i * s + m];
            }
        }
    }
    out
}

/// Sentinel standing in for `+∞` on the first row/column of the DP table.
pub(crate) const DP_SENTINEL: f64 = 1e300;

fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if m >= DP_SENTINEL {
        return DP_SENTINEL;
    }
    let s = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * s.ln()
}

/// Soft-DTW table `R` of shape `(n+1) x (m+1)`, row-major.
pub(crate) fn softdtw_table(x: &[f64], y: &[f64], gamma: f64) -> Vec<f64> {
    let (n, m) = (x.len(), y.len());
    let w = m + 1;
    let mut r = vec![DP_SENTINEL; (n + 1) * w];
    r[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let d = (x[i - 1] - y[j - 1]).powi(2);
            r[i * w + j] = d + softmin3(r[(i - 1) * w + j], r[i * w + j - 1], r[(i - 1) * w + j - 1], gamma);
        }
    }
    r
}

/// Expected alignment matrix `E = ∂R(n,m)/∂Δ` (n x m) by the backward DP.
fn softdtw_alignment(x: &[f64], y: &[f64], r: &[f64], gamma: f64) -> Vec<f64> {
    let (n, m) = (x.len(), y.len());
    let w = m + 1;
    let delta = |i: usize, j: usize| (x[i - 1] - y[j - 1]).powi(2);
    // e is indexed 1..=n, 1..=m with a zero border at n+1 / m+1
    let ew = m + 2;
    let mut e = vec![0.0; (n + 2) * ew];
    e[n * ew + m] = 1.0;
    for i in (1..=n).rev() {
        for j in (1..=m).rev() {
            if i == n && j == m {
                continue;
            }
            let rij = r[i * w + j];
            let mut acc = 0.0;
            if i < n {
                acc += e[(i + 1) * ew + j] * ((r[(i + 1) * w + j] - rij - delta(i + 1, j)) / gamma).exp();
            }
            if j < m {
                acc += e[i * ew + j + 1] * ((r[i * w + j + 1] - rij - delta(i, j + 1)) / gamma).exp();
            }
            if i < n && j < m {
                acc += e[(i + 1) * ew + j + 1] * ((r[(i + 1) * w + j + 1] - rij - delta(i + 1, j + 1)) / gamma).exp();
            }
            e[i * ew + j] = acc;
        }
    }
    let mut out = vec![0.0; n * m];
    for i in 1..=n {
        for j in 1..=m {
            out[(i - 1) * m + (j - 1)] = e[i * ew + j];
        }
    }
    out
}
