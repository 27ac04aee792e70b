//! Neural-operator students built on diff-engine primitives: FNO-1D, a
//! recurrent FNO-2D that rolls a window of frames forward, and DeepONet-1D.
//!
//! Every forward pass is recorded on a [`Tape`], so the same code serves
//! inference, training and attacks that differentiate with respect to the
//! input.

mod checkpoint;
mod train;

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use train::{samples_from, train, train_with, Adam, AdamConfig, History, Sample, TrainConfig};

use crate::diff::{Activation, MixLayout, Tape, Value, Var};
use crate::error::{Error, Result};
use crate::grf::sample_rng;
use crate::spectral::{make_grid, SpectralGrid};

fn yes() -> bool {
    true
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSpec {
    Fno1d {
        modes: usize,
        width: usize,
        layers: usize,
        /// Append the grid coordinate as an input channel.
        #[serde(default)]
        coords: bool,
        #[serde(default)]
        activation: Activation,
    },
    /// Maps a window of `t_in` frames to the next frame, rolled forward
    /// `t_out` times. With `direct`, maps the first frame straight to the
    /// last one instead.
    Fno2d {
        modes: usize,
        width: usize,
        layers: usize,
        t_in: usize,
        t_out: usize,
        #[serde(default = "yes")]
        coords: bool,
        #[serde(default)]
        direct: bool,
        #[serde(default)]
        activation: Activation,
    },
    DeepOnet {
        width: usize,
        depth: usize,
        latent: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl ArchSpec {
    pub fn fno1d(modes: usize, width: usize, layers: usize) -> Self {
        ArchSpec::Fno1d {
            modes,
            width,
            layers,
            coords: false,
            activation: Activation::Gelu,
        }
    }

    pub fn fno2d(modes: usize, width: usize, layers: usize, t_in: usize, t_out: usize) -> Self {
        ArchSpec::Fno2d {
            modes,
            width,
            layers,
            t_in,
            t_out,
            coords: true,
            direct: false,
            activation: Activation::Gelu,
        }
    }

    pub fn deeponet(width: usize, depth: usize, latent: usize) -> Self {
        ArchSpec::DeepOnet {
            width,
            depth,
            latent,
            activation: Activation::Gelu,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchSpec::Fno1d { .. } => "fno1d",
            ArchSpec::Fno2d { .. } => "fno2d",
            ArchSpec::DeepOnet { .. } => "deeponet",
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            ArchSpec::Fno2d { .. } => 2,
            _ => 1,
        }
    }

    fn activation(&self) -> Activation {
        match self {
            ArchSpec::Fno1d { activation, .. } | ArchSpec::Fno2d { activation, .. } | ArchSpec::DeepOnet { activation, .. } => *activation,
        }
    }

    /// Frames consumed and produced per sample (1 and 1 outside the
    /// recurrent FNO-2D).
    pub fn frames(&self) -> (usize, usize) {
        match self {
            ArchSpec::Fno2d { direct: true, .. } => (1, 1),
            ArchSpec::Fno2d { t_in, t_out, .. } => (*t_in, *t_out),
            _ => (1, 1),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            ArchSpec::Fno1d { modes, width, layers, .. } | ArchSpec::Fno2d { modes, width, layers, .. } => {
                if *modes == 0 || *modes > n / 2 {
                    return bad(format!("retained modes {modes} must be in 1..={}", n / 2));
                }
                if *width == 0 || *layers == 0 {
                    return bad("width and layer count must be positive".into());
                }
                if let ArchSpec::Fno2d { t_in, t_out, .. } = self {
                    if *t_in == 0 || *t_out == 0 {
                        return bad("t_in and t_out must be positive".into());
                    }
                }
                Ok(())
            }
            ArchSpec::DeepOnet { width, depth, latent, .. } => {
                if *width == 0 || *depth == 0 || *latent == 0 {
                    return bad("DeepONet width, depth and latent size must be positive".into());
                }
                Ok(())
            }
        }
    }

    fn coord_channels(&self) -> usize {
        match self {
            ArchSpec::Fno1d { coords: true, .. } => 1,
            ArchSpec::Fno2d { coords: true, .. } => 2,
            _ => 0,
        }
    }
}

/// Scalar affine maps applied to inputs before and to outputs after the
/// network: `x' = (x - in_mean) / in_std`, `y = y' out_std + out_mean`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub in_mean: f64,
    pub in_std: f64,
    pub out_mean: f64,
    pub out_std: f64,
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Normalizer {
    /// Fit to the pooled statistics of inputs and targets. When `shared`,
    /// both sides use the statistics of the union (needed when outputs are
    /// fed back as inputs).
    pub fn fit(samples: &[Sample], shared: bool) -> Self {
        let ins = samples.iter().flat_map(|s| s.input.iter());
        let outs = samples.iter().flat_map(|s| s.target.iter());
        if shared {
            let (m, s) = mean_std(ins.chain(outs));
            return Normalizer {
                in_mean: m,
                in_std: s,
                out_mean: m,
                out_std: s,
            };
        }
        let (in_mean, in_std) = mean_std(ins);
        let (out_mean, out_std) = mean_std(outs);
        Normalizer {
            in_mean,
            in_std,
            out_mean,
            out_std,
        }
    }
}

/// Grid, mode layout and coordinate channels for one resolution.
#[derive(Clone, Debug)]
struct Geometry {
    grid: Arc<SpectralGrid>,
    layout: Option<Arc<MixLayout>>,
    coords: Vec<f64>,
}

/// Half-spectrum indices of the retained modes, in wavenumber order so that
/// the same weights apply at any resolution.
fn retained_modes(grid: &SpectralGrid, modes: usize) -> Vec<usize> {
    let n = grid.n();
    if grid.dims() == 1 {
        return (0..modes).collect();
    }
    let h = grid.half_n();
    let rows = (0..modes).chain(n - modes..n);
    rows.flat_map(|i| (0..modes).map(move |j| i * h + j)).collect()
}

fn geometry(arch: &ArchSpec, n: usize) -> Result<Geometry> {
    arch.validate(n)?;
    let grid = make_grid(arch.dims(), n, 1.0)?;
    let layout = match arch {
        ArchSpec::Fno1d { modes, width, .. } | ArchSpec::Fno2d { modes, width, .. } => Some(Arc::new(MixLayout {
            modes: retained_modes(&grid, *modes),
            spectrum_len: grid.modes(),
            c_in: *width,
            c_out: *width,
        })),
        ArchSpec::DeepOnet { .. } => None,
    };
    let h = 1.0 / n as f64;
    let coords = match arch.dims() {
        1 => (0..n).map(|i| i as f64 * h).collect(),
        _ => {
            let xs = (0..n * n).map(|p| (p / n) as f64 * h);
            let ys = (0..n * n).map(|p| (p % n) as f64 * h);
            xs.chain(ys).collect()
        }
    };
    Ok(Geometry { grid, layout, coords })
}

/// A student operator: architecture, native resolution, parameters and an
/// optional normalizer.
#[derive(Clone, Debug)]
pub struct Model {
    arch: ArchSpec,
    n: usize,
    params: Vec<Value>,
    normalizer: Option<Normalizer>,
    geo: Geometry,
}

fn uniform(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

impl Model {
    /// Deterministic initialization: affine weights and biases uniform in
    /// `±1/sqrt(fan_in)`, spectral weights with real and imaginary parts
    /// uniform in `±1/(width modes)`.
    pub fn init(arch: ArchSpec, n: usize, seed: u64) -> Result<Self> {
        let geo = geometry(&arch, n)?;
        let mut rng = sample_rng(seed, 0);
        let mut params = Vec::new();
        let mut affine = |rng: &mut rand_chacha::ChaCha8Rng, c_in: usize, c_out: usize| {
            let k = 1.0 / (c_in as f64).sqrt();
            params.push(Value::Real(uniform(rng, c_in * c_out, k)));
            params.push(Value::Real(uniform(rng, c_out, k)));
        };
        match &arch {
            ArchSpec::Fno1d { modes, width, layers, .. } | ArchSpec::Fno2d { modes, width, layers, .. } => {
                let c_in = arch.frames().0 + arch.coord_channels();
                let r = geo.layout.as_ref().map_or(0, |l| l.modes.len());
                let scale = 1.0 / (*width * *modes) as f64;
                affine(&mut rng, c_in, *width);
                let mut layer_params = Vec::new();
                for _ in 0..*layers {
                    let re = uniform(&mut rng, width * width * r, scale);
                    let im = uniform(&mut rng, width * width * r, scale);
                    let spec = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
                    let k = 1.0 / (*width as f64).sqrt();
                    layer_params.push(Value::Complex(spec));
                    layer_params.push(Value::Real(uniform(&mut rng, width * width, k)));
                    layer_params.push(Value::Real(uniform(&mut rng, *width, k)));
                }
                params.extend(layer_params);
                let k = 1.0 / (*width as f64).sqrt();
                params.push(Value::Real(uniform(&mut rng, *width, k)));
                params.push(Value::Real(uniform(&mut rng, 1, k)));
            }
            ArchSpec::DeepOnet { width, depth, latent, .. } => {
                let dims = |first: usize| {
                    let mut d = vec![first];
                    d.extend(std::iter::repeat_n(*width, depth - 1));
                    d.push(*latent);
                    d
                };
                for net in [dims(n), dims(1)] {
                    for w in net.windows(2) {
                        affine(&mut rng, w[0], w[1]);
                    }
                }
                params.push(Value::Real(vec![0.0]));
            }
        }
        Ok(Model {
            arch,
            n,
            params,
            normalizer: None,
            geo,
        })
    }

    /// Reassemble a model from stored parts, checking tensor shapes.
    pub fn from_parts(arch: ArchSpec, n: usize, params: Vec<Value>, normalizer: Option<Normalizer>) -> Result<Self> {
        let mut m = Model::init(arch, n, 0)?;
        if params.len() != m.params.len()
            || params.iter().zip(&m.params).any(|(a, b)| a.len() != b.len() || a.is_complex() != b.is_complex())
        {
            return Err(Error::shape("model", "parameter tensors do not match the architecture"));
        }
        m.params = params;
        m.normalizer = normalizer;
        Ok(m)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &[Value] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Value] {
        &mut self.params
    }

    /// Total number of real scalars (complex entries count twice).
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| if p.is_complex() { 2 * p.len() } else { p.len() }).sum()
    }

    pub fn normalizer(&self) -> Option<Normalizer> {
        self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Option<Normalizer>) {
        self.normalizer = normalizer;
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.geo.grid
    }

    fn points(&self) -> usize {
        self.geo.grid.points()
    }

    /// Values per input sample at the native resolution.
    pub fn input_len(&self) -> usize {
        self.arch.frames().0 * self.points()
    }

    /// Values per output sample at the native resolution.
    pub fn output_len(&self) -> usize {
        self.arch.frames().1 * self.points()
    }

    /// Put the parameters on `tape`, as leaves when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    fn geometry_for(&self, input_len: usize) -> Result<std::borrow::Cow<'_, Geometry>> {
        if input_len == self.input_len() {
            return Ok(std::borrow::Cow::Borrowed(&self.geo));
        }
        if matches!(self.arch, ArchSpec::DeepOnet { .. }) {
            return Err(Error::GridMismatch(format!("DeepONet expects {} sensor values, got {input_len}", self.n)));
        }
        let frames = self.arch.frames().0;
        let points = input_len / frames;
        let n = match self.arch.dims() {
            1 => points,
            _ => (points as f64).sqrt().round() as usize,
        };
        if frames * n.pow(self.arch.dims() as u32) != input_len {
            return Err(Error::GridMismatch(format!("{input_len} input values do not form {frames} square frames")));
        }
        geometry(&self.arch, n).map(std::borrow::Cow::Owned)
    }

    fn affine_const(tape: &mut Tape, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let y = if scale == 1.0 { x } else { tape.scale(x, scale)? };
        if shift == 0.0 {
            return Ok(y);
        }
        let c = tape.constant_real(vec![shift; tape.value(y).len()]);
        tape.add(y, c)
    }

    fn normalize_in(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.normalizer {
            Some(nz) => Self::affine_const(tape, x, 1.0 / nz.in_std, -nz.in_mean / nz.in_std),
            None => Ok(x),
        }
    }

    fn denormalize_out(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        match self.normalizer {
            Some(nz) => Self::affine_const(tape, y, nz.out_std, nz.out_mean),
            None => Ok(y),
        }
    }

    /// Lift, spectral layers and projection on channel-major input.
    fn fno_core(&self, tape: &mut Tape, pv: &[Var], geo: &Geometry, x: Var) -> Result<Var> {
        let (width, layers) = match self.arch {
            ArchSpec::Fno1d { width, layers, .. } | ArchSpec::Fno2d { width, layers, .. } => (width, layers),
            ArchSpec::DeepOnet { .. } => unreachable!("fno_core on a DeepONet"),
        };
        let layout = geo.layout.as_ref().expect("FNO geometry has a mode layout");
        let act = self.arch.activation();
        let c_in = self.arch.frames().0 + self.arch.coord_channels();
        let mut v = tape.channel_affine(x, pv[0], pv[1], c_in, width)?;
        for l in 0..layers {
            let (r, w, b) = (pv[2 + 3 * l], pv[3 + 3 * l], pv[4 + 3 * l]);
            let z = tape.rfft(&geo.grid, v)?;
            let z = tape.spectral_mix(z, r, layout)?;
            let s = tape.irfft(&geo.grid, z)?;
            let p = tape.channel_affine(v, w, b, width, width)?;
            let sum = tape.add(s, p)?;
            v = tape.activation(sum, act)?;
        }
        let k = 2 + 3 * layers;
        tape.channel_affine(v, pv[k], pv[k + 1], width, 1)
    }

    fn with_coords(&self, tape: &mut Tape, geo: &Geometry, parts: &[Var]) -> Result<Var> {
        let mut all = parts.to_vec();
        if self.arch.coord_channels() > 0 {
            all.push(tape.constant_real(geo.coords.clone()));
        }
        if all.len() == 1 {
            Ok(all[0])
        } else {
            tape.concat(&all)
        }
    }

    /// Record the forward pass of one sample. `pv` are the parameter handles
    /// from [`Model::register`]. FNO inputs may come at any resolution whose
    /// grid keeps the retained modes.
    pub fn forward_on(&self, tape: &mut Tape, pv: &[Var], input: Var) -> Result<Var> {
        if pv.len() != self.params.len() {
            return Err(Error::shape("forward", format!("{} parameter handles for {} tensors", pv.len(), self.params.len())));
        }
        let len = tape.value(input).len();
        let geo = self.geometry_for(len)?;
        let x = self.normalize_in(tape, input)?;
        let y = match &self.arch {
            ArchSpec::Fno1d { .. } => {
                let x = self.with_coords(tape, &geo, &[x])?;
                self.fno_core(tape, pv, &geo, x)?
            }
            ArchSpec::Fno2d { direct: true, .. } => {
                let x = self.with_coords(tape, &geo, &[x])?;
                self.fno_core(tape, pv, &geo, x)?
            }
            ArchSpec::Fno2d { t_in, t_out, .. } => {
                let p = geo.grid.points();
                let mut window = (0..*t_in).map(|f| tape.slice(x, f * p, p)).collect::<Result<Vec<_>>>()?;
                let mut preds = Vec::with_capacity(*t_out);
                for _ in 0..*t_out {
                    let xin = self.with_coords(tape, &geo, &window)?;
                    let next = self.fno_core(tape, pv, &geo, xin)?;
                    preds.push(next);
                    window.remove(0);
                    window.push(next);
                }
                if preds.len() == 1 {
                    preds[0]
                } else {
                    tape.concat(&preds)?
                }
            }
            ArchSpec::DeepOnet { .. } => self.deeponet_core(tape, pv, x, &geo.coords)?,
        };
        self.denormalize_out(tape, y)
    }

    fn deeponet_core(&self, tape: &mut Tape, pv: &[Var], sensors: Var, queries: &[f64]) -> Result<Var> {
        let ArchSpec::DeepOnet { width, depth, latent, activation } = self.arch else {
            unreachable!("deeponet_core on an FNO");
        };
        let dims = |first: usize| {
            let mut d = vec![first];
            d.extend(std::iter::repeat_n(width, depth - 1));
            d.push(latent);
            d
        };
        let mut k = 0;
        let mut b = sensors;
        let bd = dims(self.n);
        for (l, w) in bd.windows(2).enumerate() {
            b = tape.channel_affine(b, pv[k], pv[k + 1], w[0], w[1])?;
            k += 2;
            if l + 1 < depth {
                b = tape.activation(b, activation)?;
            }
        }
        let mut t = tape.constant_real(queries.to_vec());
        for w in dims(1).windows(2) {
            t = tape.channel_affine(t, pv[k], pv[k + 1], w[0], w[1])?;
            t = tape.activation(t, activation)?;
            k += 2;
        }
        tape.channel_affine(t, b, pv[k], latent, 1)
    }

    /// DeepONet evaluation at arbitrary query coordinates (in units of the
    /// domain length) on a tape.
    pub fn deeponet_on(&self, tape: &mut Tape, pv: &[Var], sensors: Var, queries: &[f64]) -> Result<Var> {
        if !matches!(self.arch, ArchSpec::DeepOnet { .. }) {
            return Err(Error::Config("query evaluation needs a DeepONet".into()));
        }
        if tape.value(sensors).len() != self.n {
            return Err(Error::GridMismatch(format!("DeepONet expects {} sensor values", self.n)));
        }
        let x = self.normalize_in(tape, sensors)?;
        let y = self.deeponet_core(tape, pv, x, queries)?;
        self.denormalize_out(tape, y)
    }

    /// `Σ_q branch_q(a) trunk_q(y) + bias` at each query `y`.
    pub fn deeponet_eval(&self, sensors: &[f64], queries: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let s = tape.constant_real(sensors.to_vec());
        let y = self.deeponet_on(&mut tape, &pv, s, queries)?;
        Ok(tape.real(y).to_vec())
    }

    /// Forward pass without gradients.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let x = tape.constant_real(input.to_vec());
        let y = self.forward_on(&mut tape, &pv, x)?;
        if let Some(index) = tape.real(y).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "model output", index });
        }
        Ok(tape.real(y).to_vec())
    }
}
