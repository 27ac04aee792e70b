//! Teacher-labelled datasets: generated inputs, solver outputs and (for NS)
//! the snapshot frames, persisted as a directory with a TOML manifest and
//! one SGF1 file (or frame stack) per field.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grf::{normalize_range, sample_grf_range, zigzag_indexed, KernelSpec, RangeSpec};
use crate::io::{read_field, read_stack, write_atomic, write_field, write_stack};
use crate::solvers::{Equation, Solver, SolverConfig};
use crate::spectral::{spectral_truncate, Field, SpectralGrid};

pub const DATASET_SCHEMA: &str = "specgrad-dataset/1";
const MANIFEST: &str = "manifest.toml";

/// How the input functions of a dataset are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Grf {
        kernel: KernelSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<RangeSpec>,
    },
    Zigzag {
        pieces: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<RangeSpec>,
    },
    /// Inputs supplied by the caller, e.g. attacked samples.
    External { note: String },
}

impl GeneratorSpec {
    pub fn grf(kernel: KernelSpec, range: Option<RangeSpec>) -> Self {
        GeneratorSpec::Grf { kernel, range }
    }

    pub fn range(&self) -> Option<RangeSpec> {
        match self {
            GeneratorSpec::Grf { range, .. } | GeneratorSpec::Zigzag { range, .. } => *range,
            GeneratorSpec::External { .. } => None,
        }
    }

    /// Short label such as `rbf(0,1)` or `zigzag8`.
    pub fn tag(&self) -> String {
        let range = self.range().map(|r| r.tag()).unwrap_or_default();
        match self {
            GeneratorSpec::Grf { kernel, .. } => format!("{}{range}", kernel.family()),
            GeneratorSpec::Zigzag { pieces, .. } => format!("zigzag{pieces}{range}"),
            GeneratorSpec::External { note } => note.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.range() {
            r.validate()?;
        }
        match self {
            GeneratorSpec::Grf { kernel, .. } => kernel.validate(),
            GeneratorSpec::Zigzag { pieces, .. } if *pieces < 2 => {
                Err(Error::InvalidParameter(format!("zigzag needs at least 2 pieces, got {pieces}")))
            }
            _ => Ok(()),
        }
    }

    /// Inputs with indices in `range` of the stream defined by `seed`.
    pub fn sample(&self, grid: &Arc<SpectralGrid>, seed: u64, range: std::ops::Range<usize>) -> Result<Vec<Field>> {
        self.validate()?;
        let raw = match self {
            GeneratorSpec::Grf { kernel, .. } => sample_grf_range(kernel, grid, seed, range)?,
            GeneratorSpec::Zigzag { pieces, .. } => range
                .map(|i| zigzag_indexed(grid, *pieces, seed, i as u64))
                .collect::<Result<_>>()?,
            GeneratorSpec::External { .. } => {
                return Err(Error::Config("external inputs cannot be sampled".into()));
            }
        };
        match self.range() {
            Some(r) => raw.iter().map(|f| normalize_range(f, r)).collect(),
            None => Ok(raw),
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub count: usize,
    pub seed: u64,
    /// Stored resolution when coarser than the solver grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_n: Option<usize>,
    pub generator: GeneratorSpec,
    pub solver: SolverConfig,
}

/// Input/output pairs with optional snapshot frames per sample.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub inputs: Vec<Field>,
    pub outputs: Vec<Field>,
    /// Snapshot frames per sample; empty for datasets without snapshots.
    pub frames: Vec<Vec<Field>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// A labelled set built from caller-provided inputs.
    pub fn label(name: &str, inputs: Vec<Field>, solver: &SolverConfig, note: &str) -> Result<Self> {
        let manifest = DatasetManifest {
            schema: DATASET_SCHEMA.into(),
            name: name.into(),
            count: inputs.len(),
            seed: 0,
            store_n: None,
            generator: GeneratorSpec::External { note: note.into() },
            solver: solver.clone(),
        };
        let (outputs, frames) = solve_all(solver, &inputs, None)?;
        Ok(Dataset {
            manifest,
            inputs,
            outputs,
            frames,
        })
    }

    /// The samples at `indices` as a new dataset sharing this manifest.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick = |v: &Vec<Field>| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let mut manifest = self.manifest.clone();
        manifest.count = indices.len();
        Dataset {
            manifest,
            inputs: pick(&self.inputs),
            outputs: pick(&self.outputs),
            frames: if self.frames.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.frames[i].clone()).collect()
            },
        }
    }

    /// Write the dataset into `dir`; returns the paths written.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (i, (a, u)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            let (pa, pu) = (dir.join(format!("input_{i:05}.sgf")), dir.join(format!("output_{i:05}.sgf")));
            write_field(&pa, a)?;
            write_field(&pu, u)?;
            written.extend([pa, pu]);
            if let Some(fr) = self.frames.get(i) {
                let pf = dir.join(format!("frames_{i:05}.sgfs"));
                write_stack(&pf, fr)?;
                written.push(pf);
            }
        }
        let text = toml::to_string(&self.manifest).map_err(|e| Error::Config(e.to_string()))?;
        let pm = dir.join(MANIFEST);
        write_atomic(&pm, text.as_bytes())?;
        written.push(pm);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.schema != DATASET_SCHEMA {
            return Err(Error::format(&path, format!("unsupported schema {:?}", manifest.schema)));
        }
        let mut inputs = Vec::with_capacity(manifest.count);
        let mut outputs = Vec::with_capacity(manifest.count);
        let mut frames = Vec::new();
        for i in 0..manifest.count {
            inputs.push(read_field(&dir.join(format!("input_{i:05}.sgf")))?);
            outputs.push(read_field(&dir.join(format!("output_{i:05}.sgf")))?);
            let fp = dir.join(format!("frames_{i:05}.sgfs"));
            if fp.exists() {
                frames.push(read_stack(&fp)?);
            }
        }
        if !frames.is_empty() && frames.len() != inputs.len() {
            return Err(Error::format(dir, "frame stacks missing for some samples"));
        }
        Ok(Dataset {
            manifest,
            inputs,
            outputs,
            frames,
        })
    }
}

fn store(field: Field, store_n: Option<usize>) -> Result<Field> {
    match store_n {
        Some(m) if m < field.grid().n() => spectral_truncate(&field, m),
        _ => Ok(field),
    }
}

type Solved = (Vec<Field>, Vec<Vec<Field>>);

fn solve_all(cfg: &SolverConfig, inputs: &[Field], store_n: Option<usize>) -> Result<Solved> {
    let solver = Solver::new(cfg)?;
    let keep_frames = cfg.equation == Equation::Ns2d && !cfg.snapshots.is_empty();
    let solved: Vec<(Field, Vec<Field>)> = inputs
        .par_iter()
        .enumerate()
        .map(|(index, a)| {
            let wrap = |e: Error| Error::Sample {
                index,
                source: Box::new(e),
            };
            let traj = solver.solve(a).map_err(wrap)?;
            let out = store(traj.output().map_err(wrap)?.clone(), store_n)?;
            let frames = if keep_frames {
                traj.frames.into_iter().map(|f| store(f, store_n)).collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            Ok((out, frames))
        })
        .collect::<Result<_>>()?;
    let (outputs, frames): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let frames = if keep_frames { frames } else { Vec::new() };
    Ok((outputs, frames))
}

/// Draw `count` inputs from `generator`, label them with the teacher and keep
/// the NS snapshot frames. `store_n` optionally truncates stored fields to a
/// coarser grid.
pub fn build_dataset(
    name: &str,
    generator: &GeneratorSpec,
    solver: &SolverConfig,
    count: usize,
    seed: u64,
    store_n: Option<usize>,
) -> Result<Dataset> {
    generator.validate()?;
    solver.validate()?;
    let grid = solver.grid()?;
    let inputs = generator.sample(&grid, seed, 0..count)?;
    let (outputs, frames) = solve_all(solver, &inputs, store_n)?;
    let inputs = inputs.into_iter().map(|f| store(f, store_n)).collect::<Result<_>>()?;
    Ok(Dataset {
        manifest: DatasetManifest {
            schema: DATASET_SCHEMA.into(),
            name: name.into(),
            count,
            seed,
            store_n,
            generator: generator.clone(),
            solver: solver.clone(),
        },
        inputs,
        outputs,
        frames,
    })
}
