//! SGNO checkpoints (little endian): magic `SGNO`, `u32` descriptor length,
//! TOML descriptor (architecture, resolution, normalizer), `u32` tensor
//! count, then per tensor a `u8` kind (0 real, 1 complex), `u64` entry count
//! and the `f64` data (complex entries as re, im pairs).

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ArchSpec, Model, Normalizer};
use crate::diff::Value;
use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};

const MAGIC: &[u8; 4] = b"SGNO";
const SCHEMA: &str = "specgrad-model/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    schema: String,
    n: usize,
    arch: ArchSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalizer: Option<Normalizer>,
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let desc = Descriptor {
        schema: SCHEMA.into(),
        n: model.n(),
        arch: model.arch().clone(),
        normalizer: model.normalizer(),
    };
    let text = toml::to_string(&desc).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params() {
        out.push(p.is_complex() as u8);
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        match p {
            Value::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Value::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Model> {
    let mut pos = 0;
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + k)
            .ok_or_else(|| Error::format(path, format!("truncated at byte {pos}")))?;
        pos += k;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::format(path, "missing SGNO magic"));
    }
    let dlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let text = std::str::from_utf8(take(dlen)?).map_err(|e| Error::format(path, e.to_string()))?;
    let desc: Descriptor = toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    if desc.schema != SCHEMA {
        return Err(Error::format(path, format!("unsupported schema {:?}", desc.schema)));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = take(1)?[0];
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut f = || -> Result<f64> { Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())) };
        params.push(match kind {
            0 => Value::Real((0..len).map(|_| f()).collect::<Result<_>>()?),
            1 => Value::Complex((0..len).map(|_| Ok(Complex64::new(f()?, f()?))).collect::<Result<_>>()?),
            k => return Err(Error::format(path, format!("unknown tensor kind {k}"))),
        });
    }
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after tensors"));
    }
    Model::from_parts(desc.arch, desc.n, params, desc.normalizer).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(path, &read_bytes(path)?)
}
