//! On-disk formats: SGF1 fields, frame stacks, PGM heatmaps and CSV tables.
//!
//! SGF1 layout (little endian): magic `SGF1`, `u8` dims, `u32` points per
//! axis, `f64` domain length per axis, then the values in row-major order.
//! A frame stack is magic `SGFS`, a `u32` frame count, then that many SGF1
//! records. All writers go through [`write_atomic`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{make_grid, Field, SpectralGrid};

const FIELD_MAGIC: &[u8; 4] = b"SGF1";
const STACK_MAGIC: &[u8; 4] = b"SGFS";

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp: PathBuf = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Serialize one field as an SGF1 record.
pub fn encode_field(field: &Field) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(5 + g.dims() * 12 + 8 * g.points());
    out.extend_from_slice(FIELD_MAGIC);
    out.push(g.dims() as u8);
    for _ in 0..g.dims() {
        out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    }
    for _ in 0..g.dims() {
        out.extend_from_slice(&g.len().to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.bytes.len() {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn field(&mut self, grid: Option<&Arc<SpectralGrid>>) -> Result<Field> {
        if self.take(4)? != FIELD_MAGIC {
            return Err(Error::format(self.path, "missing SGF1 magic"));
        }
        let dims = self.take(1)?[0] as usize;
        if dims != 1 && dims != 2 {
            return Err(Error::format(self.path, format!("unsupported dims {dims}")));
        }
        let ns: Vec<usize> = (0..dims).map(|_| self.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let ls: Vec<f64> = (0..dims).map(|_| self.f64()).collect::<Result<_>>()?;
        if ns.iter().any(|&n| n != ns[0]) || ls.iter().any(|&l| l != ls[0]) {
            return Err(Error::format(self.path, "only square grids are supported"));
        }
        let grid = match grid {
            Some(g) if g.dims() == dims && g.n() == ns[0] && g.len() == ls[0] => g.clone(),
            _ => make_grid(dims, ns[0], ls[0]).map_err(|e| Error::format(self.path, e.to_string()))?,
        };
        let values = (0..grid.points()).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Field::new(grid, values)
    }
}

pub fn decode_field(path: &Path, bytes: &[u8]) -> Result<Field> {
    let mut r = Reader { path, bytes, pos: 0 };
    let f = r.field(None)?;
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after field"));
    }
    Ok(f)
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    write_atomic(path, &encode_field(field))
}

pub fn read_field(path: &Path) -> Result<Field> {
    decode_field(path, &read_bytes(path)?)
}

pub fn encode_stack(frames: &[Field]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STACK_MAGIC);
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        out.extend_from_slice(&encode_field(f));
    }
    out
}

pub fn decode_stack(path: &Path, bytes: &[u8]) -> Result<Vec<Field>> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(4)? != STACK_MAGIC {
        return Err(Error::format(path, "missing SGFS magic"));
    }
    let count = r.u32()? as usize;
    let mut frames: Vec<Field> = Vec::with_capacity(count);
    for _ in 0..count {
        let grid = frames.first().map(|f| f.grid().clone());
        let f = r.field(grid.as_ref())?;
        if let Some(g) = &grid {
            if f.grid() != g {
                return Err(Error::format(path, "frames on different grids"));
            }
        }
        frames.push(f);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after frame stack"));
    }
    Ok(frames)
}

pub fn write_stack(path: &Path, frames: &[Field]) -> Result<()> {
    write_atomic(path, &encode_stack(frames))
}

pub fn read_stack(path: &Path) -> Result<Vec<Field>> {
    decode_stack(path, &read_bytes(path)?)
}

/// 8-bit binary graymap of a 2D field (or a 1D field as a single row),
/// linearly scaled from its min to its max.
pub fn encode_pgm(field: &Field) -> Vec<u8> {
    let g = field.grid();
    let (w, h) = if g.dims() == 2 { (g.n(), g.n()) } else { (g.n(), 1) };
    let v = field.values();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(v.iter().map(|&x| {
        if span > 0.0 && span.is_finite() {
            ((x - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, field: &Field) -> Result<()> {
    write_atomic(path, &encode_pgm(field))
}

/// Comma-separated table with a header row; numbers use the shortest
/// round-trip representation so reruns are byte-identical.
#[derive(Clone, Debug, Default)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Format a number for CSV output.
pub fn num(x: f64) -> String {
    format!("{x}")
}
