//! File formats: pattern stacks with groundtruth sidecars, projected
//! signals, fODF files and comma-separated evaluation tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::{ByteReader, Fodf};
use crate::projection::ScatteringPattern;
use crate::sh::{n_coeffs, ShCoeffs};

use super::synthetic::SyntheticSpec;

const STACK_MAGIC: &[u8; 4] = b"SLIP";
const STACK_VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;
const SIGNAL_MAGIC: &[u8; 4] = b"SLSG";
const FODF_MAGIC: &[u8; 4] = b"SLFD";
const FORMAT_VERSION: u16 = 1;

/// Equally sized patterns with optional groundtruth keyed by index.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternStack {
    pub width: usize,
    pub height: usize,
    pub patterns: Vec<ScatteringPattern>,
    pub groundtruth: BTreeMap<usize, SyntheticSpec>,
}

impl PatternStack {
    pub fn new(patterns: Vec<ScatteringPattern>) -> Result<Self> {
        let first = patterns.first().ok_or_else(|| Error::InvalidInput("empty pattern stack".into()))?;
        let (width, height) = (first.width(), first.height());
        if patterns.iter().any(|p| p.width() != width || p.height() != height) {
            return Err(Error::Shape("patterns in a stack must share dimensions".into()));
        }
        Ok(Self { width, height, patterns, groundtruth: BTreeMap::new() })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Path of the groundtruth sidecar belonging to a stack file.
pub fn sidecar_path(stack: &Path) -> PathBuf {
    let mut s = stack.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

/// Write a stack (intensities stored as float32) and, if any groundtruth is
/// present, its JSON sidecar.
pub fn write_stack(path: &Path, stack: &PatternStack) -> Result<()> {
    if stack.width > u16::MAX as usize || stack.height > u16::MAX as usize || stack.len() > u32::MAX as usize {
        return Err(Error::InvalidInput("stack too large for the file format".into()));
    }
    let mut buf = Vec::with_capacity(16 + 4 * stack.len() * stack.width * stack.height);
    buf.extend_from_slice(STACK_MAGIC);
    buf.extend_from_slice(&STACK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(stack.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(stack.width as u16).to_le_bytes());
    buf.extend_from_slice(&(stack.height as u16).to_le_bytes());
    buf.push(DTYPE_F32);
    for p in &stack.patterns {
        for &v in p.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    let side = sidecar_path(path);
    if !stack.groundtruth.is_empty() {
        let text = serde_json::to_string_pretty(&stack.groundtruth).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(side, text)?;
    } else if side.exists() {
        fs::remove_file(side)?;
    }
    Ok(())
}

pub fn read_stack(path: &Path) -> Result<PatternStack> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };
    if r.take(4)? != STACK_MAGIC {
        return Err(Error::Format(format!("{}: not a pattern stack", path.display())));
    }
    let version = r.u16()?;
    if version != STACK_VERSION {
        return Err(Error::Format(format!("pattern stack: unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let width = r.u16()? as usize;
    let height = r.u16()? as usize;
    if r.take(1)?[0] != DTYPE_F32 {
        return Err(Error::Format("pattern stack: unsupported dtype".into()));
    }
    if count == 0 || width == 0 || height == 0 {
        return Err(Error::Format("pattern stack: empty dimensions".into()));
    }
    let mut patterns = Vec::with_capacity(count);
    for i in 0..count {
        let data = (0..width * height).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        let p = ScatteringPattern::new(width, height, data).map_err(|e| Error::Format(format!("pattern {i}: {e}")))?;
        patterns.push(p);
    }
    r.finish("pattern stack")?;
    let mut stack = PatternStack::new(patterns)?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = fs::read_to_string(&side)?;
        stack.groundtruth = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        if stack.groundtruth.keys().any(|&k| k >= count) {
            return Err(Error::Format("groundtruth index beyond the stack".into()));
        }
    }
    Ok(stack)
}

/// Projected signals in mask order, with the mask pixel indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    pub n_side: u32,
    pub pixels: Vec<usize>,
    pub signals: Vec<Vec<f64>>,
}

pub fn write_signals(path: &Path, set: &SignalSet) -> Result<()> {
    if set.signals.iter().any(|s| s.len() != set.pixels.len()) {
        return Err(Error::Shape("signal length differs from the pixel list".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(SIGNAL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(set.signals.len() as u32).to_le_bytes());
    buf.extend_from_slice(&set.n_side.to_le_bytes());
    buf.extend_from_slice(&(set.pixels.len() as u32).to_le_bytes());
    for &p in &set.pixels {
        buf.extend_from_slice(&(p as u32).to_le_bytes());
    }
    for s in &set.signals {
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_signals(path: &Path) -> Result<SignalSet> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };
    if r.take(4)? != SIGNAL_MAGIC {
        return Err(Error::Format(format!("{}: not a signal file", path.display())));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("signal file: unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let n_side = r.u32()?;
    let n = r.u32()? as usize;
    let pixels = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let signals = (0..count).map(|_| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
    r.finish("signal file")?;
    Ok(SignalSet { n_side, pixels, signals })
}

/// Write fODFs: per pattern the atom weights then the SH coefficients.
pub fn write_fodfs(path: &Path, fodfs: &[Fodf]) -> Result<()> {
    let first = fodfs.first().ok_or_else(|| Error::InvalidInput("no fODFs to write".into()))?;
    let (n_atoms, l_max) = (first.weights.len(), first.sh.l_max());
    if fodfs.iter().any(|f| f.weights.len() != n_atoms || f.sh.l_max() != l_max) {
        return Err(Error::Shape("fODFs in a file must share atoms and degree".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(FODF_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(fodfs.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(n_atoms as u32).to_le_bytes());
    buf.extend_from_slice(&(l_max as u32).to_le_bytes());
    for f in fodfs {
        for v in f.weights.iter().chain(f.sh.values()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_fodfs(path: &Path) -> Result<Vec<Fodf>> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };
    if r.take(4)? != FODF_MAGIC {
        return Err(Error::Format(format!("{}: not an fODF file", path.display())));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("fODF file: unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let n_atoms = r.u32()? as usize;
    let l_max = r.u32()? as usize;
    if !l_max.is_multiple_of(2) {
        return Err(Error::Format("fODF file: odd l_max".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let weights = (0..n_atoms).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let c = (0..n_coeffs(l_max)).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let sh = ShCoeffs::new(l_max, c).map_err(|e| Error::Format(e.to_string()))?;
        out.push(Fodf { weights, sh });
    }
    r.finish("fODF file")?;
    Ok(out)
}

/// One row of an evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub acc: f64,
    pub jsd: f64,
    /// Mean matched angular error in degrees.
    pub angular_error_deg: f64,
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Format(e.to_string()))).collect()
}
