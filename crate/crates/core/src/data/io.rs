//! Binary file formats. All integers and floats are little-endian.
//!
//! Descriptor file:
//! `"DDR1" | u32 N | u32 D | u8 bytes-per-value (4 or 8) | N·D values row-major |
//! N u32 labels | N u32 sequence ids`, optionally followed by `"TIER" | N u8`
//! tier codes.
//!
//! Patch file:
//! `"DPT1" | u32 N | N·1024 pixel bytes | N u32 labels | N u32 sequence ids |
//! N u8 tier codes`.

use std::io::Write;
use std::path::Path;

use super::{DescriptorSet, Patch, PatchDataset, Tier, PATCH_PIXELS};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const DESC_MAGIC: &[u8; 4] = b"DDR1";
const TIER_MAGIC: &[u8; 4] = b"TIER";
const PATCH_MAGIC: &[u8; 4] = b"DPT1";

/// Storage width of descriptor values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Little-endian reader that reports the byte offset of every failure.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated file: need {n} bytes for {what}, {} available",
                    self.remaining()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset(),
                format!("{} unexpected trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

fn checked_len(n: usize, size: usize, at: u64) -> Result<usize> {
    n.checked_mul(size)
        .ok_or_else(|| Error::format(at, "size overflow"))
}

pub fn encode_descriptors(set: &DescriptorSet, precision: Precision) -> Vec<u8> {
    let n = set.len();
    let d = set.dim();
    let mut out = Vec::with_capacity(13 + n * d * precision.bytes() + n * 8 + 4 + n);
    out.extend_from_slice(DESC_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.push(precision.bytes() as u8);
    match precision {
        Precision::F32 => {
            for &v in set.descriptors.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in set.descriptors.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for &l in &set.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &s in &set.sequence_ids {
        out.extend_from_slice(&s.to_le_bytes());
    }
    if let Some(tiers) = &set.tiers {
        out.extend_from_slice(TIER_MAGIC);
        out.extend(tiers.iter().map(|t| t.code()));
    }
    out
}

pub fn decode_descriptors(buf: &[u8]) -> Result<DescriptorSet> {
    decode_descriptors_inner(buf, None)
}

fn decode_descriptors_inner(buf: &[u8], expected_dim: Option<usize>) -> Result<DescriptorSet> {
    if buf.is_empty() {
        return Err(Error::format(0, "empty descriptor file"));
    }
    let mut c = Cursor::new(buf);
    c.magic(DESC_MAGIC)?;
    let n = c.u32("row count")? as usize;
    let dim_at = c.offset();
    let d = c.u32("dimension")? as usize;
    if let Some(want) = expected_dim {
        if d != want {
            return Err(Error::format(
                dim_at,
                format!("descriptor dimension {d}, expected {want}"),
            ));
        }
    }
    let prec_at = c.offset();
    let precision = match c.u8("precision flag")? {
        4 => Precision::F32,
        8 => Precision::F64,
        other => {
            return Err(Error::format(
                prec_at,
                format!("precision flag must be 4 or 8, got {other}"),
            ))
        }
    };
    let count = checked_len(n, d, dim_at)?;
    let payload_at = c.offset();
    let bytes = c.take(checked_len(count, precision.bytes(), payload_at)?, "descriptor payload")?;
    let values: Vec<f64> = match precision {
        Precision::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            payload_at + (bad * precision.bytes()) as u64,
            "non-finite descriptor value",
        ));
    }
    let labels = c.u32s(n, "labels")?;
    let sequence_ids = c.u32s(n, "sequence ids")?;
    let tiers = if c.remaining() > 0 {
        c.magic(TIER_MAGIC)?;
        let at = c.offset();
        let codes = c.take(n, "tier codes")?;
        let tiers = codes
            .iter()
            .enumerate()
            .map(|(i, &code)| {
                Tier::from_code(code)
                    .ok_or_else(|| Error::format(at + i as u64, format!("bad tier code {code}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(tiers)
    } else {
        None
    };
    c.finish()?;
    DescriptorSet::new(Matrix::from_raw(n, d, values), labels, sequence_ids, tiers)
}

pub fn save_descriptors(set: &DescriptorSet, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    write_atomic(path.as_ref(), &encode_descriptors(set, precision))
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_descriptors(&buf)
}

/// Loads a descriptor file and rejects it unless its dimension is `dim`.
pub fn load_descriptors_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_descriptors_inner(&buf, Some(dim))
}

pub fn encode_patches(set: &PatchDataset) -> Result<Vec<u8>> {
    set.validate()?;
    let n = set.len();
    let mut out = Vec::with_capacity(8 + n * (PATCH_PIXELS + 9));
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for p in &set.patches {
        out.extend_from_slice(p.pixels());
    }
    for &l in &set.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &s in &set.sequence_ids {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend(set.tiers.iter().map(|t| t.code()));
    Ok(out)
}

pub fn decode_patches(buf: &[u8]) -> Result<PatchDataset> {
    if buf.is_empty() {
        return Err(Error::format(0, "empty patch file"));
    }
    let mut c = Cursor::new(buf);
    c.magic(PATCH_MAGIC)?;
    let n_at = c.offset();
    let n = c.u32("patch count")? as usize;
    let pixels = c.take(checked_len(n, PATCH_PIXELS, n_at)?, "pixels")?;
    let patches = pixels
        .chunks_exact(PATCH_PIXELS)
        .map(Patch::from_slice)
        .collect::<Result<Vec<_>>>()?;
    let labels = c.u32s(n, "labels")?;
    let sequence_ids = c.u32s(n, "sequence ids")?;
    let at = c.offset();
    let tiers = c
        .take(n, "tier codes")?
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            Tier::from_code(code)
                .ok_or_else(|| Error::format(at + i as u64, format!("bad tier code {code}")))
        })
        .collect::<Result<Vec<_>>>()?;
    c.finish()?;
    Ok(PatchDataset {
        patches,
        labels,
        sequence_ids,
        tiers,
    })
}

pub fn save_patches(set: &PatchDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_patches(set)?)
}

pub fn load_patches(path: impl AsRef<Path>) -> Result<PatchDataset> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_patches(&buf)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place,
/// so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
