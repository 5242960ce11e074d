//! Patch and descriptor datasets, their file formats, the built-in gradient
//! histogram descriptor and the synthetic patch generator.

mod io;
mod sift;
mod split;
mod synth;

pub use io::{
    decode_descriptors, decode_patches, encode_descriptors, encode_patches, load_descriptors,
    load_descriptors_with_dim, load_patches, save_descriptors, save_patches, write_atomic,
    Precision,
};
pub(crate) use io::Cursor;
pub use sift::{describe_patches, sift_like_descriptor, SIFT_DIM};
pub use split::split_dataset;
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::numerics::{squared_norm, Matrix};

/// Side length of a square patch in pixels.
pub const PATCH_SIZE: usize = 32;
pub const PATCH_PIXELS: usize = PATCH_SIZE * PATCH_SIZE;

/// Geometric/photometric noise level of a patch, following the
/// easy/hard/tough grouping of patch benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Easy = 0,
    Hard = 1,
    Tough = 2,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Hard, Tier::Tough];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Tier> {
        match code {
            0 => Some(Tier::Easy),
            1 => Some(Tier::Hard),
            2 => Some(Tier::Tough),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Hard => "hard",
            Tier::Tough => "tough",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tier> {
        match s.trim().to_ascii_lowercase().as_str() {
            "easy" => Ok(Tier::Easy),
            "hard" => Ok(Tier::Hard),
            "tough" => Ok(Tier::Tough),
            other => Err(Error::config(format!("unknown tier '{other}'"))),
        }
    }
}

/// A 32×32 8-bit grayscale patch, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Patch(pub Box<[u8; PATCH_PIXELS]>);

impl Patch {
    pub fn from_slice(pixels: &[u8]) -> Result<Patch> {
        let arr: [u8; PATCH_PIXELS] = pixels.try_into().map_err(|_| {
            Error::shape(format!(
                "patch must have {PATCH_PIXELS} pixels, got {}",
                pixels.len()
            ))
        })?;
        Ok(Patch(Box::new(arr)))
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.0[y * PATCH_SIZE + x]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.0[..]
    }
}

impl std::fmt::Debug for Patch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Patch(32x32)")
    }
}

/// Labelled patches. `labels[i]` identifies the 3D point patch `i` depicts.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub patches: Vec<Patch>,
    pub labels: Vec<u32>,
    pub sequence_ids: Vec<u32>,
    pub tiers: Vec<Tier>,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.patches.len();
        if self.labels.len() != n || self.sequence_ids.len() != n || self.tiers.len() != n {
            return Err(Error::shape(format!(
                "patch dataset has {n} patches but {} labels, {} sequence ids, {} tiers",
                self.labels.len(),
                self.sequence_ids.len(),
                self.tiers.len()
            )));
        }
        Ok(())
    }
}

/// An N×D descriptor matrix with per-row metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub descriptors: Matrix,
    pub labels: Vec<u32>,
    pub sequence_ids: Vec<u32>,
    pub tiers: Option<Vec<Tier>>,
    /// Every row has unit ℓ2 norm (or is exactly zero).
    pub normalized: bool,
}

/// Tolerance on row norms for a set flagged `normalized`.
pub const UNIT_NORM_TOL: f64 = 1e-6;

impl DescriptorSet {
    /// Builds a set, checking metadata lengths and inferring the `normalized` flag.
    pub fn new(
        descriptors: Matrix,
        labels: Vec<u32>,
        sequence_ids: Vec<u32>,
        tiers: Option<Vec<Tier>>,
    ) -> Result<Self> {
        let n = descriptors.rows();
        if labels.len() != n || sequence_ids.len() != n {
            return Err(Error::shape(format!(
                "{n} descriptors but {} labels and {} sequence ids",
                labels.len(),
                sequence_ids.len()
            )));
        }
        if let Some(t) = &tiers {
            if t.len() != n {
                return Err(Error::shape(format!("{n} descriptors but {} tiers", t.len())));
            }
        }
        let normalized = rows_unit_or_zero(&descriptors);
        Ok(DescriptorSet {
            descriptors,
            labels,
            sequence_ids,
            tiers,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.descriptors.cols()
    }

    pub fn tier(&self, i: usize) -> Option<Tier> {
        self.tiers.as_ref().map(|t| t[i])
    }

    /// Rows at `idx`, in order, with their metadata.
    pub fn subset(&self, idx: &[usize]) -> DescriptorSet {
        DescriptorSet {
            descriptors: self.descriptors.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            sequence_ids: idx.iter().map(|&i| self.sequence_ids[i]).collect(),
            tiers: self
                .tiers
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i]).collect()),
            normalized: self.normalized,
        }
    }

    /// Same metadata, new descriptor rows (e.g. after a projection).
    pub fn with_descriptors(&self, descriptors: Matrix) -> Result<DescriptorSet> {
        DescriptorSet::new(
            descriptors,
            self.labels.clone(),
            self.sequence_ids.clone(),
            self.tiers.clone(),
        )
    }

    /// Row indices grouped by label, labels ascending.
    pub fn indices_by_label(&self) -> std::collections::BTreeMap<u32, Vec<usize>> {
        let mut map: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }
}

fn rows_unit_or_zero(m: &Matrix) -> bool {
    m.row_iter().all(|r| {
        let n2 = squared_norm(r);
        n2 == 0.0 || (n2.sqrt() - 1.0).abs() <= UNIT_NORM_TOL
    })
}

/// ℓ2-normalizes each row in place; rows with norm below `1e-12` become zero.
pub fn normalize_rows(m: &mut Matrix) {
    let cols = m.cols();
    if cols == 0 {
        return;
    }
    for row in m.data_mut().chunks_exact_mut(cols) {
        let n = squared_norm(row).sqrt();
        if n < crate::nn::L2_EPS {
            row.fill(0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}
