//! A SIFT-style gradient-orientation histogram over a fixed 32×32 patch:
//! 4×4 spatial cells × 8 orientation bins, trilinear voting, Gaussian window,
//! normalize / clamp at 0.2 / renormalize.

use std::f64::consts::PI;

use super::{DescriptorSet, PatchDataset, PATCH_PIXELS, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const SIFT_DIM: usize = 128;

const CELLS: usize = 4;
const BINS: usize = 8;
const CELL_SIZE: f64 = (PATCH_SIZE / CELLS) as f64;
const WINDOW_SIGMA: f64 = 16.0;
const CLAMP: f64 = 0.2;

/// Descriptor of one patch given as 1024 row-major pixels.
///
/// A patch without any gradient energy yields the all-zero vector.
pub fn sift_like_descriptor(pixels: &[u8]) -> Result<Vec<f64>> {
    if pixels.len() != PATCH_PIXELS {
        return Err(Error::shape(format!(
            "patch must be {PATCH_SIZE}x{PATCH_SIZE} ({PATCH_PIXELS} pixels), got {}",
            pixels.len()
        )));
    }
    let px = |x: usize, y: usize| pixels[y * PATCH_SIZE + x] as f64;
    let last = PATCH_SIZE - 1;
    let center = (PATCH_SIZE as f64 - 1.0) / 2.0;
    let mut hist = [0.0f64; SIFT_DIM];

    for y in 0..PATCH_SIZE {
        for x in 0..PATCH_SIZE {
            // central differences with replicated borders
            let gx = px((x + 1).min(last), y) - px(x.saturating_sub(1), y);
            let gy = px(x, (y + 1).min(last)) - px(x, y.saturating_sub(1));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            let weight = mag * (-(dx * dx + dy * dy) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();

            let bo = (gy.atan2(gx) / (2.0 * PI) * BINS as f64).rem_euclid(BINS as f64);
            let o0 = (bo.floor() as usize) % BINS;
            let fo = bo - bo.floor();

            let bx = (x as f64 + 0.5) / CELL_SIZE - 0.5;
            let by = (y as f64 + 0.5) / CELL_SIZE - 0.5;
            let (cx0, fx) = (bx.floor(), bx - bx.floor());
            let (cy0, fy) = (by.floor(), by - by.floor());

            for (cy, wy) in [(cy0, 1.0 - fy), (cy0 + 1.0, fy)] {
                if cy < 0.0 || cy >= CELLS as f64 || wy == 0.0 {
                    continue;
                }
                for (cx, wx) in [(cx0, 1.0 - fx), (cx0 + 1.0, fx)] {
                    if cx < 0.0 || cx >= CELLS as f64 || wx == 0.0 {
                        continue;
                    }
                    let base = ((cy as usize) * CELLS + cx as usize) * BINS;
                    let w = weight * wy * wx;
                    hist[base + o0] += w * (1.0 - fo);
                    hist[base + (o0 + 1) % BINS] += w * fo;
                }
            }
        }
    }

    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Ok(vec![0.0; SIFT_DIM]);
    }
    for v in hist.iter_mut() {
        *v = (*v / norm).min(CLAMP);
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(hist.iter().map(|v| v / norm).collect())
}

/// Describes every patch; labels, sequence ids and tiers are carried over.
pub fn describe_patches(set: &PatchDataset) -> Result<DescriptorSet> {
    set.validate()?;
    let mut data = Vec::with_capacity(set.len() * SIFT_DIM);
    for p in &set.patches {
        data.extend(sift_like_descriptor(p.pixels())?);
    }
    DescriptorSet::new(
        Matrix::from_raw(set.len(), SIFT_DIM, data),
        set.labels.clone(),
        set.sequence_ids.clone(),
        Some(set.tiers.clone()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // smooth-ish random image: sum of a few random ramps plus noise
        let (a, b, c) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..0.3));
        (0..PATCH_PIXELS)
            .map(|i| {
                let (x, y) = ((i % 32) as f64, (i / 32) as f64);
                let v = 128.0 + a * x + b * y + 40.0 * (c * x * y / 8.0).sin() + rng.random_range(-10.0..10.0);
                v.clamp(0.0, 255.0) as u8
            })
            .collect()
    }

    /// Rotates a patch by 90° counter-clockwise: new(x', y') = old(31 − y', x').
    fn rotate90(p: &[u8]) -> Vec<u8> {
        let mut out = vec![0u8; PATCH_PIXELS];
        for yp in 0..32 {
            for xp in 0..32 {
                out[yp * 32 + xp] = p[xp * 32 + (31 - yp)];
            }
        }
        out
    }

    #[test]
    fn constant_patch_is_zero() {
        let d = sift_like_descriptor(&[93u8; PATCH_PIXELS]).unwrap();
        assert_eq!(d.len(), SIFT_DIM);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_is_unit_norm_and_bounded() {
        for seed in 0..20 {
            let d = sift_like_descriptor(&random_patch(seed)).unwrap();
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn wrong_size_rejected() {
        assert!(matches!(sift_like_descriptor(&[0u8; 100]), Err(Error::Shape(_))));
    }

    #[test]
    fn rotation_by_90_permutes_cells_and_bins() {
        for seed in 0..5 {
            let p = random_patch(100 + seed);
            let d = sift_like_descriptor(&p).unwrap();
            let r = sift_like_descriptor(&rotate90(&p)).unwrap();
            // gradient (gx, gy) becomes (gy, -gx): orientation shifts by -90° (two bins),
            // cell (cx, cy) moves to (cy, 3 - cx)
            let mut expected = vec![0.0; SIFT_DIM];
            for cy in 0..4 {
                for cx in 0..4 {
                    for o in 0..8 {
                        let (ncx, ncy, no) = (cy, 3 - cx, (o + 6) % 8);
                        expected[(ncy * 4 + ncx) * 8 + no] = d[(cy * 4 + cx) * 8 + o];
                    }
                }
            }
            let cos: f64 = expected.iter().zip(&r).map(|(a, b)| a * b).sum();
            assert!(cos > 0.9, "cosine {cos}");
            assert!(cos > 1.0 - 1e-9, "rotation should be an exact permutation, cosine {cos}");
        }
    }
}
