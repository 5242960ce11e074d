//! Synthetic labelled patches.
//!
//! Each class is a random texture of oriented Gaussian blobs and soft edges.
//! View 0 of a class is its reference rendering (photometric noise only); views
//! 1.. are rendered through a random affine warp, a brightness/contrast change
//! and additive noise whose strength grows with the tier. The sequence id of a
//! patch is `scene * patches_per_class + view`, so every view index of a scene
//! forms one sequence and view 0 is the reference sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Patch, PatchDataset, Tier, PATCH_PIXELS, PATCH_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub classes: usize,
    pub patches_per_class: usize,
    /// Tiers cycled over views 1..; view 0 is always the reference.
    pub tiers: Vec<Tier>,
    /// Classes are dealt round-robin into this many scenes.
    pub scenes: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(classes: usize, patches_per_class: usize, tiers: Vec<Tier>, seed: u64) -> Self {
        SynthConfig {
            classes,
            patches_per_class,
            tiers,
            scenes: 1,
            seed,
        }
    }

    pub fn scenes(mut self, scenes: usize) -> Self {
        self.scenes = scenes;
        self
    }

    pub fn generate(&self) -> Result<PatchDataset> {
        if self.classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.patches_per_class < 2 {
            return Err(Error::config(format!(
                "need at least 2 patches per class, got {}",
                self.patches_per_class
            )));
        }
        if self.scenes == 0 {
            return Err(Error::config("scene count must be positive"));
        }
        let tiers = if self.tiers.is_empty() {
            vec![Tier::Easy]
        } else {
            self.tiers.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.classes * self.patches_per_class;
        let mut out = PatchDataset {
            patches: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
            sequence_ids: Vec::with_capacity(n),
            tiers: Vec::with_capacity(n),
        };
        for class in 0..self.classes {
            let texture = Texture::random(&mut rng);
            let scene = class % self.scenes;
            for view in 0..self.patches_per_class {
                let (tier, jitter) = if view == 0 {
                    (Tier::Easy, Jitter::REFERENCE)
                } else {
                    let t = tiers[(view - 1) % tiers.len()];
                    (t, Jitter::for_tier(t))
                };
                out.patches.push(render(&texture, &jitter, &mut rng));
                out.labels.push(class as u32);
                out.sequence_ids
                    .push((scene * self.patches_per_class + view) as u32);
                out.tiers.push(tier);
            }
        }
        Ok(out)
    }
}

/// `classes × patches_per_class` patches in a single scene.
pub fn generate_synthetic(
    classes: usize,
    patches_per_class: usize,
    noise_tiers: &[Tier],
    seed: u64,
) -> Result<PatchDataset> {
    SynthConfig::new(classes, patches_per_class, noise_tiers.to_vec(), seed).generate()
}

struct Blob {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    inv_s1: f64,
    inv_s2: f64,
    amp: f64,
}

struct Edge {
    nx: f64,
    ny: f64,
    offset: f64,
    inv_width: f64,
    amp: f64,
}

struct Texture {
    blobs: Vec<Blob>,
    edges: Vec<Edge>,
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random::<bool>() {
        v
    } else {
        -v
    }
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Texture {
        let n_blobs = rng.random_range(2..=5);
        let blobs = (0..n_blobs)
            .map(|_| {
                let r = 13.0 * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let s1 = rng.random_range(2.5..7.0);
                let s2 = rng.random_range(1.5..s1);
                let th = rng.random_range(0.0..std::f64::consts::PI);
                Blob {
                    cx: r * a.cos(),
                    cy: r * a.sin(),
                    cos: th.cos(),
                    sin: th.sin(),
                    inv_s1: 1.0 / s1,
                    inv_s2: 1.0 / s2,
                    amp: signed(rng, 30.0, 90.0),
                }
            })
            .collect();
        let n_edges = rng.random_range(0..=2);
        let edges = (0..n_edges)
            .map(|_| {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Edge {
                    nx: a.cos(),
                    ny: a.sin(),
                    offset: rng.random_range(-8.0..8.0),
                    inv_width: 1.0 / rng.random_range(0.8..2.5),
                    amp: signed(rng, 20.0, 60.0),
                }
            })
            .collect();
        Texture { blobs, edges }
    }

    /// Intensity offset from mid-gray at patch-centered coordinates.
    fn eval(&self, u: f64, v: f64) -> f64 {
        let mut s = 0.0;
        for b in &self.blobs {
            let (du, dv) = (u - b.cx, v - b.cy);
            let p = (b.cos * du + b.sin * dv) * b.inv_s1;
            let q = (-b.sin * du + b.cos * dv) * b.inv_s2;
            s += b.amp * (-0.5 * (p * p + q * q)).exp();
        }
        for e in &self.edges {
            s += e.amp * ((e.nx * u + e.ny * v - e.offset) * e.inv_width).tanh();
        }
        s
    }
}

/// Half-widths of the uniform perturbation ranges.
struct Jitter {
    rotation_deg: f64,
    log_scale: f64,
    shear: f64,
    translation: f64,
    log_contrast: f64,
    brightness: f64,
    noise_sigma: f64,
}

impl Jitter {
    const REFERENCE: Jitter = Jitter {
        rotation_deg: 0.0,
        log_scale: 0.0,
        shear: 0.0,
        translation: 0.0,
        log_contrast: 0.05,
        brightness: 5.0,
        noise_sigma: 2.0,
    };

    fn for_tier(t: Tier) -> Jitter {
        match t {
            Tier::Easy => Jitter {
                rotation_deg: 5.0,
                log_scale: 0.04,
                shear: 0.03,
                translation: 1.0,
                log_contrast: 0.1,
                brightness: 10.0,
                noise_sigma: 4.0,
            },
            Tier::Hard => Jitter {
                rotation_deg: 12.0,
                log_scale: 0.08,
                shear: 0.06,
                translation: 2.0,
                log_contrast: 0.2,
                brightness: 20.0,
                noise_sigma: 7.0,
            },
            Tier::Tough => Jitter {
                rotation_deg: 20.0,
                log_scale: 0.14,
                shear: 0.1,
                translation: 3.0,
                log_contrast: 0.3,
                brightness: 30.0,
                noise_sigma: 10.0,
            },
        }
    }
}

fn sym(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..half)
    }
}

fn render(texture: &Texture, j: &Jitter, rng: &mut ChaCha8Rng) -> Patch {
    let phi = sym(rng, j.rotation_deg).to_radians();
    let scale = sym(rng, j.log_scale).exp();
    let shear = sym(rng, j.shear);
    let (tx, ty) = (sym(rng, j.translation), sym(rng, j.translation));
    let contrast = sym(rng, j.log_contrast).exp();
    let brightness = sym(rng, j.brightness);
    let noise = Normal::new(0.0, j.noise_sigma).expect("valid sigma");

    // u = R(phi) · [[s, shear], [0, s]] · p + t
    let (c, s) = (phi.cos(), phi.sin());
    let a11 = c * scale;
    let a12 = c * shear - s * scale;
    let a21 = s * scale;
    let a22 = s * shear + c * scale;
    let half = PATCH_SIZE as f64 / 2.0;

    let mut pixels = [0u8; PATCH_PIXELS];
    for y in 0..PATCH_SIZE {
        for x in 0..PATCH_SIZE {
            let px = x as f64 + 0.5 - half;
            let py = y as f64 + 0.5 - half;
            let u = a11 * px + a12 * py + tx;
            let v = a21 * px + a22 * py + ty;
            let value = 128.0 + contrast * texture.eval(u, v) + brightness + noise.sample(rng);
            pixels[y * PATCH_SIZE + x] = value.round().clamp(0.0, 255.0) as u8;
        }
    }
    Patch(Box::new(pixels))
}
