use std::time::Instant;

use crate::error::Result;
use crate::nn::FrozenEncoder;
use crate::numerics::Matrix;
use crate::pca::PcaModel;

/// Per-descriptor projection times over the repetitions, in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTiming {
    pub median_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    pub reps: usize,
}

impl BenchTiming {
    fn from_samples(mut us: Vec<f64>) -> BenchTiming {
        let reps = us.len();
        us.sort_by(f64::total_cmp);
        BenchTiming {
            median_us: median(&us),
            min_us: us[0],
            max_us: us[reps - 1],
            reps,
        }
    }
}

/// Median of an ascending slice.
pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// `count` rows of `x` as row-major f32, cycling through the rows as needed.
pub fn tile_rows_f32(x: &Matrix, count: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(count * x.cols());
    for i in 0..count {
        out.extend(x.row(i % x.rows()).iter().map(|&v| v as f32));
    }
    out
}

/// Times `reps` projections of `count` f32 rows after one warm-up pass.
pub fn time_projection(enc: &FrozenEncoder, x: &[f32], count: usize, reps: usize) -> Result<BenchTiming> {
    let mut out = vec![0f32; count * enc.output_dim()];
    enc.project_into(x, &mut out)?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        enc.project_into(std::hint::black_box(x), &mut out)?;
        std::hint::black_box(&out);
        samples.push(start.elapsed().as_secs_f64() * 1e6 / count as f64);
    }
    Ok(BenchTiming::from_samples(samples))
}

pub(crate) fn time_pca(model: &PcaModel, x: &Matrix, count: usize, reps: usize) -> Result<BenchTiming> {
    let idx: Vec<usize> = (0..count).map(|i| i % x.rows()).collect();
    let tiled = x.select_rows(&idx);
    model.project(&tiled)?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        std::hint::black_box(model.project(std::hint::black_box(&tiled))?);
        samples.push(start.elapsed().as_secs_f64() * 1e6 / count as f64);
    }
    Ok(BenchTiming::from_samples(samples))
}
