//! Inference-only single-precision copy of a model. Each batchnorm is folded
//! into the linear layer that follows it, so a 2-hidden encoder runs as three
//! matrix products with ReLUs in between.

use super::{Layer, MlpModel, L2_EPS};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Rows processed per block; keeps activations cache-resident.
const BLOCK_ROWS: usize = 1024;

#[derive(Debug, Clone)]
enum Op {
    Affine { weight: Vec<f32>, bias: Vec<f32>, fan_in: usize, fan_out: usize },
    Scale { scale: Vec<f32>, shift: Vec<f32> },
    Relu,
    L2Norm,
}

#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    ops: Vec<Op>,
    input_dim: usize,
    output_dim: usize,
    widest: usize,
}

impl FrozenEncoder {
    pub fn new(model: &MlpModel) -> FrozenEncoder {
        let mut ops = Vec::new();
        // Pending per-column affine map h ↦ s⊙h + t from a batchnorm.
        let mut pending: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut widest = model.input_dim();
        for layer in &model.layers {
            match layer {
                Layer::Linear(l) => {
                    let (fi, fo) = (l.fan_in(), l.fan_out());
                    widest = widest.max(fo);
                    let mut w: Vec<f64> = l.weight.data().to_vec();
                    let mut b = l.bias.clone();
                    if let Some((s, t)) = pending.take() {
                        for i in 0..fi {
                            for j in 0..fo {
                                b[j] += t[i] * w[i * fo + j];
                                w[i * fo + j] *= s[i];
                            }
                        }
                    }
                    ops.push(Op::Affine {
                        weight: w.iter().map(|&v| v as f32).collect(),
                        bias: b.iter().map(|&v| v as f32).collect(),
                        fan_in: fi,
                        fan_out: fo,
                    });
                }
                Layer::BatchNorm(bn) => {
                    flush(&mut ops, pending.take());
                    let s: Vec<f64> = bn
                        .running_var
                        .iter()
                        .zip(&bn.gamma)
                        .map(|(v, g)| g / (v + super::BN_EPS).sqrt())
                        .collect();
                    let t = (0..bn.width())
                        .map(|j| bn.beta[j] - s[j] * bn.running_mean[j])
                        .collect();
                    pending = Some((s, t));
                }
                Layer::Relu(_) => {
                    flush(&mut ops, pending.take());
                    ops.push(Op::Relu);
                }
                Layer::L2Norm(_) => {
                    flush(&mut ops, pending.take());
                    ops.push(Op::L2Norm);
                }
            }
        }
        flush(&mut ops, pending.take());
        FrozenEncoder {
            ops,
            input_dim: model.input_dim(),
            output_dim: model.output_dim(),
            widest,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Projects `rows` row-major input vectors into `out` (`rows × output_dim`).
    pub fn project_into(&self, input: &[f32], out: &mut [f32]) -> Result<()> {
        if input.len() % self.input_dim.max(1) != 0 {
            return Err(Error::shape(format!(
                "input length {} is not a multiple of dimension {}",
                input.len(),
                self.input_dim
            )));
        }
        let rows = input.len() / self.input_dim.max(1);
        if out.len() != rows * self.output_dim {
            return Err(Error::shape(format!(
                "output buffer holds {} values, need {}",
                out.len(),
                rows * self.output_dim
            )));
        }
        let mut a = vec![0f32; BLOCK_ROWS * self.widest];
        let mut b = vec![0f32; BLOCK_ROWS * self.widest];
        let mut start = 0;
        while start < rows {
            let n = BLOCK_ROWS.min(rows - start);
            let mut width = self.input_dim;
            a[..n * width].copy_from_slice(&input[start * width..(start + n) * width]);
            for op in &self.ops {
                match op {
                    Op::Affine { weight, bias, fan_in, fan_out } => {
                        let (fi, fo) = (*fan_in, *fan_out);
                        for row in b[..n * fo].chunks_exact_mut(fo) {
                            row.copy_from_slice(bias);
                        }
                        // SAFETY: a holds n×fi, weight fi×fo, b n×fo, all row-major
                        // and within the slices' bounds.
                        unsafe {
                            matrixmultiply::sgemm(
                                n, fi, fo, 1.0,
                                a.as_ptr(), fi as isize, 1,
                                weight.as_ptr(), fo as isize, 1,
                                1.0,
                                b.as_mut_ptr(), fo as isize, 1,
                            );
                        }
                        std::mem::swap(&mut a, &mut b);
                        width = fo;
                    }
                    Op::Scale { scale, shift } => {
                        for row in a[..n * width].chunks_exact_mut(width) {
                            for j in 0..width {
                                row[j] = row[j] * scale[j] + shift[j];
                            }
                        }
                    }
                    Op::Relu => a[..n * width].iter_mut().for_each(|v| *v = v.max(0.0)),
                    Op::L2Norm => {
                        for row in a[..n * width].chunks_exact_mut(width) {
                            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
                            if (norm as f64) < L2_EPS {
                                row.fill(0.0);
                            } else {
                                let inv = 1.0 / norm;
                                row.iter_mut().for_each(|v| *v *= inv);
                            }
                        }
                    }
                }
            }
            out[start * width..(start + n) * width].copy_from_slice(&a[..n * width]);
            start += n;
        }
        Ok(())
    }

    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "model expects input dimension {}, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        let input: Vec<f32> = x.data().iter().map(|&v| v as f32).collect();
        let mut out = vec![0f32; x.rows() * self.output_dim];
        self.project_into(&input, &mut out)?;
        Ok(Matrix::from_raw(
            x.rows(),
            self.output_dim,
            out.into_iter().map(f64::from).collect(),
        ))
    }
}

fn flush(ops: &mut Vec<Op>, pending: Option<(Vec<f64>, Vec<f64>)>) {
    if let Some((s, t)) = pending {
        ops.push(Op::Scale {
            scale: s.iter().map(|&v| v as f32).collect(),
            shift: t.iter().map(|&v| v as f32).collect(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_encoder, BatchNorm, Linear, Mode};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_double_precision_model() {
        let mut m = build_encoder(32, 8, &[24, 16], 5).unwrap();
        for s in 0..3 {
            m.forward(&random(20, 32, s)).unwrap();
        }
        m.set_mode(Mode::Eval);
        let x = random(2500, 32, 9);
        let want = m.infer(&x).unwrap();
        let got = FrozenEncoder::new(&m).project(&x).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-4, "{}", got.max_abs_diff(&want));
    }

    #[test]
    fn trailing_batchnorm_is_applied() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = vec![1.0, -1.0];
        bn.running_var = vec![4.0, 0.25];
        bn.gamma = vec![2.0, 1.0];
        bn.beta = vec![0.5, 0.0];
        let mut lin = Linear::zeros(2, 2);
        lin.weight = Matrix::identity(2);
        let m = MlpModel::from_layers(vec![Layer::Linear(lin), Layer::BatchNorm(bn)]).unwrap();
        let x = random(3, 2, 1);
        let got = FrozenEncoder::new(&m).project(&x).unwrap();
        assert!(got.max_abs_diff(&m.infer(&x).unwrap()) < 1e-5);
    }

    #[test]
    fn shape_checks() {
        let m = build_encoder(4, 2, &[], 0).unwrap();
        let f = FrozenEncoder::new(&m);
        assert!(matches!(f.project(&random(2, 5, 0)), Err(Error::Shape(_))));
        let mut out = vec![0.0; 3];
        assert!(f.project_into(&[0.0; 8], &mut out).is_err());
    }
}
