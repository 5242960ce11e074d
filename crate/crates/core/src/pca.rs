//! Principal component projection, the linear baseline.

use std::path::Path;

use crate::data::{normalize_rows, write_atomic, DescriptorSet};
use crate::error::{Error, Result};
use crate::numerics::{gemm, matmul, matmul_tn, sym_eigen, Matrix};

const PCA_MAGIC: &[u8; 4] = b"DPC1";

/// Mean vector plus the top-`d` principal directions as basis columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// D×d, orthonormal columns sorted by descending variance.
    pub basis: Matrix,
    /// Sample-covariance eigenvalues of the retained directions. Not serialized.
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.cols()
    }

    /// Fits on the rows of `x`. Covariance uses the `N − 1` divisor; each basis
    /// column is signed so its largest-magnitude entry is positive.
    pub fn fit(x: &Matrix, d: usize) -> Result<PcaModel> {
        let (n, dim) = x.shape();
        if n < 2 {
            return Err(Error::config(format!("PCA needs at least 2 rows, got {n}")));
        }
        if d == 0 || d > dim {
            return Err(Error::config(format!(
                "PCA target dimension must be in 1..={dim}, got {d}"
            )));
        }
        let mut mean = vec![0.0; dim];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = center(x, &mean);
        let mut cov = matmul_tn(&centered, &centered)?;
        cov.scale(1.0 / (n as f64 - 1.0));
        let eig = sym_eigen(&cov)?;

        let top = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        let positive = eig
            .eigenvalues
            .iter()
            .filter(|&&l| l > 1e-12 * top.max(f64::MIN_POSITIVE))
            .count();
        if positive < d {
            log::warn!(
                "covariance has only {positive} positive eigenvalues; padding the {d}-dimensional basis with null-space directions"
            );
        }

        let mut basis = Matrix::zeros(dim, d);
        for c in 0..d {
            let col = eig.eigenvectors.column(c);
            let pivot = col
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
                .0;
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for (r, v) in col.iter().enumerate() {
                basis.set(r, c, sign * v);
            }
        }
        Ok(PcaModel {
            mean,
            basis,
            variances: eig.eigenvalues[..d].to_vec(),
        })
    }

    /// Coordinates `(x − mean)ᵀ · basis` for every row, without normalization.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "PCA model expects dimension {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        matmul(&center(x, &self.mean), &self.basis)
    }

    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(z.rows(), self.input_dim());
        for r in 0..z.rows() {
            out.row_mut(r).copy_from_slice(&self.mean);
        }
        gemm(1.0, z, false, &self.basis, true, 1.0, &mut out)?;
        Ok(out)
    }

    /// Projects a descriptor set; rows are ℓ2-normalized when `normalize` is set.
    pub fn transform(&self, set: &DescriptorSet, normalize: bool) -> Result<DescriptorSet> {
        let mut z = self.project(&set.descriptors)?;
        if normalize {
            normalize_rows(&mut z);
        }
        set.with_descriptors(z)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (dim, d) = self.basis.shape();
        let mut out = Vec::with_capacity(12 + 8 * (dim + dim * d));
        out.extend_from_slice(PCA_MAGIC);
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in &self.mean {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in 0..d {
            for r in 0..dim {
                out.extend_from_slice(&self.basis.get(r, c).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<PcaModel> {
        use crate::data::Cursor;
        if buf.is_empty() {
            return Err(Error::format(0, "empty PCA model file"));
        }
        let mut c = Cursor::new(buf);
        c.magic(PCA_MAGIC)?;
        let dim = c.u32("input dimension")? as usize;
        let d_at = c.offset();
        let d = c.u32("output dimension")? as usize;
        if d == 0 || d > dim {
            return Err(Error::format(d_at, format!("output dimension {d} not in 1..={dim}")));
        }
        let mean = (0..dim).map(|_| c.f64("mean")).collect::<Result<Vec<_>>>()?;
        let mut basis = Matrix::zeros(dim, d);
        for col in 0..d {
            for r in 0..dim {
                basis.set(r, col, c.f64("basis")?);
            }
        }
        c.finish()?;
        Ok(PcaModel {
            mean,
            basis,
            variances: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PcaModel> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        PcaModel::from_bytes(&buf)
    }
}

fn center(x: &Matrix, mean: &[f64]) -> Matrix {
    let mut out = x.clone();
    let cols = x.cols().max(1);
    for row in out.data_mut().chunks_exact_mut(cols) {
        for (v, m) in row.iter_mut().zip(mean) {
            *v -= m;
        }
    }
    out
}

/// Fits a `d`-dimensional PCA model on a descriptor set.
pub fn fit_pca(train: &DescriptorSet, d: usize) -> Result<PcaModel> {
    PcaModel::fit(&train.descriptors, d)
}

/// Projects and ℓ2-normalizes a descriptor set.
pub fn pca_transform(model: &PcaModel, set: &DescriptorSet) -> Result<DescriptorSet> {
    model.transform(set, true)
}
