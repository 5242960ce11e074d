//! Training objectives with gradients with respect to their (embedding) inputs.

use crate::error::{Error, Result};
use crate::numerics::{gemm, pairwise_distance_matrix, squared_distance, Matrix};

/// Norm and distance floor below which a gradient direction is taken as zero.
const GRAD_EPS: f64 = 1e-12;

/// A loss value and ∂loss/∂input for the differentiated input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
}

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean Euclidean reconstruction error `(1/N) Σ ‖xᵢ − x′ᵢ‖`, differentiated
/// with respect to the reconstruction `x′`.
pub fn reconstruction_loss(x: &Matrix, recon: &Matrix) -> Result<LossValue> {
    same_shape(x, recon, "reconstruction loss")?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::config("reconstruction loss of an empty batch"));
    }
    let mut grad = Matrix::zeros(n, x.cols());
    let mut total = 0.0;
    for i in 0..n {
        let norm = squared_distance(x.row(i), recon.row(i)).sqrt();
        total += norm;
        if norm >= GRAD_EPS {
            let k = 1.0 / (n as f64 * norm);
            for ((g, a), b) in grad.row_mut(i).iter_mut().zip(x.row(i)).zip(recon.row(i)) {
                *g = (b - a) * k;
            }
        }
    }
    Ok(LossValue {
        value: total / n as f64,
        grad,
    })
}

/// Pairwise-distance preservation between original rows `x` and their
/// projections `e`: `√(Σ_{i≠j} (d(xᵢ,xⱼ) − d(eᵢ,eⱼ))²) / (N(N−1))`.
/// The normalizer sits outside the square root. Differentiated with respect to `e`.
pub fn distance_loss(x: &Matrix, e: &Matrix) -> Result<LossValue> {
    let n = x.rows();
    if e.rows() != n {
        return Err(Error::shape(format!(
            "distance loss: {n} original rows but {} projected rows",
            e.rows()
        )));
    }
    if n < 2 {
        return Err(Error::config("distance loss needs at least 2 rows"));
    }
    let dx = pairwise_distance_matrix(x, x)?;
    let de = pairwise_distance_matrix(e, e)?;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = dx.get(i, j) - de.get(i, j);
                sum += r * r;
            }
        }
    }
    let norm = (n * (n - 1)) as f64;
    let root = sum.sqrt();
    let value = root / norm;
    let mut grad = Matrix::zeros(n, e.cols());
    if root < GRAD_EPS {
        return Ok(LossValue { value, grad });
    }
    // ∂L/∂eᵢ = Σ_j wᵢⱼ (eᵢ − eⱼ) with wᵢⱼ the symmetric pair weight; both
    // ordered pairs (i,j) and (j,i) contribute.
    let c = 1.0 / (norm * root);
    let mut w = Matrix::zeros(n, n);
    let mut rowsum = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let d = de.get(i, j);
            if i != j && d >= GRAD_EPS {
                let r1 = de.get(i, j) - dx.get(i, j);
                let r2 = de.get(j, i) - dx.get(j, i);
                let v = c * (r1 + r2) / d;
                w.set(i, j, v);
                rowsum[i] += v;
            }
        }
    }
    for i in 0..n {
        for (g, v) in grad.row_mut(i).iter_mut().zip(e.row(i)) {
            *g = rowsum[i] * v;
        }
    }
    gemm(-1.0, &w, false, e, false, 1.0, &mut grad)?;
    Ok(LossValue { value, grad })
}

/// Which distance a triplet's hardest negative came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeSource {
    /// `d(aᵢ, pⱼ)`: another positive is close to this anchor.
    Positive(usize),
    /// `d(aⱼ, pᵢ)`: another anchor is close to this positive.
    Anchor(usize),
}

/// Hardest-in-batch negative for every row of an anchor/positive distance
/// matrix, searching row `i` and column `i` (off-diagonal). Scanning `j`
/// ascending and preferring the row entry on equality gives the smallest-index
/// tie-break.
pub fn mine_hardest(dist: &Matrix) -> Vec<(NegativeSource, f64)> {
    let n = dist.rows();
    (0..n)
        .map(|i| {
            let mut best = (NegativeSource::Positive(usize::MAX), f64::INFINITY);
            for j in (0..n).filter(|&j| j != i) {
                let row = dist.get(i, j);
                if row < best.1 {
                    best = (NegativeSource::Positive(j), row);
                }
                let col = dist.get(j, i);
                if col < best.1 {
                    best = (NegativeSource::Anchor(j), col);
                }
            }
            best
        })
        .collect()
}

/// Margin triplet loss with hardest-in-batch negatives,
/// `(1/N) Σ max(0, m + d(aᵢ,pᵢ) − d(negᵢ))`.
///
/// `emb` stacks the anchor embeddings (rows `0..N`) on top of the positive
/// embeddings (rows `N..2N`); the gradient has the same stacked layout.
pub fn triplet_loss_hardest(emb: &Matrix, margin: f64) -> Result<LossValue> {
    if emb.rows() % 2 != 0 {
        return Err(Error::shape(format!(
            "triplet loss expects stacked anchors and positives, got {} rows",
            emb.rows()
        )));
    }
    let n = emb.rows() / 2;
    if n < 2 {
        return Err(Error::config("triplet loss needs at least 2 pairs to mine a negative"));
    }
    let (anchors, positives) = emb.split_rows(n);
    let dist = pairwise_distance_matrix(&anchors, &positives)?;
    let mined = mine_hardest(&dist);
    let mut grad = Matrix::zeros(2 * n, emb.cols());
    let mut total = 0.0;
    let k = 1.0 / n as f64;
    for (i, (src, _)) in mined.into_iter().enumerate() {
        let (na, np) = match src {
            NegativeSource::Positive(j) => (i, j),
            NegativeSource::Anchor(j) => (j, i),
        };
        let d_pos = squared_distance(anchors.row(i), positives.row(i)).sqrt();
        let d_neg = squared_distance(anchors.row(na), positives.row(np)).sqrt();
        let term = margin + d_pos - d_neg;
        if term <= 0.0 {
            continue;
        }
        total += term;
        add_distance_grad(&mut grad, &anchors, &positives, i, i, d_pos, k);
        add_distance_grad(&mut grad, &anchors, &positives, na, np, d_neg, -k);
    }
    Ok(LossValue {
        value: total * k,
        grad,
    })
}

/// Adds `scale · ∂d(aᵢ, pⱼ)` into the stacked gradient.
fn add_distance_grad(
    grad: &mut Matrix,
    anchors: &Matrix,
    positives: &Matrix,
    i: usize,
    j: usize,
    d: f64,
    scale: f64,
) {
    if d < GRAD_EPS {
        return;
    }
    let n = anchors.rows();
    let cols = anchors.cols();
    let s = scale / d;
    for c in 0..cols {
        let diff = s * (anchors.get(i, c) - positives.get(j, c));
        grad.data_mut()[i * cols + c] += diff;
        grad.data_mut()[(n + j) * cols + c] -= diff;
    }
}

/// Mean softmax cross-entropy of `logits` against class indices.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<LossValue> {
    let (n, k) = logits.shape();
    if targets.len() != n {
        return Err(Error::shape(format!("{n} logit rows but {} targets", targets.len())));
    }
    if n == 0 {
        return Err(Error::config("cross-entropy of an empty batch"));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::config(format!("target class {t} out of range for {k} classes")));
    }
    let mut grad = Matrix::zeros(n, k);
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[t];
        for (g, v) in grad.row_mut(i).iter_mut().zip(row) {
            *g = (v - lse).exp() / n as f64;
        }
        grad.data_mut()[i * k + t] -= 1.0 / n as f64;
    }
    Ok(LossValue {
        value: total / n as f64,
        grad,
    })
}

/// `main + weight · aux`, for both value and gradient.
pub fn combine(main: &LossValue, aux: &LossValue, weight: f64) -> Result<LossValue> {
    same_shape(&main.grad, &aux.grad, "combined loss gradients")?;
    let mut grad = main.grad.clone();
    grad.add_scaled(&aux.grad, weight)?;
    Ok(LossValue {
        value: main.value + weight * aux.value,
        grad,
    })
}
