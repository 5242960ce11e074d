use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, squared_norm, Matrix};

/// Norm floor of the ℓ2 layer; rows below it map to zero.
pub const L2_EPS: f64 = 1e-12;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Fully connected layer, `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
    input: Option<Matrix>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
            grad_weight: Matrix::zeros(fan_in, fan_out),
            grad_bias: vec![0.0; fan_out],
            input: None,
        }
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero bias.
    pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let mut l = Linear::zeros(fan_in, fan_out);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in l.weight.data_mut() {
            *w = rng.random_range(-a..=a);
        }
        l
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub(crate) fn infer(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.fan_in() {
            return Err(Error::shape(format!(
                "linear layer expects {} inputs, got {}",
                self.fan_in(),
                x.cols()
            )));
        }
        let mut y = Matrix::zeros(x.rows(), self.fan_out());
        for r in 0..x.rows() {
            y.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, x, false, &self.weight, false, 1.0, &mut y)?;
        Ok(y)
    }

    pub(crate) fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub(crate) fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::State("linear backward without a cached forward pass".into()))?;
        check_rows(&x, dy)?;
        gemm(1.0, &x, true, dy, false, 0.0, &mut self.grad_weight)?;
        self.grad_bias.fill(0.0);
        for row in dy.row_iter() {
            for (g, v) in self.grad_bias.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = Matrix::zeros(dy.rows(), self.fan_in());
        gemm(1.0, dy, false, &self.weight, true, 0.0, &mut dx)?;
        Ok(dx)
    }
}

/// Batch normalization over the batch axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            grad_gamma: vec![0.0; width],
            grad_beta: vec![0.0; width],
            cache: None,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.width() {
            return Err(Error::shape(format!(
                "batchnorm expects width {}, got {}",
                self.width(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub(crate) fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let scale: Vec<f64> = self
            .running_var
            .iter()
            .zip(&self.gamma)
            .map(|(v, g)| g / (v + BN_EPS).sqrt())
            .collect();
        let mut y = x.clone();
        let w = self.width();
        if w > 0 {
            for row in y.data_mut().chunks_exact_mut(w) {
                for j in 0..w {
                    row[j] = (row[j] - self.running_mean[j]) * scale[j] + self.beta[j];
                }
            }
        }
        Ok(y)
    }

    pub(crate) fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let (n, w) = x.shape();
        if n < 2 {
            return Err(Error::config(format!(
                "batch normalization in training mode needs at least 2 rows, got {n}"
            )));
        }
        let mut mean = vec![0.0; w];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; w];
        for row in x.row_iter() {
            for j in 0..w {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut xhat = x.clone();
        let mut y = Matrix::zeros(n, w);
        for r in 0..n {
            let xr = xhat.row_mut(r);
            for j in 0..w {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let yr = y.row_mut(r);
            for j in 0..w {
                yr[j] = self.gamma[j] * xhat.get(r, j) + self.beta[j];
            }
        }
        let unbias = n as f64 / (n as f64 - 1.0);
        for j in 0..w {
            self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean[j];
            self.running_var[j] =
                (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * var[j] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    pub(crate) fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let BnCache { xhat, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batchnorm backward without a cached forward pass".into()))?;
        check_rows(&xhat, dy)?;
        let (n, w) = dy.shape();
        let mut sum_dy = vec![0.0; w];
        let mut sum_dy_xhat = vec![0.0; w];
        for r in 0..n {
            let (d, h) = (dy.row(r), xhat.row(r));
            for j in 0..w {
                sum_dy[j] += d[j];
                sum_dy_xhat[j] += d[j] * h[j];
            }
        }
        self.grad_beta.copy_from_slice(&sum_dy);
        self.grad_gamma.copy_from_slice(&sum_dy_xhat);
        let nf = n as f64;
        let mut dx = Matrix::zeros(n, w);
        for r in 0..n {
            let (d, h) = (dy.row(r), xhat.row(r));
            let out = dx.row_mut(r);
            for j in 0..w {
                let k = self.gamma[j] * inv_std[j] / nf;
                out[j] = k * (nf * d[j] - sum_dy[j] - h[j] * sum_dy_xhat[j]);
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Matrix>,
}

impl Relu {
    pub(crate) fn infer(&self, x: &Matrix) -> Matrix {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    pub(crate) fn forward_train(&mut self, x: &Matrix) -> Matrix {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    /// Subgradient 0 at exactly 0.
    pub(crate) fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::State("relu backward without a cached forward pass".into()))?;
        check_rows(&x, dy)?;
        let mut dx = dy.clone();
        for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        Ok(dx)
    }
}

/// Row-wise ℓ2 normalization; rows with norm below [`L2_EPS`] pass through as zero.
#[derive(Debug, Clone, Default)]
pub struct L2Norm {
    cache: Option<(Matrix, Vec<f64>)>,
}

impl L2Norm {
    pub(crate) fn infer(&self, x: &Matrix) -> (Matrix, Vec<f64>) {
        let mut y = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        let cols = x.cols();
        if cols > 0 {
            for row in y.data_mut().chunks_exact_mut(cols) {
                let n = squared_norm(row).sqrt();
                if n < L2_EPS {
                    row.fill(0.0);
                } else {
                    row.iter_mut().for_each(|v| *v /= n);
                }
                norms.push(n);
            }
        } else {
            norms.resize(x.rows(), 0.0);
        }
        (y, norms)
    }

    pub(crate) fn forward_train(&mut self, x: &Matrix) -> Matrix {
        let (y, norms) = self.infer(x);
        self.cache = Some((y.clone(), norms));
        y
    }

    /// `dx = (I − ŷŷᵀ)·dy / ‖x‖`, zero for rows that were floored.
    pub(crate) fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let (y, norms) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("l2norm backward without a cached forward pass".into()))?;
        check_rows(&y, dy)?;
        let mut dx = Matrix::zeros(dy.rows(), dy.cols());
        for r in 0..dy.rows() {
            if norms[r] < L2_EPS {
                continue;
            }
            let (yr, dr) = (y.row(r), dy.row(r));
            let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
            let inv = 1.0 / norms[r];
            for (o, (a, b)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(dr)) {
                *o = (b - a * dot) * inv;
            }
        }
        Ok(dx)
    }
}

fn check_rows(cached: &Matrix, dy: &Matrix) -> Result<()> {
    if cached.rows() != dy.rows() {
        return Err(Error::State(format!(
            "upstream gradient has {} rows but the cached forward pass had {}",
            dy.rows(),
            cached.rows()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Relu(Relu),
    BatchNorm(BatchNorm),
    L2Norm(L2Norm),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Relu(_) => "relu",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::L2Norm(_) => "l2norm",
        }
    }

    pub(crate) fn infer(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Linear(l) => l.infer(x),
            Layer::Relu(l) => Ok(l.infer(x)),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::L2Norm(l) => Ok(l.infer(x).0),
        }
    }

    pub(crate) fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Linear(l) => l.forward_train(x),
            Layer::Relu(l) => Ok(l.forward_train(x)),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::L2Norm(l) => Ok(l.forward_train(x)),
        }
    }

    pub(crate) fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Linear(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::L2Norm(l) => l.backward(dy),
        }
    }

    /// Visits `(parameter, gradient)` pairs in a fixed order.
    pub(crate) fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        match self {
            Layer::Linear(l) => {
                f(l.weight.data_mut(), l.grad_weight.data());
                f(&mut l.bias, &l.grad_bias);
            }
            Layer::BatchNorm(l) => {
                f(&mut l.gamma, &l.grad_gamma);
                f(&mut l.beta, &l.grad_beta);
            }
            Layer::Relu(_) | Layer::L2Norm(_) => {}
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Linear(l) => l.input = None,
            Layer::Relu(l) => l.input = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::L2Norm(l) => l.cache = None,
        }
    }
}
