//! "DNN1" model files: magic, u32 version, u32 input dim, u32 output dim,
//! u32 layer count, then per layer a u8 kind tag and its little-endian payload.
//! Linear (tag 0): u32 in, u32 out, weights row-major (in × out) f64, bias f64.
//! Relu (tag 1): nothing. Batchnorm (tag 2): u32 width, then γ, β, running mean
//! and running variance as f64. L2norm (tag 3): nothing.

use std::path::Path;

use super::{BatchNorm, Layer, L2Norm, Linear, MlpModel, Relu};
use crate::data::{write_atomic, Cursor};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"DNN1";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_u32(&mut out, self.input_dim());
        put_u32(&mut out, self.output_dim());
        put_u32(&mut out, self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(0);
                    put_u32(&mut out, l.fan_in());
                    put_u32(&mut out, l.fan_out());
                    put_f64s(&mut out, l.weight.data());
                    put_f64s(&mut out, &l.bias);
                }
                Layer::Relu(_) => out.push(1),
                Layer::BatchNorm(b) => {
                    out.push(2);
                    put_u32(&mut out, b.width());
                    put_f64s(&mut out, &b.gamma);
                    put_f64s(&mut out, &b.beta);
                    put_f64s(&mut out, &b.running_mean);
                    put_f64s(&mut out, &b.running_var);
                }
                Layer::L2Norm(_) => out.push(3),
            }
        }
        out
    }

    /// Parses a model; the result is in eval mode.
    pub fn from_bytes(buf: &[u8]) -> Result<MlpModel> {
        if buf.is_empty() {
            return Err(Error::format(0, "empty model file"));
        }
        let mut c = Cursor::new(buf);
        c.magic(MAGIC)?;
        let at = c.offset();
        let version = c.u32("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported model version {version}")));
        }
        let input_dim = c.u32("input dimension")? as usize;
        let output_dim = c.u32("output dimension")? as usize;
        let at = c.offset();
        let count = c.u32("layer count")? as usize;
        if count == 0 || count > c.remaining() {
            return Err(Error::format(at, format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let at = c.offset();
            let layer = match c.u8("layer kind")? {
                0 => {
                    let fan_in = c.u32("linear fan-in")? as usize;
                    let fan_out = c.u32("linear fan-out")? as usize;
                    let weights = read_f64s(&mut c, fan_in * fan_out, "linear weights")?;
                    let mut l = Linear::zeros(fan_in, fan_out);
                    l.weight = Matrix::from_raw(fan_in, fan_out, weights);
                    l.bias = read_f64s(&mut c, fan_out, "linear bias")?;
                    Layer::Linear(l)
                }
                1 => Layer::Relu(Relu::default()),
                2 => {
                    let width = c.u32("batchnorm width")? as usize;
                    let mut b = BatchNorm::new(width);
                    b.gamma = read_f64s(&mut c, width, "batchnorm scale")?;
                    b.beta = read_f64s(&mut c, width, "batchnorm shift")?;
                    b.running_mean = read_f64s(&mut c, width, "batchnorm running mean")?;
                    let var_at = c.offset();
                    b.running_var = read_f64s(&mut c, width, "batchnorm running variance")?;
                    if b.running_var.iter().any(|v| !(*v >= 0.0)) {
                        return Err(Error::format(var_at, "negative batchnorm running variance"));
                    }
                    Layer::BatchNorm(b)
                }
                3 => Layer::L2Norm(L2Norm::default()),
                k => return Err(Error::format(at, format!("unknown layer kind {k}"))),
            };
            layers.push(layer);
        }
        c.finish()?;
        let mut model = MlpModel::from_layers(layers)
            .map_err(|e| Error::format(at_end(buf), format!("inconsistent layer stack: {e}")))?;
        if model.input_dim() != input_dim || model.output_dim() != output_dim {
            return Err(Error::format(
                8,
                format!(
                    "header declares {input_dim}→{output_dim} but layers give {}→{}",
                    model.input_dim(),
                    model.output_dim()
                ),
            ));
        }
        model.set_mode(super::Mode::Eval);
        Ok(model)
    }
}

fn at_end(buf: &[u8]) -> u64 {
    buf.len() as u64
}

fn read_f64s(c: &mut Cursor<'_>, n: usize, what: &str) -> Result<Vec<f64>> {
    let at = c.offset();
    if n.checked_mul(8).is_none_or(|b| b > c.remaining()) {
        return Err(Error::format(
            at,
            format!("truncated: {what} needs {n} values, {} bytes remain", c.remaining()),
        ));
    }
    (0..n).map(|_| c.f64(what)).collect()
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &model.to_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MlpModel::from_bytes(&buf)
}

/// Loads a model that must accept `input_dim`-dimensional rows.
pub fn load_model_expecting(path: impl AsRef<Path>, input_dim: usize) -> Result<MlpModel> {
    let model = load_model(path)?;
    if model.input_dim() != input_dim {
        return Err(Error::shape(format!(
            "model expects input dimension {}, data has dimension {input_dim}",
            model.input_dim()
        )));
    }
    Ok(model)
}
