use super::Parameterized;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Step `t` (1-based) uses `lr · max(0, 1 − t/total_steps)`, so the final
    /// scheduled step and everything after it have rate zero.
    LinearToZero { total_steps: u64 },
}

impl LrSchedule {
    pub fn factor(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::LinearToZero { total_steps } => {
                if total_steps == 0 {
                    0.0
                } else {
                    (1.0 - step as f64 / total_steps as f64).max(0.0)
                }
            }
        }
    }
}

/// Bias-corrected Adam. Moment buffers are created on the first step and bound
/// to the parameter layout seen then.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub schedule: LrSchedule,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, schedule: LrSchedule) -> Self {
        Adam {
            lr,
            schedule,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of steps taken.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Learning rate the next step will use.
    pub fn next_lr(&self) -> f64 {
        self.lr * self.schedule.factor(self.t + 1)
    }

    /// Applies one update from the gradients currently stored in `params` and
    /// returns the learning rate used.
    pub fn step(&mut self, params: &mut dyn Parameterized) -> Result<f64> {
        self.t += 1;
        let lr = self.lr * self.schedule.factor(self.t);
        let b1t = 1.0 - ADAM_BETA1.powf(self.t as f64);
        let b2t = 1.0 - ADAM_BETA2.powf(self.t as f64);
        let first = self.t == 1;
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        let mut mismatch = None;
        params.visit_params(&mut |p, g| {
            if first {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            if idx >= ms.len() || ms[idx].len() != p.len() || g.len() != p.len() {
                mismatch.get_or_insert(idx);
                idx += 1;
                return;
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for k in 0..p.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                let mhat = m[k] / b1t;
                let vhat = v[k] / b2t;
                p[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
            idx += 1;
        });
        if let Some(i) = mismatch.or((idx != ms.len()).then_some(idx)) {
            return Err(Error::State(format!(
                "parameter layout changed since the optimizer was created (tensor {i})"
            )));
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar {
        p: Vec<f64>,
        g: Vec<f64>,
    }

    impl Parameterized for Scalar {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
            f(&mut self.p, &self.g);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.25] {
            let mut s = Scalar { p: vec![1.0], g: vec![g] };
            let mut opt = Adam::new(0.001, LrSchedule::Constant);
            opt.step(&mut s).unwrap();
            let moved = 1.0 - s.p[0];
            assert!((moved.abs() - 0.001).abs() < 1e-9);
            assert_eq!(moved.signum(), g.signum());
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = Scalar { p: vec![0.5, -2.0], g: vec![0.0, 0.0] };
        let mut opt = Adam::new(0.1, LrSchedule::Constant);
        for _ in 0..5 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.p, vec![0.5, -2.0]);
    }

    #[test]
    fn linear_decay_reaches_zero() {
        let mut s = Scalar { p: vec![0.0], g: vec![1.0] };
        let mut opt = Adam::new(0.01, LrSchedule::LinearToZero { total_steps: 10 });
        let mut lrs = Vec::new();
        for _ in 0..9 {
            lrs.push(opt.step(&mut s).unwrap());
        }
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
        let before = s.p[0];
        assert_eq!(opt.step(&mut s).unwrap(), 0.0);
        assert_eq!(s.p[0], before);
        assert_eq!(opt.step(&mut s).unwrap(), 0.0);
        assert_eq!(s.p[0], before);
    }

    #[test]
    fn layout_change_is_state_error() {
        let mut s = Scalar { p: vec![0.0], g: vec![1.0] };
        let mut opt = Adam::new(0.01, LrSchedule::Constant);
        opt.step(&mut s).unwrap();
        let mut bigger = Scalar { p: vec![0.0; 2], g: vec![1.0; 2] };
        assert!(matches!(opt.step(&mut bigger), Err(Error::State(_))));
    }
}
