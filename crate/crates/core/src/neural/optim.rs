use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adadelta,
    Adam,
    Rmsprop,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adagrad,
        OptimizerKind::Adadelta,
        OptimizerKind::Adam,
        OptimizerKind::Rmsprop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = NeuralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| NeuralError::InvalidConfig(format!("unknown optimizer `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerHyper {
    /// Step size; for AdaDelta a multiplier on the computed update.
    pub lr: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with per-parameter accumulators, allocated on the first step
/// to mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub hyper: OptimizerHyper,
    pub t: u64,
    acc1: Vec<Vec<f64>>,
    acc2: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: OptimizerHyper) -> Result<Self, NeuralError> {
        if !(hyper.eps > 0.0) {
            return Err(NeuralError::InvalidConfig("eps must be positive".into()));
        }
        if !(hyper.lr > 0.0) {
            return Err(NeuralError::InvalidConfig("lr must be positive".into()));
        }
        Ok(Self {
            kind,
            hyper,
            t: 0,
            acc1: Vec::new(),
            acc2: Vec::new(),
        })
    }

    fn ensure_shapes(&mut self, params: &[&mut [f64]], grads: &[&[f64]]) -> Result<(), NeuralError> {
        if params.len() != grads.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "{} parameter blocks, {} gradient blocks",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(NeuralError::ShapeMismatch(format!(
                    "block {i}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.acc1.is_empty() {
            self.acc1 = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.acc2 = self.acc1.clone();
        } else if self.acc1.len() != params.len() || self.acc1.iter().zip(params).any(|(a, p)| a.len() != p.len()) {
            return Err(NeuralError::ShapeMismatch("parameter shapes changed between steps".into()));
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NeuralError> {
        self.ensure_shapes(params, grads)?;
        self.t += 1;
        let h = self.hyper;
        let t = self.t as i32;
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (a1, a2) = (&mut self.acc1[b], &mut self.acc2[b]);
            for k in 0..p.len() {
                let gk = g[k];
                match self.kind {
                    OptimizerKind::Sgd => p[k] -= h.lr * gk,
                    OptimizerKind::Adagrad => {
                        a1[k] += gk * gk;
                        p[k] -= h.lr * gk / (a1[k].sqrt() + h.eps);
                    }
                    OptimizerKind::Adadelta => {
                        a1[k] = h.rho * a1[k] + (1.0 - h.rho) * gk * gk;
                        let delta = -((a2[k] + h.eps).sqrt() / (a1[k] + h.eps).sqrt()) * gk;
                        a2[k] = h.rho * a2[k] + (1.0 - h.rho) * delta * delta;
                        p[k] += h.lr * delta;
                    }
                    OptimizerKind::Adam => {
                        a1[k] = h.beta1 * a1[k] + (1.0 - h.beta1) * gk;
                        a2[k] = h.beta2 * a2[k] + (1.0 - h.beta2) * gk * gk;
                        let m_hat = a1[k] / (1.0 - h.beta1.powi(t));
                        let v_hat = a2[k] / (1.0 - h.beta2.powi(t));
                        p[k] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
                    }
                    OptimizerKind::Rmsprop => {
                        a1[k] = h.rho * a1[k] + (1.0 - h.rho) * gk * gk;
                        p[k] -= h.lr * gk / (a1[k].sqrt() + h.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(kind: OptimizerKind, lr: f64, w: f64, g: f64) -> f64 {
        let mut s = OptimizerState::new(kind, OptimizerHyper { lr, ..Default::default() }).unwrap();
        let mut p = [w];
        s.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
        p[0]
    }

    #[test]
    fn hand_checked_first_steps() {
        assert!((one_step(OptimizerKind::Sgd, 0.1, 1.0, 2.0) - 0.8).abs() < 1e-9);
        assert!((one_step(OptimizerKind::Rmsprop, 0.001, 1.0, 2.0) - 0.9968377223898316).abs() < 1e-9);
        assert!((one_step(OptimizerKind::Adam, 0.001, 1.0, 2.0) - 0.999).abs() < 1e-9);
        assert!((one_step(OptimizerKind::Adagrad, 0.1, 1.0, 2.0) - 0.9000000005).abs() < 1e-9);
        assert!((one_step(OptimizerKind::Adadelta, 1.0, 1.0, 2.0) - 0.999683772237936).abs() < 1e-9);
    }

    #[test]
    fn adadelta_second_step() {
        let mut s = OptimizerState::new(OptimizerKind::Adadelta, OptimizerHyper { lr: 1.0, ..Default::default() }).unwrap();
        let mut p = [1.0];
        for _ in 0..2 {
            s.step(&mut [&mut p[..]], &[&[2.0][..]]).unwrap();
        }
        assert!((p[0] - 0.9993593293998367).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_sign_limit() {
        let hyper = OptimizerHyper { lr: 0.01, rho: 0.0, eps: 1e-12, ..Default::default() };
        for g in [-3.0, -0.002, 0.0011, 0.5, 40.0] {
            let mut s = OptimizerState::new(OptimizerKind::Rmsprop, hyper).unwrap();
            let mut p = [0.0];
            s.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
            assert!((-p[0] - 0.01 * f64::signum(g)).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_checks() {
        let mut s = OptimizerState::new(OptimizerKind::Adam, OptimizerHyper::default()).unwrap();
        let mut p = [0.0, 1.0];
        assert!(s.step(&mut [&mut p[..]], &[&[1.0][..]]).is_err());
        s.step(&mut [&mut p[..]], &[&[1.0, 1.0][..]]).unwrap();
        let mut q = [0.0; 3];
        assert!(s.step(&mut [&mut q[..]], &[&[1.0; 3][..]]).is_err());
        assert!(OptimizerState::new(OptimizerKind::Sgd, OptimizerHyper { eps: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn parse_names() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.as_str().parse::<OptimizerKind>().unwrap(), k);
        }
        assert!("lbfgs".parse::<OptimizerKind>().is_err());
    }
}
