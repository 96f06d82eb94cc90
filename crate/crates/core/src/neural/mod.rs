//! Feed-forward and LSTM classifiers over embedding features.

mod dense;
mod lstm;
mod optim;
mod train;

pub use dense::{backward_dnn, forward_dnn, DnnGrads, DnnModel};
pub use lstm::{backward_lstm, forward_lstm, lstm_cell, LstmGrads, LstmModel, LstmWeights};
pub use optim::{OptimizerHyper, OptimizerKind, OptimizerState};
pub use train::{
    carve_validation, train_dnn, train_dnn_split, train_lstm, train_lstm_split, TrainConfig, TrainReport, ValidationSplit,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NeuralError {
    #[error("expected input dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class index {0} out of range for {1} classes")]
    ClassOutOfRange(usize, usize),
    #[error("training labels need at least two distinct classes")]
    SingleClassInput,
    #[error("every training sequence is empty")]
    EmptySequenceBatch,
    #[error("label {0} outside the score scale")]
    LabelOutOfScale(i32),
    #[error("{0} labels for {1} inputs")]
    LabelCount(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Fully connected layer; `weights` is `out x inp`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inp: usize,
    pub out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            inp,
            out,
            weights: vec![0.0; inp * out],
            bias: vec![0.0; out],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(inp: usize, out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inp + out) as f64).sqrt();
        Self {
            inp,
            out,
            weights: (0..inp * out).map(|_| rng.gen_range(-limit..=limit)).collect(),
            bias: vec![0.0; out],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                let row = &self.weights[o * self.inp..(o + 1) * self.inp];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o]
            })
            .collect()
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy`.
    fn backprop(&self, x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inp];
        for o in 0..self.out {
            let g = dy[o];
            db[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inp..(o + 1) * self.inp];
            let drow = &mut dw[o * self.inp..(o + 1) * self.inp];
            for i in 0..self.inp {
                drow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-ln p[class]` with `p` clipped to `[1e-12, 1]`.
pub fn sparse_ce_loss(p: &[f64], class: usize) -> Result<f64, NeuralError> {
    let v = p.get(class).ok_or(NeuralError::ClassOutOfRange(class, p.len()))?;
    Ok(-v.clamp(1e-12, 1.0).ln())
}

/// Index of the largest probability; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnPrediction {
    pub class: i32,
    pub probabilities: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ce_examples() {
        assert!((sparse_ce_loss(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(sparse_ce_loss(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((sparse_ce_loss(&[1.0, 0.0], 1).unwrap() - 27.631021115928547).abs() < 1e-9);
        assert_eq!(sparse_ce_loss(&[1.0], 3), Err(NeuralError::ClassOutOfRange(3, 1)));
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    proptest! {
        #[test]
        fn softmax_is_simplex(logits in proptest::collection::vec(-1e300f64..1e300, 1..12)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
