use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax, sparse_ce_loss, DenseLayer, NeuralError, NnPrediction};

/// ReLU hidden layer followed by a softmax output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnModel {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
    /// Score per output unit, ascending.
    pub classes: Vec<i32>,
    /// Best validation kappa seen during training.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl DnnGrads {
    pub fn zeros_like(m: &DnnModel) -> Self {
        Self {
            w1: vec![0.0; m.hidden.weights.len()],
            b1: vec![0.0; m.hidden.bias.len()],
            w2: vec![0.0; m.output.weights.len()],
            b2: vec![0.0; m.output.bias.len()],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl DnnModel {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, classes: Vec<i32>, rng: &mut R) -> Self {
        let n = classes.len();
        let h = DenseLayer::glorot(input_dim, hidden, rng);
        let o = DenseLayer::glorot(hidden, n, rng);
        Self {
            hidden: h,
            output: o,
            classes,
            kappa: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.inp
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.is_finite() && self.output.is_finite()
    }

    pub fn predict(&self, x: &[f64]) -> Result<NnPrediction, NeuralError> {
        let p = forward_dnn(self, x)?;
        Ok(NnPrediction {
            class: self.classes[argmax(&p)],
            probabilities: p,
        })
    }

    fn check(&self, x: &[f64]) -> Result<(), NeuralError> {
        if x.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|z| z.max(0.0)).collect()
}

pub fn forward_dnn(model: &DnnModel, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
    model.check(x)?;
    let h = relu(model.hidden.apply(x));
    Ok(softmax(&model.output.apply(&h)))
}

/// Adds the loss gradient for one example into `grads`; returns the loss.
pub fn backward_dnn(model: &DnnModel, x: &[f64], class: usize, grads: &mut DnnGrads) -> Result<f64, NeuralError> {
    model.check(x)?;
    let n = model.classes.len();
    if class >= n {
        return Err(NeuralError::ClassOutOfRange(class, n));
    }
    let z1 = model.hidden.apply(x);
    let h: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
    let p = softmax(&model.output.apply(&h));
    let loss = sparse_ce_loss(&p, class)?;
    let mut dz2 = p;
    dz2[class] -= 1.0;
    let dh = model.output.backprop(&h, &dz2, &mut grads.w2, &mut grads.b2);
    let dz1: Vec<f64> = dh.iter().zip(&z1).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();
    model.hidden.backprop(x, &dz1, &mut grads.w1, &mut grads.b1);
    Ok(loss)
}
