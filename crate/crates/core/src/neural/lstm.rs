use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax, sparse_ce_loss, DenseLayer, NeuralError, NnPrediction};
use crate::embeddings::SequenceEmbedding;

/// Single-layer LSTM. Gate blocks are stacked in the order input, forget,
/// output, candidate: `wx` is `4h x dim`, `wh` is `4h x h`, `b` is `4h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub input_dim: usize,
    pub hidden: usize,
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
    pub head: DenseLayer,
}

impl LstmWeights {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, n_classes: usize, rng: &mut R) -> Self {
        let lx = (6.0 / (input_dim + hidden) as f64).sqrt();
        let lh = (6.0 / (2 * hidden) as f64).sqrt();
        let wx = (0..4 * hidden * input_dim).map(|_| rng.gen_range(-lx..=lx)).collect();
        let wh = (0..4 * hidden * hidden).map(|_| rng.gen_range(-lh..=lh)).collect();
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Self {
            input_dim,
            hidden,
            wx,
            wh,
            b,
            head: DenseLayer::glorot(hidden, n_classes, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            wx: vec![0.0; 4 * hidden * input_dim],
            wh: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
            head: DenseLayer::zeros(hidden, n_classes),
        }
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.wx,
            &mut self.wh,
            &mut self.b,
            &mut self.head.weights,
            &mut self.head.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.wx.iter().chain(&self.wh).chain(&self.b).all(|v| v.is_finite()) && self.head.is_finite()
    }

    fn check_shapes(&self) -> Result<(), NeuralError> {
        let h = self.hidden;
        if self.wx.len() != 4 * h * self.input_dim
            || self.wh.len() != 4 * h * h
            || self.b.len() != 4 * h
            || self.head.inp != h
        {
            return Err(NeuralError::ShapeMismatch("inconsistent LSTM gate shapes".into()));
        }
        Ok(())
    }

    fn preactivation(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let (d, h) = (self.input_dim, self.hidden);
        (0..4 * h)
            .map(|r| {
                let ax: f64 = self.wx[r * d..(r + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum();
                let ah: f64 = self.wh[r * h..(r + 1) * h].iter().zip(h_prev).map(|(w, v)| w * v).sum();
                ax + ah + self.b[r]
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate activations and state for one timestep.
struct Step {
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn cell(w: &LstmWeights, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Step {
    let hd = w.hidden;
    let a = w.preactivation(x, h_prev);
    let i: Vec<f64> = a[..hd].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = a[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = a[2 * hd..3 * hd].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = a[3 * hd..].iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
    Step { i, f, o, g, c, tanh_c, h }
}

/// One LSTM step: returns `(h, c)`.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    weights: &LstmWeights,
) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    weights.check_shapes()?;
    if x.len() != weights.input_dim || h_prev.len() != weights.hidden || c_prev.len() != weights.hidden {
        return Err(NeuralError::ShapeMismatch(format!(
            "cell expects x[{}], h[{}], c[{}]",
            weights.input_dim, weights.hidden, weights.hidden
        )));
    }
    let s = cell(weights, x, h_prev, c_prev);
    Ok((s.h, s.c))
}

fn check_seq(w: &LstmWeights, seq: &SequenceEmbedding) -> Result<(), NeuralError> {
    if seq.len > 0 && seq.dim != w.input_dim {
        return Err(NeuralError::DimensionMismatch {
            expected: w.input_dim,
            got: seq.dim,
        });
    }
    Ok(())
}

fn run(w: &LstmWeights, seq: &SequenceEmbedding, keep: bool) -> (Vec<Step>, Vec<f64>) {
    let hd = w.hidden;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut steps = Vec::new();
    for t in 0..seq.len {
        let s = cell(w, seq.step(t), &h, &c);
        h.clone_from(&s.h);
        c.clone_from(&s.c);
        if keep {
            steps.push(s);
        }
    }
    (steps, h)
}

/// Class probabilities from the final hidden state.
pub fn forward_lstm(w: &LstmWeights, seq: &SequenceEmbedding) -> Result<Vec<f64>, NeuralError> {
    w.check_shapes()?;
    check_seq(w, seq)?;
    let (_, h) = run(w, seq, false);
    Ok(softmax(&w.head.apply(&h)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros_like(w: &LstmWeights) -> Self {
        Self {
            wx: vec![0.0; w.wx.len()],
            wh: vec![0.0; w.wh.len()],
            b: vec![0.0; w.b.len()],
            head_w: vec![0.0; w.head.weights.len()],
            head_b: vec![0.0; w.head.bias.len()],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 5] {
        [&self.wx, &self.wh, &self.b, &self.head_w, &self.head_b]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        [&mut self.wx, &mut self.wh, &mut self.b, &mut self.head_w, &mut self.head_b]
    }
}

/// Backpropagation through time for one sequence; adds into `grads` and
/// returns the loss.
pub fn backward_lstm(
    w: &LstmWeights,
    seq: &SequenceEmbedding,
    class: usize,
    grads: &mut LstmGrads,
) -> Result<f64, NeuralError> {
    w.check_shapes()?;
    check_seq(w, seq)?;
    let n = w.head.out;
    if class >= n {
        return Err(NeuralError::ClassOutOfRange(class, n));
    }
    let (hd, d) = (w.hidden, w.input_dim);
    let (steps, h_last) = run(w, seq, true);
    let p = softmax(&w.head.apply(&h_last));
    let loss = sparse_ce_loss(&p, class)?;
    let mut dz = p;
    dz[class] -= 1.0;
    let mut dh = w.head.backprop(&h_last, &dz, &mut grads.head_w, &mut grads.head_b);
    let mut dc = vec![0.0; hd];
    let zeros = vec![0.0; hd];
    let mut da = vec![0.0; 4 * hd];
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&steps[t - 1].h, &steps[t - 1].c)
        };
        for k in 0..hd {
            dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            da[k] = dc[k] * s.g[k] * s.i[k] * (1.0 - s.i[k]);
            da[hd + k] = dc[k] * c_prev[k] * s.f[k] * (1.0 - s.f[k]);
            da[2 * hd + k] = dh[k] * s.tanh_c[k] * s.o[k] * (1.0 - s.o[k]);
            da[3 * hd + k] = dc[k] * s.i[k] * (1.0 - s.g[k] * s.g[k]);
        }
        let x = seq.step(t);
        let mut dh_prev = vec![0.0; hd];
        for r in 0..4 * hd {
            let g = da[r];
            grads.b[r] += g;
            if g == 0.0 {
                continue;
            }
            let gx = &mut grads.wx[r * d..(r + 1) * d];
            for (acc, &v) in gx.iter_mut().zip(x) {
                *acc += g * v;
            }
            let row = &w.wh[r * hd..(r + 1) * hd];
            let gh = &mut grads.wh[r * hd..(r + 1) * hd];
            for k in 0..hd {
                gh[k] += g * h_prev[k];
                dh_prev[k] += g * row[k];
            }
        }
        for k in 0..hd {
            dc[k] *= s.f[k];
        }
        dh = dh_prev;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub weights: LstmWeights,
    /// Score per output unit, ascending.
    pub classes: Vec<i32>,
    /// Best validation kappa seen during training.
    pub kappa: f64,
}

impl LstmModel {
    pub fn input_dim(&self) -> usize {
        self.weights.input_dim
    }

    pub fn predict(&self, seq: &SequenceEmbedding) -> Result<NnPrediction, NeuralError> {
        let p = forward_lstm(&self.weights, seq)?;
        Ok(NnPrediction {
            class: self.classes[argmax(&p)],
            probabilities: p,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_hand_values() {
        let w = LstmWeights::zeros(1, 1, 2);
        let (h, c) = lstm_cell(&[0.7], &[0.0], &[0.0], &w).unwrap();
        assert_eq!((h[0], c[0]), (0.0, 0.0));
        let (h, c) = lstm_cell(&[0.7], &[0.0], &[1.0], &w).unwrap();
        assert_eq!(c[0], 0.5);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.2310585).abs() < 1e-7);
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = LstmWeights::new(3, 4, 2, &mut rng);
        w.b[4..8].iter_mut().for_each(|v| *v = 50.0);
        w.wx[4 * 3..8 * 3].iter_mut().for_each(|v| *v = 0.0);
        w.wh[4 * 4..8 * 4].iter_mut().for_each(|v| *v = 0.0);
        let x = [0.3, -0.2, 0.9];
        let hp = [0.1, 0.2, -0.3, 0.0];
        let cp = [1.0, -2.0, 0.5, 3.0];
        let (_, c) = lstm_cell(&x, &hp, &cp, &w).unwrap();
        let a = w.preactivation(&x, &hp);
        for k in 0..4 {
            let ig = sigmoid(a[k]) * a[12 + k].tanh();
            assert!((c[k] - (cp[k] + ig)).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_errors() {
        let w = LstmWeights::zeros(2, 3, 2);
        assert!(lstm_cell(&[0.0], &[0.0; 3], &[0.0; 3], &w).is_err());
        let seq = SequenceEmbedding {
            dim: 5,
            len: 1,
            data: vec![0.0; 5],
        };
        assert!(forward_lstm(&w, &seq).is_err());
    }

    #[test]
    fn empty_sequence_uses_head_bias() {
        let mut w = LstmWeights::zeros(2, 3, 2);
        w.head.bias = vec![0.0, 1.0];
        let seq = SequenceEmbedding {
            dim: 2,
            len: 0,
            data: vec![],
        };
        let p = forward_lstm(&w, &seq).unwrap();
        assert!(p[1] > p[0]);
    }

    #[test]
    fn long_identical_sequence_gradients_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = LstmWeights::new(8, 16, 4, &mut rng);
        let step: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = SequenceEmbedding {
            dim: 8,
            len: 50,
            data: step.repeat(50),
        };
        let mut g = LstmGrads::zeros_like(&w);
        let loss = backward_lstm(&w, &seq, 2, &mut g).unwrap();
        assert!(loss.is_finite());
        let norm: f64 = g.blocks().iter().flat_map(|b| b.iter()).map(|v| v * v).sum();
        assert!(norm.is_finite());
    }
}
