use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::{backward_dnn, forward_dnn, DnnGrads, DnnModel};
use super::lstm::{backward_lstm, forward_lstm, LstmGrads, LstmModel, LstmWeights};
use super::optim::{OptimizerHyper, OptimizerKind, OptimizerState};
use super::{argmax, NeuralError};
use crate::corpus::ScoreScale;
use crate::embeddings::SequenceEmbedding;
use crate::metrics::qwk_scores;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
    /// Share of the training rows held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without a validation-kappa improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm cap, applied to the LSTM only.
    pub clip_norm: f64,
    /// Print `epoch,train_loss,val_qwk` lines to stdout.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::Rmsprop,
            lr: 0.001,
            seed: 1,
            validation_fraction: 0.1,
            patience: 5,
            clip_norm: 5.0,
            verbose: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.into()));
        if self.hidden == 0 {
            return bad("hidden size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie strictly between 0 and 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean training loss per completed epoch.
    pub epoch_loss: Vec<f64>,
    pub val_qwk: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

trait Net: Clone {
    type In;
    type Grads;
    fn zero_grads(&self) -> Self::Grads;
    fn add_grad(&self, x: &Self::In, class: usize, g: &mut Self::Grads) -> Result<f64, NeuralError>;
    fn grad_blocks(g: &mut Self::Grads) -> Vec<&mut [f64]>;
    fn apply(&mut self, opt: &mut OptimizerState, g: &mut Self::Grads) -> Result<(), NeuralError>;
    fn probs(&self, x: &Self::In) -> Result<Vec<f64>, NeuralError>;
    fn clip(&self) -> bool;
}

impl Net for DnnModel {
    type In = Vec<f64>;
    type Grads = DnnGrads;

    fn zero_grads(&self) -> DnnGrads {
        DnnGrads::zeros_like(self)
    }

    fn add_grad(&self, x: &Vec<f64>, class: usize, g: &mut DnnGrads) -> Result<f64, NeuralError> {
        backward_dnn(self, x, class, g)
    }

    fn grad_blocks(g: &mut DnnGrads) -> Vec<&mut [f64]> {
        g.blocks_mut().into()
    }

    fn apply(&mut self, opt: &mut OptimizerState, g: &mut DnnGrads) -> Result<(), NeuralError> {
        opt.step(&mut self.params_mut(), &g.blocks())
    }

    fn probs(&self, x: &Vec<f64>) -> Result<Vec<f64>, NeuralError> {
        forward_dnn(self, x)
    }

    fn clip(&self) -> bool {
        false
    }
}

impl Net for LstmModel {
    type In = SequenceEmbedding;
    type Grads = LstmGrads;

    fn zero_grads(&self) -> LstmGrads {
        LstmGrads::zeros_like(&self.weights)
    }

    fn add_grad(&self, x: &SequenceEmbedding, class: usize, g: &mut LstmGrads) -> Result<f64, NeuralError> {
        backward_lstm(&self.weights, x, class, g)
    }

    fn grad_blocks(g: &mut LstmGrads) -> Vec<&mut [f64]> {
        g.blocks_mut().into()
    }

    fn apply(&mut self, opt: &mut OptimizerState, g: &mut LstmGrads) -> Result<(), NeuralError> {
        opt.step(&mut self.weights.params_mut(), &g.blocks())
    }

    fn probs(&self, x: &SequenceEmbedding) -> Result<Vec<f64>, NeuralError> {
        forward_lstm(&self.weights, x)
    }

    fn clip(&self) -> bool {
        true
    }
}

fn class_indices(y: &[i32], scale: &ScoreScale) -> Result<Vec<usize>, NeuralError> {
    let idx = y
        .iter()
        .map(|&s| scale.index_of(s).ok_or(NeuralError::LabelOutOfScale(s)))
        .collect::<Result<Vec<_>, _>>()?;
    if idx.iter().all(|&c| c == idx[0]) {
        return Err(NeuralError::SingleClassInput);
    }
    Ok(idx)
}

/// Row indices used for fitting and for early stopping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Shuffles `0..n` and holds out the last `round(n * fraction)` rows, at
/// least one on each side.
pub fn carve_validation(n: usize, fraction: f64, seed: u64) -> Result<ValidationSplit, NeuralError> {
    if n < 2 {
        return Err(NeuralError::InvalidConfig("need at least two rows to hold out a validation set".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(NeuralError::InvalidConfig("validation fraction must lie strictly between 0 and 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = order.split_off(n - n_val);
    Ok(ValidationSplit { train: order, val })
}

fn fit<M: Net>(
    init: impl FnOnce(&mut ChaCha8Rng) -> M,
    inputs: &[M::In],
    y: &[i32],
    scale: &ScoreScale,
    config: &TrainConfig,
    split: &ValidationSplit,
) -> Result<(M, f64, TrainReport), NeuralError> {
    config.validate()?;
    if inputs.len() != y.len() {
        return Err(NeuralError::LabelCount(y.len(), inputs.len()));
    }
    if y.is_empty() {
        return Err(NeuralError::SingleClassInput);
    }
    let targets = class_indices(y, scale)?;
    if split.train.is_empty() || split.val.is_empty() || split.train.iter().chain(&split.val).any(|&i| i >= y.len()) {
        return Err(NeuralError::InvalidConfig("validation split does not fit the training rows".into()));
    }
    let mut train_idx = split.train.clone();
    let val_idx = &split.val;
    let val_gold: Vec<i32> = val_idx.iter().map(|&i| y[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init(&mut rng);
    let mut opt = OptimizerState::new(
        config.optimizer,
        OptimizerHyper {
            lr: config.lr,
            ..Default::default()
        },
    )?;

    let mut report = TrainReport::default();
    let mut best: Option<(M, f64)> = None;
    let mut best_strict = f64::NEG_INFINITY;
    let mut stale = 0;
    if config.verbose {
        println!("epoch,train_loss,val_qwk");
    }
    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let mut g = model.zero_grads();
            for &i in batch {
                loss_sum += model.add_grad(&inputs[i], targets[i], &mut g)?;
            }
            let inv = 1.0 / batch.len() as f64;
            let mut blocks = M::grad_blocks(&mut g);
            blocks.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v *= inv));
            if model.clip() {
                let norm = blocks.iter().flat_map(|b| b.iter()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > config.clip_norm {
                    let s = config.clip_norm / norm;
                    blocks.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v *= s));
                }
            }
            model.apply(&mut opt, &mut g)?;
        }
        let mean_loss = loss_sum / train_idx.len() as f64;

        let mut val_pred = Vec::with_capacity(val_idx.len());
        for &i in val_idx.iter() {
            val_pred.push(scale.score_at(argmax(&model.probs(&inputs[i])?)));
        }
        let kappa = qwk_scores(&val_gold, &val_pred, *scale).unwrap_or(0.0);
        report.epoch_loss.push(mean_loss);
        report.val_qwk.push(kappa);
        if config.verbose {
            println!("{},{mean_loss:.6},{kappa:.6}", epoch + 1);
        }

        // Later epochs win ties so a plateau keeps the most-trained weights.
        if best.as_ref().is_none_or(|(_, k)| kappa >= *k) {
            best = Some((model.clone(), kappa));
            report.best_epoch = epoch;
        }
        if kappa > best_strict {
            best_strict = kappa;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (model, kappa) = best.expect("at least one epoch runs");
    Ok((model, kappa, report))
}

fn scale_classes(scale: &ScoreScale) -> Vec<i32> {
    (scale.min_score..=scale.max_score).collect()
}

/// Trains the feed-forward classifier on fixed-length feature rows. Output
/// units cover every score on `scale`.
pub fn train_dnn(
    x: &[Vec<f64>],
    y: &[i32],
    scale: &ScoreScale,
    config: &TrainConfig,
) -> Result<(DnnModel, TrainReport), NeuralError> {
    let split = carve_validation(x.len(), config.validation_fraction, config.seed)?;
    train_dnn_split(x, y, scale, config, &split)
}

/// [`train_dnn`] with a caller-chosen validation split.
pub fn train_dnn_split(
    x: &[Vec<f64>],
    y: &[i32],
    scale: &ScoreScale,
    config: &TrainConfig,
    split: &ValidationSplit,
) -> Result<(DnnModel, TrainReport), NeuralError> {
    let d = x.first().map_or(0, Vec::len);
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(NeuralError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let classes = scale_classes(scale);
    let (mut model, kappa, report) = fit(
        |rng| DnnModel::new(d, config.hidden, classes, rng),
        x,
        y,
        scale,
        config,
        split,
    )?;
    model.kappa = kappa;
    Ok((model, report))
}

/// Trains the LSTM classifier on embedded token sequences, one sequence at
/// a time within each mini-batch.
pub fn train_lstm(
    sequences: &[SequenceEmbedding],
    y: &[i32],
    scale: &ScoreScale,
    config: &TrainConfig,
) -> Result<(LstmModel, TrainReport), NeuralError> {
    let split = carve_validation(sequences.len(), config.validation_fraction, config.seed)?;
    train_lstm_split(sequences, y, scale, config, &split)
}

/// [`train_lstm`] with a caller-chosen validation split.
pub fn train_lstm_split(
    sequences: &[SequenceEmbedding],
    y: &[i32],
    scale: &ScoreScale,
    config: &TrainConfig,
    split: &ValidationSplit,
) -> Result<(LstmModel, TrainReport), NeuralError> {
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(NeuralError::EmptySequenceBatch);
    }
    let d = sequences.iter().find(|s| !s.is_empty()).map_or(0, |s| s.dim);
    if let Some(bad) = sequences.iter().find(|s| !s.is_empty() && s.dim != d) {
        return Err(NeuralError::DimensionMismatch {
            expected: d,
            got: bad.dim,
        });
    }
    let classes = scale_classes(scale);
    let n = classes.len();
    let (mut model, kappa, report) = fit(
        |rng| LstmModel {
            weights: LstmWeights::new(d, config.hidden, n, rng),
            classes,
            kappa: 0.0,
        },
        sequences,
        y,
        scale,
        config,
        split,
    )?;
    model.kappa = kappa;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<i32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[-2.0, 0.0], [0.0, 2.0], [2.0, 0.0]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            x.push(vec![
                centers[c][0] + rng.gen_range(-0.5..0.5),
                centers[c][1] + rng.gen_range(-0.5..0.5),
            ]);
            y.push(c as i32 + 1);
        }
        (x, y)
    }

    #[test]
    fn dnn_memorizes_small_set() {
        let (x, y) = blobs(20, 1);
        let scale = ScoreScale::new(1, 1, 3);
        let cfg = TrainConfig {
            hidden: 16,
            epochs: 300,
            batch_size: 4,
            lr: 0.01,
            patience: 300,
            ..Default::default()
        };
        let (m, report) = train_dnn(&x, &y, &scale, &cfg).unwrap();
        let acc = x.iter().zip(&y).filter(|(xi, &yi)| m.predict(xi).unwrap().class == yi).count();
        assert_eq!(acc, 20);
        assert!(report.epoch_loss[0] > *report.epoch_loss.last().unwrap());
        assert!(report.val_qwk.iter().all(|&k| k <= m.kappa));
    }

    #[test]
    fn dnn_deterministic() {
        let (x, y) = blobs(30, 2);
        let scale = ScoreScale::new(1, 1, 3);
        let cfg = TrainConfig { hidden: 8, epochs: 5, ..Default::default() };
        let a = train_dnn(&x, &y, &scale, &cfg).unwrap().0;
        let b = train_dnn(&x, &y, &scale, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn lstm_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seqs = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let label: i32 = i % 2;
            let len = rng.gen_range(2..6);
            let base = if label == 1 { 0.8 } else { -0.8 };
            let data = (0..len * 3).map(|_| base + rng.gen_range(-0.3..0.3)).collect();
            seqs.push(SequenceEmbedding { dim: 3, len, data });
            y.push(label);
        }
        let scale = ScoreScale::new(1, 0, 1);
        let cfg = TrainConfig {
            hidden: 6,
            epochs: 15,
            batch_size: 8,
            lr: 0.01,
            patience: 15,
            ..Default::default()
        };
        let (m, report) = train_lstm(&seqs, &y, &scale, &cfg).unwrap();
        assert!(report.epoch_loss[0] > *report.epoch_loss.last().unwrap());
        assert!(m.weights.is_finite());
    }

    #[test]
    fn carving_partitions_rows() {
        let s = carve_validation(20, 0.1, 9).unwrap();
        assert_eq!(s.val.len(), 2);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(carve_validation(3, 0.01, 1).unwrap().val.len(), 1);
        assert_eq!(carve_validation(3, 0.99, 1).unwrap().train.len(), 1);
        assert!(carve_validation(1, 0.5, 1).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let scale = ScoreScale::new(1, 1, 3);
        let x = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            train_dnn(&x, &[2, 2], &scale, &TrainConfig::default()).unwrap_err(),
            NeuralError::SingleClassInput
        );
        assert_eq!(
            train_dnn(&x, &[2, 9], &scale, &TrainConfig::default()).unwrap_err(),
            NeuralError::LabelOutOfScale(9)
        );
        let bad = TrainConfig { validation_fraction: 1.0, ..Default::default() };
        assert!(matches!(train_dnn(&x, &[1, 2], &scale, &bad), Err(NeuralError::InvalidConfig(_))));
        let empty = SequenceEmbedding { dim: 4, len: 0, data: vec![] };
        assert_eq!(
            train_lstm(&[empty.clone(), empty], &[1, 2], &scale, &TrainConfig::default()).unwrap_err(),
            NeuralError::EmptySequenceBatch
        );
    }
}
