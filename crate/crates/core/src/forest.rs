//! Random forest of Gini-split decision trees with plurality voting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForestError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{0} labels for {1} rows")]
    LabelCount(usize, usize),
    #[error("label {0} is not one of the forest classes")]
    UnknownLabel(i32),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Defaults to `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    /// Draw a bootstrap sample per tree. Disabling it is a test hook.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            seed: 1,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn features_for(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Training-sample counts per class index.
    Leaf { counts: Vec<u32> },
}

/// Nodes in an arena; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { counts } => return counts,
            }
        }
    }

    /// Majority class index of the reached leaf, ties to the lower index.
    pub fn predict_index(&self, x: &[f64]) -> Result<usize, ForestError> {
        if x.len() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(argmax_counts(self.leaf_for(x)))
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

fn argmax_counts(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn gini(counts: &[u32], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize, ForestError> {
    let d = x.first().map(Vec::len).ok_or(ForestError::EmptyTrainingSet)?;
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(ForestError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(d)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    params: &'a ForestParams,
    k_features: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best (weighted impurity, threshold) on one feature.
    fn best_on_feature(&self, idx: &[usize], feature: usize, scratch: &mut Vec<(f64, usize)>) -> Option<(f64, f64)> {
        scratch.clear();
        scratch.extend(idx.iter().map(|&i| (self.x[i][feature], self.y[i])));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = scratch.len() as u32;
        let mut left = vec![0u32; self.n_classes];
        let mut right = vec![0u32; self.n_classes];
        for &(_, c) in scratch.iter() {
            right[c] += 1;
        }
        let mut best: Option<(f64, f64)> = None;
        for k in 0..scratch.len() - 1 {
            let c = scratch[k].1;
            left[c] += 1;
            right[c] -= 1;
            let (v, next) = (scratch[k].0, scratch[k + 1].0);
            if v == next {
                continue;
            }
            let nl = k as u32 + 1;
            let nr = n - nl;
            let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.is_none_or(|(b, _)| impurity < b) {
                let mid = v + (next - v) / 2.0;
                // midpoint can round onto `next` for adjacent floats
                let threshold = if mid < next { mid } else { v };
                best = Some((impurity, threshold));
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_hit = self.params.max_depth.is_some_and(|m| depth >= m);
        let node_id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { counts: counts.clone() });
        if pure || depth_hit || idx.len() < self.params.min_samples_split.max(2) {
            return node_id;
        }

        let d = self.x[idx[0]].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut scratch = Vec::with_capacity(idx.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.k_features && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_on_feature(&idx, f, &mut scratch) {
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return node_id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[node_id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        node_id
    }
}

/// Grows one tree on the rows listed in `sample` (repeats allowed).
/// `y` holds class indices below `n_classes`.
pub fn train_tree(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    sample: Vec<usize>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree, ForestError> {
    let d = check_rows(x)?;
    if y.len() != x.len() {
        return Err(ForestError::LabelCount(y.len(), x.len()));
    }
    if sample.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    let mut builder = TreeBuilder {
        x,
        y,
        n_classes,
        params,
        k_features: params.features_for(d),
        nodes: Vec::new(),
    };
    builder.build(sample, 0, rng);
    Ok(DecisionTree {
        nodes: builder.nodes,
        n_features: d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub params: ForestParams,
    /// Ascending score classes seen in training.
    pub classes: Vec<i32>,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn train_forest(x: &[Vec<f64>], y: &[i32], params: &ForestParams) -> Result<Forest, ForestError> {
    if params.n_trees == 0 {
        return Err(ForestError::InvalidParams("n_trees must be at least 1".into()));
    }
    let d = check_rows(x)?;
    if y.len() != x.len() {
        return Err(ForestError::LabelCount(y.len(), x.len()));
    }
    if let Some(f) = params.features_per_split {
        if f == 0 || f > d {
            return Err(ForestError::InvalidParams(format!("features_per_split must lie in 1..={d}")));
        }
    }
    let mut classes: Vec<i32> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let y_idx: Vec<usize> = y
        .iter()
        .map(|v| classes.binary_search(v).expect("class from labels"))
        .collect();

    let m = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let sample: Vec<usize> = if params.bootstrap {
                (0..m).map(|_| rng.gen_range(0..m)).collect()
            } else {
                (0..m).collect()
            };
            train_tree(x, &y_idx, classes.len(), sample, params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Forest {
        trees,
        params: params.clone(),
        classes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestPrediction {
    pub class: i32,
    pub votes: BTreeMap<i32, usize>,
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.trees.first().map(|t| t.n_features).unwrap_or(0)
    }

    pub fn predict(&self, x: &[f64]) -> Result<ForestPrediction, ForestError> {
        let mut tally = vec![0usize; self.classes.len()];
        for t in &self.trees {
            tally[t.predict_index(x)?] += 1;
        }
        Ok(vote(&self.classes, &tally))
    }
}

/// Plurality over ascending `classes`; ties go to the lower class.
fn vote(classes: &[i32], tally: &[usize]) -> ForestPrediction {
    let mut best = 0;
    for (i, &c) in tally.iter().enumerate() {
        if c > tally[best] {
            best = i;
        }
    }
    ForestPrediction {
        class: classes[best],
        votes: classes
            .iter()
            .zip(tally)
            .filter(|(_, &n)| n > 0)
            .map(|(&c, &n)| (c, n))
            .collect(),
    }
}

pub fn predict_forest(forest: &Forest, x: &[f64]) -> Result<ForestPrediction, ForestError> {
    forest.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn threshold_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<i32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // magnitudes in [0.05, 1] leave a clear band around the boundary
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mag = rng.gen_range(0.05..1.0);
                vec![if rng.gen::<bool>() { mag } else { -mag }]
            })
            .collect();
        let y = x.iter().map(|r| i32::from(r[0] >= 0.0)).collect();
        (x, y)
    }

    #[test]
    fn separable_pair_single_split() {
        let x = vec![vec![-1.0], vec![1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = train_tree(&x, &[0, 1], 2, vec![0, 1], &ForestParams::default(), &mut rng).unwrap();
        assert_eq!(t.nodes.len(), 3);
        match &t.nodes[0] {
            TreeNode::Split { threshold, .. } => assert!(*threshold > -1.0 && *threshold < 1.0),
            _ => panic!("expected split"),
        }
        for n in &t.nodes[1..] {
            let TreeNode::Leaf { counts } = n else { panic!() };
            assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
        }
    }

    #[test]
    fn constant_labels_single_leaf() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = train_tree(&x, &[1, 1, 1], 2, vec![0, 1, 2], &ForestParams::default(), &mut rng).unwrap();
        assert_eq!(t.nodes, vec![TreeNode::Leaf { counts: vec![0, 3] }]);
    }

    #[test]
    fn same_rng_same_tree() {
        let (x, y) = threshold_data(50, 1);
        let yi: Vec<usize> = y.iter().map(|&v| v as usize).collect();
        let p = ForestParams::default();
        let a = train_tree(&x, &yi, 2, (0..50).collect(), &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = train_tree(&x, &yi, 2, (0..50).collect(), &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_tree_forest_reduces_to_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<i32> = x.iter().map(|r| if r[0] + r[1] > 0.2 { 2 } else if r[2] > 0.0 { 1 } else { 0 }).collect();
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            features_per_split: Some(3),
            ..Default::default()
        };
        let forest = train_forest(&x, &y, &params).unwrap();
        let yi: Vec<usize> = y.iter().map(|&v| v as usize).collect();
        let tree = train_tree(&x, &yi, 3, (0..60).collect(), &params, &mut tree_rng(params.seed, 0)).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            assert_eq!(forest.predict(&q).unwrap().class, tree.predict_index(&q).unwrap() as i32);
        }
    }

    #[test]
    fn threshold_set_perfect_held_out() {
        let (x, y) = threshold_data(200, 11);
        let params = ForestParams { n_trees: 50, seed: 3, ..Default::default() };
        let forest = train_forest(&x, &y, &params).unwrap();
        let (xt, yt) = threshold_data(200, 12);
        for (r, &lab) in xt.iter().zip(&yt) {
            assert_eq!(forest.predict(r).unwrap().class, lab);
        }
        for (r, &lab) in x.iter().zip(&y) {
            assert_eq!(forest.predict(r).unwrap().class, lab);
        }
    }

    #[test]
    fn reproducible() {
        let (x, y) = threshold_data(80, 2);
        let p = ForestParams { n_trees: 10, ..Default::default() };
        assert_eq!(train_forest(&x, &y, &p).unwrap(), train_forest(&x, &y, &p).unwrap());
    }

    #[test]
    fn voting_rules() {
        let p = vote(&[1, 2], &[2, 1]);
        assert_eq!(p.class, 1);
        assert_eq!(p.votes, BTreeMap::from([(1, 2), (2, 1)]));
        assert_eq!(vote(&[5, 7], &[2, 2]).class, 5);
        let u = vote(&[3, 4], &[0, 4]);
        assert_eq!((u.class, u.votes.values().sum::<usize>()), (4, 4));
    }

    #[test]
    fn dimension_errors() {
        let (x, y) = threshold_data(10, 2);
        let f = train_forest(&x, &y, &ForestParams { n_trees: 2, ..Default::default() }).unwrap();
        assert!(matches!(f.predict(&[0.0, 1.0]), Err(ForestError::DimensionMismatch { .. })));
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(train_forest(&ragged, &[0, 1], &ForestParams::default()), Err(ForestError::DimensionMismatch { .. })));
    }
}
