//! RBF-kernel support vector machines trained with simplified SMO, and a
//! one-vs-rest wrapper for multi-level scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvmError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data needs both labels / at least two classes")]
    SingleClassInput,
    #[error("{0} labels for {1} rows")]
    LabelCount(usize, usize),
    #[error("binary labels must be -1 or +1, got {0}")]
    InvalidLabel(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    /// Defaults to `1 / d`.
    pub gamma: Option<f64>,
    pub tol: f64,
    /// Caps training at `max_passes * m^2` subproblem solves.
    pub max_passes: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            gamma: None,
            tol: 1e-3,
            max_passes: 20,
        }
    }
}

impl SvmParams {
    pub fn gamma_for(&self, d: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / d.max(1) as f64)
    }

    fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0) {
            return Err(SvmError::InvalidParams("C must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(SvmError::InvalidParams("gamma must be positive".into()));
            }
        }
        if !(self.tol > 0.0) {
            return Err(SvmError::InvalidParams("tol must be positive".into()));
        }
        Ok(())
    }
}

/// `exp(-gamma * ||x - z||^2)`
pub fn rbf_kernel(x: &[f64], z: &[f64], gamma: f64) -> Result<f64, SvmError> {
    if x.len() != z.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
        });
    }
    Ok(rbf(x, z, gamma))
}

#[inline]
fn rbf(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize, SvmError> {
    let d = x.first().map(Vec::len).ok_or(SvmError::SingleClassInput)?;
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(SvmError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(d)
}

/// Full symmetric Gram matrix, row-major.
pub fn gram_matrix(x: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let m = x.len();
    let mut k = vec![0.0; m * m];
    for i in 0..m {
        k[i * m + i] = 1.0;
        for j in (i + 1)..m {
            let v = rbf(&x[i], &x[j], gamma);
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmBinary {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
}

impl SvmBinary {
    pub fn n_features(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * rbf(s, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Solver state after training, for diagnostics and KKT checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub subproblems: usize,
}

/// Largest KKT residual over the training set for a finished solution.
pub fn kkt_max_violation(gram: &[f64], y: &[f64], sol: &SmoSolution, c: f64) -> f64 {
    let m = y.len();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        let f: f64 = (0..m).map(|j| sol.alphas[j] * y[j] * gram[i * m + j]).sum::<f64>() + sol.bias;
        let margin = y[i] * f;
        let a = sol.alphas[i];
        let v = if a <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if a >= c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Curvature used when a pair's kernel geometry is degenerate.
const TAU: f64 = 1e-12;

struct Smo<'a> {
    gram: &'a [f64],
    y: &'a [f64],
    m: usize,
    c: f64,
    alpha: Vec<f64>,
    /// gradient of the dual objective, `(Q alpha)_t - 1`
    grad: Vec<f64>,
}

impl Smo<'_> {
    fn k(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.m + j]
    }

    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] < self.c
        } else {
            self.alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    /// Maximal violating `i`, then the `j` with the largest second-order
    /// objective decrease. Ties go to the lowest index. `None` once the
    /// duality gap is within `tol`.
    fn select(&self, tol: f64) -> Option<(usize, usize)> {
        let mut i = None;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..self.m {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) && v > g_max {
                g_max = v;
                i = Some(t);
            }
        }
        let i = i?;
        let mut j = None;
        let mut g_min = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..self.m {
            if !self.in_low(t) {
                continue;
            }
            let v = -self.y[t] * self.grad[t];
            g_min = g_min.min(v);
            let diff = g_max - v;
            if diff > 0.0 {
                let mut quad = self.k(i, i) + self.k(t, t) - 2.0 * self.k(i, t);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -diff * diff / quad;
                if obj < best {
                    best = obj;
                    j = Some(t);
                }
            }
        }
        if g_max - g_min < tol {
            return None;
        }
        j.map(|j| (i, j))
    }

    /// Analytic solution of the two-variable subproblem, clipped to the box.
    fn step(&mut self, i: usize, j: usize) {
        let (yi, yj, c) = (self.y[i], self.y[j], self.c);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let mut quad = self.k(i, i) + self.k(j, j) - 2.0 * self.k(i, j);
        if quad <= 0.0 {
            quad = TAU;
        }
        let (mut ai, mut aj) = (old_i, old_j);
        if yi != yj {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = sum;
                }
                if ai < 0.0 {
                    ai = 0.0;
                    aj = sum;
                }
            }
        }
        let snap = |a: f64| {
            if a < 1e-12 {
                0.0
            } else if a > c - 1e-12 {
                c
            } else {
                a
            }
        };
        ai = snap(ai);
        aj = snap(aj);
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.m {
            let qi = yi * self.y[t] * self.gram[i * self.m + t];
            let qj = yj * self.y[t] * self.gram[j * self.m + t];
            self.grad[t] += qi * di + qj * dj;
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
    }

    /// Bias from the free vectors, or the middle of the feasible interval
    /// when every alpha sits at a bound.
    fn bias(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum, mut free) = (0.0, 0usize);
        for t in 0..self.m {
            let yg = self.y[t] * self.grad[t];
            let at_upper = self.alpha[t] >= self.c;
            let at_lower = self.alpha[t] <= 0.0;
            if at_upper || at_lower {
                if (at_upper && self.y[t] < 0.0) || (at_lower && self.y[t] > 0.0) {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                sum += yg;
                free += 1;
            }
        }
        let rho = if free > 0 {
            sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if ub.is_finite() {
            ub
        } else {
            lb
        };
        -rho
    }
}

/// SMO over a precomputed Gram matrix. Each iteration takes the maximal
/// KKT-violating pair (second-order choice of the partner) and solves it
/// analytically; the run stops when the largest violation is below `tol`
/// or after `max_passes * m^2` subproblems. Fully deterministic.
pub fn smo_solve(gram: &[f64], y: &[f64], params: &SvmParams) -> SmoSolution {
    let m = y.len();
    let mut s = Smo {
        gram,
        y,
        m,
        c: params.c,
        alpha: vec![0.0; m],
        grad: vec![-1.0; m],
    };
    let cap = params.max_passes.max(1).saturating_mul(m * m);
    let mut solves = 0;
    let mut converged = false;
    while solves < cap {
        match s.select(params.tol) {
            Some((i, j)) => {
                s.step(i, j);
                solves += 1;
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        converged = s.select(params.tol).is_none();
    }
    SmoSolution {
        bias: s.bias(),
        alphas: s.alpha,
        converged,
        subproblems: solves,
    }
}

fn binary_from_solution(x: &[Vec<f64>], y: &[f64], sol: &SmoSolution, gamma: f64) -> SvmBinary {
    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alphas.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            coef.push(a * y[i]);
        }
    }
    SvmBinary {
        support_vectors,
        coef,
        bias: sol.bias,
        gamma,
    }
}

pub fn train_binary_smo(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<(SvmBinary, SmoSolution), SvmError> {
    params.validate()?;
    let d = check_rows(x)?;
    if y.len() != x.len() {
        return Err(SvmError::LabelCount(y.len(), x.len()));
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClassInput);
    }
    let gamma = params.gamma_for(d);
    let gram = gram_matrix(x, gamma);
    let sol = smo_solve(&gram, y, params);
    Ok((binary_from_solution(x, y, &sol, gamma), sol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmMulti {
    /// One machine per class, in ascending class order.
    pub machines: Vec<SvmBinary>,
    pub classes: Vec<i32>,
    pub n_features: usize,
    pub params: SvmParams,
}

pub fn train_ovr(x: &[Vec<f64>], y: &[i32], params: &SvmParams) -> Result<SvmMulti, SvmError> {
    params.validate()?;
    let d = check_rows(x)?;
    if y.len() != x.len() {
        return Err(SvmError::LabelCount(y.len(), x.len()));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::SingleClassInput);
    }
    let gamma = params.gamma_for(d);
    let gram = gram_matrix(x, gamma);
    let train_for = |c: i32| {
        let yb: Vec<f64> = y.iter().map(|&v| if v == c { 1.0 } else { -1.0 }).collect();
        let sol = smo_solve(&gram, &yb, params);
        binary_from_solution(x, &yb, &sol, gamma)
    };
    let machines = if classes.len() == 2 {
        // the second machine is the first with the sign flipped
        let first = train_for(classes[0]);
        let second = SvmBinary {
            coef: first.coef.iter().map(|c| -c).collect(),
            bias: -first.bias,
            ..first.clone()
        };
        vec![first, second]
    } else {
        classes.par_iter().map(|&c| train_for(c)).collect()
    };
    Ok(SvmMulti {
        machines,
        classes,
        n_features: d,
        params: params.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmPrediction {
    pub class: i32,
    /// `(class, f_c(x))` in class order.
    pub decisions: Vec<(i32, f64)>,
}

impl SvmMulti {
    pub fn predict(&self, x: &[f64]) -> Result<SvmPrediction, SvmError> {
        if x.len() != self.n_features {
            return Err(SvmError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let decisions: Vec<(i32, f64)> = self
            .classes
            .iter()
            .zip(&self.machines)
            .map(|(&c, m)| (c, m.decision(x)))
            .collect();
        let mut best = 0;
        for (i, d) in decisions.iter().enumerate() {
            if d.1 > decisions[best].1 {
                best = i;
            }
        }
        Ok(SvmPrediction {
            class: decisions[best].0,
            decisions,
        })
    }
}

pub fn predict_svm(model: &SvmMulti, x: &[f64]) -> Result<SvmPrediction, SvmError> {
    model.predict(x)
}
