//! Quadratic weighted kappa and accuracy.

use serde::{Deserialize, Serialize};

use crate::corpus::ScoreScale;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("rating vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rating vectors use different scales")]
    ScaleMismatch,
    #[error("rating {rating} outside scale [{min}, {max}]")]
    OutOfScale { rating: i32, min: i32, max: i32 },
    #[error("score scale needs at least 2 levels, got {0}")]
    DegenerateScale(usize),
    #[error("expected weighted disagreement is zero while observed is {0}")]
    DegenerateAgreement(f64),
    #[error("rating vectors are empty")]
    Empty,
}

/// Ratings of one rater on a fixed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingVector {
    ratings: Vec<i32>,
    scale: ScoreScale,
}

impl RatingVector {
    pub fn new(ratings: Vec<i32>, scale: ScoreScale) -> Result<Self, MetricError> {
        if ratings.is_empty() {
            return Err(MetricError::Empty);
        }
        if let Some(&r) = ratings.iter().find(|&&r| !scale.contains(r)) {
            return Err(MetricError::OutOfScale {
                rating: r,
                min: scale.min_score,
                max: scale.max_score,
            });
        }
        Ok(Self { ratings, scale })
    }

    pub fn ratings(&self) -> &[i32] {
        &self.ratings
    }

    pub fn scale(&self) -> ScoreScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }
}

/// Matrices behind one kappa evaluation, stored row-major as nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QwkBreakdown {
    pub weights: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
    pub expected: Vec<Vec<f64>>,
    pub kappa: f64,
}

/// `W[i][j] = (i - j)^2 / (n - 1)^2`.
pub fn quadratic_weights(n_levels: usize) -> Result<Vec<Vec<f64>>, MetricError> {
    if n_levels < 2 {
        return Err(MetricError::DegenerateScale(n_levels));
    }
    let denom = ((n_levels - 1) * (n_levels - 1)) as f64;
    Ok((0..n_levels)
        .map(|i| {
            (0..n_levels)
                .map(|j| {
                    let d = i as f64 - j as f64;
                    d * d / denom
                })
                .collect()
        })
        .collect())
}

pub fn qwk(a: &RatingVector, b: &RatingVector) -> Result<QwkBreakdown, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.scale.min_score != b.scale.min_score || a.scale.max_score != b.scale.max_score {
        return Err(MetricError::ScaleMismatch);
    }
    let scale = a.scale;
    let n = scale.n_levels();
    let weights = quadratic_weights(n)?;

    let mut observed = vec![vec![0.0; n]; n];
    let mut hist_a = vec![0.0; n];
    let mut hist_b = vec![0.0; n];
    for (&ra, &rb) in a.ratings.iter().zip(&b.ratings) {
        let i = (ra - scale.min_score) as usize;
        let j = (rb - scale.min_score) as usize;
        observed[i][j] += 1.0;
        hist_a[i] += 1.0;
        hist_b[j] += 1.0;
    }
    let total = a.len() as f64;
    let expected: Vec<Vec<f64>> = hist_a
        .iter()
        .map(|&ha| hist_b.iter().map(|&hb| ha * hb / total).collect())
        .collect();

    // Summing each (i, j)/(j, i) pair together keeps kappa exactly
    // symmetric in its arguments; the diagonal carries zero weight.
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            num += weights[i][j] * (observed[i][j] + observed[j][i]);
            den += weights[i][j] * (hist_a[i] * hist_b[j] + hist_a[j] * hist_b[i]);
        }
    }
    let den = den / total;
    let kappa = if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            return Err(MetricError::DegenerateAgreement(num));
        }
    } else {
        1.0 - num / den
    };
    Ok(QwkBreakdown {
        weights,
        observed,
        expected,
        kappa,
    })
}

/// Kappa of two plain score slices on `scale`.
pub fn qwk_scores(gold: &[i32], predicted: &[i32], scale: ScoreScale) -> Result<f64, MetricError> {
    let a = RatingVector::new(gold.to_vec(), scale)?;
    let b = RatingVector::new(predicted.to_vec(), scale)?;
    Ok(qwk(&a, &b)?.kappa)
}

pub fn accuracy(a: &[i32], b: &[i32]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(hits as f64 / a.len() as f64)
}
