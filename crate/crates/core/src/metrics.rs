//! Correlation metrics and the log-ratio robustness metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor for records whose score did not move.
pub const R_EPSILON: f64 = 1e-8;

/// Paired predictions and references of equal length ≥ 2, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePairs<T = f64> {
    predictions: Vec<T>,
    references: Vec<T>,
}

impl<T: Scalar> ScorePairs<T> {
    pub fn new(predictions: Vec<T>, references: Vec<T>) -> Result<Self> {
        if predictions.len() != references.len() {
            return Err(Error::Degenerate(format!(
                "length mismatch: {} predictions, {} references",
                predictions.len(),
                references.len()
            )));
        }
        if predictions.len() < 2 {
            return Err(Error::Degenerate("need at least two pairs".into()));
        }
        if predictions.iter().chain(&references).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite value".into()));
        }
        Ok(Self {
            predictions,
            references,
        })
    }

    pub fn predictions(&self) -> &[T] {
        &self.predictions
    }
    pub fn references(&self) -> &[T] {
        &self.references
    }

    pub fn plcc(&self) -> Result<T> {
        pearson(&self.predictions, &self.references)
    }

    pub fn srcc(&self) -> Result<T> {
        pearson(&average_ranks(&self.predictions), &average_ranks(&self.references))
    }
}

pub fn plcc<T: Scalar>(predictions: &[T], references: &[T]) -> Result<T> {
    ScorePairs::new(predictions.to_vec(), references.to_vec())?.plcc()
}

pub fn srcc<T: Scalar>(predictions: &[T], references: &[T]) -> Result<T> {
    ScorePairs::new(predictions.to_vec(), references.to_vec())?.srcc()
}

fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let rank = T::from_usize_lossy(i + j + 1) / T::lit(2.0);
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// One attacked video: clean score, adversarial score, attack target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRecord {
    pub f_orig: f64,
    pub f_adv: f64,
    pub tar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RMetric {
    pub value: f64,
    /// Records used in the mean.
    pub used: usize,
    /// Records dropped because `tar == f_orig`.
    pub excluded: usize,
}

/// `R = (1/K)·Σ ln(|f_orig − tar| / max(|f_orig − f_adv|, ε))`.
///
/// Overshooting attacks give negative terms; they are kept as-is.
pub fn r_metric(records: &[RobustnessRecord]) -> Result<RMetric> {
    let mut sum = 0.0;
    let mut used = 0;
    for r in records {
        if !(r.f_orig.is_finite() && r.f_adv.is_finite() && r.tar.is_finite()) {
            return Err(Error::Degenerate("non-finite robustness record".into()));
        }
        if r.tar == r.f_orig {
            continue;
        }
        let gap = (r.f_orig - r.tar).abs();
        let moved = (r.f_orig - r.f_adv).abs().max(R_EPSILON);
        sum += (gap / moved).ln();
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(format!(
            "all {} robustness records excluded",
            records.len()
        )));
    }
    Ok(RMetric {
        value: sum / used as f64,
        used,
        excluded: records.len() - used,
    })
}
