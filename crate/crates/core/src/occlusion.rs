//! Occlusion scores: per-sample error differences when feature sets are
//! left out, and the inclusion-exclusion combinator that turns them into
//! interaction scores.
//!
//! Everything here is written against [`OcclusionPredictor`], which both the
//! data-splitting and the minipatch estimators implement. Scores stay
//! per-sample; aggregation happens in [`crate::inference`].

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::error;
use crate::tabular::Task;

/// Default largest interaction order an estimator serves.
pub const DEFAULT_MAX_ORDER: usize = 3;

/// Sorted, duplicate-free set of 0-based feature indices. Ordering is
/// lexicographic on the sorted indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSet(Vec<usize>);

impl FeatureSet {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        FeatureSet(v)
    }

    pub fn empty() -> Self {
        FeatureSet(Vec::new())
    }

    pub fn pair(j: usize, k: usize) -> Self {
        Self::new([j, k])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn intersects(&self, other: &[usize]) -> bool {
        other.iter().any(|&j| self.contains(j))
    }

    /// Checks every index is below `n_features`.
    pub fn check(&self, n_features: usize) -> Result<()> {
        if self.0.iter().any(|&j| j >= n_features) {
            return Err(Error::InvalidFeatureSet(self.0.clone()));
        }
        Ok(())
    }

    /// The subset selected by the bits of `mask` (bit b picks the b-th index).
    pub fn subset(&self, mask: u32) -> FeatureSet {
        FeatureSet(
            self.0
                .iter()
                .enumerate()
                .filter(|(b, _)| mask & (1 << b) != 0)
                .map(|(_, &j)| j)
                .collect(),
        )
    }

    /// All non-empty subsets with their inclusion-exclusion sign
    /// `(-1)^(|T|+1)`, in bitmask order.
    pub fn signed_subsets(&self) -> Vec<(f64, FeatureSet)> {
        assert!(self.len() < 32, "feature set too large to enumerate");
        (1u32..(1 << self.len()))
            .map(|mask| {
                let sign = if mask.count_ones() % 2 == 1 {
                    1.0
                } else {
                    -1.0
                };
                (sign, self.subset(mask))
            })
            .collect()
    }

    /// Every set of `order` distinct indices below `n_features`, lexicographic.
    pub fn all_of_order(n_features: usize, order: usize) -> Vec<FeatureSet> {
        let mut out = Vec::new();
        let mut current = Vec::with_capacity(order);
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<FeatureSet>) {
            if cur.len() == k {
                out.push(FeatureSet(cur.clone()));
                return;
            }
            for j in start..n {
                cur.push(j);
                rec(j + 1, n, k, cur, out);
                cur.pop();
            }
        }
        rec(0, n_features, order, &mut current, &mut out);
        out
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (n, j) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, ")")
    }
}

impl From<&[usize]> for FeatureSet {
    fn from(v: &[usize]) -> Self {
        FeatureSet::new(v.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "split")]
    Split,
    #[serde(rename = "mp")]
    Minipatch,
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorTag::Split => "split",
            EstimatorTag::Minipatch => "mp",
        })
    }
}

/// Full and feature-excluded predictions on a fixed set of labelled
/// evaluation samples.
///
/// `predict_excluding(i, &FeatureSet::empty())` must equal
/// `predict_full(i)`. Implementations are read-only after construction and
/// may be queried concurrently.
pub trait OcclusionPredictor: Sync {
    fn eval_count(&self) -> usize;
    fn label(&self, i: usize) -> f64;
    fn task(&self) -> Task;
    fn max_order(&self) -> usize;
    fn estimator_tag(&self) -> EstimatorTag;
    fn predict_full(&self, i: usize) -> Result<f64>;
    fn predict_excluding(&self, i: usize, excluded: &FeatureSet) -> Result<f64>;
}

/// Per-sample interaction scores for one feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionScoreSamples {
    pub feature_set: FeatureSet,
    pub scores: Vec<f64>,
    pub estimator: EstimatorTag,
}

impl InteractionScoreSamples {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// `Error(y_i, f^{-T}(x_i)) - Error(y_i, f(x_i))` for every evaluation sample.
pub fn delta_samples<P: OcclusionPredictor + ?Sized>(
    pred: &P,
    excluded: &FeatureSet,
) -> Result<Vec<f64>> {
    if excluded.is_empty() {
        return Err(Error::InvalidFeatureSet(Vec::new()));
    }
    if excluded.len() > pred.max_order() {
        return Err(Error::OrderUnsupported {
            order: excluded.len(),
            max: pred.max_order(),
        });
    }
    let task = pred.task();
    (0..pred.eval_count())
        .into_par_iter()
        .map(|i| {
            let y = pred.label(i);
            let full = error(task, y, pred.predict_full(i)?);
            let reduced = error(task, y, pred.predict_excluding(i, excluded)?);
            Ok(reduced - full)
        })
        .collect()
}

/// Interaction score of `set` per sample:
/// `sum over non-empty T of set, (-1)^(|T|+1) * delta_T`.
pub fn iloco_samples<P: OcclusionPredictor + ?Sized>(
    pred: &P,
    set: &FeatureSet,
) -> Result<InteractionScoreSamples> {
    if set.len() < 2 {
        return Err(Error::InvalidFeatureSet(set.indices().to_vec()));
    }
    if set.len() > pred.max_order() {
        return Err(Error::OrderUnsupported {
            order: set.len(),
            max: pred.max_order(),
        });
    }
    let terms = set.signed_subsets();
    let task = pred.task();
    let scores = (0..pred.eval_count())
        .into_par_iter()
        .map(|i| {
            let y = pred.label(i);
            let base = error(task, y, pred.predict_full(i)?);
            let mut acc = 0.0;
            for (sign, t) in &terms {
                acc += sign * (error(task, y, pred.predict_excluding(i, t)?) - base);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InteractionScoreSamples {
        feature_set: set.clone(),
        scores,
        estimator: pred.estimator_tag(),
    })
}

fn desc_then_lex(a: &(FeatureSet, f64), b: &(FeatureSet, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Sets ordered by mean score, highest first; ties go to the
/// lexicographically smaller set.
pub fn rank_pairs(results: &[(FeatureSet, f64)]) -> Vec<(FeatureSet, f64)> {
    let mut out = results.to_vec();
    out.sort_by(desc_then_lex);
    out
}

/// The set with the most negative mean score (lexicographic on ties).
/// Strongly negative scores flag important features that substitute for
/// each other.
pub fn detect_correlated_pair(results: &[(FeatureSet, f64)]) -> Option<FeatureSet> {
    results
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .map(|(s, _)| s.clone())
}

#[cfg(test)]
pub(crate) mod stub {
    use super::*;
    use std::collections::HashMap;

    /// Table-driven predictor for tests.
    pub struct StubPredictor {
        pub task: Task,
        pub labels: Vec<f64>,
        pub full: Vec<f64>,
        pub excluded: HashMap<FeatureSet, Vec<f64>>,
        pub max_order: usize,
    }

    impl OcclusionPredictor for StubPredictor {
        fn eval_count(&self) -> usize {
            self.labels.len()
        }
        fn label(&self, i: usize) -> f64 {
            self.labels[i]
        }
        fn task(&self) -> Task {
            self.task
        }
        fn max_order(&self) -> usize {
            self.max_order
        }
        fn estimator_tag(&self) -> EstimatorTag {
            EstimatorTag::Split
        }
        fn predict_full(&self, i: usize) -> Result<f64> {
            Ok(self.full[i])
        }
        fn predict_excluding(&self, i: usize, t: &FeatureSet) -> Result<f64> {
            if t.is_empty() {
                return Ok(self.full[i]);
            }
            self.excluded
                .get(t)
                .map(|v| v[i])
                .ok_or_else(|| Error::MissingExclusionModel(t.indices().to_vec()))
        }
    }
}
