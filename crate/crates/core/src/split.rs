//! Data-splitting estimator: full and feature-excluded models trained on
//! D1, evaluated on D2.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learners::{error, fit, FittedModel, LearnerSpec};
use crate::occlusion::{EstimatorTag, FeatureSet, OcclusionPredictor};
use crate::tabular::{Dataset, SplitPair, Task};

/// One model per required exclusion set, all trained on the same D1 rows.
#[derive(Debug)]
pub struct SplitFit {
    models: BTreeMap<FeatureSet, FittedModel>,
    /// Predictions of every model on every D2 row, keyed like `models`.
    test_preds: BTreeMap<FeatureSet, Vec<f64>>,
    split: SplitPair,
    spec: LearnerSpec,
    max_order: usize,
}

/// The distinct exclusion sets needed to score `targets`: the empty set plus
/// every non-empty subset of every target.
pub fn required_exclusions(targets: &[FeatureSet]) -> BTreeSet<FeatureSet> {
    let mut out = BTreeSet::new();
    out.insert(FeatureSet::empty());
    for t in targets {
        for (_, sub) in t.signed_subsets() {
            out.insert(sub);
        }
    }
    out
}

/// Trains the models needed for `targets` on the training half.
///
/// Shared subsets (the full model, singletons shared between pairs) are
/// fitted once. Each reduced model is trained on the columns outside its
/// exclusion set.
pub fn fit_split(split: SplitPair, spec: &LearnerSpec, targets: &[FeatureSet]) -> Result<SplitFit> {
    spec.validate()?;
    let n_cols = split.train.n_cols();
    for t in targets {
        t.check(n_cols)?;
        if t.len() >= n_cols {
            return Err(Error::InvalidFeatureSet(t.indices().to_vec()));
        }
    }
    let max_order = targets.iter().map(FeatureSet::len).max().unwrap_or(0);
    let exclusions: Vec<FeatureSet> = required_exclusions(targets).into_iter().collect();
    let rows: Vec<usize> = (0..split.train.n_rows()).collect();
    let fitted = exclusions
        .par_iter()
        .map(|t| {
            let cols: Vec<usize> = (0..n_cols).filter(|&c| !t.contains(c)).collect();
            let model = fit(spec, &split.train, &rows, &cols)?;
            let preds = (0..split.test.n_rows())
                .map(|i| model.predict(split.test.row(i)))
                .collect::<Vec<f64>>();
            Ok((t.clone(), model, preds))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut models = BTreeMap::new();
    let mut test_preds = BTreeMap::new();
    for (t, model, preds) in fitted {
        test_preds.insert(t.clone(), preds);
        models.insert(t, model);
    }
    Ok(SplitFit {
        models,
        test_preds,
        split,
        spec: *spec,
        max_order,
    })
}

impl SplitFit {
    pub fn model_count(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, excluded: &FeatureSet) -> Option<&FittedModel> {
        self.models.get(excluded)
    }

    pub fn exclusion_sets(&self) -> impl Iterator<Item = &FeatureSet> {
        self.models.keys()
    }

    pub fn split(&self) -> &SplitPair {
        &self.split
    }

    pub fn learner(&self) -> &LearnerSpec {
        &self.spec
    }

    /// Per-point interaction scores of `set` on arbitrary labelled rows,
    /// using the D1 models. Averaging these over fresh draws estimates the
    /// split estimator's inference target.
    pub fn score_points(&self, set: &FeatureSet, data: &Dataset) -> Result<Vec<f64>> {
        let terms = set.signed_subsets();
        let full = self
            .model(&FeatureSet::empty())
            .ok_or_else(|| Error::MissingExclusionModel(Vec::new()))?;
        let reduced = terms
            .iter()
            .map(|(s, t)| {
                self.model(t)
                    .map(|m| (*s, m))
                    .ok_or_else(|| Error::MissingExclusionModel(t.indices().to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        let task = data.task();
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| {
                let row = data.row(i);
                let y = data.y()[i];
                let base = error(task, y, full.predict(row));
                reduced
                    .iter()
                    .map(|(s, m)| s * (error(task, y, m.predict(row)) - base))
                    .sum()
            })
            .collect())
    }
}

impl OcclusionPredictor for SplitFit {
    fn eval_count(&self) -> usize {
        self.split.test.n_rows()
    }

    fn label(&self, i: usize) -> f64 {
        self.split.test.y()[i]
    }

    fn task(&self) -> Task {
        self.split.test.task()
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn estimator_tag(&self) -> EstimatorTag {
        EstimatorTag::Split
    }

    fn predict_full(&self, i: usize) -> Result<f64> {
        Ok(self.test_preds[&FeatureSet::empty()][i])
    }

    fn predict_excluding(&self, i: usize, excluded: &FeatureSet) -> Result<f64> {
        self.test_preds
            .get(excluded)
            .map(|p| p[i])
            .ok_or_else(|| Error::MissingExclusionModel(excluded.indices().to_vec()))
    }
}
