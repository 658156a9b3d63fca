//! Minipatch ensemble engine.
//!
//! `B` models are trained on random (rows x features) subsamples. Their
//! predictions on every training row are cached once, after which
//! leave-one-out and leave-covariates-out predictions are masked averages
//! over that cache: scoring every pair or triple needs no further fitting.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{error, fit, FittedModel, LearnerSpec};
use crate::occlusion::{
    EstimatorTag, FeatureSet, InteractionScoreSamples, OcclusionPredictor, DEFAULT_MAX_ORDER,
};
use crate::rng::RngStream;
use crate::tabular::{Dataset, Task};

/// Default cap on the cached prediction matrix (bytes).
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinipatchConfig {
    /// Number of minipatches.
    pub b: usize,
    /// Rows per patch.
    pub n: usize,
    /// Features per patch.
    pub m: usize,
    pub learner: LearnerSpec,
    pub seed: u64,
    pub max_order: usize,
    /// Above this many bytes the prediction matrix is not materialised and
    /// predictions are recomputed per query.
    pub memory_budget: usize,
}

impl MinipatchConfig {
    pub fn new(b: usize, n: usize, m: usize, learner: LearnerSpec, seed: u64) -> Self {
        Self {
            b,
            n,
            m,
            learner,
            seed,
            max_order: DEFAULT_MAX_ORDER,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    /// Patch sizes as fractions of the data dimensions, rounded to the
    /// nearest count and clamped into the valid range.
    pub fn from_fractions(
        data_rows: usize,
        data_cols: usize,
        b: usize,
        n_frac: f64,
        m_frac: f64,
        learner: LearnerSpec,
        seed: u64,
    ) -> Self {
        let n = ((n_frac * data_rows as f64).round() as usize)
            .clamp(1, data_rows.saturating_sub(1).max(1));
        let m = ((m_frac * data_cols as f64).round() as usize)
            .clamp(2, data_cols.saturating_sub(1).max(2));
        Self::new(b, n, m, learner, seed)
    }

    pub fn validate(&self, data_rows: usize, data_cols: usize) -> Result<()> {
        self.learner.validate()?;
        if self.b == 0 {
            return Err(Error::InvalidConfig("B must be at least 1".into()));
        }
        if !(self.n >= 1 && self.n < data_rows) {
            return Err(Error::InvalidConfig(format!(
                "patch rows n = {} must satisfy 1 <= n < N = {data_rows}",
                self.n
            )));
        }
        if !(self.m >= 2 && self.m < data_cols) {
            return Err(Error::InvalidConfig(format!(
                "patch features m = {} must satisfy 2 <= m < M = {data_cols}",
                self.m
            )));
        }
        if self.max_order < 2 {
            return Err(Error::InvalidConfig("max_order must be at least 2".into()));
        }
        Ok(())
    }
}

/// Row-major bit matrix for O(1) membership tests.
#[derive(Debug, Clone)]
struct BitMatrix {
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn new(rows: usize, cols: usize) -> Self {
        let words = cols.div_ceil(64);
        Self {
            words,
            bits: vec![0; rows * words],
        }
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize) {
        self.bits[r * self.words + c / 64] |= 1 << (c % 64);
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.words + c / 64] & (1 << (c % 64)) != 0
    }
}

/// Work counters, for checking that scoring never refits.
#[derive(Debug, Default)]
pub struct Counters {
    fits: AtomicU64,
    predicts: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub fits: u64,
    pub predicts: u64,
}

#[derive(Debug)]
pub struct MinipatchEnsemble {
    config: MinipatchConfig,
    n_rows: usize,
    n_cols: usize,
    task: Task,
    y: Vec<f64>,
    data: Option<Dataset>,
    obs_sets: Vec<Vec<usize>>,
    feat_sets: Vec<Vec<usize>>,
    obs_mask: BitMatrix,
    feat_mask: BitMatrix,
    models: Vec<FittedModel>,
    /// `cache[i * b + k]` is patch k's prediction for row i.
    cache: Option<Vec<f64>>,
    counters: Counters,
}

/// Draws the patch index sets sequentially from `seed`, so they do not
/// depend on how fitting is scheduled.
pub fn draw_patches(
    n_rows: usize,
    n_cols: usize,
    cfg: &MinipatchConfig,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut rng = RngStream::with_stream(cfg.seed, 0).rng();
    let mut obs = Vec::with_capacity(cfg.b);
    let mut feats = Vec::with_capacity(cfg.b);
    for _ in 0..cfg.b {
        let mut rows = sample(&mut rng, n_rows, cfg.n).into_vec();
        let mut cols = sample(&mut rng, n_cols, cfg.m).into_vec();
        rows.sort_unstable();
        cols.sort_unstable();
        obs.push(rows);
        feats.push(cols);
    }
    (obs, feats)
}

/// Trains the ensemble and fills the prediction cache.
///
/// A patch whose fit fails aborts training with that error.
pub fn train_ensemble(data: &Dataset, cfg: &MinipatchConfig) -> Result<MinipatchEnsemble> {
    let (n_rows, n_cols) = (data.n_rows(), data.n_cols());
    cfg.validate(n_rows, n_cols)?;
    let (obs_sets, feat_sets) = draw_patches(n_rows, n_cols, cfg);
    let counters = Counters::default();
    let models = obs_sets
        .par_iter()
        .zip(feat_sets.par_iter())
        .map(|(rows, cols)| {
            counters.fits.fetch_add(1, Ordering::Relaxed);
            fit(&cfg.learner, data, rows, cols)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut obs_mask = BitMatrix::new(cfg.b, n_rows);
    let mut feat_mask = BitMatrix::new(cfg.b, n_cols);
    for (k, (rows, cols)) in obs_sets.iter().zip(&feat_sets).enumerate() {
        rows.iter().for_each(|&r| obs_mask.set(k, r));
        cols.iter().for_each(|&c| feat_mask.set(k, c));
    }

    let mut ens = MinipatchEnsemble {
        config: *cfg,
        n_rows,
        n_cols,
        task: data.task(),
        y: data.y().to_vec(),
        data: Some(data.clone()),
        obs_sets,
        feat_sets,
        obs_mask,
        feat_mask,
        models,
        cache: None,
        counters,
    };
    let bytes = cfg.b.saturating_mul(n_rows).saturating_mul(8);
    if bytes <= cfg.memory_budget {
        let b = cfg.b;
        let mut cache = vec![0.0; n_rows * b];
        cache.par_chunks_mut(b).enumerate().for_each(|(i, out)| {
            let row = data.row(i);
            for (slot, model) in out.iter_mut().zip(&ens.models) {
                *slot = model.predict(row);
            }
        });
        ens.counters
            .predicts
            .fetch_add((n_rows * b) as u64, Ordering::Relaxed);
        ens.cache = Some(cache);
    }
    Ok(ens)
}

impl MinipatchEnsemble {
    pub fn config(&self) -> &MinipatchConfig {
        &self.config
    }

    pub fn n_patches(&self) -> usize {
        self.config.b
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn obs_sets(&self) -> &[Vec<usize>] {
        &self.obs_sets
    }

    pub fn feat_sets(&self) -> &[Vec<usize>] {
        &self.feat_sets
    }

    pub fn models(&self) -> &[FittedModel] {
        &self.models
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            fits: self.counters.fits.load(Ordering::Relaxed),
            predicts: self.counters.predicts.load(Ordering::Relaxed),
        }
    }

    #[inline]
    pub fn in_patch(&self, k: usize, i: usize) -> bool {
        self.obs_mask.get(k, i)
    }

    #[inline]
    pub fn patch_uses(&self, k: usize, j: usize) -> bool {
        self.feat_mask.get(k, j)
    }

    #[inline]
    fn patch_avoids(&self, k: usize, excluded: &[usize]) -> bool {
        excluded.iter().all(|&j| !self.feat_mask.get(k, j))
    }

    /// Patch k's prediction for training row i.
    pub fn prediction(&self, k: usize, i: usize) -> Result<f64> {
        match &self.cache {
            Some(c) => Ok(c[i * self.config.b + k]),
            None => {
                let data = self.data.as_ref().ok_or(Error::ModelsUnavailable)?;
                self.counters.predicts.fetch_add(1, Ordering::Relaxed);
                Ok(self.models[k].predict(data.row(i)))
            }
        }
    }

    /// All B predictions for row i, from the cache or recomputed.
    fn row_predictions(&self, i: usize) -> Result<std::borrow::Cow<'_, [f64]>> {
        let b = self.config.b;
        match &self.cache {
            Some(c) => Ok(std::borrow::Cow::Borrowed(&c[i * b..(i + 1) * b])),
            None => {
                let data = self.data.as_ref().ok_or(Error::ModelsUnavailable)?;
                let row = data.row(i);
                self.counters
                    .predicts
                    .fetch_add(b as u64, Ordering::Relaxed);
                Ok(std::borrow::Cow::Owned(
                    self.models.iter().map(|m| m.predict(row)).collect(),
                ))
            }
        }
    }

    /// Expected number of patches leaving out row i and every feature in a
    /// set of size `t`.
    pub fn expected_coverage(&self, t: usize) -> f64 {
        let (n, m) = (self.config.n as f64, self.config.m as f64);
        let (big_n, big_m) = (self.n_rows as f64, self.n_cols as f64);
        let feat: f64 = (0..t)
            .map(|s| ((big_m - m - s as f64) / (big_m - s as f64)).max(0.0))
            .product();
        self.config.b as f64 * (1.0 - n / big_n) * feat
    }

    fn coverage_error(&self, i: usize, excluded: &[usize], qualifying: usize) -> Error {
        Error::InsufficientCoverage {
            row: i,
            excluded: excluded.to_vec(),
            qualifying,
            expected: self.expected_coverage(excluded.len()),
        }
    }

    /// Mean prediction for row i over patches that did not train on it.
    pub fn loo_predict(&self, i: usize) -> Result<f64> {
        self.loco_predict(i, &FeatureSet::empty())
    }

    /// Mean prediction for row i over patches that neither trained on row i
    /// nor used any feature in `excluded`.
    pub fn loco_predict(&self, i: usize, excluded: &FeatureSet) -> Result<f64> {
        let preds = self.row_predictions(i)?;
        let t = excluded.indices();
        let (mut sum, mut count) = (0.0, 0usize);
        for (k, p) in preds.iter().enumerate() {
            if !self.in_patch(k, i) && self.patch_avoids(k, t) {
                sum += p;
                count += 1;
            }
        }
        if count == 0 {
            return Err(self.coverage_error(i, t, 0));
        }
        Ok(sum / count as f64)
    }

    /// Full-ensemble prediction for an arbitrary row, averaging every patch
    /// that avoids `excluded`. Used for points outside the training data.
    pub fn aggregate_predict(&self, row: &[f64], excluded: &FeatureSet) -> Result<f64> {
        if self.models.is_empty() {
            return Err(Error::ModelsUnavailable);
        }
        let t = excluded.indices();
        let (mut sum, mut count) = (0.0, 0usize);
        for (k, model) in self.models.iter().enumerate() {
            if self.patch_avoids(k, t) {
                sum += model.predict(row);
                count += 1;
            }
        }
        self.counters
            .predicts
            .fetch_add(count as u64, Ordering::Relaxed);
        if count == 0 {
            return Err(self.coverage_error(usize::MAX, t, 0));
        }
        Ok(sum / count as f64)
    }

    /// Per-point interaction scores of `set` on rows outside the training
    /// data, using full-ensemble aggregates (no leave-one-out). Their mean
    /// over fresh draws estimates the minipatch inference target.
    pub fn score_points(&self, set: &FeatureSet, data: &Dataset) -> Result<Vec<f64>> {
        if self.models.is_empty() {
            return Err(Error::ModelsUnavailable);
        }
        let terms = set.signed_subsets();
        let task = data.task();
        (0..data.n_rows())
            .into_par_iter()
            .map(|i| {
                let row = data.row(i);
                let preds: Vec<f64> = self.models.iter().map(|m| m.predict(row)).collect();
                let masked_mean = |t: &[usize]| -> Result<f64> {
                    let (mut s, mut c) = (0.0, 0usize);
                    for (k, p) in preds.iter().enumerate() {
                        if self.patch_avoids(k, t) {
                            s += p;
                            c += 1;
                        }
                    }
                    if c == 0 {
                        return Err(self.coverage_error(usize::MAX, t, 0));
                    }
                    Ok(s / c as f64)
                };
                let y = data.y()[i];
                let base = error(task, y, masked_mean(&[])?);
                let mut acc = 0.0;
                for (sign, t) in &terms {
                    acc += sign * (error(task, y, masked_mean(t.indices())?) - base);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<f64>>>()
            .inspect(|_| {
                self.counters
                    .predicts
                    .fetch_add((data.n_rows() * self.config.b) as u64, Ordering::Relaxed);
            })
    }

    /// Per-row spread (max - min) of the patch predictions: an empirical
    /// look at how far apart minipatch predictors land. Diagnostic only.
    pub fn prediction_spread(&self) -> Result<Vec<f64>> {
        (0..self.n_rows)
            .map(|i| {
                let preds = self.row_predictions(i)?;
                let (lo, hi) = preds
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                        (lo.min(p), hi.max(p))
                    });
                Ok(hi - lo)
            })
            .collect()
    }

    /// Scores every feature set of the given order over all training rows.
    ///
    /// Orders 2 and 3 run over per-row running sums of the cached
    /// predictions (each patch adds to the sums of the features, pairs and
    /// triples it contains, and exclusion sums follow by
    /// inclusion-exclusion), so cost does not grow with the number of sets
    /// beyond the final combination step. Higher orders fall back to masked
    /// loops. Sets lacking coverage are reported in `failures`.
    pub fn all_sets_scores(&self, order: usize) -> Result<ScanResult> {
        if order < 2 {
            return Err(Error::InvalidFeatureSet(Vec::new()));
        }
        if order > self.config.max_order {
            return Err(Error::OrderUnsupported {
                order,
                max: self.config.max_order,
            });
        }
        let sets = FeatureSet::all_of_order(self.n_cols, order);
        let per_row: Vec<Vec<f64>> = match order {
            2 => (0..self.n_rows)
                .into_par_iter()
                .map(|i| self.pair_row(i))
                .collect::<Result<_>>()?,
            3 => (0..self.n_rows)
                .into_par_iter()
                .map(|i| self.triple_row(i))
                .collect::<Result<_>>()?,
            _ => (0..self.n_rows)
                .into_par_iter()
                .map(|i| self.generic_row(i, &sets))
                .collect::<Result<_>>()?,
        };
        let mut scores = Vec::with_capacity(sets.len());
        let mut failures = Vec::new();
        for (s, set) in sets.into_iter().enumerate() {
            let column: Vec<f64> = per_row.iter().map(|r| r[s]).collect();
            if let Some(i) = column.iter().position(|v| v.is_nan()) {
                failures.push((set.clone(), self.diagnose(i, &set)));
                continue;
            }
            scores.push(InteractionScoreSamples {
                feature_set: set,
                scores: column,
                estimator: EstimatorTag::Minipatch,
            });
        }
        Ok(ScanResult { scores, failures })
    }

    fn diagnose(&self, i: usize, set: &FeatureSet) -> Error {
        let mut worst: Option<(usize, Vec<usize>)> = None;
        for (_, t) in std::iter::once((1.0, FeatureSet::empty())).chain(set.signed_subsets()) {
            let q = (0..self.config.b)
                .filter(|&k| !self.in_patch(k, i) && self.patch_avoids(k, t.indices()))
                .count();
            if worst.as_ref().is_none_or(|(wq, _)| q < *wq) {
                worst = Some((q, t.indices().to_vec()));
            }
        }
        let (q, t) = worst.expect("at least the empty set");
        self.coverage_error(i, &t, q)
    }

    /// Running sums over the patches that exclude row i: everything, each
    /// feature, and each pair of features present in a patch.
    fn pair_row(&self, i: usize) -> Result<Vec<f64>> {
        let m = self.n_cols;
        let preds = self.row_predictions(i)?;
        let (mut tot, mut tot_c) = (0.0, 0i64);
        let mut fs = vec![0.0; m];
        let mut fc = vec![0i64; m];
        let mut ps = vec![0.0; m * m];
        let mut pc = vec![0i64; m * m];
        for (k, &p) in preds.iter().enumerate() {
            if self.in_patch(k, i) {
                continue;
            }
            tot += p;
            tot_c += 1;
            let cols = &self.feat_sets[k];
            for (a, &j) in cols.iter().enumerate() {
                fs[j] += p;
                fc[j] += 1;
                for &l in &cols[a + 1..] {
                    ps[j * m + l] += p;
                    pc[j * m + l] += 1;
                }
            }
        }
        let n_sets = m * (m - 1) / 2;
        if tot_c == 0 {
            return Ok(vec![f64::NAN; n_sets]);
        }
        let task = self.task;
        let y = self.y[i];
        let e0 = error(task, y, tot / tot_c as f64);
        let single: Vec<f64> = (0..m)
            .map(|j| {
                let c = tot_c - fc[j];
                if c == 0 {
                    f64::NAN
                } else {
                    error(task, y, (tot - fs[j]) / c as f64) - e0
                }
            })
            .collect();
        let mut out = Vec::with_capacity(n_sets);
        for j in 0..m {
            for l in j + 1..m {
                let c = tot_c - fc[j] - fc[l] + pc[j * m + l];
                if c == 0 {
                    out.push(f64::NAN);
                    continue;
                }
                let s = tot - fs[j] - fs[l] + ps[j * m + l];
                let d_jl = error(task, y, s / c as f64) - e0;
                out.push(single[j] + single[l] - d_jl);
            }
        }
        Ok(out)
    }

    fn triple_row(&self, i: usize) -> Result<Vec<f64>> {
        let m = self.n_cols;
        let preds = self.row_predictions(i)?;
        let (mut tot, mut tot_c) = (0.0, 0i64);
        let mut fs = vec![0.0; m];
        let mut fc = vec![0i64; m];
        let mut ps = vec![0.0; m * m];
        let mut pc = vec![0i64; m * m];
        let mut ts = vec![0.0; m * m * m];
        let mut tc = vec![0i64; m * m * m];
        for (k, &p) in preds.iter().enumerate() {
            if self.in_patch(k, i) {
                continue;
            }
            tot += p;
            tot_c += 1;
            let cols = &self.feat_sets[k];
            for (a, &j) in cols.iter().enumerate() {
                fs[j] += p;
                fc[j] += 1;
                for (b, &l) in cols.iter().enumerate().skip(a + 1) {
                    ps[j * m + l] += p;
                    pc[j * m + l] += 1;
                    for &r in &cols[b + 1..] {
                        ts[(j * m + l) * m + r] += p;
                        tc[(j * m + l) * m + r] += 1;
                    }
                }
            }
        }
        let n_sets = m * (m - 1) * (m - 2) / 6;
        if tot_c == 0 {
            return Ok(vec![f64::NAN; n_sets]);
        }
        let task = self.task;
        let y = self.y[i];
        let e0 = error(task, y, tot / tot_c as f64);
        let delta = |s: f64, c: i64| {
            if c == 0 {
                f64::NAN
            } else {
                error(task, y, s / c as f64) - e0
            }
        };
        let single: Vec<f64> = (0..m).map(|j| delta(tot - fs[j], tot_c - fc[j])).collect();
        let mut pair = vec![0.0; m * m];
        for j in 0..m {
            for l in j + 1..m {
                pair[j * m + l] = delta(
                    tot - fs[j] - fs[l] + ps[j * m + l],
                    tot_c - fc[j] - fc[l] + pc[j * m + l],
                );
            }
        }
        let mut out = Vec::with_capacity(n_sets);
        for j in 0..m {
            for l in j + 1..m {
                for r in l + 1..m {
                    let (jl, jr, lr) = (j * m + l, j * m + r, l * m + r);
                    let jlr = jl * m + r;
                    let s = tot - fs[j] - fs[l] - fs[r] + ps[jl] + ps[jr] + ps[lr] - ts[jlr];
                    let c = tot_c + pc[jl] + pc[jr] + pc[lr] - fc[j] - fc[l] - fc[r] - tc[jlr];
                    let d3 = delta(s, c);
                    out.push(
                        single[j] + single[l] + single[r] - pair[jl] - pair[jr] - pair[lr] + d3,
                    );
                }
            }
        }
        Ok(out)
    }

    fn generic_row(&self, i: usize, sets: &[FeatureSet]) -> Result<Vec<f64>> {
        let preds = self.row_predictions(i)?;
        let y = self.y[i];
        let masked = |t: &[usize]| {
            let (mut s, mut c) = (0.0, 0usize);
            for (k, &p) in preds.iter().enumerate() {
                if !self.in_patch(k, i) && self.patch_avoids(k, t) {
                    s += p;
                    c += 1;
                }
            }
            if c == 0 {
                None
            } else {
                Some(s / c as f64)
            }
        };
        let Some(full) = masked(&[]) else {
            return Ok(vec![f64::NAN; sets.len()]);
        };
        let e0 = error(self.task, y, full);
        Ok(sets
            .iter()
            .map(|set| {
                let mut acc = 0.0;
                for (sign, t) in set.signed_subsets() {
                    match masked(t.indices()) {
                        Some(p) => acc += sign * (error(self.task, y, p) - e0),
                        None => return f64::NAN,
                    }
                }
                acc
            })
            .collect())
    }

    /// Writes index sets, labels and the prediction cache in the `ILMP`
    /// binary layout (see the README). Models are not stored.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<ilmp dump>", e);
        let b = self.config.b;
        let mut buf = Vec::new();
        buf.extend_from_slice(DUMP_MAGIC);
        buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        for v in [self.n_rows, self.n_cols, b, self.config.n, self.config.m] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.push(match self.task {
            Task::Regression => 0,
            Task::Classification => 1,
        });
        buf.extend_from_slice(&self.config.seed.to_le_bytes());
        for rows in &self.obs_sets {
            rows.iter()
                .for_each(|&r| buf.extend_from_slice(&(r as u32).to_le_bytes()));
        }
        for cols in &self.feat_sets {
            cols.iter()
                .for_each(|&c| buf.extend_from_slice(&(c as u32).to_le_bytes()));
        }
        self.y
            .iter()
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        w.write_all(&buf).map_err(io)?;
        buf.clear();
        // patch-major, as the documented B x N matrix
        for k in 0..b {
            for i in 0..self.n_rows {
                buf.extend_from_slice(&self.prediction(k, i)?.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(io)?;
        Ok(())
    }

    /// Reads an `ILMP` dump. The result can score training rows (LOO/LOCO
    /// predictions, all-sets scans) but cannot predict new points.
    pub fn read_dump<R: Read>(mut r: R, learner: LearnerSpec) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("<ilmp dump>", e))?;
        let mut cur = Cursor {
            bytes: &bytes,
            at: 0,
        };
        if cur.take(4)? != DUMP_MAGIC {
            return Err(Error::BadDump("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != DUMP_VERSION {
            return Err(Error::BadDump(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = cur.u64()? as usize;
        }
        let [n_rows, n_cols, b, n, m] = dims;
        let task = match cur.take(1)?[0] {
            0 => Task::Regression,
            1 => Task::Classification,
            t => return Err(Error::BadDump(format!("unknown task tag {t}"))),
        };
        let seed = cur.u64()?;
        let cfg = MinipatchConfig::new(b, n, m, learner, seed);
        cfg.validate(n_rows, n_cols)
            .map_err(|e| Error::BadDump(e.to_string()))?;
        let mut read_sets = |count: usize, limit: usize| -> Result<Vec<Vec<usize>>> {
            (0..b)
                .map(|_| {
                    (0..count)
                        .map(|_| {
                            let v = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"))
                                as usize;
                            if v >= limit {
                                return Err(Error::BadDump(format!(
                                    "index {v} out of range {limit}"
                                )));
                            }
                            Ok(v)
                        })
                        .collect()
                })
                .collect()
        };
        let obs_sets = read_sets(n, n_rows)?;
        let feat_sets = read_sets(m, n_cols)?;
        let y = (0..n_rows).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let mut cache = vec![0.0; n_rows * b];
        for k in 0..b {
            for i in 0..n_rows {
                cache[i * b + k] = cur.f64()?;
            }
        }
        if cur.at != bytes.len() {
            return Err(Error::BadDump("trailing bytes".into()));
        }
        let mut obs_mask = BitMatrix::new(b, n_rows);
        let mut feat_mask = BitMatrix::new(b, n_cols);
        for (k, (rows, cols)) in obs_sets.iter().zip(&feat_sets).enumerate() {
            rows.iter().for_each(|&r| obs_mask.set(k, r));
            cols.iter().for_each(|&c| feat_mask.set(k, c));
        }
        Ok(Self {
            config: cfg,
            n_rows,
            n_cols,
            task,
            y,
            data: None,
            obs_sets,
            feat_sets,
            obs_mask,
            feat_mask,
            models: Vec::new(),
            cache: Some(cache),
            counters: Counters::default(),
        })
    }
}

const DUMP_MAGIC: &[u8; 4] = b"ILMP";
const DUMP_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(Error::BadDump("unexpected end of file".into()));
        }
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Output of an all-sets scan.
#[derive(Debug)]
pub struct ScanResult {
    pub scores: Vec<InteractionScoreSamples>,
    pub failures: Vec<(FeatureSet, Error)>,
}

impl OcclusionPredictor for MinipatchEnsemble {
    fn eval_count(&self) -> usize {
        self.n_rows
    }

    fn label(&self, i: usize) -> f64 {
        self.y[i]
    }

    fn task(&self) -> Task {
        self.task
    }

    fn max_order(&self) -> usize {
        self.config.max_order
    }

    fn estimator_tag(&self) -> EstimatorTag {
        EstimatorTag::Minipatch
    }

    fn predict_full(&self, i: usize) -> Result<f64> {
        self.loo_predict(i)
    }

    fn predict_excluding(&self, i: usize, excluded: &FeatureSet) -> Result<f64> {
        self.loco_predict(i, excluded)
    }
}
