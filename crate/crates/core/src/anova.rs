//! Ground-truth models with a known functional-ANOVA decomposition.
//!
//! Components are monomials `c_u * prod_{j in u} X_j` over distinct
//! coordinates of `X ~ N(0, I)`, so they are zero-mean and mutually
//! uncorrelated and `E[g_u^2] = c_u^2`. Population interaction scores are
//! available three ways: a closed form (unclipped models), Monte Carlo with
//! oracle reduced predictors, and deterministic numeric integration
//! (classification, including clipped probabilities).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::normal_cdf;
use crate::learners::error;
use crate::occlusion::FeatureSet;
use crate::rng::RngStream;
use crate::tabular::{Dataset, Task};

/// Probability range classification truths are clamped into.
pub const PROB_CLIP: (f64, f64) = (0.01, 0.99);

/// Monte Carlo draws per independently seeded chunk.
const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub features: FeatureSet,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaModel {
    pub components: Vec<Component>,
    pub n_features: usize,
    pub intercept: f64,
}

impl AnovaModel {
    /// Components given as `(coefficient, feature indices)`; duplicate
    /// feature sets are rejected since they would not be orthogonal.
    pub fn new(n_features: usize, intercept: f64, components: &[(f64, &[usize])]) -> Result<Self> {
        let mut out: Vec<Component> = Vec::with_capacity(components.len());
        for &(coef, feats) in components {
            let features = FeatureSet::from(feats);
            if features.is_empty() || features.len() != feats.len() {
                return Err(Error::InvalidSpec(format!(
                    "component {feats:?} must list distinct features"
                )));
            }
            features.check(n_features)?;
            if out.iter().any(|c| c.features == features) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate component {features}"
                )));
            }
            if !coef.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "coefficient {coef} is not finite"
                )));
            }
            out.push(Component { features, coef });
        }
        Ok(Self {
            components: out,
            n_features,
            intercept,
        })
    }

    /// Value of one component at `x`.
    pub fn component_value(&self, c: &Component, x: &[f64]) -> f64 {
        c.coef * c.features.indices().iter().map(|&j| x[j]).product::<f64>()
    }

    /// Unclipped sum of the components disjoint from `excluded`, plus the
    /// intercept.
    fn raw(&self, x: &[f64], excluded: &FeatureSet) -> f64 {
        self.intercept
            + self
                .components
                .iter()
                .filter(|c| !c.features.intersects(excluded.indices()))
                .map(|c| self.component_value(c, x))
                .sum::<f64>()
    }

    /// True regression function (`excluded` empty) or its oracle reduction.
    /// For classification the result is clamped into [`PROB_CLIP`].
    pub fn predict(&self, x: &[f64], excluded: &FeatureSet, task: Task) -> f64 {
        let v = self.raw(x, excluded);
        match task {
            Task::Regression => v,
            Task::Classification => v.clamp(PROB_CLIP.0, PROB_CLIP.1),
        }
    }

    /// Whether clamping can bind anywhere. Products of Gaussians are
    /// unbounded, so any non-constant model is clipped with some (maybe tiny)
    /// probability.
    pub fn is_clipped(&self, task: Task) -> bool {
        task == Task::Classification
    }

    /// Draws `n` rows with `X ~ N(0, I)` and labels from the model.
    pub fn sample<R: Rng>(&self, n: usize, task: Task, rng: &mut R) -> Result<Dataset> {
        let m = self.n_features;
        let mut x = Vec::with_capacity(n * m);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let start = x.len();
            x.extend((0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let f = self.predict(&x[start..], &FeatureSet::empty(), task);
            y.push(match task {
                Task::Regression => f + rng.sample::<f64, _>(StandardNormal),
                Task::Classification => f64::from(u8::from(rng.random::<f64>() < f)),
            });
        }
        Dataset::from_rows(x, m, y, task)
    }
}

/// Oracle reduced predictor: the components disjoint from `excluded`.
pub fn oracle_reduced_predict(
    model: &AnovaModel,
    x: &[f64],
    excluded: &FeatureSet,
    task: Task,
) -> f64 {
    model.predict(x, excluded, task)
}

/// Monte Carlo estimate of the population interaction score of `set` and its
/// standard error.
///
/// Draws are split into fixed-size chunks with their own streams, so the
/// result does not depend on the number of threads.
pub fn population_iloco_mc(
    model: &AnovaModel,
    set: &FeatureSet,
    task: Task,
    n_mc: usize,
    rng: RngStream,
) -> Result<(f64, f64)> {
    set.check(model.n_features)?;
    if set.len() < 2 {
        return Err(Error::InvalidFeatureSet(set.indices().to_vec()));
    }
    if n_mc < 2 {
        return Err(Error::InvalidSpec("n_mc must be at least 2".into()));
    }
    let terms = set.signed_subsets();
    let m = model.n_features;
    let n_chunks = n_mc.div_ceil(MC_CHUNK);
    let (sum, sum_sq) = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng.child(c as u64).rng();
            let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut x = vec![0.0; m];
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..len {
                x.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                let f = model.predict(&x, &FeatureSet::empty(), task);
                let y = match task {
                    Task::Regression => f + r.sample::<f64, _>(StandardNormal),
                    Task::Classification => f64::from(u8::from(r.random::<f64>() < f)),
                };
                let base = error(task, y, f);
                let h: f64 = terms
                    .iter()
                    .map(|(sign, t)| sign * (error(task, y, model.predict(&x, t, task)) - base))
                    .sum();
                s += h;
                ss += h * h;
            }
            (s, ss)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Sum of `c_u^2` over components containing `set`, doubled for
/// classification. Exact only for unclipped models.
pub fn closed_form_iloco(model: &AnovaModel, set: &FeatureSet, task: Task) -> Result<f64> {
    if model.is_clipped(task) {
        return Err(Error::ClippedModelUnsupported);
    }
    let s: f64 = model
        .components
        .iter()
        .filter(|c| set.indices().iter().all(|&j| c.features.contains(j)))
        .map(|c| c.coef * c.coef)
        .sum();
    Ok(match task {
        Task::Regression => s,
        Task::Classification => 2.0 * s,
    })
}

/// Settings for [`numeric_iloco`].
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    /// Outer integration range `[-half_width, half_width]` per coordinate.
    pub half_width: f64,
    pub panels: usize,
    pub nodes_per_panel: usize,
}

impl Quadrature {
    /// Resolution giving better than 1e-6 absolute accuracy on the reference
    /// models while keeping the outer grid at most about 2 million points.
    pub fn for_outer_dims(dims: usize) -> Self {
        Self {
            half_width: 8.0,
            panels: match dims {
                0 | 1 => 128,
                2 => 32,
                _ => 16,
            },
            nodes_per_panel: 8,
        }
    }
}

/// Deterministic population interaction score by numeric integration.
///
/// Only the coordinates the model uses are integrated. Because the model is
/// multilinear, every (clipped) prediction is piecewise affine in the last
/// coordinate, so that coordinate is integrated exactly against the normal
/// density between clip breakpoints; the others use composite
/// Gauss-Legendre rules. The label noise is integrated out analytically:
/// squared error gives `E[(r - f)^2]` per excluded set, absolute error with
/// `f, r` in [0, 1] gives `E[(r - f)(1 - 2f)]`.
pub fn numeric_iloco(model: &AnovaModel, set: &FeatureSet, task: Task) -> Result<f64> {
    let outer = used_features(model).len().saturating_sub(1);
    numeric_iloco_with(model, set, task, Quadrature::for_outer_dims(outer))
}

fn used_features(model: &AnovaModel) -> Vec<usize> {
    let mut v: Vec<usize> = model
        .components
        .iter()
        .flat_map(|c| c.features.indices().iter().copied())
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// [`numeric_iloco`] with an explicit outer quadrature.
pub fn numeric_iloco_with(
    model: &AnovaModel,
    set: &FeatureSet,
    task: Task,
    quad: Quadrature,
) -> Result<f64> {
    set.check(model.n_features)?;
    if set.len() < 2 {
        return Err(Error::InvalidFeatureSet(set.indices().to_vec()));
    }
    let used = used_features(model);
    let terms = set.signed_subsets();
    let Some((&last, outer)) = used.split_last() else {
        // constant model: every reduced predictor equals the full one
        return Ok(0.0);
    };
    let (nodes, weights) = composite_legendre(quad);
    let density: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt())
        .collect();
    let k = nodes.len();
    let total = k.pow(outer.len() as u32);
    let value = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut x = vec![0.0; model.n_features];
            let mut rem = flat;
            let mut w = 1.0;
            for &j in outer {
                let idx = rem % k;
                rem /= k;
                x[j] = nodes[idx];
                w *= density[idx];
            }
            w * inner_exact(model, &mut x, last, task, &terms)
        })
        .sum();
    Ok(value)
}

/// Gaussian expectation over coordinate `last` of the signed excess-error
/// combination, with the other coordinates fixed in `x`.
fn inner_exact(
    model: &AnovaModel,
    x: &mut [f64],
    last: usize,
    task: Task,
    terms: &[(f64, FeatureSet)],
) -> f64 {
    let affine = |x: &mut [f64], t: &FeatureSet| {
        x[last] = 0.0;
        let a = model.raw(x, t);
        x[last] = 1.0;
        (a, model.raw(x, t) - a)
    };
    let full = affine(x, &FeatureSet::empty());
    let reduced: Vec<(f64, (f64, f64))> = terms.iter().map(|(s, t)| (*s, affine(x, t))).collect();
    let (lo_c, hi_c) = match task {
        Task::Regression => (f64::NEG_INFINITY, f64::INFINITY),
        Task::Classification => PROB_CLIP,
    };
    let mut cuts = vec![f64::NEG_INFINITY, f64::INFINITY];
    for &(a, b) in std::iter::once(&full).chain(reduced.iter().map(|(_, ab)| ab)) {
        if b != 0.0 && task == Task::Classification {
            cuts.push((lo_c - a) / b);
            cuts.push((hi_c - a) / b);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let (l, u) = (w[0], w[1]);
        if u <= l {
            continue;
        }
        let mid = if l.is_finite() && u.is_finite() {
            0.5 * (l + u)
        } else if l.is_finite() {
            l + 1.0
        } else if u.is_finite() {
            u - 1.0
        } else {
            0.0
        };
        // affine piece valid on (l, u): clamped pieces are constants
        let piece = |(a, b): (f64, f64)| {
            let v = a + b * mid;
            if v < lo_c {
                (lo_c, 0.0)
            } else if v > hi_c {
                (hi_c, 0.0)
            } else {
                (a, b)
            }
        };
        let (fa, fb) = piece(full);
        let mom = gaussian_moments(l, u);
        for &(sign, ab) in &reduced {
            let (ra, rb) = piece(ab);
            // product of affine pieces p(t) q(t)
            let (pa, pb) = (ra - fa, rb - fb);
            let (qa, qb) = match task {
                Task::Regression => (pa, pb),
                Task::Classification => (1.0 - 2.0 * fa, -2.0 * fb),
            };
            acc += sign * (pa * qa * mom.0 + (pa * qb + pb * qa) * mom.1 + pb * qb * mom.2);
        }
    }
    acc
}

/// `(int phi, int t phi, int t^2 phi)` over `[l, u]` for the standard normal
/// density `phi`.
fn gaussian_moments(l: f64, u: f64) -> (f64, f64, f64) {
    let phi = |t: f64| {
        if t.is_finite() {
            (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
        } else {
            0.0
        }
    };
    let tphi = |t: f64| if t.is_finite() { t * phi(t) } else { 0.0 };
    let m0 = normal_cdf(u) - normal_cdf(l);
    let m1 = phi(l) - phi(u);
    let m2 = m0 + tphi(l) - tphi(u);
    (m0, m1, m2)
}

/// Gauss-Legendre nodes and weights on [-1, 1] from the eigen-decomposition
/// of the Jacobi matrix (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k - 1, k)] = beta;
        j[(k, k - 1)] = beta;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn composite_legendre(q: Quadrature) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(q.nodes_per_panel);
    let h = 2.0 * q.half_width / q.panels as f64;
    let mut nodes = Vec::with_capacity(q.panels * x.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for p in 0..q.panels {
        let centre = -q.half_width + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(centre + 0.5 * h * xi);
            weights.push(0.5 * h * wi);
        }
    }
    (nodes, weights)
}

/// One row of an oracle comparison.
#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub model: String,
    pub set: FeatureSet,
    pub task: Task,
    pub mc: f64,
    pub mc_se: f64,
    /// Closed form for regression, numeric integral for classification.
    pub reference: f64,
    pub within_3se: bool,
}

/// Reference models used by the oracle check: `c X1 X2` for c in {1, 2} and
/// `3 X1 X2 + X1 X2 X3 + 5 X4`, all with M = 10.
pub fn reference_models(task: Task) -> Vec<(String, AnovaModel)> {
    let g0 = match task {
        Task::Regression => 0.0,
        Task::Classification => 0.5,
    };
    vec![
        (
            "1*X1X2".into(),
            AnovaModel::new(10, g0, &[(1.0, &[0, 1])]).expect("valid"),
        ),
        (
            "2*X1X2".into(),
            AnovaModel::new(10, g0, &[(2.0, &[0, 1])]).expect("valid"),
        ),
        (
            "3*X1X2+X1X2X3+5*X4".into(),
            AnovaModel::new(10, g0, &[(3.0, &[0, 1]), (1.0, &[0, 1, 2]), (5.0, &[3])])
                .expect("valid"),
        ),
    ]
}

/// Compares Monte Carlo against the exact references for every reference
/// model and every set of the given order that the models involve
/// ({1,2} for order 2, {1,2,3} for order 3).
pub fn oracle_check(order: usize, task: Task, n_mc: usize, seed: u64) -> Result<Vec<OracleRow>> {
    let set = match order {
        2 => FeatureSet::pair(0, 1),
        3 => FeatureSet::new([0, 1, 2]),
        _ => return Err(Error::OrderUnsupported { order, max: 3 }),
    };
    let mut rows = Vec::new();
    for (i, (name, model)) in reference_models(task).into_iter().enumerate() {
        let (mc, mc_se) = population_iloco_mc(
            &model,
            &set,
            task,
            n_mc,
            RngStream::with_stream(seed, i as u64),
        )?;
        let reference = match task {
            Task::Regression => closed_form_iloco(&model, &set, task)?,
            Task::Classification => numeric_iloco(&model, &set, task)?,
        };
        rows.push(OracleRow {
            model: name,
            set: set.clone(),
            task,
            mc,
            mc_se,
            reference,
            within_3se: (mc - reference).abs() <= 3.0 * mc_se,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed(g0: f64) -> AnovaModel {
        AnovaModel::new(10, g0, &[(3.0, &[0, 1]), (1.0, &[0, 1, 2]), (5.0, &[3])]).unwrap()
    }

    #[test]
    fn reduced_predictor_drops_touching_components() {
        let m = AnovaModel::new(4, 0.25, &[(1.0, &[0, 1]), (1.0, &[2])]).unwrap();
        let x = [2.0, 3.0, 5.0, 7.0];
        let r = Task::Regression;
        assert_eq!(
            oracle_reduced_predict(&m, &x, &FeatureSet::new([0]), r),
            5.25
        );
        assert_eq!(
            oracle_reduced_predict(&m, &x, &FeatureSet::empty(), r),
            11.25
        );
        assert_eq!(
            oracle_reduced_predict(&m, &x, &FeatureSet::new([2]), r),
            6.25
        );
        let only = AnovaModel::new(4, 0.25, &[(1.0, &[0, 1])]).unwrap();
        assert_eq!(
            oracle_reduced_predict(&only, &x, &FeatureSet::new([0]), r),
            0.25
        );
    }

    #[test]
    fn closed_forms() {
        let m = mixed(0.0);
        let r = Task::Regression;
        assert_eq!(
            closed_form_iloco(&m, &FeatureSet::pair(0, 1), r).unwrap(),
            10.0
        );
        assert_eq!(
            closed_form_iloco(&m, &FeatureSet::new([0, 1, 2]), r).unwrap(),
            1.0
        );
        assert_eq!(
            closed_form_iloco(&m, &FeatureSet::pair(0, 3), r).unwrap(),
            0.0
        );
        assert!(matches!(
            closed_form_iloco(&m, &FeatureSet::pair(0, 1), Task::Classification),
            Err(Error::ClippedModelUnsupported)
        ));
    }

    #[test]
    fn invalid_models() {
        assert!(AnovaModel::new(3, 0.0, &[(1.0, &[0, 0])]).is_err());
        assert!(AnovaModel::new(3, 0.0, &[(1.0, &[0, 5])]).is_err());
        assert!(AnovaModel::new(3, 0.0, &[(1.0, &[0, 1]), (2.0, &[1, 0])]).is_err());
        assert!(AnovaModel::new(3, 0.0, &[(1.0, &[])]).is_err());
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        // exact up to degree 11
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((int - 2.0 / 11.0).abs() < 1e-13);
    }

    #[test]
    fn moments_of_the_whole_line() {
        let (m0, m1, m2) = gaussian_moments(f64::NEG_INFINITY, f64::INFINITY);
        assert!((m0 - 1.0).abs() < 1e-15 && m1.abs() < 1e-15 && (m2 - 1.0).abs() < 1e-15);
        let (h0, h1, h2) = gaussian_moments(0.0, f64::INFINITY);
        assert!((h0 - 0.5).abs() < 1e-15);
        assert!((h1 - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((h2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn numeric_regression_matches_closed_form() {
        let m = mixed(0.0);
        let q = Quadrature::for_outer_dims(3);
        for set in [
            FeatureSet::pair(0, 1),
            FeatureSet::new([0, 1, 2]),
            FeatureSet::pair(2, 3),
        ] {
            let exact = closed_form_iloco(&m, &set, Task::Regression).unwrap();
            let num = numeric_iloco_with(&m, &set, Task::Regression, q).unwrap();
            assert!((num - exact).abs() < 1e-8, "{set}: {num} vs {exact}");
        }
    }

    #[test]
    fn numeric_classification_small_coefficient_is_near_twice_variance() {
        // reference from scipy's adaptive quad of 2 E[(clip(0.5 + 0.1 X1 X2) - 0.5)^2];
        // the heavy tail of X1 X2 makes clipping cost about 2.6% of 2 c^2
        let m = AnovaModel::new(10, 0.5, &[(0.1, &[0, 1])]).unwrap();
        let v = numeric_iloco(&m, &FeatureSet::pair(0, 1), Task::Classification).unwrap();
        assert!((v - 0.019_473_895_742_303).abs() < 1e-9, "{v}");
        assert!((1.8..2.2).contains(&(v / 0.01)));
    }

    #[test]
    fn numeric_classification_matches_scipy_for_clipped_products() {
        // nested scipy quad with the clip breakpoints passed explicitly
        for (c, want) in [(1.0, 0.261_380_430_098_544), (2.0, 0.337_147_964_604_603)] {
            let m = AnovaModel::new(10, 0.5, &[(c, &[0, 1])]).unwrap();
            let v = numeric_iloco(&m, &FeatureSet::pair(0, 1), Task::Classification).unwrap();
            assert!((v - want).abs() < 1e-8, "c = {c}: {v}");
        }
    }

    #[test]
    fn mc_is_chunking_deterministic() {
        let m = mixed(0.0);
        let s = FeatureSet::pair(0, 1);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    population_iloco_mc(&m, &s, Task::Regression, 20_000, RngStream::new(3))
                        .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn main_effects_only_have_no_interaction() {
        let m = AnovaModel::new(10, 0.0, &[(2.0, &[0]), (1.0, &[1])]).unwrap();
        let (est, se) = population_iloco_mc(
            &m,
            &FeatureSet::pair(0, 1),
            Task::Regression,
            20_000,
            RngStream::new(1),
        )
        .unwrap();
        // per-sample score is -2 g1 g2: zero only in expectation
        assert!(se > 0.0 && est.abs() < 3.0 * se, "{est} +- {se}");
    }

    #[test]
    fn sampled_data_has_model_labels() {
        let m = AnovaModel::new(4, 0.5, &[(0.3, &[0, 1])]).unwrap();
        let d = m
            .sample(200, Task::Classification, &mut RngStream::new(1).rng())
            .unwrap();
        assert_eq!((d.n_rows(), d.n_cols()), (200, 4));
        assert!(d.y().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
