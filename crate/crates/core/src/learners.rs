//! Base learners behind a single fit/predict contract, and the per-sample
//! error functions.
//!
//! A [`FittedModel`] only ever reads the columns it was trained on, so the
//! estimators can hand it full-width rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Dataset, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    CartTree {
        max_depth: usize,
        min_leaf: usize,
    },
    Ridge {
        lambda: f64,
    },
    /// `bandwidth: None` means sqrt of the model's feature count.
    KernelRidgeRbf {
        lambda: f64,
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    Knn {
        k: usize,
    },
}

impl LearnerSpec {
    pub fn cart() -> Self {
        LearnerSpec::CartTree {
            max_depth: 6,
            min_leaf: 5,
        }
    }

    pub fn ridge() -> Self {
        LearnerSpec::Ridge { lambda: 1e-3 }
    }

    pub fn kernel_ridge() -> Self {
        LearnerSpec::KernelRidgeRbf {
            lambda: 1e-2,
            bandwidth: None,
        }
    }

    pub fn knn() -> Self {
        LearnerSpec::Knn { k: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidLearner(msg));
        match *self {
            LearnerSpec::CartTree { min_leaf: 0, .. } => bad("min_leaf must be at least 1".into()),
            LearnerSpec::Ridge { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                bad(format!("ridge lambda {lambda} must be finite and >= 0"))
            }
            LearnerSpec::KernelRidgeRbf { lambda, bandwidth } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!(
                        "kernel ridge lambda {lambda} must be finite and >= 0"
                    ));
                }
                match bandwidth {
                    Some(h) if !(h > 0.0 && h.is_finite()) => {
                        bad(format!("bandwidth {h} must be positive"))
                    }
                    _ => Ok(()),
                }
            }
            LearnerSpec::Knn { k: 0 } => bad("k must be at least 1".into()),
            _ => Ok(()),
        }
    }
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self::cart()
    }
}

/// A trained predictor over a declared subset of columns.
#[derive(Debug, Clone)]
pub struct FittedModel {
    feature_set: Vec<usize>,
    task: Task,
    predictor: Predictor,
}

#[derive(Debug, Clone)]
enum Predictor {
    Tree(Vec<Node>),
    Linear {
        intercept: f64,
        coef: Vec<f64>,
    },
    Kernel {
        centers: Vec<f64>,
        alpha: Vec<f64>,
        offset: f64,
        gamma: f64,
    },
    Knn {
        points: Vec<f64>,
        y: Vec<f64>,
        k: usize,
    },
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        col: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

impl FittedModel {
    pub fn feature_set(&self) -> &[usize] {
        &self.feature_set
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Prediction for a full-width row. Classification output is a
    /// probability clamped to [0, 1].
    pub fn predict(&self, row: &[f64]) -> f64 {
        let raw = match &self.predictor {
            Predictor::Tree(nodes) => {
                let mut at = 0;
                loop {
                    match nodes[at] {
                        Node::Leaf(v) => break v,
                        Node::Split {
                            col,
                            threshold,
                            left,
                            right,
                        } => at = if row[col] <= threshold { left } else { right },
                    }
                }
            }
            Predictor::Linear { intercept, coef } => {
                intercept
                    + self
                        .feature_set
                        .iter()
                        .zip(coef)
                        .map(|(&c, w)| row[c] * w)
                        .sum::<f64>()
            }
            Predictor::Kernel {
                centers,
                alpha,
                offset,
                gamma,
            } => {
                let d = self.feature_set.len();
                let mut acc = 0.0;
                for (center, a) in centers.chunks_exact(d).zip(alpha) {
                    let dist2: f64 = self
                        .feature_set
                        .iter()
                        .zip(center)
                        .map(|(&c, v)| (row[c] - v) * (row[c] - v))
                        .sum();
                    acc += a * (-gamma * dist2).exp();
                }
                offset + acc
            }
            Predictor::Knn { points, y, k } => {
                let d = self.feature_set.len();
                let mut dist: Vec<(f64, usize)> = points
                    .chunks_exact(d)
                    .enumerate()
                    .map(|(r, p)| {
                        let dist2: f64 = self
                            .feature_set
                            .iter()
                            .zip(p)
                            .map(|(&c, v)| (row[c] - v) * (row[c] - v))
                            .sum();
                        (dist2, r)
                    })
                    .collect();
                let key =
                    |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if *k < dist.len() {
                    dist.select_nth_unstable_by(*k - 1, key);
                }
                dist[..*k].iter().map(|&(_, r)| y[r]).sum::<f64>() / *k as f64
            }
        };
        match self.task {
            Task::Regression => raw,
            Task::Classification => raw.clamp(0.0, 1.0),
        }
    }
}

/// Trains `spec` on `data` restricted to `rows` and `cols`.
///
/// Fitting is deterministic in its inputs. Singular linear systems are
/// repaired with diagonal jitter instead of failing.
pub fn fit(
    spec: &LearnerSpec,
    data: &Dataset,
    rows: &[usize],
    cols: &[usize],
) -> Result<FittedModel> {
    spec.validate()?;
    if rows.len() < 2 {
        return Err(Error::InvalidLearner(format!(
            "need at least 2 training rows, got {}",
            rows.len()
        )));
    }
    if cols.is_empty() {
        return Err(Error::InvalidLearner("need at least one feature".into()));
    }
    let mut feature_set = cols.to_vec();
    feature_set.sort_unstable();
    feature_set.dedup();
    if let Some(&c) = feature_set.iter().find(|&&c| c >= data.n_cols()) {
        return Err(Error::InvalidFeatureSet(vec![c]));
    }

    let d = feature_set.len();
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    for &r in rows {
        let row = data.row(r);
        x.extend(feature_set.iter().map(|&c| row[c]));
        y.push(data.y()[r]);
    }

    let predictor = match *spec {
        LearnerSpec::CartTree {
            max_depth,
            min_leaf,
        } => Predictor::Tree(build_tree(
            &x,
            d,
            &y,
            &feature_set,
            data.task(),
            max_depth,
            min_leaf,
        )),
        LearnerSpec::Ridge { lambda } => fit_ridge(&x, d, &y, lambda),
        LearnerSpec::KernelRidgeRbf { lambda, bandwidth } => {
            let h = bandwidth.unwrap_or((d as f64).sqrt());
            fit_kernel_ridge(x, d, &y, lambda, h)
        }
        LearnerSpec::Knn { k } => {
            if k > rows.len() {
                return Err(Error::InvalidLearner(format!(
                    "k = {k} exceeds the {} training rows",
                    rows.len()
                )));
            }
            Predictor::Knn { points: x, y, k }
        }
    };
    Ok(FittedModel {
        feature_set,
        task: data.task(),
        predictor,
    })
}

/// Per-sample loss: squared error for regression, absolute error between
/// label and predicted probability for classification.
#[inline]
pub fn error(task: Task, y: f64, yhat: f64) -> f64 {
    match task {
        Task::Regression => (y - yhat) * (y - yhat),
        Task::Classification => (y - yhat).abs(),
    }
}

fn build_tree(
    x: &[f64],
    d: usize,
    y: &[f64],
    cols: &[usize],
    task: Task,
    max_depth: usize,
    min_leaf: usize,
) -> Vec<Node> {
    let mut nodes = Vec::new();
    let idx: Vec<usize> = (0..y.len()).collect();
    let ctx = TreeCtx {
        x,
        d,
        y,
        cols,
        task,
        max_depth,
        min_leaf,
    };
    ctx.grow(&mut nodes, idx, 0);
    nodes
}

struct TreeCtx<'a> {
    x: &'a [f64],
    d: usize,
    y: &'a [f64],
    cols: &'a [usize],
    task: Task,
    max_depth: usize,
    min_leaf: usize,
}

impl TreeCtx<'_> {
    /// Impurity times node size: SSE for regression, n * Gini for 0/1 labels.
    fn cost(&self, n: f64, sum: f64, sumsq: f64) -> f64 {
        match self.task {
            Task::Regression => (sumsq - sum * sum / n).max(0.0),
            Task::Classification => {
                let p = sum / n;
                n * 2.0 * p * (1.0 - p)
            }
        }
    }

    fn grow(&self, nodes: &mut Vec<Node>, idx: Vec<usize>, depth: usize) -> usize {
        let at = nodes.len();
        let n = idx.len() as f64;
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        nodes.push(Node::Leaf(sum / n));
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return at;
        }
        let sumsq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent = self.cost(n, sum, sumsq);
        if parent <= 0.0 {
            return at;
        }

        // (cost, local feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.clone();
        for f in 0..self.d {
            let value = |i: usize| self.x[i * self.d + f];
            order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
            let (mut ls, mut lss) = (0.0, 0.0);
            for pos in 0..order.len() - 1 {
                let yi = self.y[order[pos]];
                ls += yi;
                lss += yi * yi;
                let n_left = pos + 1;
                let n_right = order.len() - n_left;
                let (v, next) = (value(order[pos]), value(order[pos + 1]));
                if v == next || n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let c = self.cost(n_left as f64, ls, lss)
                    + self.cost(n_right as f64, sum - ls, sumsq - lss);
                if best.is_none_or(|(bc, _, _)| c < bc) {
                    best = Some((c, f, 0.5 * (v + next)));
                }
            }
        }
        let Some((cost, f, threshold)) = best else {
            return at;
        };
        if cost >= parent {
            return at;
        }
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i * self.d + f] <= threshold);
        let left = self.grow(nodes, left_idx, depth + 1);
        let right = self.grow(nodes, right_idx, depth + 1);
        nodes[at] = Node::Split {
            col: self.cols[f],
            threshold,
            left,
            right,
        };
        at
    }
}

/// Solves the SPD system `a z = b`, adding diagonal jitter when the Cholesky
/// factorization fails.
fn spd_solve(a: DMatrix<f64>, b: DVector<f64>) -> DVector<f64> {
    if let Some(chol) = a.clone().cholesky() {
        return chol.solve(&b);
    }
    let n = a.nrows();
    let scale = (a.trace() / n as f64).abs();
    let mut jitter = 1e-10 * if scale > 0.0 { scale } else { 1.0 };
    for _ in 0..24 {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = shifted.cholesky() {
            return chol.solve(&b);
        }
        jitter *= 10.0;
    }
    DVector::zeros(n)
}

fn fit_ridge(x: &[f64], d: usize, y: &[f64], lambda: f64) -> Predictor {
    let n = y.len();
    let mut means = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut centered = vec![0.0; d];
    for (row, &yi) in x.chunks_exact(d).zip(y) {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&means)) {
            *c = v - m;
        }
        let yc = yi - y_mean;
        for a in 0..d {
            rhs[a] += centered[a] * yc;
            for b in a..d {
                gram[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        gram[(a, a)] += lambda;
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let coef = spd_solve(gram, rhs);
    let intercept = y_mean - coef.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
    Predictor::Linear {
        intercept,
        coef: coef.iter().copied().collect(),
    }
}

fn fit_kernel_ridge(x: Vec<f64>, d: usize, y: &[f64], lambda: f64, bandwidth: f64) -> Predictor {
    let n = y.len();
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let offset = y.iter().sum::<f64>() / n as f64;
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        k[(i, i)] = 1.0 + lambda;
        for j in 0..i {
            let xj = &x[j * d..(j + 1) * d];
            let dist2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = (-gamma * dist2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let rhs = DVector::from_iterator(n, y.iter().map(|v| v - offset));
    let alpha = spd_solve(k, rhs);
    Predictor::Kernel {
        centers: x,
        alpha: alpha.iter().copied().collect(),
        offset,
        gamma,
    }
}
