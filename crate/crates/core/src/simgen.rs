//! Synthetic benchmark scenarios.
//!
//! Features are Gaussian with identity, autoregressive-precision, or
//! single-pair correlation. The response carries a planted interaction
//! whose strength is `snr`, plus a sparse linear part `X beta` with
//! `beta_j ~ N(2, 0.5)` on the first five features and zero elsewhere.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlusion::FeatureSet;
use crate::rng::RngStream;
use crate::tabular::{Dataset, Task};

/// Number of features carrying a linear effect.
pub const ACTIVE_LINEAR: usize = 5;
const BETA_MEAN: f64 = 2.0;
const BETA_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// `snr * X1 X2 + X beta`
    #[serde(alias = "i", alias = "s1")]
    S1,
    /// `snr * X1 X2 + X2 X3 + X3 X4 + X4 X5 + X beta`
    #[serde(alias = "ii", alias = "s2")]
    S2,
    /// `snr * X1 X2 X3 + X beta`
    #[serde(alias = "iii", alias = "s3")]
    S3,
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" | "s1" => Ok(ScenarioKind::S1),
            "ii" | "2" | "s2" => Ok(ScenarioKind::S2),
            "iii" | "3" | "s3" => Ok(ScenarioKind::S3),
            other => Err(format!(
                "unknown scenario `{other}` (expected i, ii or iii)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Correlation {
    Identity,
    /// Tridiagonal precision with `rho` off the diagonal.
    Ar {
        rho: f64,
    },
    /// Only features 1 and 2 correlated, with correlation `rho`.
    Pair {
        rho: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: ScenarioKind,
    pub snr: f64,
    #[serde(default)]
    pub nonlinear: bool,
    pub task: Task,
    pub n: usize,
    pub m: usize,
    #[serde(default = "identity")]
    pub correlation: Correlation,
    #[serde(default)]
    pub seed: u64,
}

fn identity() -> Correlation {
    Correlation::Identity
}

impl ScenarioSpec {
    pub fn new(
        scenario: ScenarioKind,
        snr: f64,
        task: Task,
        n: usize,
        m: usize,
        seed: u64,
    ) -> Self {
        Self {
            scenario,
            snr,
            nonlinear: false,
            task,
            n,
            m,
            correlation: Correlation::Identity,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 10 {
            return Err(Error::InvalidSpec(format!(
                "need M >= 10 features, got {}",
                self.m
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!(
                "need N >= 2 rows, got {}",
                self.n
            )));
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "snr {} must be finite and >= 0",
                self.snr
            )));
        }
        match self.correlation {
            Correlation::Identity => Ok(()),
            Correlation::Ar { rho } if !rho.is_finite() => {
                Err(Error::InvalidSpec(format!("AR rho {rho} must be finite")))
            }
            Correlation::Pair { rho } if !(rho > -1.0 && rho < 1.0) => Err(Error::InvalidSpec(
                format!("pair correlation {rho} must lie in (-1, 1)"),
            )),
            _ => Ok(()),
        }
    }
}

/// Ground-truth interacting sets (0-based) for a scenario.
pub fn true_interacting_sets(kind: ScenarioKind) -> Vec<FeatureSet> {
    let sets: &[&[usize]] = match kind {
        ScenarioKind::S1 => &[&[0, 1]],
        ScenarioKind::S2 => &[&[0, 1], &[1, 2], &[2, 3], &[3, 4]],
        ScenarioKind::S3 => &[&[0, 1, 2]],
    };
    sets.iter()
        .map(|s| FeatureSet::new(s.iter().copied()))
        .collect()
}

/// Everything needed to reproduce a draw, written next to simulated CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub spec: ScenarioSpec,
    pub beta: Vec<f64>,
    pub covariance: String,
    /// Diagonal shift added to a non-PD AR precision matrix, if any.
    pub precision_shift: Option<f64>,
}

/// A scenario with its coefficients drawn and covariance factored; sample
/// as many rows as needed from the same population.
#[derive(Debug, Clone)]
pub struct Scenario {
    spec: ScenarioSpec,
    beta: Vec<f64>,
    chol: Option<DMatrix<f64>>,
    precision_shift: Option<f64>,
    covariance: String,
}

impl Scenario {
    /// Draws `beta` from stream 0 of the spec's seed.
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngStream::with_stream(spec.seed, 0).rng();
        let prior = Normal::new(BETA_MEAN, BETA_VARIANCE.sqrt()).expect("valid normal");
        let beta = (0..spec.m)
            .map(|j| {
                if j < ACTIVE_LINEAR {
                    prior.sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        Self::with_beta(spec, beta)
    }

    pub fn with_beta(spec: ScenarioSpec, beta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if beta.len() != spec.m {
            return Err(Error::InvalidSpec(format!(
                "beta has {} entries for {} features",
                beta.len(),
                spec.m
            )));
        }
        let (chol, precision_shift, covariance) = covariance_factor(spec.m, spec.correlation)?;
        Ok(Self {
            spec,
            beta,
            chol,
            precision_shift,
            covariance,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn meta(&self) -> SimulationMeta {
        SimulationMeta {
            spec: self.spec,
            beta: self.beta.clone(),
            covariance: self.covariance.clone(),
            precision_shift: self.precision_shift,
        }
    }

    fn interaction(&self, p: f64) -> f64 {
        if self.spec.nonlinear {
            p.tanh()
        } else {
            p
        }
    }

    /// Noise-free signal f(x).
    pub fn signal(&self, x: &[f64]) -> f64 {
        let snr = self.spec.snr;
        let planted = match self.spec.scenario {
            ScenarioKind::S1 => snr * self.interaction(x[0] * x[1]),
            ScenarioKind::S2 => {
                snr * self.interaction(x[0] * x[1])
                    + self.interaction(x[1] * x[2])
                    + self.interaction(x[2] * x[3])
                    + self.interaction(x[3] * x[4])
            }
            ScenarioKind::S3 => snr * self.interaction(x[0] * x[1] * x[2]),
        };
        planted + x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Draws `n` i.i.d. rows.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let m = self.spec.m;
        let mut x = Vec::with_capacity(n * m);
        let mut z = vec![0.0; m];
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let start = x.len();
            match &self.chol {
                None => x.extend_from_slice(&z),
                Some(l) => {
                    for r in 0..m {
                        x.push((0..=r).map(|c| l[(r, c)] * z[c]).sum());
                    }
                }
            }
            let f = self.signal(&x[start..]);
            let yi = match self.spec.task {
                Task::Regression => f + rng.sample::<f64, _>(StandardNormal),
                Task::Classification => {
                    let p = 1.0 / (1.0 + (-f).exp());
                    if Bernoulli::new(p).expect("probability").sample(rng) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            y.push(yi);
        }
        Dataset::from_rows(x, m, y, self.spec.task)
    }
}

/// Draws `spec.n` rows: coefficients from stream 0, rows from stream 1.
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, SimulationMeta)> {
    let scenario = Scenario::new(*spec)?;
    let data = scenario.sample(spec.n, &mut RngStream::with_stream(spec.seed, 1).rng())?;
    Ok((data, scenario.meta()))
}

type Factor = (Option<DMatrix<f64>>, Option<f64>, String);

fn covariance_factor(m: usize, corr: Correlation) -> Result<Factor> {
    match corr {
        Correlation::Identity => Ok((None, None, "identity".into())),
        Correlation::Pair { rho } => {
            let mut sigma = DMatrix::<f64>::identity(m, m);
            sigma[(0, 1)] = rho;
            sigma[(1, 0)] = rho;
            let l = sigma
                .cholesky()
                .ok_or_else(|| Error::InvalidSpec(format!("pair correlation {rho} not PD")))?
                .unpack();
            Ok((Some(l), None, format!("identity with corr(X1, X2) = {rho}")))
        }
        Correlation::Ar { rho } => {
            let mut omega = DMatrix::<f64>::identity(m, m);
            for j in 0..m - 1 {
                omega[(j, j + 1)] = rho;
                omega[(j + 1, j)] = rho;
            }
            let lambda_min = SymmetricEigen::new(omega.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let shift = if lambda_min <= 0.0 {
                let delta = lambda_min.abs() + 0.05;
                for j in 0..m {
                    omega[(j, j)] += delta;
                }
                Some(delta)
            } else {
                None
            };
            let sigma = omega
                .try_inverse()
                .ok_or_else(|| Error::InvalidSpec("AR precision matrix is singular".into()))?;
            let mut corr_m = sigma.clone();
            for r in 0..m {
                for c in 0..m {
                    corr_m[(r, c)] = sigma[(r, c)] / (sigma[(r, r)] * sigma[(c, c)]).sqrt();
                }
            }
            let l = corr_m
                .cholesky()
                .ok_or_else(|| Error::InvalidSpec("AR covariance is not PD".into()))?
                .unpack();
            let note = match shift {
                Some(d) => format!(
                    "inverse of tridiagonal precision (off-diagonal {rho}) shifted by {d:.6} I, rescaled to unit diagonal"
                ),
                None => format!(
                    "inverse of tridiagonal precision (off-diagonal {rho}), rescaled to unit diagonal"
                ),
            };
            Ok((Some(l), shift, note))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ScenarioKind, snr: f64, task: Task, n: usize) -> ScenarioSpec {
        ScenarioSpec::new(kind, snr, task, n, 10, 17)
    }

    fn column_corr(d: &Dataset, a: usize, b: usize) -> f64 {
        let n = d.n_rows() as f64;
        let ma = (0..d.n_rows()).map(|i| d.get(i, a)).sum::<f64>() / n;
        let mb = (0..d.n_rows()).map(|i| d.get(i, b)).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for i in 0..d.n_rows() {
            let (u, v) = (d.get(i, a) - ma, d.get(i, b) - mb);
            sab += u * v;
            saa += u * u;
            sbb += v * v;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn true_sets() {
        let ids = |k| {
            true_interacting_sets(k)
                .into_iter()
                .map(|s| s.indices().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(ScenarioKind::S1), vec![vec![0, 1]]);
        assert_eq!(
            ids(ScenarioKind::S2),
            vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 4]]
        );
        assert_eq!(ids(ScenarioKind::S3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn beta_support() {
        let s = Scenario::new(spec(ScenarioKind::S1, 1.0, Task::Regression, 10)).unwrap();
        assert!(s.beta()[..5].iter().all(|&b| b != 0.0));
        assert!(s.beta()[5..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let sp = spec(ScenarioKind::S2, 2.0, Task::Classification, 50);
        let (a, ma) = generate(&sp).unwrap();
        let (b, mb) = generate(&sp).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma.beta, mb.beta);
    }

    #[test]
    fn zero_snr_has_no_interaction_signal() {
        let sp = spec(ScenarioKind::S1, 0.0, Task::Regression, 10_000);
        let scenario = Scenario::new(sp).unwrap();
        let (d, _) = generate(&sp).unwrap();
        // residual after removing the linear part
        let n = d.n_rows();
        let resid: Vec<f64> = (0..n)
            .map(|i| {
                d.y()[i]
                    - d.row(i)
                        .iter()
                        .zip(scenario.beta())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let prod: Vec<f64> = (0..n).map(|i| d.get(i, 0) * d.get(i, 1)).collect();
        let mr = resid.iter().sum::<f64>() / n as f64;
        let mp = prod.iter().sum::<f64>() / n as f64;
        let (mut s, mut a, mut b) = (0.0, 0.0, 0.0);
        for i in 0..n {
            s += (resid[i] - mr) * (prod[i] - mp);
            a += (resid[i] - mr).powi(2);
            b += (prod[i] - mp).powi(2);
        }
        assert!((s / (a * b).sqrt()).abs() < 0.05);
    }

    #[test]
    fn response_variance_matches_moment_oracle() {
        // var(y) = snr^2 E[(X1 X2)^2] + sum beta^2 + 1 with E[(X1X2)^2] = 1
        let sp = spec(ScenarioKind::S1, 4.0, Task::Regression, 100_000);
        let (d, meta) = generate(&sp).unwrap();
        let expected = 16.0 + meta.beta.iter().map(|b| b * b).sum::<f64>() + 1.0;
        let y = d.y();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = y.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let se = ((m4 - var * var) / n).sqrt();
        assert!(
            (var - expected).abs() < 3.0 * se,
            "var {var} vs {expected} (se {se})"
        );
    }

    #[test]
    fn classification_labels_are_binary() {
        let sp = ScenarioSpec {
            nonlinear: true,
            ..spec(ScenarioKind::S3, 4.0, Task::Classification, 500)
        };
        let (d, _) = generate(&sp).unwrap();
        assert!(d.y().iter().all(|&v| v == 0.0 || v == 1.0));
        let mean = d.y().iter().sum::<f64>() / 500.0;
        assert!(mean > 0.0 && mean < 1.0);
    }

    #[test]
    fn nonlinear_interaction_bounded_by_snr() {
        let sp = ScenarioSpec {
            nonlinear: true,
            ..spec(ScenarioKind::S1, 3.0, Task::Regression, 10)
        };
        let s = Scenario::with_beta(sp, vec![0.0; 10]).unwrap();
        for x0 in [-5.0, -0.3, 0.0, 2.0, 40.0] {
            let mut x = vec![0.0; 10];
            x[0] = x0;
            x[1] = 7.0;
            assert!(s.signal(&x).abs() <= 3.0);
        }
    }

    #[test]
    fn identity_covariance_is_identity() {
        let (d, _) = generate(&spec(ScenarioKind::S1, 0.0, Task::Regression, 100_000)).unwrap();
        let n = d.n_rows() as f64;
        for a in 0..10 {
            for b in a..10 {
                let c = (0..d.n_rows())
                    .map(|i| d.get(i, a) * d.get(i, b))
                    .sum::<f64>()
                    / n;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 0.02, "cov[{a},{b}] = {c}");
            }
        }
    }

    #[test]
    fn ar_precision_design_gives_negative_neighbour_correlation() {
        let mut sp = spec(ScenarioKind::S1, 0.0, Task::Regression, 50_000);
        sp.correlation = Correlation::Ar { rho: 0.8 };
        let scenario = Scenario::new(sp).unwrap();
        let shift = scenario
            .meta()
            .precision_shift
            .expect("rho 0.8 needs a PD repair");
        assert!(shift > 0.05);
        for seed in [1, 2, 3] {
            sp.seed = seed;
            let (d, _) = generate(&sp).unwrap();
            let r = column_corr(&d, 0, 1);
            // population value from a dense numpy inverse of the repaired precision
            assert!((r - (-0.696_752)).abs() < 0.015, "corr {r}");
        }
    }

    #[test]
    fn pair_design_correlates_only_first_two() {
        let mut sp = spec(ScenarioKind::S1, 0.0, Task::Regression, 50_000);
        sp.correlation = Correlation::Pair { rho: 0.9 };
        let (d, _) = generate(&sp).unwrap();
        assert!((column_corr(&d, 0, 1) - 0.9).abs() < 0.01);
        assert!(column_corr(&d, 0, 2).abs() < 0.02);
    }

    #[test]
    fn invalid_specs() {
        assert!(Scenario::new(ScenarioSpec::new(
            ScenarioKind::S1,
            1.0,
            Task::Regression,
            10,
            9,
            0
        ))
        .is_err());
        assert!(Scenario::new(ScenarioSpec::new(
            ScenarioKind::S1,
            -1.0,
            Task::Regression,
            10,
            10,
            0
        ))
        .is_err());
    }
}
