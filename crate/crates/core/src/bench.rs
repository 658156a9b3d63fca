//! Simulation harness: success probability, correlated-pair detection,
//! interval coverage and timing, at desk scale.
//!
//! Every replicate derives its own seed from the experiment seed, the grid
//! index and the replicate index, so replicates can run in any order and a
//! report's embedded spec reproduces its numbers (timings aside).

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ci_normal;
use crate::learners::LearnerSpec;
use crate::minipatch::{train_ensemble, MinipatchConfig, MinipatchEnsemble};
use crate::occlusion::{
    delta_samples, detect_correlated_pair, iloco_samples, rank_pairs, FeatureSet,
    InteractionScoreSamples,
};
use crate::rng::RngStream;
use crate::simgen::{true_interacting_sets, Correlation, Scenario, ScenarioKind, ScenarioSpec};
use crate::split::{fit_split, SplitFit};
use crate::tabular::{split, Dataset, Task};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Success,
    CorrelatedDetect,
    Coverage,
    Timing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mp,
    Split,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mp => "mp",
            Method::Split => "split",
        })
    }
}

/// The scenario field a grid sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridParam {
    Snr,
    /// Correlation of X1 and X2 (single-pair design).
    Rho,
    N,
    M,
}

impl std::fmt::Display for GridParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GridParam::Snr => "snr",
            GridParam::Rho => "rho",
            GridParam::N => "n",
            GridParam::M => "m",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpSettings {
    pub b: usize,
    pub n_frac: f64,
    pub m_frac: f64,
}

impl Default for MpSettings {
    fn default() -> Self {
        Self {
            b: 2000,
            n_frac: 0.2,
            m_frac: 0.2,
        }
    }
}

fn default_alpha() -> f64 {
    0.1
}

fn default_train_frac() -> f64 {
    0.5
}

fn default_fresh_points() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    /// Template; the grid parameter and the per-replicate seed are
    /// overwritten.
    pub scenario: ScenarioSpec,
    pub grid_param: GridParam,
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub method: Method,
    pub learner: LearnerSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mp: MpSettings,
    /// Fraction of rows used to train the split estimator.
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    /// Coverage target set (0-based). Defaults to the null pair (5, 6).
    #[serde(default)]
    pub target: Option<FeatureSet>,
    /// Fresh draws used to evaluate each replicate's coverage target.
    #[serde(default = "default_fresh_points")]
    pub fresh_points: usize,
}

impl ExperimentSpec {
    fn base(
        protocol: Protocol,
        scenario: ScenarioSpec,
        grid_param: GridParam,
        grid: Vec<f64>,
    ) -> Self {
        Self {
            protocol,
            scenario,
            grid_param,
            grid,
            replicates: 50,
            method: Method::Mp,
            learner: LearnerSpec::cart(),
            alpha: default_alpha(),
            seed: 0,
            mp: MpSettings::default(),
            train_frac: default_train_frac(),
            target: None,
            fresh_points: default_fresh_points(),
        }
    }

    /// Scenario (i), nonlinear classification, N = 500, M = 10, CART,
    /// minipatches with B = 2000, snr in {0, 2, 4, 8}, 50 replicates.
    pub fn success_default() -> Self {
        let mut sc = ScenarioSpec::new(ScenarioKind::S1, 0.0, Task::Classification, 500, 10, 0);
        sc.nonlinear = true;
        Self::base(
            Protocol::Success,
            sc,
            GridParam::Snr,
            vec![0.0, 2.0, 4.0, 8.0],
        )
    }

    /// Null pair (6, 7) of scenario (i) regression at snr 2, N = 2000,
    /// ridge learner, alpha = 0.1, 50 replicates.
    pub fn coverage_default(method: Method) -> Self {
        let sc = ScenarioSpec::new(ScenarioKind::S1, 2.0, Task::Regression, 2000, 10, 0);
        Self {
            method,
            learner: LearnerSpec::ridge(),
            ..Self::base(Protocol::Coverage, sc, GridParam::N, vec![2000.0])
        }
    }

    /// Single correlated pair X1, X2 sharing one coefficient, regression,
    /// N = 500, ridge with data splitting, rho in {0, 0.5, 0.9}.
    pub fn correlated_default() -> Self {
        let sc = ScenarioSpec::new(ScenarioKind::S1, 0.0, Task::Regression, 500, 10, 0);
        Self {
            method: Method::Split,
            learner: LearnerSpec::ridge(),
            ..Self::base(
                Protocol::CorrelatedDetect,
                sc,
                GridParam::Rho,
                vec![0.0, 0.5, 0.9],
            )
        }
    }

    /// Minipatch all-pairs timing at N = 1000, B = 2000, M in {10, 20}.
    pub fn timing_default() -> Self {
        let sc = ScenarioSpec::new(ScenarioKind::S1, 2.0, Task::Regression, 1000, 10, 0);
        Self {
            replicates: 3,
            ..Self::base(Protocol::Timing, sc, GridParam::M, vec![10.0, 20.0])
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.grid.is_empty() {
            return bad("grid must not be empty".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac {} must lie in (0, 1)", self.train_frac));
        }
        if self.protocol == Protocol::Coverage && self.fresh_points < 2 {
            return bad("fresh_points must be at least 2".into());
        }
        self.learner.validate()?;
        for &v in &self.grid {
            self.point_scenario(v, 0)?.validate()?;
        }
        if let Some(t) = &self.target {
            t.check(self.scenario.m)?;
        }
        Ok(())
    }

    fn point_scenario(&self, value: f64, seed: u64) -> Result<ScenarioSpec> {
        let mut sc = self.scenario;
        sc.seed = seed;
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidSpec(format!(
                    "{} grid value {v} is not a count",
                    self.grid_param
                )))
            }
        };
        match self.grid_param {
            GridParam::Snr => sc.snr = value,
            GridParam::Rho => sc.correlation = Correlation::Pair { rho: value },
            GridParam::N => sc.n = count(value)?,
            GridParam::M => sc.m = count(value)?,
        }
        Ok(sc)
    }

    fn coverage_target(&self) -> FeatureSet {
        self.target
            .clone()
            .unwrap_or_else(|| FeatureSet::pair(5, 6))
    }
}

/// One grid point x method x metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub protocol: Protocol,
    pub param: GridParam,
    pub value: f64,
    pub method: Method,
    pub metric: String,
    pub estimate: f64,
    /// Binomial SE for rates, standard error of the mean otherwise.
    pub se: f64,
    /// Replicates that completed.
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub value: f64,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub library_version: String,
    pub spec: ExperimentSpec,
    pub notes: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<FailureRecord>,
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ExperimentReport {
    fn new(spec: &ExperimentSpec, notes: Vec<String>) -> Self {
        Self {
            version: REPORT_VERSION,
            library_version: env!("CARGO_PKG_VERSION").into(),
            spec: spec.clone(),
            notes,
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn row(&self, value: f64, metric: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tidy CSV, one row per grid point x method x metric.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Line chart of every metric against the grid value, with +-1 SE bars.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const PAD: f64 = 60.0;
        let mut series: Vec<(String, Vec<&ReportRow>)> = Vec::new();
        for r in &self.rows {
            let key = format!("{} {}", r.method, r.metric);
            match series.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => series.push((key, vec![r])),
            }
        }
        let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
        let xs = self.rows.iter().map(|r| r.value);
        let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(x), b.max(x))
        });
        let (y0, y1) = self
            .rows
            .iter()
            .fold((0.0_f64, f64::NEG_INFINITY), |(a, b), r| {
                let se = finite(r.se);
                (a.min(r.estimate - se), b.max(r.estimate + se))
            });
        let (x0, x1) = if x1 > x0 {
            (x0, x1)
        } else {
            (x0 - 1.0, x0 + 1.0)
        };
        let (y0, y1) = if y1 > y0 {
            (y0, y1)
        } else {
            (y0 - 1.0, y0 + 1.0)
        };
        let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let colours = [
            "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
        ];
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
            b = H - PAD,
            r = W - PAD
        );
        for (v, anchor_x, anchor_y) in [(x0, px(x0), H - PAD + 18.0), (x1, px(x1), H - PAD + 18.0)]
        {
            let _ = writeln!(
                s,
                r#"<text x="{anchor_x:.1}" y="{anchor_y:.1}" text-anchor="middle">{v}</text>"#
            );
        }
        for v in [y0, y1] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
                PAD - 6.0,
                py(v) + 4.0,
                v
            );
        }
        let param = self
            .rows
            .first()
            .map(|r| r.param.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{param}</text>"#,
            W / 2.0,
            H - 15.0
        );
        for (k, (name, rows)) in series.iter().enumerate() {
            let c = colours[k % colours.len()];
            let pts: Vec<String> = rows
                .iter()
                .map(|r| format!("{:.1},{:.1}", px(r.value), py(r.estimate)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for r in rows {
                let se = finite(r.se);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.1}" y1="{a:.1}" x2="{x:.1}" y2="{b:.1}" stroke="{c}"/><circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{c}"/>"#,
                    x = px(r.value),
                    a = py(r.estimate - se),
                    b = py(r.estimate + se),
                    y = py(r.estimate)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{c}">{}</text>"#,
                PAD + 10.0,
                PAD - 30.0 + 14.0 * k as f64,
                xml_escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn replicate_seed(seed: u64, grid_index: usize, replicate: usize) -> u64 {
    RngStream::with_stream(seed, grid_index as u64)
        .child(replicate as u64)
        .rng()
        .random()
}

/// Seed-derived streams used inside one replicate.
struct ReplicateStreams {
    scenario_seed: u64,
    split: RngStream,
    mp_seed: u64,
}

impl ReplicateStreams {
    fn new(seed: u64) -> Self {
        Self {
            scenario_seed: seed,
            split: RngStream::with_stream(seed, 3),
            mp_seed: RngStream::with_stream(seed, 4).rng().random(),
        }
    }

    fn train_rows(&self) -> RngStream {
        RngStream::with_stream(self.scenario_seed, 1)
    }

    fn fresh_rows(&self) -> RngStream {
        RngStream::with_stream(self.scenario_seed, 2)
    }
}

enum Fitted {
    Mp(MinipatchEnsemble),
    Split(SplitFit),
}

fn fit_estimator(
    spec: &ExperimentSpec,
    data: &Dataset,
    streams: &ReplicateStreams,
    targets: &[FeatureSet],
) -> Result<Fitted> {
    match spec.method {
        Method::Mp => {
            let mut cfg = MinipatchConfig::from_fractions(
                data.n_rows(),
                data.n_cols(),
                spec.mp.b,
                spec.mp.n_frac,
                spec.mp.m_frac,
                spec.learner,
                streams.mp_seed,
            );
            cfg.max_order = targets
                .iter()
                .map(FeatureSet::len)
                .max()
                .unwrap_or(2)
                .max(2);
            Ok(Fitted::Mp(train_ensemble(data, &cfg)?))
        }
        Method::Split => {
            let sp = split(data, spec.train_frac, streams.split)?;
            Ok(Fitted::Split(fit_split(sp, &spec.learner, targets)?))
        }
    }
}

/// Mean score of every set of the given order.
fn all_set_means(fitted: &Fitted, n_cols: usize, order: usize) -> Result<Vec<(FeatureSet, f64)>> {
    let samples: Vec<InteractionScoreSamples> = match fitted {
        Fitted::Mp(ens) => {
            let scan = ens.all_sets_scores(order)?;
            if let Some((_, e)) = scan.failures.into_iter().next() {
                return Err(e);
            }
            scan.scores
        }
        Fitted::Split(fit) => FeatureSet::all_of_order(n_cols, order)
            .iter()
            .map(|s| iloco_samples(fit, s))
            .collect::<Result<_>>()?,
    };
    Ok(samples
        .into_iter()
        .map(|s| (s.feature_set.clone(), s.mean()))
        .collect())
}

/// Runs `f` for every replicate of every grid point, collecting outcomes
/// and failures, and enforcing the failure budget.
fn run_grid<T: Send>(
    spec: &ExperimentSpec,
    report: &mut ExperimentReport,
    parallel: bool,
    f: impl Fn(f64, ScenarioSpec, &ReplicateStreams) -> Result<T> + Sync,
) -> Result<Vec<Vec<T>>> {
    spec.validate()?;
    let mut all = Vec::with_capacity(spec.grid.len());
    for (g, &value) in spec.grid.iter().enumerate() {
        let one = |r: usize| {
            let seed = replicate_seed(spec.seed, g, r);
            let streams = ReplicateStreams::new(seed);
            spec.point_scenario(value, streams.scenario_seed)
                .and_then(|sc| f(value, sc, &streams))
        };
        let outcomes: Vec<Result<T>> = if parallel {
            (0..spec.replicates).into_par_iter().map(one).collect()
        } else {
            (0..spec.replicates).map(one).collect()
        };
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for (r, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(v) => ok.push(v),
                Err(e) => failed.push(FailureRecord {
                    value,
                    replicate: r,
                    message: e.to_string(),
                }),
            }
        }
        if failed.len() * 10 > spec.replicates {
            return Err(Error::ReplicateFailures {
                point: format!("{} = {value}", spec.grid_param),
                failed: failed.len(),
                total: spec.replicates,
                first: failed[0].message.clone(),
            });
        }
        report.failures.extend(failed);
        all.push(ok);
    }
    Ok(all)
}

fn push_rate(
    report: &mut ExperimentReport,
    spec: &ExperimentSpec,
    value: f64,
    metric: &str,
    hits: &[bool],
) {
    let n = hits.len();
    let p = if n == 0 {
        f64::NAN
    } else {
        hits.iter().filter(|&&h| h).count() as f64 / n as f64
    };
    report.rows.push(ReportRow {
        protocol: spec.protocol,
        param: spec.grid_param,
        value,
        method: spec.method,
        metric: metric.into(),
        estimate: p,
        se: binomial_se(p, n),
        replicates: n,
        failures: spec.replicates - n,
    });
}

fn push_mean(
    report: &mut ExperimentReport,
    spec: &ExperimentSpec,
    value: f64,
    metric: &str,
    v: &[f64],
) {
    let (m, se) = mean_se(v);
    report.rows.push(ReportRow {
        protocol: spec.protocol,
        param: spec.grid_param,
        value,
        method: spec.method,
        metric: metric.into(),
        estimate: m,
        se,
        replicates: v.len(),
        failures: spec.replicates - v.len(),
    });
}

fn scale_note(spec: &ExperimentSpec) -> String {
    format!(
        "desk scale: {} replicates, B = {}, patch fractions n = {}, m = {}",
        spec.replicates, spec.mp.b, spec.mp.n_frac, spec.mp.m_frac
    )
}

/// Fraction of replicates in which the scenario's first planted set gets
/// the top score among all sets of its order.
pub fn run_success(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_protocol(spec, Protocol::Success)?;
    let truth = true_interacting_sets(spec.scenario.scenario)[0].clone();
    let order = truth.len();
    let mut report = ExperimentReport::new(spec, vec![scale_note(spec)]);
    let outcomes = run_grid(spec, &mut report, true, |_, sc, streams| {
        let scenario = Scenario::new(sc)?;
        let data = scenario.sample(sc.n, &mut streams.train_rows().rng())?;
        let targets = FeatureSet::all_of_order(sc.m, order);
        let fitted = fit_estimator(spec, &data, streams, &targets)?;
        let ranked = rank_pairs(&all_set_means(&fitted, sc.m, order)?);
        Ok(ranked[0].0 == truth)
    })?;
    for (value, hits) in spec.grid.iter().zip(&outcomes) {
        push_rate(&mut report, spec, *value, "success_rate", hits);
    }
    Ok(report)
}

/// Description of the correlated-pair design, embedded in reports.
pub const CORRELATED_DESIGN: &str =
    "reconstruction: corr(X1, X2) = rho with all other features independent; \
     X1 and X2 share one linear coefficient so the response depends on X1 + X2; \
     remaining coefficients as in scenario (i)";

/// Correlated-pair detection. For each rho, the fraction of replicates in
/// which (1, 2) has the most negative score, next to the fraction in which
/// features 1 and 2 are the two largest single-feature occlusion effects.
pub fn run_correlated_detect(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_protocol(spec, Protocol::CorrelatedDetect)?;
    let mut report = ExperimentReport::new(spec, vec![scale_note(spec), CORRELATED_DESIGN.into()]);
    let pair = FeatureSet::pair(0, 1);
    let outcomes = run_grid(spec, &mut report, true, |_, sc, streams| {
        let drawn = Scenario::new(sc)?;
        let mut beta = drawn.beta().to_vec();
        beta[1] = beta[0];
        let scenario = Scenario::with_beta(sc, beta)?;
        let data = scenario.sample(sc.n, &mut streams.train_rows().rng())?;
        let targets = FeatureSet::all_of_order(sc.m, 2);
        let fitted = fit_estimator(spec, &data, streams, &targets)?;
        let means = all_set_means(&fitted, sc.m, 2)?;
        let iloco_hit = detect_correlated_pair(&means).as_ref() == Some(&pair);
        let singles: Vec<(FeatureSet, f64)> = (0..sc.m)
            .map(|j| {
                let t = FeatureSet::new([j]);
                let d = match &fitted {
                    Fitted::Mp(e) => delta_samples(e, &t)?,
                    Fitted::Split(f) => delta_samples(f, &t)?,
                };
                Ok((t, d.iter().sum::<f64>() / d.len() as f64))
            })
            .collect::<Result<_>>()?;
        let ranked = rank_pairs(&singles);
        let top: Vec<usize> = ranked[..2].iter().map(|(t, _)| t.indices()[0]).collect();
        let loco_hit = top.contains(&0) && top.contains(&1);
        Ok((iloco_hit, loco_hit))
    })?;
    for (value, hits) in spec.grid.iter().zip(&outcomes) {
        let iloco: Vec<bool> = hits.iter().map(|h| h.0).collect();
        let loco: Vec<bool> = hits.iter().map(|h| h.1).collect();
        push_rate(&mut report, spec, *value, "iloco_detect_rate", &iloco);
        push_rate(&mut report, spec, *value, "loco_top_two_rate", &loco);
    }
    Ok(report)
}

/// Outcome of one coverage replicate.
#[derive(Debug, Clone, Copy)]
struct CoverageOutcome {
    covered: bool,
    width: f64,
    target: f64,
    estimate: f64,
}

/// Interval coverage of each replicate's own inference target: the mean
/// score over fresh draws, evaluated with the trained models (the D1 models
/// for splitting, the full-data ensemble aggregates for minipatches).
pub fn run_coverage(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_protocol(spec, Protocol::Coverage)?;
    let set = spec.coverage_target();
    let mut report = ExperimentReport::new(
        spec,
        vec![
            scale_note(spec),
            format!(
                "target set {set} (0-based), {} fresh points per replicate, alpha = {}",
                spec.fresh_points, spec.alpha
            ),
        ],
    );
    let outcomes = run_grid(spec, &mut report, true, |_, sc, streams| {
        let scenario = Scenario::new(sc)?;
        let data = scenario.sample(sc.n, &mut streams.train_rows().rng())?;
        let fresh = scenario.sample(spec.fresh_points, &mut streams.fresh_rows().rng())?;
        let fitted = fit_estimator(spec, &data, streams, std::slice::from_ref(&set))?;
        let (samples, fresh_scores) = match &fitted {
            Fitted::Mp(e) => (iloco_samples(e, &set)?, e.score_points(&set, &fresh)?),
            Fitted::Split(f) => (iloco_samples(f, &set)?, f.score_points(&set, &fresh)?),
        };
        let ci = ci_normal(&samples, spec.alpha, 1)?;
        let target = fresh_scores.iter().sum::<f64>() / fresh_scores.len() as f64;
        Ok(CoverageOutcome {
            covered: ci.ci_lo <= target && target <= ci.ci_hi,
            width: ci.width(),
            target,
            estimate: ci.estimate,
        })
    })?;
    for (value, outs) in spec.grid.iter().zip(&outcomes) {
        let hits: Vec<bool> = outs.iter().map(|o| o.covered).collect();
        push_rate(&mut report, spec, *value, "coverage", &hits);
        let widths: Vec<f64> = outs.iter().map(|o| o.width).collect();
        push_mean(&mut report, spec, *value, "mean_width", &widths);
        let targets: Vec<f64> = outs.iter().map(|o| o.target).collect();
        push_mean(&mut report, spec, *value, "mean_target", &targets);
        let est: Vec<f64> = outs.iter().map(|o| o.estimate).collect();
        push_mean(&mut report, spec, *value, "mean_estimate", &est);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy)]
struct TimingOutcome {
    train: f64,
    scan: f64,
    /// Fit calls made after training (minipatch) or models fitted (split).
    fits: f64,
}

/// Wall-clock seconds for training plus the all-pairs scan, replicates run
/// one at a time. Also records the structural fit count: fits made by the
/// minipatch scan after training (always 0), or models fitted by data
/// splitting (1 + M + M(M-1)/2).
pub fn run_timing(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_protocol(spec, Protocol::Timing)?;
    let mut report = ExperimentReport::new(
        spec,
        vec![
            scale_note(spec),
            "timings depend on the machine and thread count; only ratios are meaningful".into(),
        ],
    );
    let outcomes = run_grid(spec, &mut report, false, |_, sc, streams| {
        let scenario = Scenario::new(sc)?;
        let data = scenario.sample(sc.n, &mut streams.train_rows().rng())?;
        let targets = FeatureSet::all_of_order(sc.m, 2);
        let t0 = Instant::now();
        let fitted = fit_estimator(spec, &data, streams, &targets)?;
        let train = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let (fits, _) = match &fitted {
            Fitted::Mp(ens) => {
                let before = ens.counters().fits;
                let means = all_set_means(&fitted, sc.m, 2)?;
                ((ens.counters().fits - before) as f64, means)
            }
            Fitted::Split(fit) => (fit.model_count() as f64, all_set_means(&fitted, sc.m, 2)?),
        };
        let scan = t1.elapsed().as_secs_f64();
        Ok(TimingOutcome { train, scan, fits })
    })?;
    let fit_metric = match spec.method {
        Method::Mp => "fits_after_training",
        Method::Split => "models_fitted",
    };
    for (value, outs) in spec.grid.iter().zip(&outcomes) {
        let pick = |f: fn(&TimingOutcome) -> f64| outs.iter().map(f).collect::<Vec<f64>>();
        push_mean(
            &mut report,
            spec,
            *value,
            "train_seconds",
            &pick(|o| o.train),
        );
        push_mean(&mut report, spec, *value, "scan_seconds", &pick(|o| o.scan));
        push_mean(
            &mut report,
            spec,
            *value,
            "total_seconds",
            &pick(|o| o.train + o.scan),
        );
        push_mean(&mut report, spec, *value, fit_metric, &pick(|o| o.fits));
    }
    Ok(report)
}

/// Dispatches on the spec's protocol.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    match spec.protocol {
        Protocol::Success => run_success(spec),
        Protocol::CorrelatedDetect => run_correlated_detect(spec),
        Protocol::Coverage => run_coverage(spec),
        Protocol::Timing => run_timing(spec),
    }
}

fn expect_protocol(spec: &ExperimentSpec, p: Protocol) -> Result<()> {
    if spec.protocol != p {
        return Err(Error::InvalidSpec(format!(
            "spec is for protocol {:?}, not {:?}",
            spec.protocol, p
        )));
    }
    Ok(())
}
