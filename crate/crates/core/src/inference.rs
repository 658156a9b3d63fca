//! Normal-approximation confidence intervals over per-sample scores, with
//! optional Bonferroni adjustment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlusion::{EstimatorTag, FeatureSet, InteractionScoreSamples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionResult {
    pub feature_set: FeatureSet,
    pub estimate: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub alpha: f64,
    pub n_eval: usize,
    /// Number of simultaneous intervals alpha was divided by (1 = none).
    pub multiplicity: usize,
    pub estimator: EstimatorTag,
    /// Set when every score was identical, giving a zero-width interval.
    pub degenerate_variance: bool,
}

impl InteractionResult {
    /// True iff the interval excludes zero.
    pub fn significant(&self) -> bool {
        significant(self.ci_lo, self.ci_hi)
    }

    pub fn width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}

pub fn significant(ci_lo: f64, ci_hi: f64) -> bool {
    !(ci_lo <= 0.0 && 0.0 <= ci_hi)
}

/// `mean ± z_{alpha'/2} sd / sqrt(n)` with `alpha' = alpha / multiplicity`.
pub fn ci_normal(
    samples: &InteractionScoreSamples,
    alpha: f64,
    multiplicity: usize,
) -> Result<InteractionResult> {
    let n = samples.scores.len();
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 evaluation samples, got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidData(format!(
            "alpha {alpha} must lie in (0, 1)"
        )));
    }
    if multiplicity == 0 {
        return Err(Error::InvalidData("multiplicity must be at least 1".into()));
    }
    let mean = samples.scores.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.scores.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    let degenerate = samples.scores.iter().all(|&v| v == samples.scores[0]);
    let sd = if degenerate { 0.0 } else { sd };
    let z = critical_value(alpha / multiplicity as f64);
    let half = z * sd / (n as f64).sqrt();
    Ok(InteractionResult {
        feature_set: samples.feature_set.clone(),
        estimate: mean,
        sd,
        ci_lo: mean - half,
        ci_hi: mean + half,
        alpha,
        n_eval: n,
        multiplicity,
        estimator: samples.estimator,
        degenerate_variance: degenerate,
    })
}

/// Two-sided critical value `z_{alpha/2}`, i.e. `Phi^{-1}(1 - alpha/2)`.
pub fn critical_value(alpha: f64) -> f64 {
    -normal_quantile(alpha / 2.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF, Wichura's AS 241 (PPND16), relative
/// accuracy about 1e-16 over (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_5,
    133.141_667_891_784_38,
    1_971.590_950_306_551_3,
    13_731.693_765_509_46,
    45_921.953_931_549_87,
    67_265.770_927_008_7,
    33_430.575_583_588_13,
    2_509.080_928_730_122_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5_394.196_021_424_751,
    21_213.794_301_586_597,
    39_307.895_800_092_71,
    28_729.085_735_721_943,
    5_226.495_278_852_545,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    0.689_767_334_985_1,
    0.148_103_976_427_480_08,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_888,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];
