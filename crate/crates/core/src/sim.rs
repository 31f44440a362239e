//! Seeded Monte-Carlo studies of Type I error and power: scenario
//! configuration, data generators, location and censoring calibration,
//! normal-theory comparators and the replication driver.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossover::{self, CrossoverDataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, TiePolicy, TwoSampleData};
use crate::linalg::{Cholesky, Matrix};
use crate::numeric::{normal_cdf, normal_quantile, two_sided_normal_pvalue};
use crate::procedures::{
    auc_el_test, correlated_auc_el_test, gehan_el_test, mv_wmw_el_test, Diagnostics, Reference, TestResult,
    TestSettings,
};
use crate::reference::{chisq_pvalue, WeightedChisqSettings};
use crate::variance::{delong_components, delong_diff_variance, gehan_variance, sen_variance, Centering};

pub const MIN_REPLICATIONS: usize = 100;
pub const DEFAULT_SIM_MIXTURE_DRAWS: u64 = 20_000;
const CALIBRATION_SEED: u64 = 0x5eed_ce05;
const CALIBRATION_SUBJECTS: usize = 100_000;

fn one() -> f64 {
    1.0
}

fn default_censoring() -> f64 {
    0.2
}

/// Data-generating family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `X ~ N(0, 1)` vs `Y ~ N(μ + shift, 2²)`, `μ` calibrated to `target_auc`.
    NormalVsNormal {
        target_auc: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Exponentiated [`Family::NormalVsNormal`].
    LognormalVsLognormal {
        target_auc: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `X ~ LN(0, 1)` vs `Y ~ N(μ + shift, 2²)`.
    LognormalVsNormal {
        target_auc: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Paired markers, `X ~ N₂(0, [[1, .9], [.9, 1]])` vs
    /// `Y ~ N₂(μ, [[4, 3.6], [3.6, 4]])`; `shift` is added to `μ₁`.
    BivariateNormalSame {
        target_auc: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `X ~ N₂(0, [[1, 1.8], [1.8, 4]])` vs `Y ~ N₂(μ, [[4, 7.2], [7.2, 16]])`.
    BivariateNormalDiff {
        target_auc: f64,
        #[serde(default)]
        shift: f64,
    },
    BivariateLognormalSame {
        target_auc: f64,
        #[serde(default)]
        shift: f64,
    },
    BivariateLognormalDiff {
        target_auc: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Right-censored Weibull(shape, scale) survival times with exponential
    /// study entry and a common follow-up end calibrated to the target
    /// censoring rate (`censoring_target = 0` disables censoring).
    WeibullSurvival {
        #[serde(default = "one")]
        shape1: f64,
        #[serde(default = "one")]
        scale1: f64,
        #[serde(default = "one")]
        shape2: f64,
        #[serde(default = "one")]
        scale2: f64,
        #[serde(default = "default_censoring")]
        censoring_target: f64,
        #[serde(default = "one")]
        arrival_rate: f64,
    },
    /// Bivariate pair with every marginal `P(X_k < Y_k) = 0.5` when
    /// `shift = 0`: `X ~ N₂(0, [[4, 1.5], [1.5, 2.25]])`, `Y ~ N₂(shift·1, Σ_Y)`.
    /// On the log scale both vectors are exponentiated. `y_cov` overrides
    /// `Σ_Y`.
    MvNullPair {
        #[serde(default)]
        log_scale: bool,
        #[serde(default)]
        shift: f64,
        #[serde(default)]
        y_cov: Option<[[f64; 2]; 2]>,
    },
    /// Two-period, two-sequence crossover responses with normal errors.
    CrossoverModel(CrossoverModel),
}

/// Effects of the crossover response model. Period effects satisfy
/// `π₂ = −π₁`; `lambda`, `pi_b` and `pi_w` apply to baseline and washout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossoverModel {
    pub mu: f64,
    pub gamma: f64,
    pub pi1: f64,
    pub tau: f64,
    pub theta: f64,
    pub lambda: f64,
    pub pi_b: f64,
    pub pi_w: f64,
    pub error_sd: f64,
    /// Standard deviation of a subject effect shared by all four responses.
    pub subject_sd: f64,
    pub baselines: bool,
}

impl Default for CrossoverModel {
    fn default() -> Self {
        Self {
            mu: 100.0,
            gamma: 0.0,
            pi1: 0.0,
            tau: 0.0,
            theta: 0.0,
            lambda: 0.0,
            pi_b: 0.0,
            pi_w: 0.0,
            error_sd: 10.0,
            subject_sd: 0.0,
            baselines: true,
        }
    }
}

/// EL procedure run on every replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Auc,
    AucCompare,
    Gehan,
    MvWmw,
    CrossoverCarryover,
    CrossoverTreatmentBoth,
    CrossoverTreatmentFirst,
    CrossoverFirstOrderCarryover,
    CrossoverSecondOrderCarryover,
}

impl TestKind {
    fn method_name(self) -> &'static str {
        match self {
            TestKind::Auc => "el_auc",
            TestKind::AucCompare => "el_auc_compare",
            TestKind::Gehan => "el_gehan",
            TestKind::MvWmw => "el_mv_wmw",
            TestKind::CrossoverCarryover => "el_carryover",
            TestKind::CrossoverTreatmentBoth => "el_treatment_both_periods",
            TestKind::CrossoverTreatmentFirst => "el_treatment_first_period",
            TestKind::CrossoverFirstOrderCarryover => "el_first_order_carryover",
            TestKind::CrossoverSecondOrderCarryover => "el_second_order_carryover",
        }
    }

    fn is_crossover(self) -> bool {
        matches!(
            self,
            TestKind::CrossoverCarryover
                | TestKind::CrossoverTreatmentBoth
                | TestKind::CrossoverTreatmentFirst
                | TestKind::CrossoverFirstOrderCarryover
                | TestKind::CrossoverSecondOrderCarryover
        )
    }
}

/// Normal-theory comparator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `(ζ̂ − ζ₀)/√V̂` with Sen's variance.
    SenNormal,
    /// `(δ̂ − δ₀)/√V̂(δ̂)` with the DeLong variance.
    DelongNormal,
    /// `τ̂/√V̂(τ̂)`.
    GehanNormal,
    /// `(ζ̂ − ς₀)ᵀ V̂⁻¹ (ζ̂ − ς₀)` against `χ²_p`.
    ChisqQuadratic,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::SenNormal => "sen_normal",
            BaselineKind::DelongNormal => "delong_normal",
            BaselineKind::GehanNormal => "gehan_normal",
            BaselineKind::ChisqQuadratic => "chisq_quadratic",
        }
    }

    fn pairs_with(self) -> TestKind {
        match self {
            BaselineKind::SenNormal => TestKind::Auc,
            BaselineKind::DelongNormal => TestKind::AucCompare,
            BaselineKind::GehanNormal => TestKind::Gehan,
            BaselineKind::ChisqQuadratic => TestKind::MvWmw,
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

/// A Monte-Carlo scenario, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub family: Family,
    pub n1: usize,
    pub n2: usize,
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    pub test: TestKind,
    #[serde(default)]
    pub baselines: Vec<BaselineKind>,
    /// Overrides the null value implied by the family.
    #[serde(default)]
    pub null_value: Option<Vec<f64>>,
    #[serde(default)]
    pub mixture_draws: Option<u64>,
    #[serde(default)]
    pub centering: Centering,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.replications < MIN_REPLICATIONS {
            return fail(format!("replications must be at least {MIN_REPLICATIONS}, got {}", self.replications));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.n1 < 2 || self.n2 < 2 {
            return fail("both group sizes must be at least 2".into());
        }
        if let Some(d) = self.mixture_draws {
            WeightedChisqSettings { draws: d, seed: 0 }
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        let compatible = match &self.family {
            Family::NormalVsNormal { .. } | Family::LognormalVsLognormal { .. } | Family::LognormalVsNormal { .. } => {
                self.test == TestKind::Auc
            }
            Family::BivariateNormalSame { .. }
            | Family::BivariateNormalDiff { .. }
            | Family::BivariateLognormalSame { .. }
            | Family::BivariateLognormalDiff { .. } => matches!(self.test, TestKind::AucCompare | TestKind::MvWmw),
            Family::WeibullSurvival { .. } => self.test == TestKind::Gehan,
            Family::MvNullPair { .. } => self.test == TestKind::MvWmw,
            Family::CrossoverModel(_) => self.test.is_crossover(),
        };
        if !compatible {
            return fail(format!("test {:?} cannot run on family {}", self.test, self.family.name()));
        }
        for b in &self.baselines {
            if b.pairs_with() != self.test {
                return fail(format!("baseline {} does not apply to test {:?}", b.name(), self.test));
            }
        }
        if let Family::CrossoverModel(m) = &self.family {
            let needs = matches!(
                self.test,
                TestKind::CrossoverFirstOrderCarryover | TestKind::CrossoverSecondOrderCarryover
            );
            if needs && !m.baselines {
                return fail("baseline carryover tests need baselines = true".into());
            }
        }
        match &self.family {
            Family::NormalVsNormal { target_auc, .. }
            | Family::LognormalVsLognormal { target_auc, .. }
            | Family::LognormalVsNormal { target_auc, .. }
            | Family::BivariateNormalSame { target_auc, .. }
            | Family::BivariateNormalDiff { target_auc, .. }
            | Family::BivariateLognormalSame { target_auc, .. }
            | Family::BivariateLognormalDiff { target_auc, .. } => {
                if !(*target_auc > 0.0 && *target_auc < 1.0) {
                    return fail(format!("target_auc must lie in (0, 1), got {target_auc}"));
                }
            }
            Family::WeibullSurvival {
                shape1,
                scale1,
                shape2,
                scale2,
                censoring_target,
                arrival_rate,
            } => {
                if [shape1, scale1, shape2, scale2, arrival_rate].iter().any(|v| !(**v > 0.0)) {
                    return fail("Weibull shapes, scales and the arrival rate must be positive".into());
                }
                if !(*censoring_target >= 0.0 && *censoring_target < 1.0) {
                    return fail(format!("censoring_target must lie in [0, 1), got {censoring_target}"));
                }
            }
            _ => {}
        }
        if let Some(v) = &self.null_value {
            let expected = self.null_dim();
            if v.len() != expected {
                return fail(format!("null_value needs {expected} entries, got {}", v.len()));
            }
        }
        Ok(())
    }

    fn null_dim(&self) -> usize {
        match self.test {
            TestKind::MvWmw | TestKind::CrossoverTreatmentBoth => 2,
            _ => 1,
        }
    }

    /// Null value tested on every replication.
    pub fn null(&self) -> Vec<f64> {
        if let Some(v) = &self.null_value {
            return v.clone();
        }
        match self.test {
            TestKind::Auc => vec![self.family.target_auc().unwrap_or(0.5)],
            TestKind::AucCompare | TestKind::Gehan => vec![0.0],
            TestKind::MvWmw => vec![0.5, 0.5],
            TestKind::CrossoverTreatmentBoth => vec![0.5, 0.5],
            TestKind::CrossoverTreatmentFirst => vec![0.5],
            _ => vec![0.0],
        }
    }
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::NormalVsNormal { .. } => "normal_vs_normal",
            Family::LognormalVsLognormal { .. } => "lognormal_vs_lognormal",
            Family::LognormalVsNormal { .. } => "lognormal_vs_normal",
            Family::BivariateNormalSame { .. } => "bivariate_normal_same",
            Family::BivariateNormalDiff { .. } => "bivariate_normal_diff",
            Family::BivariateLognormalSame { .. } => "bivariate_lognormal_same",
            Family::BivariateLognormalDiff { .. } => "bivariate_lognormal_diff",
            Family::WeibullSurvival { .. } => "weibull_survival",
            Family::MvNullPair { .. } => "mv_null_pair",
            Family::CrossoverModel(_) => "crossover_model",
        }
    }

    fn target_auc(&self) -> Option<f64> {
        match self {
            Family::NormalVsNormal { target_auc, .. }
            | Family::LognormalVsLognormal { target_auc, .. }
            | Family::LognormalVsNormal { target_auc, .. }
            | Family::BivariateNormalSame { target_auc, .. }
            | Family::BivariateNormalDiff { target_auc, .. }
            | Family::BivariateLognormalSame { target_auc, .. }
            | Family::BivariateLognormalDiff { target_auc, .. } => Some(*target_auc),
            _ => None,
        }
    }
}

/// Univariate families with a calibrated location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationFamily {
    NormalVsNormal,
    LognormalVsLognormal,
    LognormalVsNormal,
}

const Y_SD: f64 = 2.0;

/// `μ` such that `P(X < Y) = target` for `X ~ N(0,1)` or `LN(0,1)` and
/// `Y ~ N(μ, 2²)` or `LN(μ, 2²)`.
pub fn calibrate_location(family: LocationFamily, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!("target AUC must lie in (0, 1), got {target}")));
    }
    match family {
        LocationFamily::NormalVsNormal | LocationFamily::LognormalVsLognormal => {
            Ok((1.0 + Y_SD * Y_SD).sqrt() * normal_quantile(target))
        }
        LocationFamily::LognormalVsNormal => {
            let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if lognormal_vs_normal_auc(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 {
                    break;
                }
            }
            let mu = 0.5 * (lo + hi);
            let achieved = lognormal_vs_normal_auc(mu);
            if (achieved - target).abs() < 1e-6 {
                Ok(mu)
            } else {
                Err(Error::NonConvergence {
                    iterations: 200,
                    residual: (achieved - target).abs(),
                })
            }
        }
    }
}

/// `P(X < Y)` for `X ~ LN(0, 1)`, `Y ~ N(μ, 2²)`:
/// `∫ φ(z) Φ((μ − eᶻ)/2) dz`.
pub fn lognormal_vs_normal_auc(mu: f64) -> f64 {
    let f = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * normal_cdf((mu - z.exp()) / Y_SD);
    adaptive_simpson(&f, -12.0, 12.0, 1e-13, 50)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

/// `μ` with `P(X < Y) = target` for `X ~ N(0, σx²)`, `Y ~ N(μ, σy²)`.
pub fn bivariate_marginal_location(var_x: f64, var_y: f64, target: f64) -> f64 {
    (var_x + var_y).sqrt() * normal_quantile(target)
}

/// Censoring produced by exponential entry on a study that ends at
/// `follow_up`: entry `E` is drawn from `Exp(rate)` conditioned on
/// `E < follow_up` and the censoring time is `follow_up − E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    pub arrival_rate: f64,
    /// `None` means unbounded follow-up (no censoring).
    pub follow_up: Option<f64>,
}

impl CensoringModel {
    fn censoring_time(&self, u: f64) -> f64 {
        match self.follow_up {
            None => f64::INFINITY,
            Some(l) => {
                let r = self.arrival_rate;
                let entry = -(-u * (-(-r * l).exp_m1())).ln_1p() / r;
                (l - entry).max(0.0)
            }
        }
    }
}

/// Weibull survival time by inversion, `scale · (−ln(1 − u))^{1/shape}`.
fn weibull_time(shape: f64, scale: f64, u: f64) -> f64 {
    scale * (-(-u).ln_1p()).powf(1.0 / shape)
}

/// Follow-up length giving the target overall censoring proportion for
/// Weibull(`shape`, `scale`) groups of sizes `n1`, `n2`.
///
/// Bisection over the follow-up on a fixed calibration sample of 10⁵
/// subjects; the same uniforms are reused at every trial length, which
/// makes the censored fraction monotone in the length.
pub fn calibrate_censoring(
    weibull1: (f64, f64),
    weibull2: (f64, f64),
    arrival_rate: f64,
    target_rate: f64,
    n1: usize,
    n2: usize,
) -> Result<Option<f64>> {
    if !(0.0..1.0).contains(&target_rate) {
        return Err(Error::invalid(format!("target censoring rate must lie in [0, 1), got {target_rate}")));
    }
    if target_rate == 0.0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let share1 = n1 as f64 / (n1 + n2) as f64;
    let sample: Vec<(f64, f64)> = (0..CALIBRATION_SUBJECTS)
        .map(|k| {
            let (shape, scale) = if (k as f64 + 0.5) / (CALIBRATION_SUBJECTS as f64) < share1 { weibull1 } else { weibull2 };
            let t = weibull_time(shape, scale, rng.random::<f64>());
            (t, rng.random::<f64>())
        })
        .collect();
    let fraction = |l: f64| {
        let model = CensoringModel {
            arrival_rate,
            follow_up: Some(l),
        };
        sample.iter().filter(|(t, u)| model.censoring_time(*u) < *t).count() as f64 / sample.len() as f64
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while fraction(hi) > target_rate {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NonConvergence {
                iterations: 0,
                residual: fraction(hi) - target_rate,
            });
        }
    }
    let mut iterations = 0;
    while hi - lo > 1e-10 * hi && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid) > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let achieved = fraction(hi);
    if (achieved - target_rate).abs() <= 0.01 {
        Ok(Some(hi))
    } else {
        Err(Error::NonConvergence {
            iterations,
            residual: (achieved - target_rate).abs(),
        })
    }
}

/// Realized censoring fraction of a fresh sample under a censoring model.
pub fn realized_censoring(weibull: (f64, f64), model: CensoringModel, subjects: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let censored = (0..subjects)
        .filter(|_| {
            let t = weibull_time(weibull.0, weibull.1, rng.random::<f64>());
            model.censoring_time(rng.random::<f64>()) < t
        })
        .count();
    censored as f64 / subjects as f64
}

/// Quantities derived once per scenario before any replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Location of group 2 (per coordinate for bivariate families),
    /// including any shift.
    pub location: Option<Vec<f64>>,
    pub censoring: Option<CensoringModel>,
}

pub fn calibrate(config: &ScenarioConfig) -> Result<Calibration> {
    let loc = |f: LocationFamily, t: f64, s: f64| calibrate_location(f, t).map(|m| Some(vec![m + s]));
    let biv = |(vx1, vx2): (f64, f64), (vy1, vy2): (f64, f64), t: f64, s: f64| {
        Some(vec![
            bivariate_marginal_location(vx1, vy1, t) + s,
            bivariate_marginal_location(vx2, vy2, t),
        ])
    };
    let location = match &config.family {
        Family::NormalVsNormal { target_auc, shift } => loc(LocationFamily::NormalVsNormal, *target_auc, *shift)?,
        Family::LognormalVsLognormal { target_auc, shift } => loc(LocationFamily::LognormalVsLognormal, *target_auc, *shift)?,
        Family::LognormalVsNormal { target_auc, shift } => loc(LocationFamily::LognormalVsNormal, *target_auc, *shift)?,
        Family::BivariateNormalSame { target_auc, shift } | Family::BivariateLognormalSame { target_auc, shift } => {
            biv((1.0, 1.0), (4.0, 4.0), *target_auc, *shift)
        }
        Family::BivariateNormalDiff { target_auc, shift } | Family::BivariateLognormalDiff { target_auc, shift } => {
            biv((1.0, 4.0), (4.0, 16.0), *target_auc, *shift)
        }
        Family::MvNullPair { shift, .. } => Some(vec![*shift, *shift]),
        _ => None,
    };
    let censoring = match &config.family {
        Family::WeibullSurvival {
            shape1,
            scale1,
            shape2,
            scale2,
            censoring_target,
            arrival_rate,
        } => Some(CensoringModel {
            arrival_rate: *arrival_rate,
            follow_up: calibrate_censoring(
                (*shape1, *scale1),
                (*shape2, *scale2),
                *arrival_rate,
                *censoring_target,
                config.n1,
                config.n2,
            )?,
        }),
        _ => None,
    };
    Ok(Calibration { location, censoring })
}

/// One replication's data.
#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    TwoSample(TwoSampleData),
    Crossover(CrossoverDataset),
}

/// Bivariate normal sampler from a covariance's triangular factor.
struct Mvn2 {
    mean: [f64; 2],
    factor: Matrix,
}

impl Mvn2 {
    fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let m = Matrix::from_rows(&cov);
        let invalid = || Error::InvalidCovariance(cov.iter().map(|r| r.to_vec()).collect());
        if m.asymmetry() > 0.0 {
            return Err(invalid());
        }
        let chol = Cholesky::new(&m, 1e-12).ok_or_else(invalid)?;
        Ok(Self {
            mean,
            factor: chol.lower().clone(),
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let lz = self.factor.matvec(&z);
        [self.mean[0] + lz[0], self.mean[1] + lz[1]]
    }
}

const MV_X_COV: [[f64; 2]; 2] = [[4.0, 1.5], [1.5, 2.25]];
const MV_Y_LOG_COV: [[f64; 2]; 2] = [[1.0, 0.25], [0.25, 0.25]];

/// Group-2 covariance of the normal multivariate null pair: variances 2.5
/// and 1 with correlation 0.5. The literal `[[2.5, 2.5], [2.5, 1]]` is
/// indefinite and fails with [`Error::InvalidCovariance`].
pub fn mv_null_y_cov() -> [[f64; 2]; 2] {
    let off = 0.5 * (2.5_f64 * 1.0).sqrt();
    [[2.5, off], [off, 1.0]]
}

/// Per-replication generator: `ChaCha8(seed)` on stream `replication`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Draws replication `replication` of the scenario.
pub fn generate(config: &ScenarioConfig, calibration: &Calibration, replication: u64) -> Result<Generated> {
    let mut rng = replication_rng(config.seed, replication);
    generate_with(config, calibration, &mut rng)
}

fn generate_with(config: &ScenarioConfig, calibration: &Calibration, rng: &mut ChaCha8Rng) -> Result<Generated> {
    let (n1, n2) = (config.n1, config.n2);
    let loc = || calibration.location.clone().expect("location calibrated for this family");
    let normal = |rng: &mut ChaCha8Rng, mean: f64, sd: f64| mean + sd * rng.sample::<f64, _>(StandardNormal);
    let two = |x: Vec<f64>, y: Vec<f64>| TwoSampleData::univariate(&x, &y).map(Generated::TwoSample);
    let pairs = |rng: &mut ChaCha8Rng, x: &Mvn2, y: &Mvn2, log: bool| {
        let t = |p: [f64; 2]| if log { vec![p[0].exp(), p[1].exp()] } else { p.to_vec() };
        let g1: Vec<Vec<f64>> = (0..n1).map(|_| t(x.sample(rng))).collect();
        let g2: Vec<Vec<f64>> = (0..n2).map(|_| t(y.sample(rng))).collect();
        TwoSampleData::multivariate(g1, g2).map(Generated::TwoSample)
    };
    match &config.family {
        Family::NormalVsNormal { .. } | Family::LognormalVsLognormal { .. } | Family::LognormalVsNormal { .. } => {
            let mu = loc()[0];
            let x_log = !matches!(config.family, Family::NormalVsNormal { .. });
            let y_log = matches!(config.family, Family::LognormalVsLognormal { .. });
            let x: Vec<f64> = (0..n1)
                .map(|_| normal(rng, 0.0, 1.0))
                .map(|v| if x_log { v.exp() } else { v })
                .collect();
            let y: Vec<f64> = (0..n2)
                .map(|_| normal(rng, mu, Y_SD))
                .map(|v| if y_log { v.exp() } else { v })
                .collect();
            two(x, y)
        }
        Family::BivariateNormalSame { .. }
        | Family::BivariateNormalDiff { .. }
        | Family::BivariateLognormalSame { .. }
        | Family::BivariateLognormalDiff { .. } => {
            let same = matches!(
                config.family,
                Family::BivariateNormalSame { .. } | Family::BivariateLognormalSame { .. }
            );
            let log = matches!(
                config.family,
                Family::BivariateLognormalSame { .. } | Family::BivariateLognormalDiff { .. }
            );
            let (cx, cy) = if same {
                ([[1.0, 0.9], [0.9, 1.0]], [[4.0, 3.6], [3.6, 4.0]])
            } else {
                ([[1.0, 1.8], [1.8, 4.0]], [[4.0, 7.2], [7.2, 16.0]])
            };
            let mu = loc();
            pairs(rng, &Mvn2::new([0.0, 0.0], cx)?, &Mvn2::new([mu[0], mu[1]], cy)?, log)
        }
        Family::MvNullPair { log_scale, shift, y_cov } => {
            let cy = y_cov.unwrap_or(if *log_scale { MV_Y_LOG_COV } else { mv_null_y_cov() });
            pairs(rng, &Mvn2::new([0.0, 0.0], MV_X_COV)?, &Mvn2::new([*shift, *shift], cy)?, *log_scale)
        }
        Family::WeibullSurvival {
            shape1,
            scale1,
            shape2,
            scale2,
            ..
        } => {
            let model = calibration.censoring.expect("censoring calibrated for this family");
            let mut draw = |n: usize, shape: f64, scale: f64| {
                let dist = Weibull::new(scale, shape).expect("validated parameters");
                let mut times = Vec::with_capacity(n);
                let mut censored = Vec::with_capacity(n);
                for _ in 0..n {
                    let t: f64 = dist.sample(rng);
                    let c = model.censoring_time(rng.random::<f64>());
                    times.push(t.min(c));
                    censored.push(c < t);
                }
                (times, censored)
            };
            let (t1, c1) = draw(n1, *shape1, *scale1);
            let (t2, c2) = draw(n2, *shape2, *scale2);
            TwoSampleData::censored(&t1, &c1, &t2, &c2).map(Generated::TwoSample)
        }
        Family::CrossoverModel(m) => {
            let mut subjects = |n: usize, sign: f64, prefix: &str| {
                (0..n)
                    .map(|k| {
                        let s = m.subject_sd * rng.sample::<f64, _>(StandardNormal);
                        let mut e = || s + m.error_sd * rng.sample::<f64, _>(StandardNormal);
                        // sign = −1 for the AB sequence, +1 for BA
                        let period1 = m.mu + sign * m.gamma + m.pi1 + sign * m.tau + e();
                        let period2 = m.mu + sign * m.gamma - m.pi1 - sign * m.tau - sign * m.theta + e();
                        let (baseline, washout) = if m.baselines {
                            (
                                Some(m.mu + sign * m.gamma + m.pi_b + e()),
                                Some(m.mu + sign * m.gamma + m.pi_w + sign * m.lambda + e()),
                            )
                        } else {
                            (None, None)
                        };
                        SubjectRecord {
                            id: format!("{prefix}{k}"),
                            period1,
                            period2,
                            baseline,
                            washout,
                        }
                    })
                    .collect::<Vec<_>>()
            };
            let seq1 = subjects(n1, -1.0, "ab");
            let seq2 = subjects(n2, 1.0, "ba");
            CrossoverDataset::new(seq1, seq2).map(Generated::Crossover)
        }
    }
}

fn baseline_result(name: &str, estimate: Vec<f64>, null: Vec<f64>, stat: f64, reference: Reference, p: f64, variance: Vec<f64>) -> TestResult {
    TestResult {
        test: name.to_string(),
        estimate,
        null_value: null,
        log_el_ratio: None,
        scaled_statistic: stat,
        reference,
        p_value: p,
        diagnostics: Diagnostics {
            iterations: 0,
            residual: 0.0,
            pair_count: 0,
            variance,
            degenerate: false,
            tie_policy: TiePolicy::Strict,
            centering: Centering::Estimate,
        },
    }
}

/// Normal-theory comparator on the same data. Univariate comparators report
/// `|z|` and a two-sided normal p-value; the quadratic form is referred to
/// `χ²_p`. Variances center at the estimates.
pub fn baseline_normal_approx(kind: BaselineKind, data: &TwoSampleData, null: &[f64]) -> Result<TestResult> {
    let policy = TiePolicy::Strict;
    let z_test = |estimate: f64, null: f64, variance: Result<f64>| -> Result<TestResult> {
        let diff = estimate - null;
        if diff.abs() <= 1e-13 {
            return Ok(baseline_result(kind.name(), vec![estimate], vec![null], 0.0, Reference::NormalTwoSided, 1.0, Vec::new()));
        }
        let v = variance?;
        if !(v > 0.0) {
            return Err(Error::DegenerateVariance);
        }
        let z = diff / v.sqrt();
        Ok(baseline_result(
            kind.name(),
            vec![estimate],
            vec![null],
            z.abs(),
            Reference::NormalTwoSided,
            two_sided_normal_pvalue(z),
            vec![v],
        ))
    };
    let expect_null = |len: usize| {
        if null.len() == len {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: len,
                found: null.len(),
            })
        }
    };
    match kind {
        BaselineKind::SenNormal => {
            expect_null(1)?;
            let km = KernelMatrix::wmw(&data.column1(0), &data.column2(0), policy);
            let est = km.u_statistic()[0];
            z_test(est, null[0], sen_variance(&km, est))
        }
        BaselineKind::DelongNormal => {
            expect_null(1)?;
            let markers: Vec<KernelMatrix> = (0..2).map(|k| KernelMatrix::wmw(&data.column1(k), &data.column2(k), policy)).collect();
            let centers = [markers[0].u_statistic()[0], markers[1].u_statistic()[0]];
            let variance = delong_components(&[&markers[0], &markers[1]], &centers)
                .and_then(|c| delong_diff_variance(&c.s10, &c.s01, c.n1, c.n2));
            z_test(centers[0] - centers[1], null[0], variance)
        }
        BaselineKind::GehanNormal => {
            expect_null(1)?;
            let km = KernelMatrix::gehan(data)?;
            let tau = km.sums()[0];
            let times: Vec<f64> = data.column1(0).into_iter().chain(data.column2(0)).collect();
            let censored: Vec<bool> = data.censor1().ok_or(Error::MissingCensorFlags)?.iter().chain(data.censor2().ok_or(Error::MissingCensorFlags)?).copied().collect();
            z_test(tau, null[0], gehan_variance(&times, &censored, data.n1(), data.n2()))
        }
        BaselineKind::ChisqQuadratic => {
            let p = data.dim();
            expect_null(p)?;
            let markers: Vec<KernelMatrix> = (0..p).map(|k| KernelMatrix::wmw(&data.column1(k), &data.column2(k), policy)).collect();
            let est: Vec<f64> = markers.iter().map(|m| m.u_statistic()[0]).collect();
            let diff: Vec<f64> = est.iter().zip(null).map(|(e, t)| e - t).collect();
            if diff.iter().all(|d| d.abs() <= 1e-13) {
                return Ok(baseline_result(kind.name(), est, null.to_vec(), 0.0, Reference::ChiSquared { df: p }, 1.0, Vec::new()));
            }
            let refs: Vec<&KernelMatrix> = markers.iter().collect();
            let cov = delong_components(&refs, &est)?.covariance();
            let chol = Cholesky::new(&cov, 1e-12).ok_or(Error::DegenerateVariance)?;
            let w = chol.forward(&diff);
            let q: f64 = w.iter().map(|v| v * v).sum();
            Ok(baseline_result(
                kind.name(),
                est,
                null.to_vec(),
                q,
                Reference::ChiSquared { df: p },
                chisq_pvalue(q, p),
                cov.as_slice().to_vec(),
            ))
        }
    }
}

/// Rejection tally for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub rejections: usize,
    pub completed: usize,
    pub failures: usize,
    /// Over completed replications.
    pub rejection_rate: f64,
    /// `√(r(1 − r)/completed)`.
    pub monte_carlo_se: f64,
    pub failure_fraction: f64,
    pub failure_kinds: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub null_value: Vec<f64>,
    pub calibration: Calibration,
    pub replications_completed: usize,
    pub methods: Vec<MethodSummary>,
    /// Censored fraction over all generated subjects, when censoring applies.
    pub realized_censoring: Option<f64>,
    /// Wall-clock time; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ScenarioReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

struct ReplicationOutcome {
    decisions: Vec<std::result::Result<bool, &'static str>>,
    censored: usize,
    subjects: usize,
}

fn run_replication(config: &ScenarioConfig, calibration: &Calibration, null: &[f64], replication: u64) -> ReplicationOutcome {
    let methods = 1 + config.baselines.len();
    let mut rng = replication_rng(config.seed, replication);
    let data = match generate_with(config, calibration, &mut rng) {
        Ok(d) => d,
        Err(e) => {
            return ReplicationOutcome {
                decisions: vec![Err(e.kind()); methods],
                censored: 0,
                subjects: 0,
            }
        }
    };
    let settings = TestSettings {
        mixture: WeightedChisqSettings {
            draws: config.mixture_draws.unwrap_or(DEFAULT_SIM_MIXTURE_DRAWS),
            seed: rng.next_u64(),
        },
        centering: config.centering,
        ..Default::default()
    };
    let alpha = config.alpha;
    let decide = |r: Result<TestResult>| r.map(|t| t.rejects(alpha)).map_err(|e| e.kind());
    let mut decisions = Vec::with_capacity(methods);
    let (mut censored, mut subjects) = (0, 0);
    match &data {
        Generated::TwoSample(d) => {
            let el = match config.test {
                TestKind::Auc => auc_el_test(&d.column1(0), &d.column2(0), null[0], TiePolicy::Strict, &settings),
                TestKind::AucCompare => {
                    let rows = |g: &[Vec<f64>]| g.iter().map(|r| [r[0], r[1]]).collect::<Vec<_>>();
                    correlated_auc_el_test(&rows(d.group1()), &rows(d.group2()), null[0], None, TiePolicy::Strict, &settings)
                }
                TestKind::Gehan => gehan_el_test(d, &settings),
                TestKind::MvWmw => mv_wmw_el_test(d, Some(null), TiePolicy::Strict, &settings),
                _ => unreachable!("validated pairing"),
            };
            decisions.push(decide(el));
            for &b in &config.baselines {
                decisions.push(decide(baseline_normal_approx(b, d, null)));
            }
            if let (Some(c1), Some(c2)) = (d.censor1(), d.censor2()) {
                censored = c1.iter().chain(c2).filter(|c| **c).count();
                subjects = c1.len() + c2.len();
            }
        }
        Generated::Crossover(d) => {
            let el = match config.test {
                TestKind::CrossoverCarryover => crossover::carryover_test(d, &settings),
                TestKind::CrossoverTreatmentBoth => crossover::treatment_test_both_periods(d, &settings),
                TestKind::CrossoverTreatmentFirst => crossover::treatment_test_first_period(d, &settings),
                TestKind::CrossoverFirstOrderCarryover => crossover::first_order_carryover_test(d, &settings),
                TestKind::CrossoverSecondOrderCarryover => crossover::second_order_carryover_test(d, &settings),
                _ => unreachable!("validated pairing"),
            };
            decisions.push(decide(el));
        }
    }
    ReplicationOutcome {
        decisions,
        censored,
        subjects,
    }
}

/// Runs every replication on a pool of `workers` threads (0 = rayon's
/// default) and tallies rejections per method in replication order.
pub fn run_scenario(config: &ScenarioConfig, workers: usize) -> Result<ScenarioReport> {
    config.validate()?;
    let start = std::time::Instant::now();
    let calibration = calibrate(config)?;
    let null = config.null();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|r| run_replication(config, &calibration, &null, r))
            .collect()
    });

    let mut names = vec![config.test.method_name().to_string()];
    names.extend(config.baselines.iter().map(|b| b.name().to_string()));
    let methods = names
        .into_iter()
        .enumerate()
        .map(|(m, method)| {
            let (mut rejections, mut completed) = (0, 0);
            let mut failure_kinds = BTreeMap::new();
            for o in &outcomes {
                match o.decisions[m] {
                    Ok(reject) => {
                        completed += 1;
                        rejections += usize::from(reject);
                    }
                    Err(kind) => *failure_kinds.entry(kind.to_string()).or_insert(0) += 1,
                }
            }
            let failures = config.replications - completed;
            let rate = if completed > 0 { rejections as f64 / completed as f64 } else { 0.0 };
            let se = if completed > 0 { (rate * (1.0 - rate) / completed as f64).sqrt() } else { 0.0 };
            MethodSummary {
                method,
                rejections,
                completed,
                failures,
                rejection_rate: rate,
                monte_carlo_se: se,
                failure_fraction: failures as f64 / config.replications as f64,
                failure_kinds,
            }
        })
        .collect::<Vec<_>>();
    let replications_completed = outcomes.iter().filter(|o| o.decisions[0].is_ok()).count();
    let (censored, subjects) = outcomes.iter().fold((0, 0), |(c, s), o| (c + o.censored, s + o.subjects));
    let realized_censoring = (subjects > 0).then(|| censored as f64 / subjects as f64);
    Ok(ScenarioReport {
        config: config.clone(),
        null_value: null,
        calibration,
        replications_completed,
        methods,
        realized_censoring,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
