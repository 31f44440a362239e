//! Complete EL test procedures: kernel, multiplier, scaling, reference
//! distribution and p-value.

use serde::{Deserialize, Serialize};

use crate::el::{el_log_ratio, scaled_statistic_uni, solve_lambda_multi, CenteredKernelValues, ElSolution, SolverSettings};
use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, TiePolicy, TwoSampleData};
use crate::reference::{chi1_pvalue, weighted_chisq_pvalue, WeightedChisqSettings};
use crate::variance::{
    delong_components, delong_diff_variance, eigen_weights, gehan_variance, h_hat, sen_variance, Centering,
    EigenWeights,
};

/// Distribution the scaled statistic is referred to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Chi1,
    WeightedChisq { weights: Vec<f64>, draws: u64, seed: u64 },
    ChiSquared { df: usize },
    NormalTwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub pair_count: usize,
    /// Variance estimates used in the scaling: `V̂` for scalar tests, the
    /// row-major covariance matrix for vector tests.
    pub variance: Vec<f64>,
    /// Set when every centered kernel value is zero or the estimate equals
    /// the null value, so the statistic is zero without a solve.
    pub degenerate: bool,
    pub tie_policy: TiePolicy,
    pub centering: Centering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub estimate: Vec<f64>,
    pub null_value: Vec<f64>,
    /// `−2 log R(θ₀)`; absent for the normal-theory baselines.
    pub log_el_ratio: Option<f64>,
    pub scaled_statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub diagnostics: Diagnostics,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TestSettings {
    pub solver: SolverSettings,
    pub mixture: WeightedChisqSettings,
    /// Centering of the structural components in the AUC and multivariate
    /// WMW variances. The correlated-AUC variance always centers at the
    /// per-marker estimates, since a difference null does not fix them.
    pub centering: Centering,
}

const ESTIMATE_TOL: f64 = 1e-13;

fn at_null(estimate: &[f64], null: &[f64]) -> bool {
    estimate.iter().zip(null).all(|(e, t)| (e - t).abs() <= ESTIMATE_TOL)
}

/// Shared path for every scalar-kernel test: solve at `θ₀`, scale with
/// `σ̂²` from `variance`, refer to χ²₁.
fn scalar_el_test(
    test: &str,
    km: &KernelMatrix,
    theta0: f64,
    settings: &TestSettings,
    centering: Centering,
    variance: impl FnOnce() -> Result<f64>,
) -> Result<TestResult> {
    let psi = km.centered(&[theta0])?;
    let estimate = km.u_statistic();
    let pair_count = km.len();
    let trivial = psi.sum_sq() == 0.0 || at_null(&estimate, &[theta0]);
    let result = |el: &ElSolution, stat: f64, sigma2: Vec<f64>, degenerate: bool| TestResult {
        test: test.to_string(),
        estimate: estimate.clone(),
        null_value: vec![theta0],
        log_el_ratio: Some(el.log_el_ratio),
        scaled_statistic: stat,
        reference: Reference::Chi1,
        p_value: chi1_pvalue(stat),
        diagnostics: Diagnostics {
            iterations: el.iterations,
            residual: el.residual_norm,
            pair_count,
            variance: sigma2,
            degenerate,
            tie_policy: km.tie_policy(),
            centering,
        },
    };
    if trivial {
        let sigma2 = variance().map(|v| vec![v]).unwrap_or_default();
        return Ok(result(&ElSolution::trivial(1), 0.0, sigma2, true));
    }
    let el = el_log_ratio(&psi, &settings.solver)?;
    let sigma2 = match variance() {
        Ok(v) => v,
        Err(Error::DegenerateVariance) => return Err(Error::ConstraintInfeasible),
        Err(e) => return Err(e),
    };
    let stat = scaled_statistic_uni(&psi, &el, sigma2)?;
    Ok(result(&el, stat, vec![sigma2], false))
}

/// AUC test of `P(X < Y) = ζ₀` scaled with Sen's variance.
pub fn auc_el_test(x: &[f64], y: &[f64], zeta0: f64, policy: TiePolicy, settings: &TestSettings) -> Result<TestResult> {
    TwoSampleData::univariate(x, y)?;
    auc_el_test_kernel(&KernelMatrix::wmw(x, y, policy), zeta0, settings)
}

/// [`auc_el_test`] on an already evaluated WMW kernel matrix.
pub fn auc_el_test_kernel(km: &KernelMatrix, zeta0: f64, settings: &TestSettings) -> Result<TestResult> {
    if !(zeta0 > 0.0 && zeta0 < 1.0) {
        return Err(Error::invalid(format!("null AUC must lie in (0, 1), got {zeta0}")));
    }
    let center = match settings.centering {
        Centering::Null => zeta0,
        Centering::Estimate => km.u_statistic()[0],
    };
    scalar_el_test("auc", km, zeta0, settings, settings.centering, || sen_variance(km, center))
}

/// Linear contrasts `ℓ₁…ℓ₄` applied to paired 2-vectors: marker 1 compares
/// `ℓ₁ᵀX` with `ℓ₂ᵀY`, marker 2 compares `ℓ₃ᵀX` with `ℓ₄ᵀY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrasts {
    pub l1: [f64; 2],
    pub l2: [f64; 2],
    pub l3: [f64; 2],
    pub l4: [f64; 2],
}

impl Default for Contrasts {
    fn default() -> Self {
        Self {
            l1: [1.0, 0.0],
            l2: [1.0, 0.0],
            l3: [0.0, 1.0],
            l4: [0.0, 1.0],
        }
    }
}

fn project(v: &[[f64; 2]], l: [f64; 2]) -> Vec<f64> {
    v.iter().map(|p| l[0] * p[0] + l[1] * p[1]).collect()
}

/// Test of `P(ℓ₁ᵀX < ℓ₂ᵀY) − P(ℓ₃ᵀX < ℓ₄ᵀY) = δ₀` for paired markers,
/// scaled with the DeLong variance of the difference.
pub fn correlated_auc_el_test(
    x: &[[f64; 2]],
    y: &[[f64; 2]],
    delta0: f64,
    contrasts: Option<Contrasts>,
    policy: TiePolicy,
    settings: &TestSettings,
) -> Result<TestResult> {
    let c = contrasts.unwrap_or_default();
    let rows = |v: &[[f64; 2]]| v.iter().map(|p| p.to_vec()).collect::<Vec<_>>();
    TwoSampleData::multivariate(rows(x), rows(y))?;
    let m1 = KernelMatrix::wmw(&project(x, c.l1), &project(y, c.l2), policy);
    let m2 = KernelMatrix::wmw(&project(x, c.l3), &project(y, c.l4), policy);
    correlated_auc_el_test_markers(&m1, &m2, delta0, settings)
}

/// Correlated-AUC test from two marker kernel matrices over the same cross
/// pairs, testing `E[m₁] − E[m₂] = δ₀`.
pub fn correlated_auc_el_test_markers(
    m1: &KernelMatrix,
    m2: &KernelMatrix,
    delta0: f64,
    settings: &TestSettings,
) -> Result<TestResult> {
    if !(delta0 > -1.0 && delta0 < 1.0) {
        return Err(Error::invalid(format!("null difference must lie in (-1, 1), got {delta0}")));
    }
    let diff = m1.difference(m2)?;
    let centers = [m1.u_statistic()[0], m2.u_statistic()[0]];
    let mut result = scalar_el_test("auc_compare", &diff, delta0, settings, Centering::Estimate, || {
        let comps = delong_components(&[m1, m2], &centers)?;
        let v = delong_diff_variance(&comps.s10, &comps.s01, comps.n1, comps.n2)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::DegenerateVariance)
        }
    })?;
    result.diagnostics.tie_policy = m1.tie_policy();
    Ok(result)
}

/// Gehan test of `τ = 0` for right-censored data.
pub fn gehan_el_test(data: &TwoSampleData, settings: &TestSettings) -> Result<TestResult> {
    let km = KernelMatrix::gehan(data)?;
    let n_pairs = km.len() as f64;
    let (c1, c2) = (data.censor1().expect("checked"), data.censor2().expect("checked"));
    let times: Vec<f64> = data.column1(0).into_iter().chain(data.column2(0)).collect();
    let censored: Vec<bool> = c1.iter().chain(c2).copied().collect();
    let mut result = scalar_el_test("gehan", &km, 0.0, settings, Centering::Null, || {
        let v = gehan_variance(&times, &censored, data.n1(), data.n2())?;
        if v > 0.0 {
            // σ̂² of the pair mean, so the generic scaling reproduces Σφ²/V̂(τ̂)
            Ok(v / (n_pairs * n_pairs))
        } else {
            Err(Error::DegenerateVariance)
        }
    })?;
    // report τ̂ as the raw sum and V̂(τ̂) on the same scale
    result.estimate = vec![km.sums()[0]];
    result.diagnostics.variance.iter_mut().for_each(|v| *v *= n_pairs * n_pairs);
    Ok(result)
}

/// Multivariate WMW test of `P(X_k < Y_k) = ς₀_k` for every coordinate,
/// referring `l(ς₀)/(n₁n₂)` to a weighted χ² mixture.
pub fn mv_wmw_el_test(data: &TwoSampleData, sigma0: Option<&[f64]>, policy: TiePolicy, settings: &TestSettings) -> Result<TestResult> {
    let km = KernelMatrix::mv_wmw(data, policy);
    let default_null = vec![0.5; data.dim()];
    mv_wmw_el_test_kernel(&km, sigma0.unwrap_or(&default_null), settings)
}

/// [`mv_wmw_el_test`] on an already evaluated vector kernel matrix.
pub fn mv_wmw_el_test_kernel(km: &KernelMatrix, sigma0: &[f64], settings: &TestSettings) -> Result<TestResult> {
    let p = km.dim();
    if p < 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: p });
    }
    if sigma0.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: sigma0.len(),
        });
    }
    settings.mixture.validate()?;
    let psi: CenteredKernelValues = km.centered(sigma0)?;
    let estimate = km.u_statistic();
    let n_pairs = km.len();

    let degenerate = psi.sum_sq() == 0.0;
    let trivial = degenerate || at_null(&estimate, sigma0);
    let mixture = || -> Result<(EigenWeights, Vec<f64>)> {
        let components: Vec<KernelMatrix> = (0..p).map(|k| km.component(k)).collect();
        let refs: Vec<&KernelMatrix> = components.iter().collect();
        let centers = match settings.centering {
            Centering::Null => sigma0.to_vec(),
            Centering::Estimate => estimate.clone(),
        };
        let cov = delong_components(&refs, &centers)?.covariance();
        let h = h_hat(km, sigma0)?;
        Ok((eigen_weights(&h, &cov)?, cov.as_slice().to_vec()))
    };
    let (weights, covariance, el) = if trivial {
        // the statistic is zero whatever the weights; report them when defined
        let (w, cov) = if degenerate { None } else { mixture().ok() }
            .unwrap_or((EigenWeights::new(vec![0.0; p])?, Vec::new()));
        (w, cov, ElSolution::trivial(p))
    } else {
        let (w, cov) = mixture()?;
        (w, cov, solve_lambda_multi(&psi, &settings.solver)?)
    };
    let stat = el.log_el_ratio / n_pairs as f64;
    let p_value = if trivial {
        1.0
    } else {
        weighted_chisq_pvalue(stat, &weights, &settings.mixture)?
    };
    Ok(TestResult {
        test: "mv_wmw".to_string(),
        estimate,
        null_value: sigma0.to_vec(),
        log_el_ratio: Some(el.log_el_ratio),
        scaled_statistic: stat,
        reference: Reference::WeightedChisq {
            weights: weights.as_slice().to_vec(),
            draws: settings.mixture.draws,
            seed: settings.mixture.seed,
        },
        p_value,
        diagnostics: Diagnostics {
            iterations: el.iterations,
            residual: el.residual_norm,
            pair_count: n_pairs,
            variance: covariance,
            degenerate: trivial,
            tie_policy: km.tie_policy(),
            centering: settings.centering,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).map(|z: f64| z + shift).collect()
    }

    #[test]
    fn auc_at_estimate_is_trivial() {
        let x = [1.0, 3.0];
        let y = [2.0, 4.0];
        let r = auc_el_test(&x, &y, 0.75, TiePolicy::Strict, &TestSettings::default()).unwrap();
        assert_eq!(r.log_el_ratio, Some(0.0));
        assert_eq!(r.scaled_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.reference, Reference::Chi1);
    }

    #[test]
    fn complete_separation_is_infeasible() {
        let x = [1.0, 2.0, 3.0];
        let y = [4.0, 5.0];
        assert!(matches!(
            auc_el_test(&x, &y, 0.9, TiePolicy::Strict, &TestSettings::default()),
            Err(Error::ConstraintInfeasible)
        ));
    }

    #[test]
    fn auc_scaling_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normals(&mut rng, 30, 0.0);
        let y = normals(&mut rng, 25, 0.4);
        let zeta0 = 0.5;
        let r = auc_el_test(&x, &y, zeta0, TiePolicy::Strict, &TestSettings::default()).unwrap();
        // Σ(φ − ζ₀)² / [(n₁n₂)² V̂] with V̂ recomputed from the structural components
        let km = KernelMatrix::wmw(&x, &y, TiePolicy::Strict);
        let n1n2 = (x.len() * y.len()) as f64;
        let ss: f64 = km.as_flat().iter().map(|f| (f - zeta0).powi(2)).sum();
        let v10: Vec<f64> = x.iter().map(|&xi| y.iter().filter(|&&yj| xi < yj).count() as f64 / y.len() as f64).collect();
        let v01: Vec<f64> = y.iter().map(|&yj| x.iter().filter(|&&xi| xi < yj).count() as f64 / x.len() as f64).collect();
        let s10 = v10.iter().map(|v| (v - zeta0).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        let s01 = v01.iter().map(|v| (v - zeta0).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        let (n1, n2) = (x.len() as f64, y.len() as f64);
        let vhat = (n1 + n2) / (n1 * n2) * ((n2 * s10 + n1 * s01) / (n1 + n2));
        let direct = r.log_el_ratio.unwrap() * ss / (n1n2 * n1n2 * vhat);
        assert!((r.scaled_statistic - direct).abs() <= 1e-12 * direct.max(1.0));
        assert!((r.p_value - chi1_pvalue(direct)).abs() < 1e-12);
    }

    #[test]
    fn gehan_scaling_matches_direct_formula() {
        let t1 = [3.0, 5.0, 7.5, 2.0, 9.0, 4.5];
        let c1 = [false, true, false, false, true, false];
        let t2 = [1.0, 6.0, 2.5, 8.0, 3.5];
        let c2 = [false, false, true, false, false];
        let data = TwoSampleData::censored(&t1, &c1, &t2, &c2).unwrap();
        let r = gehan_el_test(&data, &TestSettings::default()).unwrap();
        let km = KernelMatrix::gehan(&data).unwrap();
        let ss: f64 = km.as_flat().iter().map(|f| f * f).sum();
        let times: Vec<f64> = t1.iter().chain(&t2).copied().collect();
        let cens: Vec<bool> = c1.iter().chain(&c2).copied().collect();
        let v = gehan_variance(&times, &cens, t1.len(), t2.len()).unwrap();
        let direct = r.log_el_ratio.unwrap() * ss / v;
        assert!((r.scaled_statistic - direct).abs() <= 1e-12 * direct.max(1.0));
        assert_eq!(r.estimate, vec![km.sums()[0]]);
        assert!((r.diagnostics.variance[0] - v).abs() <= 1e-12 * v);
    }

    #[test]
    fn gehan_all_censored_is_trivial() {
        let data = TwoSampleData::censored(&[1.0, 2.0], &[true, true], &[3.0, 4.0], &[true, true]).unwrap();
        let r = gehan_el_test(&data, &TestSettings::default()).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.estimate, vec![0.0]);
        assert!(r.diagnostics.degenerate);
    }

    #[test]
    fn gehan_one_signed_scores_are_infeasible() {
        let data = TwoSampleData::censored(&[5.0, 6.0], &[false, false], &[1.0, 2.0], &[false, false]).unwrap();
        assert!(matches!(
            gehan_el_test(&data, &TestSettings::default()),
            Err(Error::ConstraintInfeasible)
        ));
    }

    #[test]
    fn gehan_requires_censor_flags() {
        let data = TwoSampleData::univariate(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!(matches!(
            gehan_el_test(&data, &TestSettings::default()),
            Err(Error::MissingCensorFlags)
        ));
    }

    #[test]
    fn identical_markers_give_unit_pvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = normals(&mut rng, 12, 0.0);
        let ys = normals(&mut rng, 10, 0.5);
        let x: Vec<[f64; 2]> = xs.iter().map(|&v| [v, v]).collect();
        let y: Vec<[f64; 2]> = ys.iter().map(|&v| [v, v]).collect();
        let r = correlated_auc_el_test(&x, &y, 0.0, None, TiePolicy::Strict, &TestSettings::default()).unwrap();
        assert_eq!(r.scaled_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.log_el_ratio, Some(0.0));
    }

    #[test]
    fn correlated_scaling_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<[f64; 2]> = (0..20)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [a, 0.6 * a + 0.8 * b]
            })
            .collect();
        let y: Vec<[f64; 2]> = (0..18)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [a + 1.0, 0.6 * a + 0.8 * b + 0.3]
            })
            .collect();
        let r = correlated_auc_el_test(&x, &y, 0.0, None, TiePolicy::Strict, &TestSettings::default()).unwrap();
        let (n1, n2) = (x.len(), y.len());
        let phi = |k: usize, i: usize, j: usize| if x[i][k] < y[j][k] { 1.0 } else { 0.0 };
        let zeta: Vec<f64> = (0..2)
            .map(|k| (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).map(|(i, j)| phi(k, i, j)).sum::<f64>() / (n1 * n2) as f64)
            .collect();
        let v10 = |k: usize, i: usize| (0..n2).map(|j| phi(k, i, j)).sum::<f64>() / n2 as f64;
        let v01 = |k: usize, j: usize| (0..n1).map(|i| phi(k, i, j)).sum::<f64>() / n1 as f64;
        let s10 = |k: usize, l: usize| (0..n1).map(|i| (v10(k, i) - zeta[k]) * (v10(l, i) - zeta[l])).sum::<f64>() / (n1 - 1) as f64;
        let s01 = |k: usize, l: usize| (0..n2).map(|j| (v01(k, j) - zeta[k]) * (v01(l, j) - zeta[l])).sum::<f64>() / (n2 - 1) as f64;
        let vhat = (s10(0, 0) - 2.0 * s10(0, 1) + s10(1, 1)) / n1 as f64 + (s01(0, 0) - 2.0 * s01(0, 1) + s01(1, 1)) / n2 as f64;
        let ss: f64 = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).map(|(i, j)| (phi(0, i, j) - phi(1, i, j)).powi(2)).sum();
        let nn = (n1 * n2) as f64;
        let direct = r.log_el_ratio.unwrap() * ss / (nn * nn * vhat);
        assert!((r.scaled_statistic - direct).abs() <= 1e-12 * direct.max(1.0));
        assert!((r.estimate[0] - (zeta[0] - zeta[1])).abs() < 1e-15);
    }

    #[test]
    fn contrasts_select_markers() {
        let x = [[1.0, 5.0], [2.0, 3.0], [0.5, 4.0]];
        let y = [[3.0, 1.0], [0.0, 2.0], [4.0, 6.0]];
        let swapped = Contrasts {
            l1: [0.0, 1.0],
            l2: [0.0, 1.0],
            l3: [1.0, 0.0],
            l4: [1.0, 0.0],
        };
        let s = TestSettings::default();
        let a = correlated_auc_el_test(&x, &y, 0.0, None, TiePolicy::Strict, &s);
        let b = correlated_auc_el_test(&x, &y, 0.0, Some(swapped), TiePolicy::Strict, &s);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert!((a.estimate[0] + b.estimate[0]).abs() < 1e-15);
                assert!((a.scaled_statistic - b.scaled_statistic).abs() < 1e-10);
            }
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            (a, b) => panic!("mismatch {a:?} {b:?}"),
        }
    }

    #[test]
    fn mv_at_estimate_is_trivial() {
        let x = vec![vec![1.0, 0.0], vec![4.0, 3.0]];
        let y = vec![vec![2.0, 1.0], vec![3.0, 2.0]];
        let data = TwoSampleData::multivariate(x, y).unwrap();
        let r = mv_wmw_el_test(&data, None, TiePolicy::Strict, &TestSettings::default()).unwrap();
        assert_eq!(r.estimate, vec![0.5, 0.5]);
        assert_eq!(r.scaled_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn mv_statistic_is_pair_scaled_log_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let row = |rng: &mut ChaCha8Rng, s: f64| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            vec![a + s, 0.5 * a + b]
        };
        let x: Vec<Vec<f64>> = (0..25).map(|_| row(&mut rng, 0.0)).collect();
        let y: Vec<Vec<f64>> = (0..30).map(|_| row(&mut rng, 0.5)).collect();
        let data = TwoSampleData::multivariate(x, y).unwrap();
        let settings = TestSettings {
            mixture: WeightedChisqSettings { draws: 20_000, seed: 1 },
            ..Default::default()
        };
        let r = mv_wmw_el_test(&data, None, TiePolicy::Strict, &settings).unwrap();
        assert!((r.scaled_statistic - r.log_el_ratio.unwrap() / 750.0).abs() < 1e-15);
        let Reference::WeightedChisq { weights, .. } = &r.reference else { panic!() };
        assert_eq!(weights.len(), 2);
        assert!(weights.iter().all(|w| *w > 0.0));
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn mv_requires_two_coordinates() {
        let data = TwoSampleData::univariate(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!(matches!(
            mv_wmw_el_test(&data, None, TiePolicy::Strict, &TestSettings::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pvalue_is_monotone_away_from_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = normals(&mut rng, 40, 0.0);
        let y = normals(&mut rng, 35, 0.8);
        let est = KernelMatrix::wmw(&x, &y, TiePolicy::Strict).u_statistic()[0];
        let s = TestSettings::default();
        for dir in [-1.0, 1.0] {
            let mut prev = 1.0;
            for step in 1..40 {
                let z = est + dir * step as f64 * 0.01;
                if !(z > 0.0 && z < 1.0) {
                    break;
                }
                match auc_el_test(&x, &y, z, TiePolicy::Strict, &s) {
                    Ok(r) => {
                        assert!(r.p_value <= prev + 1e-12, "p({z}) = {} > {prev}", r.p_value);
                        prev = r.p_value;
                    }
                    Err(Error::ConstraintInfeasible) => break,
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn rejects_uses_strict_inequality() {
        let r = auc_el_test(&[1.0, 3.0], &[2.0, 4.0], 0.75, TiePolicy::Strict, &TestSettings::default()).unwrap();
        assert!(!r.rejects(0.05));
        let km = KernelMatrix::from_fn(2, 2, 1, KernelKind::Custom, TiePolicy::Strict, |_, _, o| o[0] = 1.0);
        assert!(auc_el_test_kernel(&km, 1.5, &TestSettings::default()).is_err());
    }

    proptest! {
        #[test]
        fn group_swap_equivariance(
            seed in any::<u64>(),
            n1 in 3usize..20,
            n2 in 3usize..20,
            zeta0 in 0.2f64..0.8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = normals(&mut rng, n1, 0.0);
            let y = normals(&mut rng, n2, 0.3);
            let s = TestSettings::default();
            let a = auc_el_test(&x, &y, zeta0, TiePolicy::Strict, &s);
            let b = auc_el_test(&y, &x, 1.0 - zeta0, TiePolicy::Strict, &s);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.scaled_statistic - b.scaled_statistic).abs() <= 1e-9 * (1.0 + a.scaled_statistic));
                    prop_assert!((a.p_value - b.p_value).abs() <= 1e-9);
                }
                (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
                (a, b) => prop_assert!(false, "mismatch {:?} {:?}", a, b),
            }
        }

        #[test]
        fn statistic_and_pvalue_ranges(seed in any::<u64>(), zeta0 in 0.05f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = normals(&mut rng, 15, 0.0);
            let y = normals(&mut rng, 15, 0.0);
            if let Ok(r) = auc_el_test(&x, &y, zeta0, TiePolicy::Half, &TestSettings::default()) {
                prop_assert!(r.scaled_statistic >= 0.0);
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }
        }
    }
}
