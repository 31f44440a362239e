//! Variance and covariance estimators for the two-sample U-statistics, the
//! `Ĥ` second-moment matrix, and the mixture weights from the generalized
//! eigenproblem `Σ v = c H v`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::{symmetric_eigen, Cholesky, Matrix};
use crate::numeric::CompensatedSum;

/// Where the structural components are centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Center at the hypothesized value.
    #[default]
    Null,
    /// Center at the U-statistic estimate.
    Estimate,
}

/// Structural components `V₁₀(Xᵢ)` and `V₀₁(Yⱼ)` of a scalar kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralComponents {
    pub v10: Vec<f64>,
    pub v01: Vec<f64>,
    pub center: f64,
}

impl StructuralComponents {
    pub fn new(km: &KernelMatrix, center: f64) -> Self {
        Self {
            v10: km.row_means(),
            v01: km.col_means(),
            center,
        }
    }

    /// `S₁₀²` and `S₀₁²`.
    pub fn variances(&self) -> (f64, f64) {
        let s = |v: &[f64]| {
            let acc: CompensatedSum = v.iter().map(|x| (x - self.center).powi(2)).collect();
            acc.value() / (v.len() - 1) as f64
        };
        (s(&self.v10), s(&self.v01))
    }
}

fn require_sizes(km: &KernelMatrix) -> Result<()> {
    if km.n1() < 2 || km.n2() < 2 {
        return Err(Error::invalid("variance estimates need at least two observations per group"));
    }
    if km.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: km.dim(),
        });
    }
    Ok(())
}

/// Sen's variance estimate of a WMW-type U-statistic,
/// `S₁₀²/n₁ + S₀₁²/n₂`, with both components centered at `center`.
pub fn sen_variance(km: &KernelMatrix, center: f64) -> Result<f64> {
    require_sizes(km)?;
    let (s10, s01) = StructuralComponents::new(km, center).variances();
    let v = s10 / km.n1() as f64 + s01 / km.n2() as f64;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::DegenerateVariance)
    }
}

/// DeLong cross-product matrices of the structural components of several
/// markers evaluated on the same subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelongComponents {
    pub s10: Matrix,
    pub s01: Matrix,
    pub n1: usize,
    pub n2: usize,
}

impl DelongComponents {
    /// Covariance matrix of the marker estimates, `S₁₀/n₁ + S₀₁/n₂`.
    pub fn covariance(&self) -> Matrix {
        self.s10.scale(1.0 / self.n1 as f64).add(&self.s01.scale(1.0 / self.n2 as f64))
    }
}

pub fn delong_components(markers: &[&KernelMatrix], centers: &[f64]) -> Result<DelongComponents> {
    let first = markers.first().ok_or_else(|| Error::invalid("no markers"))?;
    if centers.len() != markers.len() {
        return Err(Error::DimensionMismatch {
            expected: markers.len(),
            found: centers.len(),
        });
    }
    for km in markers {
        require_sizes(km)?;
        if (km.n1(), km.n2()) != (first.n1(), first.n2()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                found: km.len(),
            });
        }
    }
    let k = markers.len();
    let comps: Vec<StructuralComponents> = markers
        .iter()
        .zip(centers)
        .map(|(km, &c)| StructuralComponents::new(km, c))
        .collect();
    let cross = |a: &[f64], ca: f64, b: &[f64], cb: f64| {
        let acc: CompensatedSum = a.iter().zip(b).map(|(x, y)| (x - ca) * (y - cb)).collect();
        acc.value() / (a.len() - 1) as f64
    };
    let mut s10 = Matrix::zeros(k, k);
    let mut s01 = Matrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let (ca, cb) = (&comps[a], &comps[b]);
            let v10 = cross(&ca.v10, ca.center, &cb.v10, cb.center);
            let v01 = cross(&ca.v01, ca.center, &cb.v01, cb.center);
            s10[(a, b)] = v10;
            s10[(b, a)] = v10;
            s01[(a, b)] = v01;
            s01[(b, a)] = v01;
        }
    }
    Ok(DelongComponents {
        s10,
        s01,
        n1: first.n1(),
        n2: first.n2(),
    })
}

/// Variance of the difference of two correlated AUC estimates.
pub fn delong_diff_variance(s10: &Matrix, s01: &Matrix, n1: usize, n2: usize) -> Result<f64> {
    for m in [s10, s01] {
        if m.rows() != 2 || m.cols() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: m.rows(),
            });
        }
    }
    let quad = |m: &Matrix| m[(0, 0)] - m[(0, 1)] - m[(1, 0)] + m[(1, 1)];
    Ok((quad(s10) / n1 as f64 + quad(s01) / n2 as f64).max(0.0))
}

/// Pooled Gehan scores `Uᵢ = Σⱼ φᵢⱼ` over the combined sample.
pub fn gehan_pooled_scores(times: &[f64], censored: &[bool]) -> Result<Vec<f64>> {
    if times.len() != censored.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: censored.len(),
        });
    }
    Ok((0..times.len())
        .map(|i| {
            (0..times.len())
                .map(|j| crate::kernels::gehan_kernel(times[i], censored[i], times[j], censored[j]))
                .sum()
        })
        .collect())
}

/// Permutation variance of Gehan's statistic under `τ = 0`:
/// `n₁n₂ / ((n₁+n₂)(n₁+n₂−1)) · Σ Uᵢ²` over the pooled sample.
pub fn gehan_variance(pooled_times: &[f64], pooled_censor: &[bool], n1: usize, n2: usize) -> Result<f64> {
    let n = n1 + n2;
    if pooled_times.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: pooled_times.len(),
        });
    }
    if n1 == 0 || n2 == 0 || n < 2 {
        return Err(Error::invalid("both groups must be nonempty"));
    }
    let scores = gehan_pooled_scores(pooled_times, pooled_censor)?;
    let sum_sq: CompensatedSum = scores.iter().map(|u| u * u).collect();
    Ok((n1 * n2) as f64 / (n as f64 * (n - 1) as f64) * sum_sq.value())
}

/// `Ĥ = (1/N) Σ (φ − θ₀)(φ − θ₀)ᵀ`.
pub fn h_hat(km: &KernelMatrix, theta0: &[f64]) -> Result<Matrix> {
    if km.is_empty() {
        return Err(Error::invalid("empty kernel matrix"));
    }
    let psi = km.centered(theta0)?;
    Ok(psi.outer_sum().scale(1.0 / psi.len() as f64))
}

/// Nonnegative mixture weights, sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenWeights {
    weights: Vec<f64>,
}

impl EigenWeights {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be finite and nonnegative"));
        }
        weights.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { weights })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

const MAX_CONDITION: f64 = 1e12;

/// Generalized eigenvalues of `Σ v = c H v`, i.e. the eigenvalues of
/// `H⁻¹Σ`, computed from the congruence `L⁻¹ Σ L⁻ᵀ` with `H = L Lᵀ`.
pub fn eigen_weights(h: &Matrix, sigma: &Matrix) -> Result<EigenWeights> {
    if !h.is_square() || !sigma.is_square() || h.rows() != sigma.rows() {
        return Err(Error::DimensionMismatch {
            expected: h.rows(),
            found: sigma.rows(),
        });
    }
    let (h_eigs, _) = symmetric_eigen(h);
    let max = h_eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = h_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularH { condition });
    }
    let chol = Cholesky::new(h, 1.0 / MAX_CONDITION).ok_or(Error::SingularH { condition })?;
    let whitened = chol.whiten(sigma);
    let (eigs, _) = symmetric_eigen(&whitened);
    let trace_scale = whitened.diagonal().iter().map(|d| d.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let weights = eigs
        .into_iter()
        .map(|c| if c < 0.0 && c > -1e-10 * trace_scale { 0.0 } else { c.max(0.0) })
        .collect();
    EigenWeights::new(weights)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    symmetric_eigen(m).0.into_iter().fold(f64::INFINITY, f64::min)
}
