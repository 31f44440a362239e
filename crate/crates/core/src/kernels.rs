//! Two-sample data, U-statistic kernels and the kernel matrix over all
//! cross-group pairs.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::el::CenteredKernelValues;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// How a tie `x == y` scores in the indicator `I(x < y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties score 0. Intended for continuous data.
    #[default]
    Strict,
    /// Ties score 0.5.
    Half,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(TiePolicy::Strict),
            "half" => Ok(TiePolicy::Half),
            other => Err(Error::invalid(format!("unknown tie policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Wmw,
    AucDiff,
    Gehan,
    MvWmw,
    Custom,
}

/// Observations of two independent groups. Each observation is a vector of
/// common dimension `p`; censoring flags use `true` for a censored time.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleData {
    group1: Vec<Vec<f64>>,
    group2: Vec<Vec<f64>>,
    censor1: Option<Vec<bool>>,
    censor2: Option<Vec<bool>>,
}

impl TwoSampleData {
    pub fn new(
        group1: Vec<Vec<f64>>,
        group2: Vec<Vec<f64>>,
        censor1: Option<Vec<bool>>,
        censor2: Option<Vec<bool>>,
    ) -> Result<Self> {
        if group1.len() < 2 {
            return Err(Error::invalid(format!("group 1 needs at least 2 observations, has {}", group1.len())));
        }
        if group2.len() < 2 {
            return Err(Error::invalid(format!("group 2 needs at least 2 observations, has {}", group2.len())));
        }
        let p = group1[0].len();
        if p == 0 {
            return Err(Error::invalid("observations must have dimension at least 1"));
        }
        for obs in group1.iter().chain(&group2) {
            if obs.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: obs.len(),
                });
            }
            if obs.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("observations must be finite"));
            }
        }
        if censor1.is_some() != censor2.is_some() {
            return Err(Error::invalid("censoring flags must be given for both groups or neither"));
        }
        for (flags, group) in [(&censor1, &group1), (&censor2, &group2)] {
            if let Some(f) = flags {
                if f.len() != group.len() {
                    return Err(Error::DimensionMismatch {
                        expected: group.len(),
                        found: f.len(),
                    });
                }
            }
        }
        Ok(Self {
            group1,
            group2,
            censor1,
            censor2,
        })
    }

    pub fn univariate(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            x.iter().map(|&v| vec![v]).collect(),
            y.iter().map(|&v| vec![v]).collect(),
            None,
            None,
        )
    }

    pub fn multivariate(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(x, y, None, None)
    }

    /// Right-censored survival times; `censored[i]` is true for a censored time.
    pub fn censored(t1: &[f64], censored1: &[bool], t2: &[f64], censored2: &[bool]) -> Result<Self> {
        if t1.iter().chain(t2).any(|&t| t < 0.0) {
            return Err(Error::invalid("survival times must be nonnegative"));
        }
        Self::new(
            t1.iter().map(|&v| vec![v]).collect(),
            t2.iter().map(|&v| vec![v]).collect(),
            Some(censored1.to_vec()),
            Some(censored2.to_vec()),
        )
    }

    pub fn n1(&self) -> usize {
        self.group1.len()
    }

    pub fn n2(&self) -> usize {
        self.group2.len()
    }

    pub fn dim(&self) -> usize {
        self.group1[0].len()
    }

    pub fn group1(&self) -> &[Vec<f64>] {
        &self.group1
    }

    pub fn group2(&self) -> &[Vec<f64>] {
        &self.group2
    }

    pub fn censor1(&self) -> Option<&[bool]> {
        self.censor1.as_deref()
    }

    pub fn censor2(&self) -> Option<&[bool]> {
        self.censor2.as_deref()
    }

    pub fn has_censoring(&self) -> bool {
        self.censor1.is_some()
    }

    /// Coordinate `k` of every group-1 observation.
    pub fn column1(&self, k: usize) -> Vec<f64> {
        self.group1.iter().map(|o| o[k]).collect()
    }

    pub fn column2(&self, k: usize) -> Vec<f64> {
        self.group2.iter().map(|o| o[k]).collect()
    }

    /// Fraction of censored observations across both groups.
    pub fn censoring_fraction(&self) -> Option<f64> {
        let (c1, c2) = (self.censor1.as_ref()?, self.censor2.as_ref()?);
        let censored = c1.iter().chain(c2).filter(|&&c| c).count();
        Some(censored as f64 / (c1.len() + c2.len()) as f64)
    }
}

/// `I(x < y)` with the given treatment of ties.
#[inline]
pub fn wmw_kernel(x: f64, y: f64, policy: TiePolicy) -> f64 {
    if x < y {
        1.0
    } else if x > y {
        0.0
    } else {
        match policy {
            TiePolicy::Strict => 0.0,
            TiePolicy::Half => 0.5,
        }
    }
}

/// Difference of the two marker indicators for paired 2-vectors.
#[inline]
pub fn auc_diff_kernel(x: [f64; 2], y: [f64; 2], policy: TiePolicy) -> f64 {
    wmw_kernel(x[0], y[0], policy) - wmw_kernel(x[1], y[1], policy)
}

/// Gehan's score for a pair of right-censored times: +1 when `i` definitely
/// outlives `j`, −1 when `j` definitely outlives `i`, 0 when the ordering is
/// undetermined.
#[inline]
pub fn gehan_kernel(t_i: f64, censored_i: bool, t_j: f64, censored_j: bool) -> f64 {
    match (censored_i, censored_j) {
        (false, false) => {
            if t_i > t_j {
                1.0
            } else if t_i < t_j {
                -1.0
            } else {
                0.0
            }
        }
        (true, false) if t_i >= t_j => 1.0,
        (false, true) if t_j >= t_i => -1.0,
        _ => 0.0,
    }
}

/// Componentwise `I(x_k < y_k)`.
pub fn mv_wmw_kernel(x: &[f64], y: &[f64], policy: TiePolicy) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(x.iter().zip(y).map(|(&a, &b)| wmw_kernel(a, b, policy)).collect())
}

/// Kernel values `h(X_i, Y_j)` for all `n1 × n2` cross pairs, each a
/// `q`-vector, stored row-major by group-1 index.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: Vec<f64>,
    n1: usize,
    n2: usize,
    q: usize,
    kind: KernelKind,
    tie_policy: TiePolicy,
}

impl KernelMatrix {
    /// Evaluates `f(i, j, out)` into each pair's `q` slots.
    pub fn from_fn<F>(n1: usize, n2: usize, q: usize, kind: KernelKind, tie_policy: TiePolicy, mut f: F) -> Self
    where
        F: FnMut(usize, usize, &mut [f64]),
    {
        let mut values = vec![0.0; n1 * n2 * q];
        for i in 0..n1 {
            for j in 0..n2 {
                let start = (i * n2 + j) * q;
                f(i, j, &mut values[start..start + q]);
            }
        }
        Self {
            values,
            n1,
            n2,
            q,
            kind,
            tie_policy,
        }
    }

    pub fn wmw(x: &[f64], y: &[f64], policy: TiePolicy) -> Self {
        Self::from_fn(x.len(), y.len(), 1, KernelKind::Wmw, policy, |i, j, out| {
            out[0] = wmw_kernel(x[i], y[j], policy)
        })
    }

    pub fn auc_diff(x: &[[f64; 2]], y: &[[f64; 2]], policy: TiePolicy) -> Self {
        Self::from_fn(x.len(), y.len(), 1, KernelKind::AucDiff, policy, |i, j, out| {
            out[0] = auc_diff_kernel(x[i], y[j], policy)
        })
    }

    pub fn mv_wmw(data: &TwoSampleData, policy: TiePolicy) -> Self {
        let (g1, g2) = (data.group1(), data.group2());
        Self::from_fn(data.n1(), data.n2(), data.dim(), KernelKind::MvWmw, policy, |i, j, out| {
            for (k, o) in out.iter_mut().enumerate() {
                *o = wmw_kernel(g1[i][k], g2[j][k], policy);
            }
        })
    }

    pub fn gehan(data: &TwoSampleData) -> Result<Self> {
        let (c1, c2) = match (data.censor1(), data.censor2()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::MissingCensorFlags),
        };
        if data.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: data.dim(),
            });
        }
        let (g1, g2) = (data.group1(), data.group2());
        Ok(Self::from_fn(data.n1(), data.n2(), 1, KernelKind::Gehan, TiePolicy::Strict, |i, j, out| {
            out[0] = gehan_kernel(g1[i][0], c1[i], g2[j][0], c2[j])
        }))
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    /// Number of summands `n1 · n2`.
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.n2 + j) * self.q;
        &self.values[start..start + self.q]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Componentwise raw sums over all pairs.
    pub fn sums(&self) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); self.q];
        for pair in self.values.chunks_exact(self.q) {
            for (a, &v) in acc.iter_mut().zip(pair) {
                a.add(v);
            }
        }
        acc.iter().map(CompensatedSum::value).collect()
    }

    /// U-statistic estimate: mean kernel value over all pairs.
    pub fn u_statistic(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.sums().into_iter().map(|s| s / n).collect()
    }

    /// Scalar matrix holding component `k`.
    pub fn component(&self, k: usize) -> KernelMatrix {
        assert!(k < self.q);
        let kind = if self.kind == KernelKind::MvWmw {
            KernelKind::Wmw
        } else {
            self.kind
        };
        KernelMatrix {
            values: self.values.iter().skip(k).step_by(self.q).copied().collect(),
            n1: self.n1,
            n2: self.n2,
            q: 1,
            kind,
            tie_policy: self.tie_policy,
        }
    }

    /// Pairwise difference of two scalar matrices on the same index set.
    pub fn difference(&self, other: &KernelMatrix) -> Result<KernelMatrix> {
        if (self.n1, self.n2) != (other.n1, other.n2) {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        if self.q != 1 || other.q != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: self.q.max(other.q),
            });
        }
        Ok(KernelMatrix {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            n1: self.n1,
            n2: self.n2,
            q: 1,
            kind: KernelKind::AucDiff,
            tie_policy: self.tie_policy,
        })
    }

    /// Per-group-1-observation averages `(1/n2) Σ_j h(X_i, Y_j)` of a scalar kernel.
    pub fn row_means(&self) -> Vec<f64> {
        assert_eq!(self.q, 1, "row means are defined for scalar kernels");
        self.values
            .chunks_exact(self.n2)
            .map(|row| row.iter().copied().collect::<CompensatedSum>().value() / self.n2 as f64)
            .collect()
    }

    /// Per-group-2-observation averages `(1/n1) Σ_i h(X_i, Y_j)` of a scalar kernel.
    pub fn col_means(&self) -> Vec<f64> {
        assert_eq!(self.q, 1, "column means are defined for scalar kernels");
        let mut acc = vec![CompensatedSum::new(); self.n2];
        for row in self.values.chunks_exact(self.n2) {
            for (a, &v) in acc.iter_mut().zip(row) {
                a.add(v);
            }
        }
        acc.iter().map(|a| a.value() / self.n1 as f64).collect()
    }

    /// `ψ = h − θ₀` for every pair.
    pub fn centered(&self, theta0: &[f64]) -> Result<CenteredKernelValues> {
        if theta0.len() != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                found: theta0.len(),
            });
        }
        let values = self
            .values
            .chunks_exact(self.q)
            .flat_map(|pair| pair.iter().zip(theta0).map(|(h, t)| h - t))
            .collect();
        CenteredKernelValues::new(values, self.q)
    }
}

/// Gehan's statistic: the raw sum of pair scores over all cross pairs, not
/// divided by the number of pairs.
pub fn gehan_statistic(data: &TwoSampleData) -> Result<f64> {
    Ok(KernelMatrix::gehan(data)?.sums()[0])
}

/// `n choose k` as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kernel values of a general two-sample kernel of degree `(m1, m2)`,
/// evaluated over every pair of index subsets `i₁ < … < i_{m1}`,
/// `j₁ < … < j_{m2}`. The result has `C(n1, m1) · C(n2, m2)` entries.
pub fn general_kernel_values<T, F>(x: &[T], y: &[T], m1: usize, m2: usize, mut h: F) -> Result<Vec<f64>>
where
    F: FnMut(&[&T], &[&T]) -> f64,
{
    if m1 == 0 || m2 == 0 || m1 > x.len() || m2 > y.len() {
        return Err(Error::invalid(format!(
            "kernel degree ({m1}, {m2}) incompatible with sample sizes ({}, {})",
            x.len(),
            y.len()
        )));
    }
    let y_subsets: Vec<Vec<&T>> = y.iter().combinations(m2).collect();
    let mut out = Vec::with_capacity(binomial(x.len(), m1) as usize * y_subsets.len());
    for xs in x.iter().combinations(m1) {
        for ys in &y_subsets {
            out.push(h(&xs, ys));
        }
    }
    Ok(out)
}
