//! Constrained empirical likelihood over U-statistic kernel values.
//!
//! Given centered kernel values `ψ = h(X_i, Y_j) − θ₀` over the index set of
//! a two-sample U-statistic, the constrained maximizer of `Π w` subject to
//! `Σ w = 1` and `Σ w ψ = 0` is `w = 1 / (N (1 + λᵀψ))`, where the multiplier
//! `λ` solves `Σ ψ / (1 + λᵀψ) = 0`. The log ratio against the unconstrained
//! maximum (`w = 1/N`) is `l = 2 Σ log(1 + λᵀψ)`.
//!
//! The scalar equation is solved by Newton's method inside the feasibility
//! bracket `(−1/max ψ, −1/min ψ)` with a bisection fallback. The vector case
//! maximizes the concave dual `Σ log(1 + λᵀψ)` by damped Newton steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Centered kernel values `ψ`, stored as `N` contiguous vectors of length `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredKernelValues {
    values: Vec<f64>,
    dim: usize,
}

impl CenteredKernelValues {
    pub fn new(values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("kernel dimension must be at least 1"));
        }
        if values.is_empty() {
            return Err(Error::invalid("no kernel values"));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len() % dim,
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite kernel value {bad}")));
        }
        Ok(Self { values, dim })
    }

    /// Scalar (`q = 1`) values.
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    pub fn from_vectors<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self> {
        let dim = vectors.first().map_or(0, |v| v.as_ref().len());
        let mut values = Vec::with_capacity(vectors.len() * dim);
        for v in vectors {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            values.extend_from_slice(v);
        }
        Self::new(values, dim)
    }

    /// Number of summands `N`.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    /// Componentwise sums `Σ ψ`.
    pub fn sums(&self) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); self.dim];
        for p in self.iter() {
            for (a, &v) in acc.iter_mut().zip(p) {
                a.add(v);
            }
        }
        acc.iter().map(CompensatedSum::value).collect()
    }

    /// `Σ ‖ψ‖²`, which equals `Σ ψ²` in the scalar case.
    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).collect::<CompensatedSum>().value()
    }

    /// `Σ ψ ψᵀ`.
    pub fn outer_sum(&self) -> Matrix {
        let q = self.dim;
        let mut acc = vec![CompensatedSum::new(); q * q];
        for p in self.iter() {
            for a in 0..q {
                for b in a..q {
                    acc[a * q + b].add(p[a] * p[b]);
                }
            }
        }
        let mut m = Matrix::zeros(q, q);
        for a in 0..q {
            for b in a..q {
                let v = acc[a * q + b].value();
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }

    /// Returns the values multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect(), self.dim)
    }
}

/// Tolerances for the multiplier solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Residual tolerance relative to `N · η̂`, `η̂² = Σ‖ψ‖²/N`.
    pub residual_tol: f64,
    pub max_iterations: usize,
    /// Lower bound on every `1 + λᵀψ` at the returned multiplier.
    pub feasibility_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            max_iterations: 100,
            feasibility_margin: 1e-12,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if !(self.feasibility_margin > 0.0 && self.feasibility_margin < 1.0) {
            return Err(Error::invalid("feasibility margin must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Absolute residual bound for a given set of kernel values.
    pub fn residual_bound(&self, psi: &CenteredKernelValues) -> f64 {
        self.residual_tol * (psi.len() as f64 * psi.sum_sq()).sqrt()
    }
}

/// Solution of the multiplier equation and the resulting log EL ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElSolution {
    pub lambda: Vec<f64>,
    /// `l(θ₀) = −2 log R(θ₀)`.
    pub log_el_ratio: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub feasible: bool,
}

impl ElSolution {
    /// `λ = 0`, `l = 0`: the solution when the constraint already holds.
    pub fn trivial(dim: usize) -> Self {
        Self {
            lambda: vec![0.0; dim],
            log_el_ratio: 0.0,
            residual_norm: 0.0,
            iterations: 0,
            feasible: true,
        }
    }
}

/// Implied weights at a multiplier together with the two identities they
/// should satisfy at the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSummary {
    pub weights: Vec<f64>,
    /// `Σ w`, equal to 1 at the solution.
    pub sum: f64,
    /// `Σ w ψ`, equal to 0 at the solution.
    pub constraint: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_ratio(psi: &CenteredKernelValues, lambda: &[f64]) -> f64 {
    let s: CompensatedSum = psi.iter().map(|p| dot(lambda, p).ln_1p()).collect();
    (2.0 * s.value()).max(0.0)
}

fn min_denominator(psi: &CenteredKernelValues, lambda: &[f64]) -> f64 {
    psi.iter()
        .map(|p| 1.0 + dot(lambda, p))
        .fold(f64::INFINITY, f64::min)
}

/// Solves `Σ ψ / (1 + λψ) = 0` for scalar kernel values.
pub fn solve_lambda_uni(psi: &CenteredKernelValues, settings: &SolverSettings) -> Result<ElSolution> {
    settings.validate()?;
    if psi.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: psi.dim(),
        });
    }
    let values = psi.as_flat();
    let sum_sq = psi.sum_sq();
    if sum_sq == 0.0 {
        return Ok(ElSolution::trivial(1));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(min < 0.0 && max > 0.0) {
        return Err(Error::ConstraintInfeasible);
    }

    let tol = settings.residual_bound(psi);
    // f is strictly decreasing on the open interval, +∞ at `lo`, −∞ at `hi`.
    let (mut lo, mut hi) = (-1.0 / max, -1.0 / min);

    let eval = |lambda: f64| -> (f64, f64) {
        let mut f = CompensatedSum::new();
        let mut df = CompensatedSum::new();
        for &v in values {
            let r = v / (1.0 + lambda * v);
            f.add(r);
            df.add(-r * r);
        }
        (f.value(), df.value())
    };

    let mut lambda = psi.sums()[0] / sum_sq;
    if lambda <= lo {
        lambda = 0.5 * lo;
    } else if lambda >= hi {
        lambda = 0.5 * hi;
    }

    let mut best = f64::INFINITY;
    for iteration in 1..=settings.max_iterations {
        let (f, df) = eval(lambda);
        best = best.min(f.abs());
        if f.abs() <= tol {
            return finish_uni(psi, lambda, f.abs(), iteration, settings);
        }
        if f > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let width = hi - lo;
        if width <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        let newton = lambda - f / df;
        lambda = if newton > lo && newton < hi && df < 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iterations,
        residual: best,
    })
}

fn finish_uni(
    psi: &CenteredKernelValues,
    lambda: f64,
    residual: f64,
    iterations: usize,
    settings: &SolverSettings,
) -> Result<ElSolution> {
    let lambda = [lambda];
    if min_denominator(psi, &lambda) < settings.feasibility_margin {
        return Err(Error::ConstraintInfeasible);
    }
    Ok(ElSolution {
        log_el_ratio: log_ratio(psi, &lambda),
        lambda: lambda.to_vec(),
        residual_norm: residual,
        iterations,
        feasible: true,
    })
}

struct DualEval {
    objective: f64,
    gradient: Vec<f64>,
    hessian: Matrix,
}

fn dual_eval(psi: &CenteredKernelValues, lambda: &[f64], with_hessian: bool) -> Option<DualEval> {
    let q = psi.dim();
    let mut objective = CompensatedSum::new();
    let mut grad = vec![CompensatedSum::new(); q];
    let mut hess = vec![CompensatedSum::new(); if with_hessian { q * q } else { 0 }];
    for p in psi.iter() {
        let d = 1.0 + dot(lambda, p);
        if !(d > 0.0) {
            return None;
        }
        objective.add(d.ln());
        let inv = 1.0 / d;
        for (g, &v) in grad.iter_mut().zip(p) {
            g.add(v * inv);
        }
        if with_hessian {
            let inv2 = inv * inv;
            for a in 0..q {
                for b in a..q {
                    hess[a * q + b].add(p[a] * p[b] * inv2);
                }
            }
        }
    }
    let mut hessian = Matrix::zeros(q, q);
    if with_hessian {
        for a in 0..q {
            for b in a..q {
                let v = hess[a * q + b].value();
                hessian[(a, b)] = v;
                hessian[(b, a)] = v;
            }
        }
    }
    Some(DualEval {
        objective: objective.value(),
        gradient: grad.iter().map(CompensatedSum::value).collect(),
        hessian,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const RANK_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Solves `Σ ψ / (1 + λᵀψ) = 0` for vector kernel values by maximizing the
/// concave dual `Σ log(1 + λᵀψ)`.
pub fn solve_lambda_multi(
    psi: &CenteredKernelValues,
    settings: &SolverSettings,
) -> Result<ElSolution> {
    settings.validate()?;
    let q = psi.dim();
    if psi.sum_sq() == 0.0 {
        return Ok(ElSolution::trivial(q));
    }
    let outer = psi.outer_sum();
    if Cholesky::new(&outer, RANK_TOL).is_none() {
        return Err(Error::SingularHessian);
    }
    // Quick exits: a separating direction along a coordinate axis or along Σψ.
    for k in 0..q {
        let (neg, pos) = psi.iter().fold((false, false), |(n, p), v| (n || v[k] < 0.0, p || v[k] > 0.0));
        if !(neg && pos) {
            return Err(Error::ConstraintInfeasible);
        }
    }
    let sums = psi.sums();
    if norm(&sums) > 0.0 && psi.iter().all(|p| dot(&sums, p) >= 0.0) {
        return Err(Error::ConstraintInfeasible);
    }

    let tol = settings.residual_bound(psi);
    let max_norm = psi.iter().map(norm).fold(0.0, f64::max);
    let escape = 1.0 / settings.feasibility_margin;

    let mut lambda = vec![0.0; q];
    let mut current = dual_eval(psi, &lambda, true).expect("λ = 0 is feasible");
    let mut best = norm(&current.gradient);
    for iteration in 1..=settings.max_iterations {
        let residual = norm(&current.gradient);
        best = best.min(residual);
        if residual <= tol {
            let (lambda, residual) = polish(psi, lambda, current, residual);
            if min_denominator(psi, &lambda) < settings.feasibility_margin {
                return Err(Error::ConstraintInfeasible);
            }
            // Outside the hull the dual diverges along a separating direction
            // while its gradient still shrinks; the weights then fail to sum
            // to one.
            let weight_sum = compensated_sum(psi.iter().map(|p| 1.0 / (1.0 + dot(&lambda, p)))) / psi.len() as f64;
            if (weight_sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::ConstraintInfeasible);
            }
            return Ok(ElSolution {
                log_el_ratio: log_ratio(psi, &lambda),
                lambda,
                residual_norm: residual,
                iterations: iteration,
                feasible: true,
            });
        }
        // Σψψᵀ was checked above, so rank loss here means a few weights are
        // blowing up at the hull boundary.
        let chol = Cholesky::new(&current.hessian, RANK_TOL).ok_or(Error::ConstraintInfeasible)?;
        let step = chol.solve(&current.gradient);
        let slope = dot(&current.gradient, &step);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| l + t * s).collect();
            if let Some(eval) = dual_eval(psi, &trial, false) {
                let armijo = eval.objective >= current.objective + 1e-4 * t * slope;
                if armijo || norm(&eval.gradient) < residual {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            return Err(Error::NonConvergence {
                iterations: iteration,
                residual: best,
            });
        };
        if norm(&next) * max_norm > escape {
            return Err(Error::ConstraintInfeasible);
        }
        lambda = next;
        current = dual_eval(psi, &lambda, true).expect("accepted step is feasible");
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iterations,
        residual: best,
    })
}

/// A few extra full Newton steps once the tolerance is met, kept only while
/// they reduce the residual. Near the hull boundary `λ` is large and the
/// weight-sum error `λᵀg / N` needs more than the residual bound alone.
fn polish(psi: &CenteredKernelValues, mut lambda: Vec<f64>, mut current: DualEval, mut residual: f64) -> (Vec<f64>, f64) {
    for _ in 0..3 {
        let Some(chol) = Cholesky::new(&current.hessian, RANK_TOL) else { break };
        let step = chol.solve(&current.gradient);
        let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| l + s).collect();
        match dual_eval(psi, &trial, true) {
            Some(eval) if norm(&eval.gradient) < residual => {
                residual = norm(&eval.gradient);
                lambda = trial;
                current = eval;
            }
            _ => break,
        }
    }
    (lambda, residual)
}

/// Weights `w = 1 / (N (1 + λᵀψ))` and their sum and constraint residual.
pub fn weights_from_lambda(psi: &CenteredKernelValues, lambda: &[f64]) -> Result<WeightSummary> {
    if lambda.len() != psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.dim(),
            found: lambda.len(),
        });
    }
    let n = psi.len() as f64;
    let mut weights = Vec::with_capacity(psi.len());
    let mut sum = CompensatedSum::new();
    let mut constraint = vec![CompensatedSum::new(); psi.dim()];
    for p in psi.iter() {
        let d = 1.0 + dot(lambda, p);
        if !(d > 0.0) {
            return Err(Error::InfeasibleLambda { denominator: d });
        }
        let w = 1.0 / (n * d);
        sum.add(w);
        for (c, &v) in constraint.iter_mut().zip(p) {
            c.add(w * v);
        }
        weights.push(w);
    }
    Ok(WeightSummary {
        weights,
        sum: sum.value(),
        constraint: constraint.iter().map(CompensatedSum::value).collect(),
    })
}

/// Solves for the multiplier and returns `l(θ₀) = 2 Σ log(1 + λᵀψ)`.
pub fn el_log_ratio(psi: &CenteredKernelValues, settings: &SolverSettings) -> Result<ElSolution> {
    if psi.dim() == 1 {
        solve_lambda_uni(psi, settings)
    } else {
        solve_lambda_multi(psi, settings)
    }
}

/// `l(θ₀) · η̂² / (N σ̂²)` with `η̂² = Σψ²/N`, where `σ̂²` estimates the
/// variance of the U-statistic (the normalized mean of the kernel values).
pub fn scaled_statistic_uni(psi: &CenteredKernelValues, el: &ElSolution, sigma2_hat: f64) -> Result<f64> {
    let sum_sq = psi.sum_sq();
    if !(sigma2_hat > 0.0) || sum_sq == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let n = psi.len() as f64;
    Ok(el.log_el_ratio * sum_sq / (n * n * sigma2_hat))
}
