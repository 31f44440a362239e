//! Acceptance suite. Prints one `PASS`, `FAIL` or `SKIP` line per criterion
//! and exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use uel_core::crossover::{
    carryover_test, first_order_carryover_test, relative_effect, second_order_carryover_test,
    treatment_test_both_periods, CrossoverDataset,
};
use uel_core::el::{el_log_ratio, weights_from_lambda, CenteredKernelValues, SolverSettings};
use uel_core::kernels::TiePolicy;
use uel_core::procedures::{auc_el_test, TestSettings};
use uel_core::reference::{chi1_pvalue, weighted_chisq_pvalue, WeightedChisqSettings};
use uel_core::sim::{run_scenario, BaselineKind, Family, ScenarioConfig, ScenarioReport, TestKind};
use uel_core::variance::{Centering, EigenWeights};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Points `z_i − Σ a_i z_i` with all `a_i > 0`, so the origin is interior
/// to their convex hull whenever the points span the space.
fn interior_instance(rng: &mut ChaCha8Rng, n: usize, q: usize, shape: u8) -> Vec<Vec<f64>> {
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..q)
                .map(|_| match shape {
                    0 => rng.sample::<f64, _>(StandardNormal),
                    1 => rng.sample::<f64, _>(Exp1).powi(2),
                    _ => f64::from(rng.random_range(0..4u8)) - 1.5,
                })
                .collect()
        })
        .collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = a.iter().sum();
    let c: Vec<f64> = (0..q).map(|k| z.iter().zip(&a).map(|(zi, ai)| ai * zi[k]).sum::<f64>() / total).collect();
    z.into_iter().map(|zi| zi.iter().zip(&c).map(|(v, ck)| v - ck).collect()).collect()
}

/// Maximizes `Σ log w` subject to `Σ w = 1`, `Σ w ψ = 0` by infeasible-start
/// Newton iterations on the KKT system of the primal problem.
fn primal_weights(psi: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = psi.len();
    let q = psi[0].len();
    let m = q + 1;
    let a = DMatrix::from_fn(m, n, |r, c| if r == 0 { 1.0 } else { psi[c][r - 1] });
    let mut b = DVector::zeros(m);
    b[0] = 1.0;
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut nu = DVector::zeros(m);
    let residual = |w: &DVector<f64>, nu: &DVector<f64>| {
        let g = w.map(|v| -1.0 / v);
        let dual = g + a.transpose() * nu;
        let primal = &a * w - &b;
        (dual.norm_squared() + primal.norm_squared()).sqrt()
    };
    for _ in 0..200 {
        let g = w.map(|v| -1.0 / v);
        let mut kkt = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            kkt[(i, i)] = 1.0 / (w[i] * w[i]);
        }
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-(&g + a.transpose() * &nu)));
        rhs.rows_mut(n, m).copy_from(&(&b - &a * &w));
        let step = kkt.lu().solve(&rhs)?;
        let dw = step.rows(0, n).into_owned();
        let dnu = step.rows(n, m).into_owned();
        let r0 = residual(&w, &nu);
        let mut t = 1.0;
        while (0..n).any(|i| w[i] + t * dw[i] <= 0.0) {
            t *= 0.5;
        }
        while residual(&(&w + t * &dw), &(&nu + t * &dnu)) > (1.0 - 0.01 * t) * r0 && t > 1e-12 {
            t *= 0.5;
        }
        w += t * &dw;
        nu += t * &dnu;
        if residual(&w, &nu) < 1e-13 {
            return Some(w.iter().copied().collect());
        }
    }
    None
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let settings = SolverSettings::default();
    let (mut worst_l, mut worst_w) = (0.0_f64, 0.0_f64);
    for k in 0..50 {
        let q = 1 + k % 2;
        let n = rng.random_range(3 + q..=12);
        let psi = interior_instance(&mut rng, n, q, (k % 3) as u8);
        let values = CenteredKernelValues::from_vectors(&psi).unwrap();
        let Ok(sol) = el_log_ratio(&values, &settings) else {
            return Outcome::Fail(format!("instance {k}: dual solver failed"));
        };
        let dual_w = weights_from_lambda(&values, &sol.lambda).unwrap().weights;
        let Some(primal_w) = primal_weights(&psi) else {
            return Outcome::Fail(format!("instance {k}: primal oracle did not converge"));
        };
        let primal_l = -2.0 * primal_w.iter().map(|w| (n as f64 * w).ln()).sum::<f64>();
        worst_l = worst_l.max((primal_l - sol.log_el_ratio).abs());
        for (a, b) in dual_w.iter().zip(&primal_w) {
            worst_w = worst_w.max((a - b).abs());
        }
    }
    verdict(
        worst_l < 1e-6 && worst_w < 1e-6,
        format!("50 instances, max |Δl| = {worst_l:.2e}, max |Δw| = {worst_w:.2e} (tol 1e-6)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let settings = SolverSettings::default();
    let mut violations = 0;
    let mut worst_ratio = 0.0_f64;
    for k in 0..1000 {
        let q = 1 + k % 3;
        let n = (10.0 * 1000f64.powf(rng.random::<f64>())) as usize;
        let psi = interior_instance(&mut rng, n.max(q + 2), q, (k % 3) as u8);
        let values = CenteredKernelValues::from_vectors(&psi).unwrap();
        let Ok(sol) = el_log_ratio(&values, &settings) else {
            violations += 1;
            continue;
        };
        let mut residual = vec![0.0; q];
        let mut min_den = f64::INFINITY;
        for p in &psi {
            let den = 1.0 + p.iter().zip(&sol.lambda).map(|(a, b)| a * b).sum::<f64>();
            min_den = min_den.min(den);
            for (r, v) in residual.iter_mut().zip(p) {
                *r += v / den;
            }
        }
        let norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        let bound = settings.residual_bound(&values);
        worst_ratio = worst_ratio.max(norm / bound);
        if norm > bound || min_den < settings.feasibility_margin {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("1000 instances, {violations} violations, max residual/bound = {worst_ratio:.3}"),
    )
}

fn ks_chi1(stats: &mut [f64]) -> f64 {
    stats.sort_by(f64::total_cmp);
    let chi = ChiSquared::new(1.0).unwrap();
    let n = stats.len() as f64;
    stats
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = chi.cdf(s.max(0.0));
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let settings = TestSettings::default();
    let mut stats = Vec::with_capacity(2000);
    let mut rejections = 0;
    for rep in 0..2000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        rng.set_stream(rep);
        let x: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        match auc_el_test(&x, &y, 0.5, TiePolicy::Strict, &settings) {
            Ok(r) => {
                stats.push(r.scaled_statistic);
                rejections += usize::from(r.rejects(0.05));
            }
            Err(e) => return Outcome::Fail(format!("replication {rep} failed: {e}")),
        }
    }
    let ks = ks_chi1(&mut stats);
    let rate = rejections as f64 / 2000.0;
    verdict(
        ks < 0.05 && (0.035..=0.065).contains(&rate),
        format!("KS = {ks:.4} (< 0.05), Type I = {rate:.4} (in [0.035, 0.065])"),
    )
}

fn scenario(family: Family, test: TestKind, n: usize, baselines: Vec<BaselineKind>, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        name: String::new(),
        family,
        n1: n,
        n2: n,
        replications: 2000,
        alpha: 0.05,
        seed,
        test,
        baselines,
        null_value: None,
        mixture_draws: None,
        centering: Centering::Null,
    }
}

fn rate(r: &ScenarioReport, method: &str) -> (f64, f64) {
    let m = r.method(method).expect("method present");
    (m.rejection_rate, m.failure_fraction)
}

fn criterion_4() -> Outcome {
    let cfg = scenario(
        Family::BivariateNormalSame {
            target_auc: 0.9,
            shift: 0.0,
        },
        TestKind::AucCompare,
        50,
        vec![BaselineKind::DelongNormal],
        404,
    );
    let r = run_scenario(&cfg, 0).unwrap();
    let (el, fail) = rate(&r, "el_auc_compare");
    let (delong, _) = rate(&r, "delong_normal");
    verdict(
        (0.03..=0.07).contains(&el),
        format!("EL Type I = {el:.4} (in [0.03, 0.07]), failures {fail:.4}; DeLong-normal {delong:.4}"),
    )
}

fn criterion_5() -> Outcome {
    let cfg = scenario(
        Family::WeibullSurvival {
            shape1: 1.0,
            scale1: 1.0,
            shape2: 1.0,
            scale2: 1.0,
            censoring_target: 0.2,
            arrival_rate: 1.0,
        },
        TestKind::Gehan,
        50,
        vec![BaselineKind::GehanNormal],
        505,
    );
    let r = run_scenario(&cfg, 0).unwrap();
    let (el, fail) = rate(&r, "el_gehan");
    let (normal, _) = rate(&r, "gehan_normal");
    let censoring = r.realized_censoring.unwrap_or(f64::NAN);
    verdict(
        (0.03..=0.07).contains(&el) && (0.03..=0.07).contains(&normal),
        format!(
            "EL Type I = {el:.4}, Gehan-normal = {normal:.4} (both in [0.03, 0.07]); failures {fail:.4}; realized censoring {censoring:.4}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let family = Family::MvNullPair {
        log_scale: false,
        shift: 0.0,
        y_cov: None,
    };
    let large = run_scenario(&scenario(family.clone(), TestKind::MvWmw, 50, vec![], 606), 0).unwrap();
    let small = run_scenario(
        &scenario(family, TestKind::MvWmw, 20, vec![BaselineKind::ChisqQuadratic], 607),
        0,
    )
    .unwrap();
    let (el50, fail50) = rate(&large, "el_mv_wmw");
    let (el20, _) = rate(&small, "el_mv_wmw");
    let (chi20, _) = rate(&small, "chisq_quadratic");
    let ok = (0.03..=0.07).contains(&el50) && (chi20 - 0.05).abs() > (el20 - 0.05).abs();
    verdict(
        ok,
        format!(
            "n=50 EL Type I = {el50:.4} (in [0.03, 0.07]), failures {fail50:.4}; n=20 |χ²₂ − 0.05| = {:.4} vs |EL − 0.05| = {:.4} (χ²₂ {chi20:.4}, EL {el20:.4})",
            (chi20 - 0.05).abs(),
            (el20 - 0.05).abs()
        ),
    )
}

fn criterion_7() -> Outcome {
    let weights = EigenWeights::new(vec![0.5, 0.5]).unwrap();
    let settings = WeightedChisqSettings {
        draws: 200_000,
        seed: 707,
    };
    let p = weighted_chisq_pvalue(1.0, &weights, &settings).unwrap();
    let target = (-1.0f64).exp();
    verdict((p - target).abs() <= 0.005, format!("p = {p:.5}, e⁻¹ = {target:.5} (tol 0.005)"))
}

fn fixture_path() -> Option<PathBuf> {
    std::env::var_os("UEL_CROSSOVER_FIXTURE")
        .map(PathBuf::from)
        .or_else(|| Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/peak_heart_rate.csv")))
        .filter(|p| p.exists())
}

fn criterion_8() -> Outcome {
    let Some(path) = fixture_path() else {
        return Outcome::Skip("crossover fixture not found (set UEL_CROSSOVER_FIXTURE or add tests/fixtures/peak_heart_rate.csv)".into());
    };
    let d = match CrossoverDataset::from_path(&path, b',') {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("fixture unreadable: {e}")),
    };
    let settings = TestSettings::default();
    let col = |s: &[uel_core::crossover::SubjectRecord], f: fn(&uel_core::crossover::SubjectRecord) -> f64| {
        s.iter().map(f).collect::<Vec<f64>>()
    };
    let y11 = col(d.seq1(), |s| s.period1);
    let y12 = col(d.seq1(), |s| s.period2);
    let y21 = col(d.seq2(), |s| s.period1);
    let y22 = col(d.seq2(), |s| s.period2);
    let mut checks: Vec<(String, bool)> = Vec::new();
    close(&mut checks, "P(Y11>Y21)", relative_effect(&y11, &y21).unwrap(), 0.732, 5e-4);
    close(&mut checks, "P(Y22>Y12)", relative_effect(&y22, &y12).unwrap(), 0.899, 5e-4);
    let run = |r: uel_core::Result<uel_core::procedures::TestResult>| r.map_err(|e| e.to_string());
    match run(carryover_test(&d, &settings)) {
        Ok(c) => {
            close(&mut checks, "carryover statistic", c.scaled_statistic, 1.0889, 5e-5);
            close(&mut checks, "carryover p", c.p_value, 0.298, 1.5e-3);
        }
        Err(e) => checks.push((format!("carryover failed: {e}"), false)),
    }
    match run(treatment_test_both_periods(&d, &settings)) {
        Ok(t) => {
            close(&mut checks, "P(Y11>Y21) treatment", t.estimate[0], 0.727, 5e-4);
            close(&mut checks, "P(Y12>Y22)", t.estimate[1], 0.101, 5e-4);
            close(&mut checks, "-2 log R", t.log_el_ratio.unwrap_or(f64::NAN), 929.538, 5e-4);
            checks.push((format!("treatment p {:.2e} < 1e-4", t.p_value), t.p_value < 1e-4));
        }
        Err(e) => checks.push((format!("treatment failed: {e}"), false)),
    }
    if d.has_baselines() {
        match run(first_order_carryover_test(&d, &settings)) {
            Ok(f) => close(&mut checks, "first-order statistic", f.scaled_statistic, 0.0, 1e-12),
            Err(e) => checks.push((format!("first-order failed: {e}"), false)),
        }
        let x = |s: &[uel_core::crossover::SubjectRecord], first: bool| -> Vec<f64> {
            s.iter().map(|r| if first { r.baseline.unwrap() } else { r.washout.unwrap() }).collect()
        };
        close(&mut checks, "P(X11>X21)", relative_effect(&x(d.seq1(), true), &x(d.seq2(), true)).unwrap(), 0.293, 5e-4);
        close(&mut checks, "P(X12>X22)", relative_effect(&x(d.seq1(), false), &x(d.seq2(), false)).unwrap(), 0.293, 5e-4);
        match run(second_order_carryover_test(&d, &settings)) {
            Ok(s) => {
                close(&mut checks, "second-order statistic", s.scaled_statistic, 1.196, 5e-4);
                close(&mut checks, "second-order p", s.p_value, 0.274, 5e-4);
                let z = |s: &[uel_core::crossover::SubjectRecord], first: bool| -> Vec<f64> {
                    s.iter()
                        .map(|r| if first { r.period1 - r.baseline.unwrap() } else { r.period2 - r.washout.unwrap() })
                        .collect()
                };
                close(&mut checks, "P(Z11>Z21)", relative_effect(&z(d.seq1(), true), &z(d.seq2(), true)).unwrap(), 0.919, 5e-4);
                close(&mut checks, "P(Z22>Z12)", relative_effect(&z(d.seq2(), false), &z(d.seq1(), false)).unwrap(), 0.778, 5e-4);
            }
            Err(e) => checks.push((format!("second-order failed: {e}"), false)),
        }
    } else {
        checks.push(("fixture lacks baseline and washout responses".into(), false));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    verdict(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks", checks.len())
        } else {
            format!("failed: {}", failed.join("; "))
        },
    )
}

fn close(checks: &mut Vec<(String, bool)>, name: &str, got: f64, want: f64, tol: f64) {
    checks.push((format!("{name} {got:.4} vs {want}"), (got - want).abs() <= tol));
}

fn criterion_9() -> Outcome {
    let a = chi1_pvalue(3.841459);
    let b = chi1_pvalue(1.0889);
    verdict(
        (a - 0.05).abs() <= 1e-4 && (b - 0.297).abs() <= 1e-3,
        format!("chi1_pvalue(3.841459) = {a:.6}, chi1_pvalue(1.0889) = {b:.6}"),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let config = dir.path().join("scenario.toml");
    std::fs::write(
        &config,
        r#"
name = "determinism"
n1 = 25
n2 = 25
replications = 200
seed = 1010
test = "mv_wmw"
baselines = ["chisq_quadratic"]
[family]
kind = "mv_null_pair"
"#,
    )
    .unwrap();
    let run = |workers: &str, format: &str| {
        Command::new(env!("CARGO_BIN_EXE_uel"))
            .args(["simulate", "--config"])
            .arg(&config)
            .args(["--seed", "77", "--workers", workers, "--format", format])
            .output()
            .expect("binary runs")
    };
    let mut identical = true;
    for format in ["record", "table"] {
        let outputs: Vec<_> = ["1", "2", "4"].iter().map(|w| run(w, format)).collect();
        if outputs.iter().any(|o| !o.status.success()) {
            return Outcome::Fail(format!("simulate failed: {}", String::from_utf8_lossy(&outputs[0].stderr)));
        }
        identical &= outputs.windows(2).all(|p| p[0].stdout == p[1].stdout);
    }
    verdict(identical, "record and table reports with 1, 2 and 4 workers byte-identical".into())
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome, Duration);
    let min = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 10] = [
        (1, "dual vs primal EL oracle", criterion_1, min(1)),
        (2, "solver contract on random instances", criterion_2, min(1)),
        (3, "AUC statistic null calibration", criterion_3, min(5)),
        (4, "correlated AUC null calibration", criterion_4, min(10)),
        (5, "Gehan null calibration under censoring", criterion_5, min(10)),
        (6, "multivariate WMW null calibration", criterion_6, min(10)),
        (7, "weighted chi-square mixture closed form", criterion_7, min(1)),
        (8, "crossover fixture reproduction", criterion_8, min(1)),
        (9, "chi-square(1) tail accuracy", criterion_9, min(1)),
        (10, "simulate determinism across workers", criterion_10, min(10)),
    ];
    let mut failures = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let timing = format!("{:.1}s", elapsed.as_secs_f64());
        let outcome = match outcome {
            Outcome::Pass(d) if elapsed > budget => Outcome::Fail(format!("{d}; over time budget {}s", budget.as_secs())),
            other => other,
        };
        match outcome {
            Outcome::Pass(d) => println!("ACCEPTANCE {id:>2} PASS [{timing}] {name}: {d}"),
            Outcome::Fail(d) => {
                failures += 1;
                println!("ACCEPTANCE {id:>2} FAIL [{timing}] {name}: {d}");
            }
            Outcome::Skip(d) => println!("ACCEPTANCE {id:>2} SKIP [{timing}] {name}: {d}"),
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
