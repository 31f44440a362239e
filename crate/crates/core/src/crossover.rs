//! Two-period, two-sequence crossover analyses built on the correlated-AUC
//! and multivariate WMW tests.
//!
//! Group 1 is the AB sequence and group 2 the BA sequence. Every comparison
//! is over the cross pairs (AB subject, BA subject); ties count one half.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{wmw_kernel, KernelMatrix, TiePolicy};
use crate::procedures::{auc_el_test_kernel, correlated_auc_el_test_markers, mv_wmw_el_test_kernel, TestResult, TestSettings};

const TIES: TiePolicy = TiePolicy::Half;

/// Responses of one subject. `baseline` precedes period 1 and `washout`
/// separates the two periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub period1: f64,
    pub period2: f64,
    pub baseline: Option<f64>,
    pub washout: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sequence {
    #[serde(rename = "AB")]
    Ab,
    #[serde(rename = "BA")]
    Ba,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverDataset {
    seq1: Vec<SubjectRecord>,
    seq2: Vec<SubjectRecord>,
    pub units: Option<String>,
}

impl CrossoverDataset {
    /// Checks group sizes, finiteness and that baseline and washout are
    /// either present for every subject of a sequence or for none.
    pub fn new(seq1: Vec<SubjectRecord>, seq2: Vec<SubjectRecord>) -> Result<Self> {
        for (name, seq) in [("AB", &seq1), ("BA", &seq2)] {
            if seq.is_empty() {
                return Err(Error::EmptyGroup(name.to_string()));
            }
            if seq.len() < 2 {
                return Err(Error::invalid(format!("sequence {name} needs at least two subjects")));
            }
            for s in seq {
                let values = [Some(s.period1), Some(s.period2), s.baseline, s.washout];
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("subject {} has a non-finite response", s.id)));
                }
            }
            for field in [|s: &SubjectRecord| s.baseline.is_some(), |s: &SubjectRecord| s.washout.is_some()] {
                let present = seq.iter().filter(|s| field(s)).count();
                if present != 0 && present != seq.len() {
                    return Err(Error::Schema(format!(
                        "sequence {name}: baseline/washout recorded for some subjects but not all"
                    )));
                }
            }
        }
        Ok(Self { seq1, seq2, units: None })
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = Some(units.into());
        self
    }

    pub fn seq1(&self) -> &[SubjectRecord] {
        &self.seq1
    }

    pub fn seq2(&self) -> &[SubjectRecord] {
        &self.seq2
    }

    /// True when every subject has both a baseline and a washout response.
    pub fn has_baselines(&self) -> bool {
        self.seq1.iter().chain(&self.seq2).all(|s| s.baseline.is_some() && s.washout.is_some())
    }

    fn require_baselines(&self) -> Result<()> {
        if self.has_baselines() {
            Ok(())
        } else {
            Err(Error::Schema("baseline and washout responses are required for every subject".into()))
        }
    }

    /// Reads the long format `subject_id, sequence, period, response` with
    /// `sequence ∈ {AB, BA}` and `period ∈ {baseline, 1, washout, 2}`.
    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
        };
        let (c_id, c_seq, c_period, c_resp) = (column("subject_id")?, column("sequence")?, column("period")?, column("response")?);

        #[derive(Default)]
        struct Partial {
            sequence: Option<Sequence>,
            periods: [Option<f64>; 4],
            line: u64,
        }
        let mut subjects: BTreeMap<String, Partial> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |c: usize, name: &str| {
                record
                    .get(c)
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("missing {name}"),
                    })
            };
            let id = field(c_id, "subject_id")?.to_string();
            let sequence = match field(c_seq, "sequence")? {
                s if s.eq_ignore_ascii_case("AB") => Sequence::Ab,
                s if s.eq_ignore_ascii_case("BA") => Sequence::Ba,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("sequence must be AB or BA, got '{other}'"),
                    })
                }
            };
            let slot = match field(c_period, "period")?.to_ascii_lowercase().as_str() {
                "baseline" => 0,
                "1" => 1,
                "washout" => 2,
                "2" => 3,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("period must be baseline, 1, washout or 2, got '{other}'"),
                    })
                }
            };
            let raw = field(c_resp, "response")?;
            let response: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("response '{raw}' is not a finite number"),
            })?;
            let entry = subjects.entry(id.clone()).or_insert_with(|| {
                order.push(id.clone());
                Partial {
                    line,
                    ..Default::default()
                }
            });
            match entry.sequence {
                Some(s) if s != sequence => {
                    return Err(Error::Parse {
                        line,
                        message: format!("subject {id} appears in both sequences"),
                    })
                }
                _ => entry.sequence = Some(sequence),
            }
            if entry.periods[slot].replace(response).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("subject {id} has a duplicate response for this period"),
                });
            }
        }

        let (mut seq1, mut seq2) = (Vec::new(), Vec::new());
        for id in order {
            let p = &subjects[&id];
            let (Some(period1), Some(period2)) = (p.periods[1], p.periods[3]) else {
                return Err(Error::Parse {
                    line: p.line,
                    message: format!("subject {id} lacks a period 1 or period 2 response"),
                });
            };
            let rec = SubjectRecord {
                id,
                period1,
                period2,
                baseline: p.periods[0],
                washout: p.periods[2],
            };
            match p.sequence.expect("set on first row") {
                Sequence::Ab => seq1.push(rec),
                Sequence::Ba => seq2.push(rec),
            }
        }
        Self::new(seq1, seq2)
    }

    pub fn from_path(path: impl AsRef<Path>, delimiter: u8) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?, delimiter)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// `P(a > b)` over all cross pairs, ties counting one half.
pub fn relative_effect(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("relative effect needs nonempty samples"));
    }
    let total: f64 = a.iter().map(|&ai| b.iter().map(|&bj| wmw_kernel(bj, ai, TIES)).sum::<f64>()).sum();
    Ok(total / (a.len() * b.len()) as f64)
}

fn column(seq: &[SubjectRecord], f: impl Fn(&SubjectRecord) -> f64) -> Vec<f64> {
    seq.iter().map(f).collect()
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

/// Kernel matrix of `I(a_i > b_j)` over (AB subject, BA subject) pairs.
fn greater(a: &[f64], b: &[f64]) -> KernelMatrix {
    KernelMatrix::wmw(&neg(a), &neg(b), TIES)
}

/// Kernel matrix of `I(b_j > a_i)` over (AB subject, BA subject) pairs.
fn less(a: &[f64], b: &[f64]) -> KernelMatrix {
    KernelMatrix::wmw(a, b, TIES)
}

fn named(mut r: TestResult, id: HypothesisId) -> TestResult {
    r.test = id.as_str().to_string();
    r
}

/// `P(Y₁₁ > Y₂₁) = P(Y₂₂ > Y₁₂)`.
pub fn carryover_test(d: &CrossoverDataset, settings: &TestSettings) -> Result<TestResult> {
    let (y11, y12) = (column(&d.seq1, |s| s.period1), column(&d.seq1, |s| s.period2));
    let (y21, y22) = (column(&d.seq2, |s| s.period1), column(&d.seq2, |s| s.period2));
    let r = correlated_auc_el_test_markers(&greater(&y11, &y21), &less(&y12, &y22), 0.0, settings)?;
    Ok(named(r, HypothesisId::Carryover))
}

/// `P(Y₁₁ > Y₂₁) = 0.5` and `P(Y₁₂ > Y₂₂) = 0.5`.
pub fn treatment_test_both_periods(d: &CrossoverDataset, settings: &TestSettings) -> Result<TestResult> {
    let g1: Vec<[f64; 2]> = d.seq1.iter().map(|s| [-s.period1, -s.period2]).collect();
    let g2: Vec<[f64; 2]> = d.seq2.iter().map(|s| [-s.period1, -s.period2]).collect();
    let km = KernelMatrix::from_fn(g1.len(), g2.len(), 2, crate::kernels::KernelKind::MvWmw, TIES, |i, j, out| {
        out[0] = wmw_kernel(g1[i][0], g2[j][0], TIES);
        out[1] = wmw_kernel(g1[i][1], g2[j][1], TIES);
    });
    let r = mv_wmw_el_test_kernel(&km, &[0.5, 0.5], settings)?;
    Ok(named(r, HypothesisId::TreatmentBothPeriods))
}

/// `P(Y₁₁ > Y₂₁) = 0.5`.
pub fn treatment_test_first_period(d: &CrossoverDataset, settings: &TestSettings) -> Result<TestResult> {
    let (y11, y21) = (column(&d.seq1, |s| s.period1), column(&d.seq2, |s| s.period1));
    let r = auc_el_test_kernel(&greater(&y11, &y21), 0.5, settings)?;
    Ok(named(r, HypothesisId::TreatmentFirstPeriod))
}

/// `P(X₁₁ > X₂₁) = P(X₁₂ > X₂₂)` on baseline (`X·₁`) and washout (`X·₂`).
pub fn first_order_carryover_test(d: &CrossoverDataset, settings: &TestSettings) -> Result<TestResult> {
    d.require_baselines()?;
    let b = |s: &SubjectRecord| s.baseline.expect("checked");
    let w = |s: &SubjectRecord| s.washout.expect("checked");
    let (x11, x12) = (column(&d.seq1, b), column(&d.seq1, w));
    let (x21, x22) = (column(&d.seq2, b), column(&d.seq2, w));
    let r = correlated_auc_el_test_markers(&greater(&x11, &x21), &greater(&x12, &x22), 0.0, settings)?;
    Ok(named(r, HypothesisId::FirstOrderCarryover))
}

/// Period responses minus the preceding baseline or washout response.
fn differences(seq: &[SubjectRecord]) -> (Vec<f64>, Vec<f64>) {
    (
        column(seq, |s| s.period1 - s.baseline.expect("checked")),
        column(seq, |s| s.period2 - s.washout.expect("checked")),
    )
}

/// `P(Z₁₁ > Z₂₁) = P(Z₂₂ > Z₁₂)` with `Z = Y − X`.
pub fn second_order_carryover_test(d: &CrossoverDataset, settings: &TestSettings) -> Result<TestResult> {
    d.require_baselines()?;
    let (z11, z12) = differences(&d.seq1);
    let (z21, z22) = differences(&d.seq2);
    let r = correlated_auc_el_test_markers(&greater(&z11, &z21), &less(&z12, &z22), 0.0, settings)?;
    Ok(named(r, HypothesisId::SecondOrderCarryover))
}

/// `P(Z₁₁ > Z₂₁) = 0.5`.
pub fn treatment_test_first_period_differences(d: &CrossoverDataset, settings: &TestSettings) -> Result<TestResult> {
    d.require_baselines()?;
    let (z11, _) = differences(&d.seq1);
    let (z21, _) = differences(&d.seq2);
    let r = auc_el_test_kernel(&greater(&z11, &z21), 0.5, settings)?;
    Ok(named(r, HypothesisId::TreatmentFirstPeriodDifferences))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisId {
    Carryover,
    TreatmentBothPeriods,
    TreatmentFirstPeriod,
    FirstOrderCarryover,
    SecondOrderCarryover,
    TreatmentFirstPeriodDifferences,
}

impl HypothesisId {
    pub fn as_str(self) -> &'static str {
        match self {
            HypothesisId::Carryover => "carryover",
            HypothesisId::TreatmentBothPeriods => "treatment_both_periods",
            HypothesisId::TreatmentFirstPeriod => "treatment_first_period",
            HypothesisId::FirstOrderCarryover => "first_order_carryover",
            HypothesisId::SecondOrderCarryover => "second_order_carryover",
            HypothesisId::TreatmentFirstPeriodDifferences => "treatment_first_period_differences",
        }
    }

    fn run(self, d: &CrossoverDataset, settings: &TestSettings) -> Result<TestResult> {
        let f = match self {
            HypothesisId::Carryover => carryover_test,
            HypothesisId::TreatmentBothPeriods => treatment_test_both_periods,
            HypothesisId::TreatmentFirstPeriod => treatment_test_first_period,
            HypothesisId::FirstOrderCarryover => first_order_carryover_test,
            HypothesisId::SecondOrderCarryover => second_order_carryover_test,
            HypothesisId::TreatmentFirstPeriodDifferences => treatment_test_first_period_differences,
        };
        f(d, settings).map_err(|e| Error::Step {
            step: self.as_str().to_string(),
            source: Box::new(e),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conclusion {
    NoTreatmentEffect,
    TreatmentEffectBothPeriods,
    TreatmentEffectFirstPeriodOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub hypothesis: HypothesisId,
    pub result: TestResult,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub steps: Vec<PipelineStep>,
    pub alpha: f64,
    pub used_baselines: bool,
    pub final_conclusion: Conclusion,
    /// Always false: every step is tested at `alpha` without adjustment.
    pub multiplicity_adjusted: bool,
}

/// Sequential carryover-then-treatment procedure.
///
/// Without baselines: test carryover; if retained test treatment in both
/// periods, otherwise in the first period only. With baselines: test
/// first-order then second-order carryover; if neither is rejected test
/// treatment in both periods, otherwise test the first-period differences.
pub fn run_pipeline(d: &CrossoverDataset, alpha: f64, use_baselines: bool, settings: &TestSettings) -> Result<PipelineReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if use_baselines {
        d.require_baselines()?;
    }
    let mut steps = Vec::new();
    let mut step = |id: HypothesisId| -> Result<bool> {
        let result = id.run(d, settings)?;
        let rejected = result.rejects(alpha);
        steps.push(PipelineStep {
            hypothesis: id,
            result,
            rejected,
        });
        Ok(rejected)
    };
    let carryover = if use_baselines {
        step(HypothesisId::FirstOrderCarryover)? || step(HypothesisId::SecondOrderCarryover)?
    } else {
        step(HypothesisId::Carryover)?
    };
    let final_conclusion = match (carryover, use_baselines) {
        (false, _) => {
            if step(HypothesisId::TreatmentBothPeriods)? {
                Conclusion::TreatmentEffectBothPeriods
            } else {
                Conclusion::NoTreatmentEffect
            }
        }
        (true, baselines) => {
            let id = if baselines {
                HypothesisId::TreatmentFirstPeriodDifferences
            } else {
                HypothesisId::TreatmentFirstPeriod
            };
            if step(id)? {
                Conclusion::TreatmentEffectFirstPeriodOnly
            } else {
                Conclusion::NoTreatmentEffect
            }
        }
    };
    Ok(PipelineReport {
        steps,
        alpha,
        used_baselines: use_baselines,
        final_conclusion,
        multiplicity_adjusted: false,
    })
}
