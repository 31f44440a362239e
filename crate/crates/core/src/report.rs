//! Input parsing for two-sample files and the report record emitted by the
//! command-line front end.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossover::{csv_error, PipelineReport};
use crate::error::{Error, Result};
use crate::kernels::{TiePolicy, TwoSampleData};
use crate::procedures::{Reference, TestResult, TestSettings};
use crate::sim::ScenarioReport;

/// Column layout of a two-sample file. Every layout has a `group` column
/// whose values are `1` or `2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    /// `group, value`.
    Univariate,
    /// `group, time, censored` with `censored` = 1 for a censored time.
    Survival,
    /// `group` plus one numeric column per coordinate, in header order.
    Multivariate,
}

/// Reads a delimiter-separated two-sample file.
pub fn parse_two_sample<R: Read>(reader: R, schema: Schema, delimiter: u8) -> Result<TwoSampleData> {
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
    let c_group = column("group")?;
    let (values, c_censored): (Vec<(usize, String)>, Option<usize>) = match schema {
        Schema::Univariate => (vec![(column("value")?, "value".into())], None),
        Schema::Survival => (vec![(column("time")?, "time".into())], Some(column("censored")?)),
        Schema::Multivariate => {
            let cols: Vec<(usize, String)> = headers
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != c_group)
                .map(|(i, h)| (i, h.to_string()))
                .collect();
            if cols.is_empty() {
                return Err(Error::Schema("no value columns besides 'group'".into()));
            }
            (cols, None)
        }
    };

    let mut groups: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut flags: [Vec<bool>; 2] = [Vec::new(), Vec::new()];
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize, name: &str| {
            record.get(c).filter(|v| !v.is_empty()).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {name}"),
            })
        };
        let g = match field(c_group, "group")? {
            "1" => 0,
            "2" => 1,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("group must be 1 or 2, got '{other}'"),
                })
            }
        };
        let mut obs = Vec::with_capacity(values.len());
        for (c, name) in &values {
            let raw = field(*c, name)?;
            let v: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("{name} '{raw}' is not a finite number"),
            })?;
            obs.push(v);
        }
        if let Some(c) = c_censored {
            let flag = match field(c, "censored")? {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("censored must be 0 or 1, got '{other}'"),
                    })
                }
            };
            if obs[0] < 0.0 {
                return Err(Error::Parse {
                    line,
                    message: format!("time {} is negative", obs[0]),
                });
            }
            flags[g].push(flag);
        }
        groups[g].push(obs);
    }
    for (g, label) in groups.iter().zip(["1", "2"]) {
        if g.is_empty() {
            return Err(Error::EmptyGroup(label.into()));
        }
    }
    let [g1, g2] = groups;
    let [f1, f2] = flags;
    match c_censored {
        Some(_) => TwoSampleData::new(g1, g2, Some(f1), Some(f2)),
        None => TwoSampleData::new(g1, g2, None, None),
    }
}

pub fn parse_two_sample_path(path: impl AsRef<Path>, schema: Schema, delimiter: u8) -> Result<TwoSampleData> {
    parse_two_sample(std::fs::File::open(path)?, schema, delimiter)
}

/// Hex SHA-256 of the concatenated input bytes.
pub fn inputs_digest<'a>(inputs: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for bytes in inputs {
        hasher.update(bytes);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Location calibrated to a target AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub family: crate::sim::LocationFamily,
    pub target_auc: f64,
    pub location: f64,
    pub achieved_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ReportBody {
    Test(TestResult),
    Pipeline(PipelineReport),
    Scenario(ScenarioReport),
    Calibration(CalibrationResult),
}

/// Settings a command actually ran with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSettings {
    pub test: TestSettings,
    pub tie_policy: Option<TiePolicy>,
    pub alpha: Option<f64>,
    pub delimiter: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub command: Vec<String>,
    pub inputs_digest: String,
    pub version: String,
    pub seed: u64,
    pub settings: RecordSettings,
    pub result: ReportBody,
}

impl ReportRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    /// Comma-separated table, six significant digits per number.
    pub fn to_table(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        let mut row = |fields: Vec<String>| w.write_record(&fields).expect("writing to memory");
        let s = |v: &str| v.to_string();
        match &self.result {
            ReportBody::Test(t) => {
                row(test_header());
                row(test_row(t));
            }
            ReportBody::Pipeline(p) => {
                let mut header = vec![s("hypothesis"), s("rejected")];
                header.extend(test_header());
                row(header);
                for step in &p.steps {
                    let mut r = vec![s(step.hypothesis.as_str()), step.rejected.to_string()];
                    r.extend(test_row(&step.result));
                    row(r);
                }
                let conclusion = serde_json::to_value(p.final_conclusion).expect("unit enum");
                row(vec![s("conclusion"), conclusion.as_str().unwrap_or_default().to_string()]);
            }
            ReportBody::Scenario(r) => {
                row(
                    [
                        "scenario",
                        "family",
                        "method",
                        "n1",
                        "n2",
                        "replications",
                        "completed",
                        "failures",
                        "rejection_rate",
                        "monte_carlo_se",
                        "failure_fraction",
                        "realized_censoring",
                    ]
                    .map(String::from)
                    .to_vec(),
                );
                for m in &r.methods {
                    row(vec![
                        r.config.name.clone(),
                        s(r.config.family.name()),
                        m.method.clone(),
                        r.config.n1.to_string(),
                        r.config.n2.to_string(),
                        r.config.replications.to_string(),
                        m.completed.to_string(),
                        m.failures.to_string(),
                        fmt_sig(m.rejection_rate),
                        fmt_sig(m.monte_carlo_se),
                        fmt_sig(m.failure_fraction),
                        r.realized_censoring.map(fmt_sig).unwrap_or_default(),
                    ]);
                }
            }
            ReportBody::Calibration(c) => {
                row(["family", "target_auc", "location", "achieved_auc"].map(String::from).to_vec());
                let family = serde_json::to_value(c.family).expect("unit enum");
                row(vec![
                    family.as_str().unwrap_or_default().to_string(),
                    fmt_sig(c.target_auc),
                    fmt_sig(c.location),
                    fmt_sig(c.achieved_auc),
                ]);
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
    }
}

fn test_header() -> Vec<String> {
    ["test", "estimate", "null_value", "log_el_ratio", "statistic", "reference", "p_value"]
        .map(String::from)
        .to_vec()
}

fn test_row(t: &TestResult) -> Vec<String> {
    let join = |v: &[f64]| v.iter().map(|x| fmt_sig(*x)).collect::<Vec<_>>().join(";");
    let reference = match &t.reference {
        Reference::Chi1 => "chi2_1".to_string(),
        Reference::ChiSquared { df } => format!("chi2_{df}"),
        Reference::NormalTwoSided => "normal".to_string(),
        Reference::WeightedChisq { weights, .. } => format!("weighted_chi2({})", join(weights)),
    };
    vec![
        t.test.clone(),
        join(&t.estimate),
        join(&t.null_value),
        t.log_el_ratio.map(fmt_sig).unwrap_or_default(),
        fmt_sig(t.scaled_statistic),
        reference,
        fmt_sig(t.p_value),
    ]
}

/// Fixed notation with six significant digits. Magnitudes below 1e-12
/// switch to scientific notation to keep the field short.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    if x.abs() < 1e-12 {
        return format!("{x:.5e}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit, e.g. 9.999995 → 10.00000
    let digits = s.chars().filter(char::is_ascii_digit).skip_while(|c| *c == '0').count();
    if digits > 6 && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}
