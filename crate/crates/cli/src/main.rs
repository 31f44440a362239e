//! `uel`: empirical-likelihood tests for two-sample U-statistics from the
//! command line.
//!
//! Exit codes: 0 when inference completed (whatever the decision), 2 for
//! usage errors, 3 for data or configuration errors, 4 for numerical
//! failures. Output is written only after the whole report is built.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uel_core::crossover::{run_pipeline, CrossoverDataset};
use uel_core::kernels::TiePolicy;
use uel_core::procedures::{auc_el_test, correlated_auc_el_test, gehan_el_test, mv_wmw_el_test, TestSettings};
use uel_core::reference::{WeightedChisqSettings, DEFAULT_MIXTURE_DRAWS, DEFAULT_SEED};
use uel_core::report::{
    inputs_digest, parse_two_sample, CalibrationResult, RecordSettings, ReportBody, ReportRecord, Schema,
};
use uel_core::sim::{calibrate_location, lognormal_vs_normal_auc, run_scenario, LocationFamily, ScenarioConfig};
use uel_core::numeric::normal_cdf;
use uel_core::variance::Centering;
use uel_core::{Error, Result};

#[derive(Parser)]
#[command(name = "uel", version, about = "Empirical-likelihood tests based on two-sample U-statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// AUC test, input columns `group,value`.
    AucTest(AucArgs),
    /// Difference of two correlated AUCs, input columns `group` plus two marker columns.
    AucCompare(CompareArgs),
    /// Gehan test for censored data, input columns `group,time,censored` (1 = censored).
    GehanTest(GehanArgs),
    /// Multivariate Wilcoxon-Mann-Whitney test, input columns `group` plus one column per coordinate.
    MvWmwTest(MvArgs),
    /// Carryover-then-treatment analysis of a 2x2 crossover trial, long
    /// format `subject_id,sequence,period,response`.
    Crossover(CrossoverArgs),
    /// Monte-Carlo Type I error or power study from a TOML scenario.
    Simulate(SimulateArgs),
    /// Location giving a target AUC for a univariate simulation family.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Record,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ties {
    Strict,
    Half,
}

impl From<Ties> for TiePolicy {
    fn from(t: Ties) -> Self {
        match t {
            Ties::Strict => TiePolicy::Strict,
            Ties::Half => TiePolicy::Half,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CenteringArg {
    Null,
    Estimate,
}

impl From<CenteringArg> for Centering {
    fn from(c: CenteringArg) -> Self {
        match c {
            CenteringArg::Null => Centering::Null,
            CenteringArg::Estimate => Centering::Estimate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    NormalVsNormal,
    LognormalVsLognormal,
    LognormalVsNormal,
}

impl From<FamilyArg> for LocationFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::NormalVsNormal => LocationFamily::NormalVsNormal,
            FamilyArg::LognormalVsLognormal => LocationFamily::LognormalVsLognormal,
            FamilyArg::LognormalVsNormal => LocationFamily::LognormalVsNormal,
        }
    }
}

#[derive(Args)]
struct Output {
    /// Also write the report to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct Common {
    /// Seed for the weighted chi-square Monte-Carlo reference.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Draws for the weighted chi-square Monte-Carlo reference.
    #[arg(long, default_value_t = DEFAULT_MIXTURE_DRAWS)]
    draws: u64,
    /// Input field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct AucArgs {
    input: PathBuf,
    /// Null AUC.
    #[arg(long, default_value_t = 0.5)]
    null: f64,
    #[arg(long, value_enum, default_value = "strict")]
    ties: Ties,
    /// Centering of the variance components.
    #[arg(long, value_enum, default_value = "null")]
    centering: CenteringArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompareArgs {
    input: PathBuf,
    /// Null difference of the two AUCs.
    #[arg(long, default_value_t = 0.0)]
    null: f64,
    #[arg(long, value_enum, default_value = "strict")]
    ties: Ties,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GehanArgs {
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MvArgs {
    input: PathBuf,
    /// Comma-separated null probabilities, one per coordinate (default 0.5 each).
    #[arg(long, value_delimiter = ',')]
    null: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "strict")]
    ties: Ties,
    #[arg(long, value_enum, default_value = "null")]
    centering: CenteringArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CrossoverArgs {
    input: PathBuf,
    /// Use baseline and washout responses.
    #[arg(long)]
    baselines: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides replications in the configuration.
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Target AUC in (0, 1).
    #[arg(long)]
    target: f64,
    #[command(flatten)]
    output: Output,
}

/// Arguments echoed in the report: everything except the output location
/// and the worker count, neither of which affects the result.
fn command_echo() -> Vec<String> {
    let mut echo = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--output" || a == "--workers" {
            args.next();
        } else if !(a.starts_with("--output=") || a.starts_with("--workers=")) {
            echo.push(a);
        }
    }
    echo
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::InvalidInput(format!("delimiter must be a single ASCII character, got '{c}'")))
}

fn test_settings(common: &Common, centering: Centering) -> Result<TestSettings> {
    let mixture = WeightedChisqSettings {
        draws: common.draws,
        seed: common.seed,
    };
    mixture.validate()?;
    Ok(TestSettings {
        mixture,
        centering,
        ..Default::default()
    })
}

fn record(inputs: &[u8], seed: u64, settings: RecordSettings, result: ReportBody) -> ReportRecord {
    ReportRecord {
        command: command_echo(),
        inputs_digest: inputs_digest([inputs]),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        settings,
        result,
    }
}

fn two_sample_command<'a>(
    input: &PathBuf,
    schema: Schema,
    common: &'a Common,
    ties: Option<Ties>,
    centering: Centering,
    run: impl FnOnce(&uel_core::kernels::TwoSampleData, &TestSettings) -> Result<uel_core::procedures::TestResult>,
) -> Result<(ReportRecord, &'a Output)> {
    let delimiter = delimiter_byte(common.delimiter)?;
    let settings = test_settings(common, centering)?;
    let bytes = std::fs::read(input)?;
    let data = parse_two_sample(bytes.as_slice(), schema, delimiter)?;
    let result = run(&data, &settings)?;
    let rs = RecordSettings {
        test: settings,
        tie_policy: ties.map(TiePolicy::from),
        alpha: None,
        delimiter: Some(common.delimiter.to_string()),
    };
    Ok((record(&bytes, common.seed, rs, ReportBody::Test(result)), &common.output))
}

fn dispatch(command: &Command) -> Result<(ReportRecord, &Output)> {
    match command {
        Command::AucTest(a) => two_sample_command(&a.input, Schema::Univariate, &a.common, Some(a.ties), a.centering.into(), |d, s| {
            auc_el_test(&d.column1(0), &d.column2(0), a.null, a.ties.into(), s)
        }),
        Command::AucCompare(a) => two_sample_command(&a.input, Schema::Multivariate, &a.common, Some(a.ties), Centering::Estimate, |d, s| {
            if d.dim() != 2 {
                return Err(Error::Schema(format!("auc-compare needs exactly two marker columns, found {}", d.dim())));
            }
            let rows = |g: &[Vec<f64>]| g.iter().map(|r| [r[0], r[1]]).collect::<Vec<_>>();
            correlated_auc_el_test(&rows(d.group1()), &rows(d.group2()), a.null, None, a.ties.into(), s)
        }),
        Command::GehanTest(a) => two_sample_command(&a.input, Schema::Survival, &a.common, None, Centering::Null, gehan_el_test),
        Command::MvWmwTest(a) => two_sample_command(&a.input, Schema::Multivariate, &a.common, Some(a.ties), a.centering.into(), |d, s| {
            mv_wmw_el_test(d, a.null.as_deref(), a.ties.into(), s)
        }),
        Command::Crossover(a) => {
            let delimiter = delimiter_byte(a.common.delimiter)?;
            let settings = test_settings(&a.common, Centering::Null)?;
            let bytes = std::fs::read(&a.input)?;
            let data = CrossoverDataset::from_reader(bytes.as_slice(), delimiter)?;
            let report = run_pipeline(&data, a.alpha, a.baselines, &settings)?;
            let rs = RecordSettings {
                test: settings,
                tie_policy: Some(TiePolicy::Half),
                alpha: Some(a.alpha),
                delimiter: Some(a.common.delimiter.to_string()),
            };
            Ok((record(&bytes, a.common.seed, rs, ReportBody::Pipeline(report)), &a.common.output))
        }
        Command::Simulate(a) => {
            let bytes = std::fs::read(&a.config)?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(e.to_string()))?;
            let mut config = ScenarioConfig::from_toml_str(&text)?;
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            if let Some(r) = a.replications {
                config.replications = r;
            }
            let report = run_scenario(&config, a.workers)?;
            eprintln!("simulate: {} replications in {:.2} s", config.replications, report.runtime_seconds);
            let rs = RecordSettings {
                test: TestSettings {
                    mixture: WeightedChisqSettings {
                        draws: config.mixture_draws.unwrap_or(uel_core::sim::DEFAULT_SIM_MIXTURE_DRAWS),
                        seed: config.seed,
                    },
                    centering: config.centering,
                    ..Default::default()
                },
                tie_policy: Some(TiePolicy::Strict),
                alpha: Some(config.alpha),
                delimiter: None,
            };
            Ok((record(&bytes, config.seed, rs, ReportBody::Scenario(report)), &a.output))
        }
        Command::Calibrate(a) => {
            let family = LocationFamily::from(a.family);
            let location = calibrate_location(family, a.target)?;
            let achieved_auc = match family {
                LocationFamily::LognormalVsNormal => lognormal_vs_normal_auc(location),
                _ => normal_cdf(location / 5f64.sqrt()),
            };
            let result = CalibrationResult {
                family,
                target_auc: a.target,
                location,
                achieved_auc,
            };
            let rs = RecordSettings {
                test: TestSettings::default(),
                tie_policy: None,
                alpha: None,
                delimiter: None,
            };
            let input = format!("{family:?} {}", a.target);
            Ok((record(input.as_bytes(), 0, rs, ReportBody::Calibration(result)), &a.output))
        }
    }
}

fn emit(record: &ReportRecord, output: &Output) -> std::io::Result<()> {
    let text = match output.format {
        Format::Table => record.to_table(),
        Format::Record => record.to_json() + "\n",
    };
    if let Some(path) = &output.output {
        std::fs::write(path, &text)?;
    }
    std::io::stdout().lock().write_all(text.as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok((record, output)) => match emit(&record, output) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 3 } else { 4 })
        }
    }
}
