//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 pipeline or data error. Human
//! summaries go to stdout; artifacts are only written to `--out` paths.
//! An optional `--config FILE` supplies `key = value` lines, one per flag
//! (without the leading dashes); flags given on the command line win.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::distmetrics::{DistanceReport, MetricSettings, Moments};
use crate::error::{Error, Result, StageExt};
use crate::experiment::{
    evaluate_model, fit_model, full_grid_ks, gen_markov_switching, k_sweep_in_dir, min_train_len,
    write_moment_table, FittedModel, ScenarioTemplate, SynthParams, DEFAULT_N_PER_K,
    DEFAULT_SWEEP_KS, FULL_GRID_N_PER_K,
};
use crate::features::DEFAULT_HORIZONS;
use crate::kmeans::KMeansConfig;
use crate::marketdata::{load_prices_file, log_returns, split_by_date, SplitPolicy};
use crate::mixture;
use crate::regime::{state_trace, write_report_csv, RegimeThresholds};

#[derive(Debug, Parser)]
#[command(
    name = "marketstates",
    version,
    about = "Market regime state machines from momentum/risk clustering"
)]
pub struct Cli {
    /// Key-value file supplying default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit features, clusters and the state machine on a training window.
    Fit(FitArgs),
    /// Print and export the regime interpretation table of a fitted model.
    Report(ReportArgs),
    /// Draw returns from a fitted model's mixture.
    Sample(SampleArgs),
    /// Score the state machine and the normal baseline on the test remainder.
    Evaluate(EvaluateArgs),
    /// Run the randomized K sweep over a directory of price files.
    Sweep(SweepArgs),
    /// Write a synthetic Markov-switching price series.
    Synth(SynthArgs),
    /// Per-day state probabilities over a date range.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct KMeansArgs {
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Comma-separated horizons in trading days.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HORIZONS.to_vec())]
    pub horizons: Vec<usize>,
}

impl KMeansArgs {
    fn config(&self) -> KMeansConfig {
        KMeansConfig {
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Fixed number of model draws; default max(100000, 10 x test days).
    #[arg(long)]
    pub n_model: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub bins: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
}

impl MetricArgs {
    fn settings(&self) -> MetricSettings {
        let mut s = MetricSettings {
            bins: self.bins,
            epsilon: self.epsilon,
            ..MetricSettings::default()
        };
        if let Some(n) = self.n_model {
            s.n_model_min = n;
            s.n_model_factor = 0;
        }
        s
    }
}

fn k_parser() -> clap::builder::RangedU64ValueParser<usize> {
    clap::builder::RangedU64ValueParser::<usize>::new().range(2..)
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// `date,close` CSV.
    pub prices: PathBuf,
    /// First training day (default: first available).
    #[arg(long)]
    pub train_start: Option<NaiveDate>,
    #[arg(long)]
    pub train_end: NaiveDate,
    #[arg(long, default_value_t = 5, value_parser = k_parser())]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also export the raw training feature matrix.
    #[arg(long)]
    pub features_out: Option<PathBuf>,
    #[command(flatten)]
    pub kmeans: KMeansArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample the normal baseline instead of the state machine.
    #[arg(long)]
    pub normal: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub prices: PathBuf,
    /// Sampling seed (default: the model's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub prices: PathBuf,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory of `<asset>.csv` price files.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_KS.to_vec())]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_N_PER_K)]
    pub n_per_k: usize,
    /// K = 2..200 with 500 scenarios each; overrides --ks and --n-per-k.
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Summary CSV, one row per K.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-scenario JSON lines.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[command(flatten)]
    pub kmeans: KMeansArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    TwoRegime,
    ThreeRegime,
    Custom,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::TwoRegime)]
    pub preset: Preset,
    /// Transition matrix rows separated by `;`, entries by `,` (custom preset).
    #[arg(long)]
    pub trans: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mus: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Vec<f64>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long, default_value_t = 100.0)]
    pub p0: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub asset_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

enum Failure {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Inserts config-file flags right after the subcommand, skipping any flag
/// already present on the command line.
fn merge_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let mut config_path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            config_path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(p.to_string());
        }
    }
    let Some(path) = config_path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let pairs = parse_config(&text)?;

    let sub = [
        "fit", "report", "sample", "evaluate", "sweep", "synth", "trace",
    ];
    let Some(pos) = args.iter().position(|a| sub.contains(&a.as_str())) else {
        return Ok(args);
    };
    let present = |key: &str| {
        let flag = format!("--{key}");
        args.iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut injected = Vec::new();
    for (k, v) in pairs {
        if k == "config" || present(&k) {
            continue;
        }
        match v.as_str() {
            "true" => injected.push(format!("--{k}")),
            "false" => {}
            _ => injected.push(format!("--{k}={v}")),
        }
    }
    let mut merged = args[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[pos + 1..]);
    Ok(merged)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };

    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Report(a) => cmd_report(a, out),
        Command::Sample(a) => cmd_sample(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Trace(a) => cmd_trace(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "usage error: {msg}");
            1
        }
        Err(Failure::Pipeline(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn require_input(path: &Path) -> CmdResult {
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "input {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn require_output(path: &Path) -> CmdResult {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Failure::Usage(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path) -> Result<FittedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FittedModel::from_json(&text).stage("model")
}

fn print_model_summary(model: &FittedModel, out: &mut dyn Write) -> Result<()> {
    let report = model.report(&RegimeThresholds::default())?;
    let io = |e| Error::io("<stdout>", e);
    writeln!(
        out,
        "{}: k={} trained {}..{} inertia={:.4} iterations={}",
        model.asset_id,
        model.k,
        model.train_start,
        model.train_end,
        model.inertia,
        model.n_iterations
    )
    .map_err(io)?;
    write_report_csv(&report, &model.horizons, &mut *out).map_err(io)?;
    writeln!(out, "state frequencies:").map_err(io)?;
    for r in &report {
        writeln!(out, "  {:>3} {:<12} {:.4}", r.state, r.tag, r.freq).map_err(io)?;
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> CmdResult {
    require_input(&a.prices)?;
    require_output(&a.out)?;
    if let Some(p) = &a.features_out {
        require_output(p)?;
    }
    let prices = load_prices_file(&a.prices).stage("load")?;
    let returns = log_returns(&prices);
    let start = a.train_start.unwrap_or(returns.dates()[0]);
    let max_h = *a
        .kmeans
        .horizons
        .last()
        .ok_or_else(|| Failure::Usage("empty --horizons".into()))?;
    let policy = SplitPolicy {
        min_train: min_train_len(max_h, a.k).max(max_h + 1),
        min_test: 0,
    };
    let train = match split_by_date(&returns, start, a.train_end, policy) {
        Ok((train, _)) => train,
        // fitting does not need a test remainder
        Err(Error::EmptyTestRemainder(_)) => {
            let lo = returns.dates().partition_point(|d| *d < start);
            returns.slice(lo..returns.len())
        }
        Err(e) => {
            return Err(Error::Stage {
                stage: "split",
                source: Box::new(e),
            }
            .into())
        }
    };
    if train.len() < policy.min_train {
        return Err(Error::WindowTooShort {
            needed: policy.min_train,
            found: train.len(),
        }
        .into());
    }
    let model = fit_model(
        &train,
        prices.asset_id(),
        &a.kmeans.horizons,
        a.k,
        a.seed,
        &a.kmeans.config(),
    )?;
    write_text(&a.out, &model.to_json()?)?;
    if let Some(p) = &a.features_out {
        let raw = crate::features::build_features(&train, &model.horizons)?;
        raw.write_csv(create(p)?).map_err(|e| Error::io(p, e))?;
    }
    print_model_summary(&model, out)?;
    Ok(())
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> CmdResult {
    require_input(&a.model)?;
    if let Some(p) = &a.out {
        require_output(p)?;
    }
    let model = load_model(&a.model)?;
    print_model_summary(&model, out)?;
    if let Some(p) = &a.out {
        let report = model.report(&RegimeThresholds::default())?;
        write_report_csv(&report, &model.horizons, create(p)?).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_sample(a: &SampleArgs, out: &mut dyn Write) -> CmdResult {
    require_input(&a.model)?;
    require_output(&a.out)?;
    if a.n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let model = load_model(&a.model)?;
    let spec = if a.normal {
        model.normal.clone()
    } else {
        model.mixture()?
    };
    let xs = mixture::sample(&spec, a.n, a.seed);
    let mut w = create(&a.out)?;
    let io = |e| Error::io(&a.out, e);
    writeln!(w, "return").map_err(io)?;
    for x in &xs {
        writeln!(w, "{x}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let _ = writeln!(out, "wrote {} draws to {}", a.n, a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct MomentTable {
    test: Moments,
    normal: Moments,
    state_machine: Moments,
}

#[derive(Debug, Serialize)]
struct EvaluationFile {
    asset_id: String,
    train_end: NaiveDate,
    n_test: usize,
    seed: u64,
    state_machine: DistanceReport,
    normal: DistanceReport,
    moments: MomentTable,
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> CmdResult {
    require_input(&a.model)?;
    require_input(&a.prices)?;
    require_output(&a.out)?;
    let model = load_model(&a.model)?;
    let prices = load_prices_file(&a.prices).stage("load")?;
    let returns = log_returns(&prices);
    let cut = returns.dates().partition_point(|d| *d <= model.train_end);
    if cut >= returns.len() {
        return Err(Error::NoTestData(model.train_end.to_string()).into());
    }
    let test = returns.slice(cut..returns.len());
    let seed = a.seed.unwrap_or(model.seed);
    let e = evaluate_model(&model, test.values(), &a.metrics.settings(), seed)?;

    let file = EvaluationFile {
        asset_id: prices.asset_id().to_string(),
        train_end: model.train_end,
        n_test: test.len(),
        seed,
        state_machine: e.state_machine.report,
        normal: e.normal.report,
        moments: MomentTable {
            test: e.test_moments,
            normal: e.normal.moments,
            state_machine: e.state_machine.moments,
        },
    };
    write_text(
        &a.out,
        &(serde_json::to_string_pretty(&file).map_err(Error::from)? + "\n"),
    )?;

    let io = |e| Error::io("<stdout>", e);
    write_moment_table(&e, &mut *out).map_err(io)?;
    writeln!(
        out,
        "{:>14} {:>10} {:>12} {:>12}",
        "model", "KS", "KL", "W1"
    )
    .map_err(io)?;
    for (name, r) in [
        ("normal", &e.normal.report),
        ("state_machine", &e.state_machine.report),
    ] {
        writeln!(
            out,
            "{:>14} {:>10.4} {:>12.4} {:>12.6}",
            name, r.ks, r.kl, r.wasserstein
        )
        .map_err(io)?;
    }
    Ok(())
}

fn cmd_trace(a: &TraceArgs, out: &mut dyn Write) -> CmdResult {
    require_input(&a.model)?;
    require_input(&a.prices)?;
    require_output(&a.out)?;
    let model = load_model(&a.model)?;
    let prices = load_prices_file(&a.prices).stage("load")?;
    let features = model.standardized_features(&log_returns(&prices))?;
    let (first, last) = (
        features.dates()[0],
        *features.dates().last().expect("non-empty"),
    );
    let from = a.from.unwrap_or(first);
    let to = a.to.unwrap_or(last);
    if from < first || to > last || from > to {
        return Err(Error::InvalidWindow(format!(
            "window outside range: [{from}, {to}] not within [{first}, {last}]"
        ))
        .into());
    }
    let window = features.select_dates(from, to);
    let trace = state_trace(&model.cluster_model()?, &window)?;
    trace
        .write_csv(create(&a.out)?, true)
        .map_err(|e| Error::io(&a.out, e))?;
    let _ = writeln!(
        out,
        "wrote {} trace rows to {}",
        trace.dates.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    require_input(&a.data_dir)?;
    require_output(&a.out)?;
    if let Some(p) = &a.results {
        require_output(p)?;
    }
    let (ks, n_per_k) = if a.full_grid {
        (full_grid_ks(), FULL_GRID_N_PER_K)
    } else {
        (a.ks.clone(), a.n_per_k)
    };
    if ks.is_empty() || ks.iter().any(|&k| k < 2) {
        return Err(Failure::Usage("--ks must list values >= 2".into()));
    }
    let template = ScenarioTemplate {
        horizons: a.kmeans.horizons.clone(),
        kmeans: a.kmeans.config(),
        metrics: a.metrics.settings(),
    };
    let sweep = k_sweep_in_dir(&a.data_dir, &ks, n_per_k, a.seed, &template)?;
    sweep
        .write_summary_csv(create(&a.out)?)
        .map_err(|e| Error::io(&a.out, e))?;
    if let Some(p) = &a.results {
        sweep.write_results_jsonl(create(p)?)?;
    }
    let io = |e| Error::io("<stdout>", e);
    writeln!(out, "{}", crate::experiment::SweepRow::CSV_HEADER).map_err(io)?;
    for r in &sweep.rows {
        writeln!(out, "{}", r.csv_row()).map_err(io)?;
    }
    for f in &sweep.failures {
        writeln!(out, "skipped k={} scenario {}: {}", f.k, f.index, f.error).map_err(io)?;
    }
    Ok(())
}

fn parse_matrix(s: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    s.split(';')
        .map(|row| {
            row.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("bad matrix entry `{x}`: {e}"))
                })
                .collect()
        })
        .collect()
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CmdResult {
    require_output(&a.out)?;
    let mut params = match a.preset {
        Preset::TwoRegime => SynthParams::two_regime(a.seed),
        Preset::ThreeRegime => SynthParams::three_regime(a.seed),
        Preset::Custom => {
            let trans = a
                .trans
                .as_deref()
                .ok_or_else(|| Failure::Usage("custom preset needs --trans".into()))
                .and_then(|t| parse_matrix(t).map_err(Failure::Usage))?;
            if a.mus.len() != trans.len() || a.sigmas.len() != trans.len() {
                return Err(Failure::Usage(
                    "--mus and --sigmas need one value per state".into(),
                ));
            }
            SynthParams {
                n_states: trans.len(),
                trans,
                mus: a.mus.clone(),
                sigmas: a.sigmas.clone(),
                n_days: 3000,
                p0: a.p0,
                seed: a.seed,
            }
        }
    };
    if let Some(d) = a.days {
        params.n_days = d;
    }
    params.p0 = a.p0;
    let series = gen_markov_switching(&params)?;
    let series = crate::marketdata::PriceSeries::new(
        &a.asset_id,
        series.dates().to_vec(),
        series.prices().to_vec(),
    )?;
    series
        .write_csv(create(&a.out)?)
        .map_err(|e| Error::io(&a.out, e))?;
    let _ = writeln!(out, "wrote {} prices to {}", series.len(), a.out.display());
    Ok(())
}
