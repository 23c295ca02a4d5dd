//! End-to-end pipeline, evaluation protocol and the randomized scenario harness.
//!
//! Seeds are derived, never drawn from the environment: scenario `i` of a
//! sweep gets `derive_seed(master_seed, i)`, and the state-machine and
//! normal-baseline samplers use fixed sub-streams of the scenario seed. The
//! baseline sub-stream does not depend on K, so the baseline is identical
//! across a K sweep.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distmetrics::{compare, moments, DistanceReport, MetricSettings, Moments};
use crate::error::{Error, Result, StageExt};
use crate::features::{
    apply_standardizer, build_features, fit_standardizer, FeatureMatrix, StandardizationParams,
    DEFAULT_HORIZONS,
};
use crate::kmeans::{self, ClusterModel, KMeansConfig};
use crate::marketdata::{
    load_directory, log_returns, split_by_date, PriceSeries, ReturnSeries, SplitPolicy,
};
use crate::mixture::{self, MixtureSpec};
use crate::regime::{
    build_state_machine, interpret_states, RegimeThresholds, StateMachine, StateReport,
};

const STREAM_STATE_MACHINE: u64 = 1;
const STREAM_NORMAL: u64 = 2;
const STREAM_WINDOW: u64 = 3;

/// SplitMix64 finalizer over `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Synthetic Markov-switching prices

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_states: usize,
    pub trans: Vec<Vec<f64>>,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Number of daily returns; the price series has one more row.
    pub n_days: usize,
    pub p0: f64,
    pub seed: u64,
}

impl SynthParams {
    /// Calm (0.05% drift, 0.5% vol) and crisis (-0.2% drift, 3% vol)
    /// regimes with 0.98 persistence, 3000 days.
    pub fn two_regime(seed: u64) -> Self {
        Self {
            n_states: 2,
            trans: vec![vec![0.98, 0.02], vec![0.02, 0.98]],
            mus: vec![0.0005, -0.002],
            sigmas: vec![0.005, 0.03],
            n_days: 3000,
            p0: 100.0,
            seed,
        }
    }

    /// Calm, choppy and crisis regimes with long sojourns.
    pub fn three_regime(seed: u64) -> Self {
        Self {
            n_states: 3,
            trans: vec![
                vec![0.990, 0.008, 0.002],
                vec![0.015, 0.980, 0.005],
                vec![0.010, 0.020, 0.970],
            ],
            mus: vec![0.0006, -0.0002, -0.003],
            sigmas: vec![0.006, 0.013, 0.035],
            n_days: 3000,
            p0: 100.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states;
        if k == 0 || self.trans.len() != k || self.mus.len() != k || self.sigmas.len() != k {
            return Err(Error::InvalidParams(format!(
                "synthetic parameters must describe {k} states"
            )));
        }
        for (i, row) in self.trans.iter().enumerate() {
            if row.len() != k || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidParams(format!(
                    "transition row {i} is not a probability vector"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParams(format!(
                    "transition row {i} sums to {s}"
                )));
            }
        }
        if self.sigmas.iter().any(|s| !(*s >= 0.0)) || self.mus.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParams(
                "state sigmas must be non-negative".into(),
            ));
        }
        if self.n_days == 0 || !(self.p0 > 0.0) {
            return Err(Error::InvalidParams(
                "n_days and p0 must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The mixture implied by the stationary occupancy of the chain.
    pub fn stationary_mixture(&self) -> Result<MixtureSpec> {
        let pi = stationary_distribution(&self.trans);
        let total: f64 = pi.iter().sum();
        MixtureSpec::new(
            pi.iter().map(|p| p / total).collect(),
            self.mus.clone(),
            self.sigmas.clone(),
        )
    }
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Solves `pi P = pi, sum(pi) = 1` directly; falls back to a Cesaro-averaged
/// power iteration when the system is singular (reducible chains).
pub fn stationary_distribution(trans: &[Vec<f64>]) -> Vec<f64> {
    let k = trans.len();
    // rows: (P^T - I), last row replaced by all ones
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| trans[j][i]).collect();
            row[i] -= 1.0;
            row.push(0.0);
            row
        })
        .collect();
    a[k - 1] = vec![1.0; k + 1];

    let mut singular = false;
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty");
        if a[piv][col].abs() < 1e-12 {
            singular = true;
            break;
        }
        a.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    if !singular {
        let pi: Vec<f64> = (0..k).map(|i| (a[i][k] / a[i][i]).max(0.0)).collect();
        let s: f64 = pi.iter().sum();
        return pi.into_iter().map(|p| p / s).collect();
    }

    let mut v = vec![1.0 / k as f64; k];
    let mut avg = vec![0.0; k];
    let steps = 20_000;
    for _ in 0..steps {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[j] += v[i] * trans[i][j];
            }
        }
        v = next;
        for (a, x) in avg.iter_mut().zip(&v) {
            *a += x / steps as f64;
        }
    }
    avg
}

fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Weekdays starting at 2000-01-03.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Simulated prices plus the hidden state behind each daily return.
pub fn gen_markov_switching_with_states(p: &SynthParams) -> Result<(PriceSeries, Vec<usize>)> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let pi = stationary_distribution(&p.trans);
    let mut state = pick(&pi, rng.random::<f64>());
    let mut states = Vec::with_capacity(p.n_days);
    let mut prices = Vec::with_capacity(p.n_days + 1);
    prices.push(p.p0);
    let mut cum = 0.0;
    for _ in 0..p.n_days {
        let z: f64 = rng.sample(StandardNormal);
        cum += p.mus[state] + p.sigmas[state] * z;
        prices.push(p.p0 * cum.exp());
        states.push(state);
        state = pick(&p.trans[state], rng.random::<f64>());
    }
    let series = PriceSeries::new(
        format!("synth-{}", p.seed),
        business_days(p.n_days + 1),
        prices,
    )?;
    Ok((series, states))
}

pub fn gen_markov_switching(p: &SynthParams) -> Result<PriceSeries> {
    Ok(gen_markov_switching_with_states(p)?.0)
}

// ---------------------------------------------------------------------------
// Fitted model

/// Everything learned from one training window; this is what `fit` persists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub asset_id: String,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub k: usize,
    pub seed: u64,
    pub horizons: Vec<usize>,
    pub standardization: StandardizationParams,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub n_iterations: usize,
    pub kmeans: KMeansConfig,
    pub state_machine: StateMachine,
    /// Normal fitted to the complete training window.
    pub normal: MixtureSpec,
}

impl FittedModel {
    pub fn cluster_model(&self) -> Result<ClusterModel> {
        let mut m = ClusterModel::from_centroids(self.centroids.clone(), self.seed, self.inertia)?;
        m.n_iterations = self.n_iterations;
        Ok(m)
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        mixture::from_state_machine(&self.state_machine)
    }

    /// Standardized feature rows for any return series, using the training parameters.
    pub fn standardized_features(&self, returns: &ReturnSeries) -> Result<FeatureMatrix> {
        let raw = build_features(returns, &self.horizons).stage("features")?;
        apply_standardizer(&self.standardization, &raw).stage("standardize")
    }

    pub fn report(&self, thresholds: &RegimeThresholds) -> Result<Vec<StateReport>> {
        let original = self
            .cluster_model()?
            .destandardize_centroids(&self.standardization)?;
        Ok(interpret_states(
            &self.state_machine,
            &original,
            &self.horizons,
            thresholds,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Features, standardization, clustering, state machine and normal baseline
/// for one training window.
pub fn fit_model(
    train: &ReturnSeries,
    asset_id: &str,
    horizons: &[usize],
    k: usize,
    seed: u64,
    kmeans_cfg: &KMeansConfig,
) -> Result<FittedModel> {
    let raw = build_features(train, horizons).stage("features")?;
    let standardization = fit_standardizer(&raw).stage("standardize")?;
    let z = apply_standardizer(&standardization, &raw).stage("standardize")?;
    let cluster = kmeans::fit(z.rows(), k, seed, kmeans_cfg).stage("kmeans")?;
    let mut state_machine = build_state_machine(&cluster, &z, train).stage("state machine")?;
    let normal = mixture::fit_normal(train.values()).stage("normal baseline")?;

    let original = cluster.destandardize_centroids(&standardization)?;
    let report = interpret_states(
        &state_machine,
        &original,
        horizons,
        &RegimeThresholds::default(),
    );
    state_machine.apply_tags(&report);

    Ok(FittedModel {
        asset_id: asset_id.to_string(),
        train_start: train.dates()[0],
        train_end: *train.dates().last().expect("non-empty training window"),
        k,
        seed,
        horizons: horizons.to_vec(),
        standardization,
        centroids: cluster.centroids.clone(),
        inertia: cluster.inertia,
        n_iterations: cluster.n_iterations,
        kmeans: *kmeans_cfg,
        state_machine,
        normal,
    })
}

/// One model scored against real test returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub report: DistanceReport,
    pub moments: Moments,
}

/// Draws `n_model` samples from `spec` and compares them to `test`. The
/// moments are the closed-form moments of `spec`, not of the draws.
pub fn score_model(
    spec: &MixtureSpec,
    test: &[f64],
    settings: &MetricSettings,
    seed: u64,
) -> Result<ModelScore> {
    let draws = mixture::sample(spec, settings.n_model(test.len()), seed);
    Ok(ModelScore {
        report: compare(test, &draws, settings)?,
        moments: mixture::analytic_moments(spec)?,
    })
}

/// State machine vs normal baseline on one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub state_machine: ModelScore,
    pub normal: ModelScore,
    pub test_moments: Moments,
}

pub fn evaluate_model(
    model: &FittedModel,
    test: &[f64],
    settings: &MetricSettings,
    seed: u64,
) -> Result<Evaluation> {
    let test_moments = moments(test).stage("test moments")?;
    let state_machine = score_model(
        &model.mixture()?,
        test,
        settings,
        derive_seed(seed, STREAM_STATE_MACHINE),
    )
    .stage("state machine metrics")?;
    let normal = score_model(
        &model.normal,
        test,
        settings,
        derive_seed(seed, STREAM_NORMAL),
    )
    .stage("normal metrics")?;
    Ok(Evaluation {
        state_machine,
        normal,
        test_moments,
    })
}

/// Writes the mean/std/skew/kurtosis table for test data, normal and state machine.
pub fn write_moment_table<W: Write>(e: &Evaluation, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "{:>10} {:>14} {:>14} {:>14}",
        "", "test", "normal", "state_machine"
    )?;
    type Column = (&'static str, fn(&Moments) -> f64);
    let rows: [Column; 4] = [
        ("mean", |m| m.mean),
        ("std", |m| m.std),
        ("skew", |m| m.skewness),
        ("kurt", |m| m.excess_kurtosis),
    ];
    for (name, f) in rows {
        writeln!(
            w,
            "{:>10} {:>14.6} {:>14.6} {:>14.6}",
            name,
            f(&e.test_moments),
            f(&e.normal.moments),
            f(&e.state_machine.moments)
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub asset_id: String,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub k: usize,
    pub seed: u64,
    pub horizons: Vec<usize>,
    pub kmeans: KMeansConfig,
    pub metrics: MetricSettings,
}

impl ScenarioConfig {
    pub fn max_horizon(&self) -> usize {
        *self.horizons.last().unwrap_or(&0)
    }

    /// Minimum training rows: warm-up plus ten rows per state.
    pub fn min_train(&self) -> usize {
        min_train_len(self.max_horizon(), self.k)
    }
}

pub fn min_train_len(max_horizon: usize, k: usize) -> usize {
    max_horizon + 10 * k
}

pub const MIN_TEST_DAYS: usize = 30;

/// Settings shared by every scenario of a harness run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub horizons: Vec<usize>,
    pub kmeans: KMeansConfig,
    pub metrics: MetricSettings,
}

impl Default for ScenarioTemplate {
    fn default() -> Self {
        Self {
            horizons: DEFAULT_HORIZONS.to_vec(),
            kmeans: KMeansConfig::default(),
            metrics: MetricSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub sm_report: DistanceReport,
    pub normal_report: DistanceReport,
    pub sm_moments: Moments,
    pub normal_moments: Moments,
    pub test_moments: Moments,
}

fn split_scenario(
    cfg: &ScenarioConfig,
    data: &PriceSeries,
) -> Result<(ReturnSeries, ReturnSeries)> {
    let returns = log_returns(data);
    let policy = SplitPolicy {
        min_train: cfg.min_train().max(cfg.max_horizon() + 1),
        min_test: MIN_TEST_DAYS,
    };
    split_by_date(&returns, cfg.train_start, cfg.train_end, policy).stage("split")
}

/// Full pipeline on one window, with both models scored against the same test returns.
pub fn run_scenario(cfg: &ScenarioConfig, data: &PriceSeries) -> Result<ScenarioResult> {
    let (train, test) = split_scenario(cfg, data)?;
    let model = fit_model(
        &train,
        data.asset_id(),
        &cfg.horizons,
        cfg.k,
        cfg.seed,
        &cfg.kmeans,
    )?;
    let e = evaluate_model(&model, test.values(), &cfg.metrics, cfg.seed)?;
    Ok(ScenarioResult {
        config: cfg.clone(),
        sm_report: e.state_machine.report,
        normal_report: e.normal.report,
        sm_moments: e.state_machine.moments,
        normal_moments: e.normal.moments,
        test_moments: e.test_moments,
    })
}

/// Normal-baseline half of [`run_scenario`]; independent of K.
pub fn run_baseline(cfg: &ScenarioConfig, data: &PriceSeries) -> Result<ModelScore> {
    let (train, test) = split_scenario(cfg, data)?;
    let normal = mixture::fit_normal(train.values()).stage("normal baseline")?;
    score_model(
        &normal,
        test.values(),
        &cfg.metrics,
        derive_seed(cfg.seed, STREAM_NORMAL),
    )
    .stage("normal metrics")
}

/// Checks the length constraints a scenario config must satisfy for `data`.
pub fn check_config(cfg: &ScenarioConfig, data: &PriceSeries) -> Result<()> {
    split_scenario(cfg, data).map(|_| ())
}

/// `n` seeded random windows over `assets`, each long enough for `k` states.
pub fn random_scenarios(
    assets: &[PriceSeries],
    n: usize,
    k: usize,
    master_seed: u64,
    template: &ScenarioTemplate,
) -> Result<Vec<ScenarioConfig>> {
    let max_h = *template
        .horizons
        .last()
        .ok_or_else(|| Error::InvalidHorizons("empty".into()))?;
    let min_train = min_train_len(max_h, k).max(max_h + 1);
    // returns per asset = prices - 1
    let eligible: Vec<&PriceSeries> = assets
        .iter()
        .filter(|a| a.len() > min_train + MIN_TEST_DAYS)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoUsableAsset(Path::new("<assets>").to_path_buf()));
    }

    Ok((0..n)
        .map(|i| {
            let seed = derive_seed(master_seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_WINDOW));
            let asset = eligible[rng.random_range(0..eligible.len())];
            let return_dates = &asset.dates()[1..];
            let n_ret = return_dates.len();
            let len = rng.random_range(min_train..=n_ret - MIN_TEST_DAYS);
            let start = rng.random_range(0..=n_ret - MIN_TEST_DAYS - len);
            ScenarioConfig {
                asset_id: asset.asset_id().to_string(),
                train_start: return_dates[start],
                train_end: return_dates[start + len - 1],
                k,
                seed,
                horizons: template.horizons.clone(),
                kmeans: template.kmeans,
                metrics: template.metrics,
            }
        })
        .collect())
}

/// [`random_scenarios`] over every CSV in a directory.
pub fn random_scenarios_in_dir(
    data_dir: &Path,
    n: usize,
    k: usize,
    master_seed: u64,
    template: &ScenarioTemplate,
) -> Result<Vec<ScenarioConfig>> {
    let assets = load_directory(data_dir)?;
    random_scenarios(&assets, n, k, master_seed, template).map_err(|e| match e {
        Error::NoUsableAsset(_) => Error::NoUsableAsset(data_dir.to_path_buf()),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub ks_med: f64,
    pub ks_iqr: f64,
    pub kl_med: f64,
    pub kl_iqr: f64,
    pub w1_med: f64,
    pub w1_iqr: f64,
    pub ks_med_normal: f64,
    pub kl_med_normal: f64,
    pub w1_med_normal: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "k,n_ok,n_failed,ks_med,ks_iqr,kl_med,kl_iqr,w1_med,w1_iqr,ks_med_normal,kl_med_normal,w1_med_normal";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.k,
            self.n_ok,
            self.n_failed,
            self.ks_med,
            self.ks_iqr,
            self.kl_med,
            self.kl_iqr,
            self.w1_med,
            self.w1_iqr,
            self.ks_med_normal,
            self.kl_med_normal,
            self.w1_med_normal
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub k: usize,
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Successful scenarios, ordered by K then scenario index.
    pub results: Vec<ScenarioResult>,
    pub failures: Vec<ScenarioFailure>,
}

impl SweepOutput {
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", SweepRow::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        w.flush()
    }

    pub fn write_results_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.results {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w).map_err(|e| Error::io("<results>", e))?;
        }
        w.flush().map_err(|e| Error::io("<results>", e))
    }
}

/// Linear-interpolation quantile of an unsorted slice; NaN when empty.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn median_iqr(xs: &[f64]) -> (f64, f64) {
    (quantile(xs, 0.5), quantile(xs, 0.75) - quantile(xs, 0.25))
}

/// Runs `n_per_k` random scenarios for every K in `ks`.
///
/// Windows are drawn once, sized for the largest K, and reused for every K,
/// so rows differ only through K. The baseline columns aggregate every
/// scenario whose baseline succeeded and are therefore identical across rows.
pub fn k_sweep(
    assets: &[PriceSeries],
    ks: &[usize],
    n_per_k: usize,
    master_seed: u64,
    template: &ScenarioTemplate,
) -> Result<SweepOutput> {
    let max_k = *ks
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParams("empty K list".into()))?;
    let configs = random_scenarios(assets, n_per_k, max_k, master_seed, template)?;
    let find = |id: &str| {
        assets
            .iter()
            .find(|a| a.asset_id() == id)
            .expect("config names a loaded asset")
    };

    let baselines: Vec<Result<ModelScore>> = configs
        .par_iter()
        .map(|c| run_baseline(c, find(&c.asset_id)))
        .collect();
    let normal: Vec<&ModelScore> = baselines.iter().filter_map(|b| b.as_ref().ok()).collect();
    let ks_n = quantile(&normal.iter().map(|s| s.report.ks).collect::<Vec<_>>(), 0.5);
    let kl_n = quantile(&normal.iter().map(|s| s.report.kl).collect::<Vec<_>>(), 0.5);
    let w1_n = quantile(
        &normal
            .iter()
            .map(|s| s.report.wasserstein)
            .collect::<Vec<_>>(),
        0.5,
    );

    let jobs: Vec<(usize, usize)> = ks
        .iter()
        .flat_map(|&k| (0..configs.len()).map(move |i| (k, i)))
        .collect();
    let outcomes: Vec<Result<ScenarioResult>> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let cfg = ScenarioConfig {
                k,
                ..configs[i].clone()
            };
            run_scenario(&cfg, find(&cfg.asset_id))
        })
        .collect();

    let mut rows = Vec::with_capacity(ks.len());
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (&k, chunk) in ks.iter().zip(outcomes.chunks(configs.len().max(1))) {
        let mut ok = Vec::new();
        for (i, o) in chunk.iter().enumerate() {
            match o {
                Ok(r) => ok.push(r.clone()),
                Err(e) => failures.push(ScenarioFailure {
                    k,
                    index: i,
                    error: e.to_string(),
                }),
            }
        }
        let col = |f: fn(&ScenarioResult) -> f64| median_iqr(&ok.iter().map(f).collect::<Vec<_>>());
        let (ks_med, ks_iqr) = col(|r| r.sm_report.ks);
        let (kl_med, kl_iqr) = col(|r| r.sm_report.kl);
        let (w1_med, w1_iqr) = col(|r| r.sm_report.wasserstein);
        rows.push(SweepRow {
            k,
            n_ok: ok.len(),
            n_failed: configs.len() - ok.len(),
            ks_med,
            ks_iqr,
            kl_med,
            kl_iqr,
            w1_med,
            w1_iqr,
            ks_med_normal: ks_n,
            kl_med_normal: kl_n,
            w1_med_normal: w1_n,
        });
        results.extend(ok);
    }
    Ok(SweepOutput {
        rows,
        results,
        failures,
    })
}

pub fn k_sweep_in_dir(
    data_dir: &Path,
    ks: &[usize],
    n_per_k: usize,
    master_seed: u64,
    template: &ScenarioTemplate,
) -> Result<SweepOutput> {
    let assets = load_directory(data_dir)?;
    k_sweep(&assets, ks, n_per_k, master_seed, template).map_err(|e| match e {
        Error::NoUsableAsset(_) => Error::NoUsableAsset(data_dir.to_path_buf()),
        other => other,
    })
}

/// Desk-scale sweep grid.
pub const DEFAULT_SWEEP_KS: [usize; 6] = [2, 3, 5, 10, 20, 50];
pub const DEFAULT_N_PER_K: usize = 20;
/// Full grid: K from 2 to 200, 500 scenarios each.
pub const FULL_GRID_N_PER_K: usize = 500;

pub fn full_grid_ks() -> Vec<usize> {
    (2..=200).collect()
}

/// The canonical benchmark: two-regime prices, first two thirds of the
/// returns for training, the rest for testing.
pub fn canonical_benchmark(
    seed: u64,
    k: usize,
    template: &ScenarioTemplate,
) -> Result<ScenarioResult> {
    let prices = gen_markov_switching(&SynthParams::two_regime(seed))?;
    let dates = &prices.dates()[1..];
    let cut = dates.len() * 2 / 3;
    let cfg = ScenarioConfig {
        asset_id: prices.asset_id().to_string(),
        train_start: dates[0],
        train_end: dates[cut - 1],
        k,
        seed,
        horizons: template.horizons.clone(),
        kmeans: template.kmeans,
        metrics: template.metrics,
    };
    run_scenario(&cfg, &prices)
}
