//! Probabilistic state machine built from a sequence of cluster labels.
//!
//! Transition counts are row-normalized into conditional probabilities, label
//! frequencies give the marginal state probabilities, and each state carries
//! the mean and population standard deviation of its member-day returns.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{column_names, FeatureMatrix};
use crate::kmeans::ClusterModel;
use crate::marketdata::ReturnSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMachine {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
    pub probs: Vec<Vec<f64>>,
    pub freq: Vec<f64>,
    pub state_mu: Vec<f64>,
    pub state_sigma: Vec<f64>,
    pub labels: Vec<Option<String>>,
    pub member_counts: Vec<usize>,
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(Error::LabelOutOfRange { label, k }),
        None => Ok(()),
    }
}

pub fn transition_counts(labels: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if labels.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            found: labels.len(),
        });
    }
    check_labels(labels, k)?;
    let mut counts = vec![vec![0u64; k]; k];
    for w in labels.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    Ok(counts)
}

/// Row-normalizes counts. A row with no observed successor becomes a self-loop.
pub fn transition_probs(counts: &[Vec<u64>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                let mut r = vec![0.0; row.len()];
                r[i] = 1.0;
                r
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect()
}

pub fn state_frequencies(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::TooShort {
            needed: 1,
            found: 0,
        });
    }
    check_labels(labels, k)?;
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Per-state `(mean, population std)` of the returns carrying each label.
pub fn state_gaussians(labels: &[usize], returns: &[f64], k: usize) -> Result<Vec<(f64, f64)>> {
    if labels.len() != returns.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: returns.len(),
        });
    }
    check_labels(labels, k)?;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&l, &r) in labels.iter().zip(returns) {
        sums[l] += r;
        counts[l] += 1;
    }
    if let Some(state) = counts.iter().position(|&c| c < 2) {
        return Err(Error::SparseState {
            state,
            members: counts[state],
        });
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let mut ss = vec![0.0; k];
    for (&l, &r) in labels.iter().zip(returns) {
        ss[l] += (r - means[l]) * (r - means[l]);
    }
    Ok(means
        .into_iter()
        .zip(ss.into_iter().zip(counts))
        .map(|(m, (s, c))| (m, (s / c as f64).sqrt()))
        .collect())
}

/// Inverse-distance membership probabilities, normalized to sum to one.
/// Any exact centroid hit takes all the mass, shared evenly between hits.
pub fn day_probabilities(dists: &[f64]) -> Vec<f64> {
    let zeros = dists.iter().filter(|&&d| d == 0.0).count();
    if zeros > 0 {
        let share = 1.0 / zeros as f64;
        return dists
            .iter()
            .map(|&d| if d == 0.0 { share } else { 0.0 })
            .collect();
    }
    let inv: Vec<f64> = dists.iter().map(|d| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|w| w / total).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn label_rows(model: &ClusterModel, features: &FeatureMatrix) -> Result<Vec<usize>> {
    features.rows().iter().map(|r| model.assign(r)).collect()
}

/// The slice of `returns` dated exactly like the feature rows.
pub fn aligned_returns<'a>(
    features: &FeatureMatrix,
    returns: &'a ReturnSeries,
) -> Result<&'a [f64]> {
    let first = *features
        .dates()
        .first()
        .ok_or_else(|| Error::Misaligned("no feature rows".into()))?;
    let offset = returns.dates().partition_point(|d| *d < first);
    let end = offset + features.n_rows();
    if end > returns.len() || returns.dates()[offset..end] != *features.dates() {
        return Err(Error::Misaligned(format!(
            "feature dates starting {first} not found contiguously in returns"
        )));
    }
    Ok(&returns.values()[offset..end])
}

impl StateMachine {
    /// Composes the machine from an already-labelled training sequence.
    pub fn from_labels(labels: &[usize], returns: &[f64], k: usize) -> Result<Self> {
        let counts = transition_counts(labels, k)?;
        let probs = transition_probs(&counts);
        let freq = state_frequencies(labels, k)?;
        let gaussians = state_gaussians(labels, returns, k)?;
        let mut member_counts = vec![0usize; k];
        for &l in labels {
            member_counts[l] += 1;
        }
        Ok(Self {
            k,
            counts,
            probs,
            freq,
            state_mu: gaussians.iter().map(|g| g.0).collect(),
            state_sigma: gaussians.iter().map(|g| g.1).collect(),
            labels: vec![None; k],
            member_counts,
        })
    }

    pub fn apply_tags(&mut self, report: &[StateReport]) {
        for r in report {
            self.labels[r.state] = Some(r.tag.clone());
        }
    }
}

/// Labels every standardized feature row and builds the machine from the
/// returns dated like those rows.
pub fn build_state_machine(
    model: &ClusterModel,
    features: &FeatureMatrix,
    returns: &ReturnSeries,
) -> Result<StateMachine> {
    let labels = label_rows(model, features)?;
    let aligned = aligned_returns(features, returns)?;
    StateMachine::from_labels(&labels, aligned, model.k)
}

/// Thresholds on de-standardized centroids (daily log-return units) used to
/// name states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Per-day drift below which the shortest-horizon momentum counts as flat.
    pub flat_drift: f64,
    pub low_risk: f64,
    pub high_risk: f64,
    pub extreme_risk: f64,
    /// Longest-horizon momentum at or below which a high-risk state is a crisis.
    pub crisis_momentum: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            flat_drift: 0.002,
            low_risk: 0.01,
            high_risk: 0.02,
            extreme_risk: 0.035,
            crisis_momentum: -0.15,
        }
    }
}

/// Heuristic regime name for one centroid in original feature units.
pub fn tag_centroid(
    state: usize,
    centroid: &[f64],
    horizons: &[usize],
    t: &RegimeThresholds,
) -> String {
    let h = horizons.len();
    let mom_short = centroid[0];
    let mom_long = centroid[2 * (h - 1)];
    let risk_short = centroid[1];
    let risk_long = centroid[2 * h - 1];
    let max_risk = (0..h)
        .map(|j| centroid[2 * j + 1])
        .fold(f64::NEG_INFINITY, f64::max);

    let tag = if mom_long <= t.crisis_momentum && max_risk >= t.extreme_risk {
        "crisis"
    } else if mom_short > 0.0 && mom_long < 0.0 && max_risk >= t.high_risk {
        "recovery"
    } else if mom_short < 0.0 && mom_long < 0.0 && risk_short >= risk_long {
        "contraction"
    } else if mom_short.abs() <= t.flat_drift * horizons[0] as f64 && max_risk <= t.low_risk {
        "flattening"
    } else if mom_long > 0.0 && mom_short >= 0.0 && max_risk < t.high_risk {
        "expansion"
    } else {
        return format!("state-{state}");
    };
    tag.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub state: usize,
    pub tag: String,
    pub centroid: Vec<f64>,
    pub freq: f64,
    pub mu: f64,
    pub sigma: f64,
}

pub fn interpret_states(
    sm: &StateMachine,
    centroids_original_units: &[Vec<f64>],
    horizons: &[usize],
    thresholds: &RegimeThresholds,
) -> Vec<StateReport> {
    centroids_original_units
        .iter()
        .enumerate()
        .map(|(i, c)| StateReport {
            state: i,
            tag: tag_centroid(i, c, horizons, thresholds),
            centroid: c.clone(),
            freq: sm.freq[i],
            mu: sm.state_mu[i],
            sigma: sm.state_sigma[i],
        })
        .collect()
}

/// Centroid table with momentum columns first, then risk, then freq/mu/sigma.
pub fn write_report_csv<W: Write>(
    report: &[StateReport],
    horizons: &[usize],
    mut w: W,
) -> std::io::Result<()> {
    let names = column_names(horizons);
    let order: Vec<usize> = (0..horizons.len())
        .map(|j| 2 * j)
        .chain((0..horizons.len()).map(|j| 2 * j + 1))
        .collect();
    write!(w, "state,tag")?;
    for &c in &order {
        write!(w, ",{}", names[c])?;
    }
    writeln!(w, ",freq,mu,sigma")?;
    for r in report {
        write!(w, "{},{}", r.state, r.tag)?;
        for &c in &order {
            write!(w, ",{}", r.centroid[c])?;
        }
        writeln!(w, ",{},{},{}", r.freq, r.mu, r.sigma)?;
    }
    w.flush()
}

/// Per-day membership probabilities over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrace {
    pub dates: Vec<NaiveDate>,
    pub prob_rows: Vec<Vec<f64>>,
}

impl StateTrace {
    pub fn argmax_states(&self) -> Vec<usize> {
        self.prob_rows.iter().map(|r| argmax(r)).collect()
    }

    /// `date,p_0,...,p_{K-1}` with an optional trailing `state` argmax column.
    pub fn write_csv<W: Write>(&self, mut w: W, with_state: bool) -> std::io::Result<()> {
        let k = self.prob_rows.first().map_or(0, Vec::len);
        write!(w, "date")?;
        for i in 0..k {
            write!(w, ",p_{i}")?;
        }
        writeln!(w, "{}", if with_state { ",state" } else { "" })?;
        for (d, row) in self.dates.iter().zip(&self.prob_rows) {
            write!(w, "{d}")?;
            for p in row {
                write!(w, ",{p}")?;
            }
            if with_state {
                write!(w, ",{}", argmax(row))?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

pub fn state_trace(model: &ClusterModel, features: &FeatureMatrix) -> Result<StateTrace> {
    let prob_rows = features
        .rows()
        .iter()
        .map(|r| model.distances(r).map(|d| day_probabilities(&d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StateTrace {
        dates: features.dates().to_vec(),
        prob_rows,
    })
}
