//! Frequency-weighted Gaussian mixture over daily returns.
//!
//! Each draw picks a component from the categorical distribution given by
//! `weights`, then draws from that component's normal. Draws are i.i.d.; no
//! Markov path is simulated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distmetrics::Moments;
use crate::error::{Error, Result};
use crate::regime::StateMachine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, mus: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || mus.len() != k || sigmas.len() != k {
            return Err(Error::InvalidMixture(format!(
                "component arrays must be non-empty and equal length ({}, {}, {})",
                k,
                mus.len(),
                sigmas.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMixture(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite())
            || mus.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidMixture(
                "sigmas must be non-negative, all finite".into(),
            ));
        }
        let spread = mus.iter().any(|m| *m != mus[0]);
        if !spread && sigmas.iter().all(|&s| s == 0.0) {
            return Err(Error::InvalidMixture("degenerate: one point mass".into()));
        }
        Ok(Self {
            weights,
            mus,
            sigmas,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.mus).map(|(w, m)| w * m).sum()
    }

    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = j;
                if u < acc {
                    return j;
                }
            }
        }
        // u landed in the rounding gap below 1.0
        last_positive
    }
}

/// Draws `n` returns together with the component index behind each.
pub fn sample_with_components(spec: &MixtureSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for _ in 0..n {
        let j = spec.pick(rng.random::<f64>());
        let z: f64 = rng.sample(StandardNormal);
        xs.push(spec.mus[j] + spec.sigmas[j] * z);
        cs.push(j);
    }
    (xs, cs)
}

pub fn sample(spec: &MixtureSpec, n: usize, seed: u64) -> Vec<f64> {
    sample_with_components(spec, n, seed).0
}

/// Closed-form mean, std, skewness and excess kurtosis.
pub fn analytic_moments(spec: &MixtureSpec) -> Result<Moments> {
    let mean = spec.mean();
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for ((w, mu), s) in spec.weights.iter().zip(&spec.mus).zip(&spec.sigmas) {
        let d = mu - mean;
        let s2 = s * s;
        m2 += w * (s2 + d * d);
        m3 += w * (d * d * d + 3.0 * d * s2);
        m4 += w * (d.powi(4) + 6.0 * d * d * s2 + 3.0 * s2 * s2);
    }
    if !(m2 > 0.0) {
        return Err(Error::InvalidMixture("zero variance".into()));
    }
    let std = m2.sqrt();
    Ok(Moments {
        mean,
        std,
        skewness: m3 / (m2 * std),
        excess_kurtosis: (m4 - 3.0 * m2 * m2) / (m2 * m2),
    })
}

/// Single normal component with the sample mean and population std.
pub fn fit_normal(returns: &[f64]) -> Result<MixtureSpec> {
    if returns.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            found: returns.len(),
        });
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::ConstantSample(
            "cannot fit a normal to constant returns".into(),
        ));
    }
    MixtureSpec::new(vec![1.0], vec![mean], vec![var.sqrt()])
}

pub fn from_state_machine(sm: &StateMachine) -> Result<MixtureSpec> {
    MixtureSpec::new(sm.freq.clone(), sm.state_mu.clone(), sm.state_sigma.clone())
}
