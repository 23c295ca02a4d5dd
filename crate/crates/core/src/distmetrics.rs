//! Two-sample distances (Kolmogorov-Smirnov, histogram KL, Wasserstein-1)
//! and four-moment summaries.
//!
//! KS and W1 are computed exactly from the merged sorted samples: CDF gaps
//! are kept as integer cross-differences `i * n_b - j * n_a` and divided by
//! `n_a * n_b` once at the end.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Estimator settings for model-vs-data comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub bins: usize,
    pub epsilon: f64,
    /// Lower bound on the number of model draws.
    pub n_model_min: usize,
    /// Model draws per test observation.
    pub n_model_factor: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            bins: 200,
            epsilon: 1e-10,
            n_model_min: 100_000,
            n_model_factor: 10,
        }
    }
}

impl MetricSettings {
    pub fn n_model(&self, n_test: usize) -> usize {
        self.n_model_min.max(self.n_model_factor * n_test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub ks: f64,
    pub kl: f64,
    pub wasserstein: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub bins: usize,
    pub epsilon: f64,
}

impl DistanceReport {
    pub const CSV_HEADER: &'static str = "ks,kl,wasserstein,n_a,n_b,bins,epsilon";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.ks, self.kl, self.wasserstein, self.n_a, self.n_b, self.bins, self.epsilon
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())?;
        w.flush()
    }
}

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Walks the merged support, calling `f(x, next_x, i, j)` after each
/// distinct value `x` where `i`, `j` count the points `<= x` in each sample.
fn merged_steps(a: &[f64], b: &[f64], mut f: impl FnMut(f64, Option<f64>, u64, u64)) {
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => Some(p.min(q)),
            (Some(&p), None) => Some(p),
            (None, Some(&q)) => Some(q),
            (None, None) => None,
        };
        f(x, next, i as u64, j as u64);
    }
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(())
}

/// Two-sample KS statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as u64, b.len() as u64);
    let mut sup = 0u64;
    merged_steps(&a, &b, |_, _, i, j| {
        sup = sup.max((i * nb).abs_diff(j * na));
    });
    Ok(sup as f64 / (na * nb) as f64)
}

/// 1-D earth mover's distance `integral |F_a - F_b| dx`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as u64, b.len() as u64);
    let mut area = 0.0;
    merged_steps(&a, &b, |x, next, i, j| {
        if let Some(next) = next {
            area += (next - x) * (i * nb).abs_diff(j * na) as f64;
        }
    });
    Ok(area / (na * nb) as f64)
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed.
fn histogram(xs: &[f64], lo: f64, width: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &x in xs {
        let idx = ((x - lo) / width).floor() as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    counts
}

/// Histogram KL divergence `D(a || b)` in nats over `bins` equal-width bins
/// spanning the pooled range; `epsilon` is added to every bin probability
/// before renormalization.
pub fn kl_divergence(a: &[f64], b: &[f64], bins: usize, epsilon: f64) -> Result<f64> {
    check_samples(a, b)?;
    if bins < 2 {
        return Err(Error::InvalidParams(format!(
            "KL needs at least 2 bins, got {bins}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "KL epsilon must be positive, got {epsilon}"
        )));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::ConstantSample("pooled range is degenerate".into()));
    }
    let width = (hi - lo) / bins as f64;
    let z = 1.0 + bins as f64 * epsilon;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut kl = 0.0;
    for (&ca, &cb) in histogram(a, lo, width, bins)
        .iter()
        .zip(&histogram(b, lo, width, bins))
    {
        // bins empty in both samples contribute exactly zero
        if ca == 0 && cb == 0 {
            continue;
        }
        let p = (ca as f64 / na + epsilon) / z;
        let q = (cb as f64 / nb + epsilon) / z;
        if p != q {
            kl += p * (p / q).ln();
        }
    }
    // rounding can leave a tiny negative residue when p ~ q
    Ok(kl.max(0.0))
}

/// Population mean, std, skewness and excess kurtosis.
pub fn moments(a: &[f64]) -> Result<Moments> {
    if a.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            found: a.len(),
        });
    }
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in a {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::ConstantSample(
            "skewness and kurtosis undefined".into(),
        ));
    }
    let std = m2.sqrt();
    Ok(Moments {
        mean,
        std,
        skewness: m3 / (m2 * std),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// All three distances between reference `a` (real returns) and `b` (model).
pub fn compare(a: &[f64], b: &[f64], settings: &MetricSettings) -> Result<DistanceReport> {
    Ok(DistanceReport {
        ks: ks_statistic(a, b)?,
        kl: kl_divergence(a, b, settings.bins, settings.epsilon)?,
        wasserstein: wasserstein1(a, b)?,
        n_a: a.len(),
        n_b: b.len(),
        bins: settings.bins,
        epsilon: settings.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ks_examples() {
        assert_eq!(
            ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(),
            0.0
        );
        assert_eq!(ks_statistic(&[0.0, 1.0], &[10.0, 11.0]).unwrap(), 1.0);
        assert_eq!(
            ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap(),
            1.0 / 3.0
        );
        assert!(matches!(ks_statistic(&[], &[1.0]), Err(Error::EmptySample)));
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.5, 2.0], &[2.0, 0.5]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(wasserstein1(&[1.0], &[]), Err(Error::EmptySample)));
    }

    #[test]
    fn kl_identical_is_zero() {
        let a = [0.1, 0.2, 0.2, 0.5, 0.9];
        assert!(kl_divergence(&a, &a, 200, 1e-10).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_grows_as_epsilon_shrinks() {
        let a = [0.0, 0.1, 0.2];
        let b = [0.9, 1.0, 0.95];
        let loose = kl_divergence(&a, &b, 10, 1e-3).unwrap();
        let tight = kl_divergence(&a, &b, 10, 1e-10).unwrap();
        assert!(loose > 1.0);
        assert!(tight > loose);
    }

    #[test]
    fn kl_four_bin_arithmetic() {
        // pooled range [0, 4], width 1: a -> bins [2,1,0,1], b -> bins [0,1,1,2]
        let a = [0.0, 0.5, 1.2, 4.0];
        let b = [1.5, 2.5, 3.5, 3.9];
        let eps: f64 = 1e-10;
        let z = 1.0 + 4.0 * eps;
        let p: [f64; 4] = [(0.5 + eps) / z, (0.25 + eps) / z, eps / z, (0.25 + eps) / z];
        let q: [f64; 4] = [eps / z, (0.25 + eps) / z, (0.25 + eps) / z, (0.5 + eps) / z];
        let mut oracle = 0.0f64;
        for i in 0..4 {
            oracle += p[i] * (p[i].ln() - q[i].ln());
        }
        let kl = kl_divergence(&a, &b, 4, eps).unwrap();
        assert!((kl - oracle).abs() < 1e-12, "{kl} vs {oracle}");
    }

    #[test]
    fn kl_errors() {
        assert!(matches!(
            kl_divergence(&[1.0, 1.0], &[1.0], 4, 1e-10),
            Err(Error::ConstantSample(_))
        ));
        assert!(kl_divergence(&[1.0], &[2.0], 1, 1e-10).is_err());
        assert!(kl_divergence(&[1.0], &[2.0], 4, 0.0).is_err());
    }

    #[test]
    fn kl_is_asymmetric() {
        let a = [0.0, 0.0, 0.0, 1.0];
        let b = [0.0, 1.0, 1.0, 1.0, 0.5];
        let ab = kl_divergence(&a, &b, 4, 1e-6).unwrap();
        let ba = kl_divergence(&b, &a, 4, 1e-6).unwrap();
        assert!((ab - ba).abs() > 1e-3, "{ab} {ba}");
    }

    #[test]
    fn two_point_moments() {
        let m = moments(&[-1.0, 1.0]).unwrap();
        assert_eq!(
            (m.mean, m.std, m.skewness, m.excess_kurtosis),
            (0.0, 1.0, 0.0, -2.0)
        );
        assert!(matches!(
            moments(&[3.0, 3.0]),
            Err(Error::ConstantSample(_))
        ));
        assert!(moments(&[3.0]).is_err());
    }

    #[test]
    fn gaussian_draws_have_zero_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let m = moments(&xs).unwrap();
        assert!(m.skewness.abs() < 0.01, "{m:?}");
        assert!(m.excess_kurtosis.abs() < 0.03, "{m:?}");
    }

    #[test]
    fn report_csv() {
        let r = compare(&[0.0, 1.0], &[1.0, 2.0], &MetricSettings::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "ks,kl,wasserstein,n_a,n_b,bins,epsilon\n0.5,".to_string()
                + &format!("{},1,2,2,200,0.0000000001\n", r.kl)
        );
        assert_eq!(MetricSettings::default().n_model(5_000), 100_000);
        assert_eq!(MetricSettings::default().n_model(20_000), 200_000);
    }

    proptest! {
        #[test]
        fn self_distance_is_zero(a in prop::collection::vec(-1.0f64..1.0, 2..50)) {
            prop_assume!(a.iter().any(|x| *x != a[0]));
            prop_assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
            prop_assert!(kl_divergence(&a, &a, 200, 1e-10).unwrap().abs() < 1e-12);
        }

        #[test]
        fn ks_w1_symmetric(a in prop::collection::vec(-1.0f64..1.0, 1..40), b in prop::collection::vec(-1.0f64..1.0, 1..40)) {
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&b, &a).unwrap());
            prop_assert_eq!(wasserstein1(&a, &b).unwrap(), wasserstein1(&b, &a).unwrap());
            let ks = ks_statistic(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ks));
        }

        #[test]
        fn w1_equal_sizes_is_quantile_coupling(pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (sa, sb) = (sorted(&a), sorted(&b));
            let coupling = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
            prop_assert!((wasserstein1(&a, &b).unwrap() - coupling).abs() < 1e-12);
        }

        #[test]
        fn w1_translation(a in prop::collection::vec(-1.0f64..1.0, 1..30), b in prop::collection::vec(-1.0f64..1.0, 1..30), c in -2.0f64..2.0) {
            let shifted: Vec<f64> = b.iter().map(|x| x + c).collect();
            let before = wasserstein1(&a, &b).unwrap();
            let after = wasserstein1(&a, &shifted).unwrap();
            prop_assert!((after - before).abs() <= c.abs() + 1e-12);
            let self_shift: Vec<f64> = a.iter().map(|x| x + c).collect();
            prop_assert!((wasserstein1(&a, &self_shift).unwrap() - c.abs()).abs() < 1e-12);
        }

        #[test]
        fn ks_monotone_invariant(a in prop::collection::vec(-3.0f64..3.0, 1..30), b in prop::collection::vec(-3.0f64..3.0, 1..30)) {
            let f = |x: &f64| x.exp() * 2.0 + x.powi(3);
            let fa: Vec<f64> = a.iter().map(f).collect();
            let fb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&fa, &fb).unwrap());
        }
    }
}
