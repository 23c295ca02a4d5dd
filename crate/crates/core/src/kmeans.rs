//! Lloyd's K-Means with k-means++ seeding and best-of-restarts selection.
//!
//! Each restart `r` draws from its own generator seeded with `seed + r`, so
//! a fit is a pure function of `(rows, k, seed, config)`. Empty clusters are
//! re-seeded at the point farthest from its current centroid, which keeps K
//! fixed and never increases the within-cluster sum of squares.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StandardizationParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// K centroids in standardized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub n_iterations: usize,
    /// Training assignments of the winning restart.
    #[serde(skip)]
    labels: Vec<usize>,
    /// SSE after every assignment step of the winning restart.
    #[serde(skip)]
    inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared distance; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, row);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

impl ClusterModel {
    /// Wraps externally supplied centroids (e.g. loaded from disk).
    pub fn from_centroids(centroids: Vec<Vec<f64>>, seed: u64, inertia: f64) -> Result<Self> {
        let k = centroids.len();
        if k == 0 {
            return Err(Error::InvalidK {
                k,
                reason: "no centroids".into(),
            });
        }
        let dim = centroids[0].len();
        if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.len(),
            });
        }
        Ok(Self {
            k,
            seed,
            centroids,
            inertia,
            n_iterations: 0,
            labels: Vec::new(),
            inertia_trace: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inertia_trace(&self) -> &[f64] {
        &self.inertia_trace
    }

    fn check_dim(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: row.len(),
            });
        }
        Ok(())
    }

    pub fn assign(&self, row: &[f64]) -> Result<usize> {
        self.check_dim(row)?;
        Ok(nearest(&self.centroids, row).0)
    }

    /// Euclidean distance to every centroid, in index order.
    pub fn distances(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(row)?;
        Ok(self
            .centroids
            .iter()
            .map(|c| sq_dist(c, row).sqrt())
            .collect())
    }

    /// Centroids mapped back to original feature units.
    pub fn destandardize_centroids(&self, params: &StandardizationParams) -> Result<Vec<Vec<f64>>> {
        self.centroids
            .iter()
            .map(|c| params.destandardize_row(c))
            .collect()
    }

    /// Within-cluster sum of squares for the given assignments.
    pub fn sse(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        rows.iter()
            .zip(labels)
            .map(|(r, &l)| sq_dist(r, &self.centroids[l]))
            .sum()
    }
}

fn count_distinct(rows: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    1 + sorted.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Clusters `rows` into `k` groups, keeping the lowest-inertia restart.
pub fn fit(rows: &[Vec<f64>], k: usize, seed: u64, config: &KMeansConfig) -> Result<ClusterModel> {
    if k < 2 {
        return Err(Error::InvalidK {
            k,
            reason: "need at least 2 clusters".into(),
        });
    }
    if k > rows.len() {
        return Err(Error::InvalidK {
            k,
            reason: format!("only {} rows", rows.len()),
        });
    }
    if config.restarts == 0 || config.max_iter == 0 || !(config.tol > 0.0) {
        return Err(Error::InvalidParams(format!(
            "bad k-means settings {config:?}"
        )));
    }
    let dim = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: r.len(),
        });
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateData("non-finite feature value".into()));
    }
    let distinct = count_distinct(rows);
    if distinct < k {
        return Err(Error::DegenerateData(format!(
            "{distinct} distinct row(s) cannot support k={k}"
        )));
    }

    let mut best: Option<ClusterModel> = None;
    for r in 0..config.restarts {
        let run = lloyd(rows, k, seed.wrapping_add(r as u64), config)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut model = best.expect("restarts >= 1");
    model.seed = seed;
    Ok(model)
}

fn kmeans_pp(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut centroids = vec![rows[rng.random_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateData(
                "all rows coincide with chosen centroids".into(),
            ));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let c = rows[pick.expect("total > 0")].clone();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn assign_all(rows: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut sse = 0.0;
    for (l, r) in labels.iter_mut().zip(rows) {
        let (j, d) = nearest(centroids, r);
        *l = j;
        sse += d;
    }
    sse
}

fn lloyd(rows: &[Vec<f64>], k: usize, seed: u64, config: &KMeansConfig) -> Result<ClusterModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rows[0].len();
    let mut centroids = kmeans_pp(rows, k, &mut rng)?;
    let mut labels = vec![0usize; rows.len()];
    let mut sse = assign_all(rows, &centroids, &mut labels);
    let mut trace = vec![sse];
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(r) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &n), old)| {
                if n == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|x| x / n as f64).collect()
                }
            })
            .collect();

        let had_empty = counts.contains(&0);
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            // farthest point among clusters that can spare one
            let mut far = None;
            let mut far_d = -1.0;
            for (i, r) in rows.iter().enumerate() {
                let l = labels[i];
                if counts[l] < 2 {
                    continue;
                }
                let d = sq_dist(r, &next[l]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            let i =
                far.ok_or_else(|| Error::DegenerateData("cannot repair empty cluster".into()))?;
            counts[labels[i]] -= 1;
            counts[j] = 1;
            labels[i] = j;
            next[j] = rows[i].clone();
        }

        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;

        let new_sse = assign_all(rows, &centroids, &mut labels);
        // monotone up to summation rounding
        debug_assert!(
            new_sse <= sse + 1e-9 * sse.abs().max(1e-300),
            "inertia increased: {sse} -> {new_sse}"
        );
        sse = new_sse;
        trace.push(sse);

        let mut occupied = vec![false; k];
        for &l in &labels {
            occupied[l] = true;
        }
        if movement < config.tol && !had_empty && occupied.iter().all(|&o| o) {
            break;
        }
    }

    for a in 0..k {
        for b in a + 1..k {
            if sq_dist(&centroids[a], &centroids[b]).sqrt() <= 1e-12 {
                return Err(Error::DegenerateData(format!(
                    "centroids {a} and {b} coincide"
                )));
            }
        }
    }

    Ok(ClusterModel {
        k,
        seed,
        centroids,
        inertia: sse,
        n_iterations: iterations,
        labels,
        inertia_trace: trace,
    })
}
