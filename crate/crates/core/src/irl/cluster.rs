//! Driving-style clustering on speed/acceleration statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::IrlError;

pub const KMEANS_MAX_ITER: usize = 300;
pub const ELBOW_RESTARTS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterFeatures {
    pub v_mean: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub v_std: f64,
    pub a_mean: f64,
    pub a_max: f64,
    pub a_min: f64,
    pub a_std: f64,
}

impl ClusterFeatures {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.v_mean, self.v_max, self.v_min, self.v_std, self.a_mean, self.a_max, self.a_min, self.a_std,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        ClusterFeatures {
            v_mean: a[0],
            v_max: a[1],
            v_min: a[2],
            v_std: a[3],
            a_mean: a[4],
            a_max: a[5],
            a_min: a[6],
            a_std: a[7],
        }
    }
}

fn stats(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, max, min, var.sqrt())
}

/// Speed statistics and finite-difference acceleration statistics (population std).
pub fn extract_cluster_features(trajectory: &Trajectory) -> Result<ClusterFeatures, IrlError> {
    if trajectory.states.len() < 2 {
        return Err(IrlError::DegenerateTrajectory);
    }
    let v: Vec<f64> = trajectory.states.iter().map(|s| s.v).collect();
    let a: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]) / trajectory.dt).collect();
    let (vm, vx, vn, vs) = stats(&v);
    let (am, ax, an, as_) = stats(&a);
    Ok(ClusterFeatures {
        v_mean: vm,
        v_max: vx,
        v_min: vn,
        v_std: vs,
        a_mean: am,
        a_max: ax,
        a_min: an,
        a_std: as_,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// Centers in the original (unnormalized) feature units.
    pub centers: Vec<ClusterFeatures>,
    /// Sum of squared errors in z-scored space.
    pub sse: f64,
    pub iterations: usize,
}

struct Normalized {
    rows: Vec<[f64; 8]>,
    mean: [f64; 8],
    std: [f64; 8],
}

fn zscore(samples: &[ClusterFeatures]) -> Normalized {
    let n = samples.len() as f64;
    let mut mean = [0.0; 8];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s.to_array()) {
            *m += x / n;
        }
    }
    let mut std = [0.0; 8];
    for s in samples {
        for (d, x) in s.to_array().iter().enumerate() {
            std[d] += (x - mean[d]).powi(2) / n;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let rows = samples
        .iter()
        .map(|s| {
            let a = s.to_array();
            std::array::from_fn(|d| (a[d] - mean[d]) / std[d])
        })
        .collect();
    Normalized { rows, mean, std }
}

fn d2(a: &[f64; 8], b: &[f64; 8]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(row: &[f64; 8], centers: &[[f64; 8]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = d2(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seeds(rows: &[[f64; 8]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 8]> {
    let mut centers = vec![rows[rng.random_range(0..rows.len())]];
    let mut dist: Vec<f64> = rows.iter().map(|r| d2(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = rows.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..rows.len())
        };
        centers.push(rows[pick]);
        for (d, r) in dist.iter_mut().zip(rows) {
            *d = d.min(d2(r, &rows[pick]));
        }
    }
    centers
}

/// Lloyd iteration on z-scored features with k-means++ seeding.
pub fn kmeans(samples: &[ClusterFeatures], k: usize, seed: u64) -> Result<KMeansResult, IrlError> {
    if k == 0 || k > samples.len() {
        return Err(IrlError::InvalidK { k, n: samples.len() });
    }
    let norm = zscore(samples);
    let rows = &norm.rows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(rows, k, &mut rng);
    let mut labels: Vec<usize> = rows.iter().map(|r| nearest(r, &centers).0).collect();
    let mut iterations = 0;
    for it in 1..=KMEANS_MAX_ITER {
        iterations = it;
        let mut sums = vec![[0.0; 8]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..8 {
                sums[l][d] += r[d];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = std::array::from_fn(|d| sums[j][d] / counts[j] as f64);
            }
        }
        let next: Vec<usize> = rows.iter().map(|r| nearest(r, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let sse = rows.iter().zip(&labels).map(|(r, &l)| d2(r, &centers[l])).sum();
    let centers = centers
        .iter()
        .map(|c| ClusterFeatures::from_array(std::array::from_fn(|d| c[d] * norm.std[d] + norm.mean[d])))
        .collect();
    Ok(KMeansResult {
        labels,
        centers,
        sse,
        iterations,
    })
}

/// Best-of-restarts SSE for k = 1..=k_max.
pub fn elbow_sse(samples: &[ClusterFeatures], k_max: usize, seed: u64) -> Result<Vec<f64>, IrlError> {
    if k_max == 0 || k_max > samples.len() {
        return Err(IrlError::InvalidK { k: k_max, n: samples.len() });
    }
    (1..=k_max)
        .map(|k| {
            (0..ELBOW_RESTARTS)
                .map(|r| kmeans(samples, k, seed.wrapping_mul(31).wrapping_add(r * 1_000 + k as u64)).map(|m| m.sse))
                .try_fold(f64::INFINITY, |best, s| s.map(|s| best.min(s)))
        })
        .collect()
}

/// Knee of an SSE curve: the k with the largest second difference.
pub fn elbow_k(sse: &[f64]) -> usize {
    if sse.len() < 3 {
        return sse.len().max(1);
    }
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..sse.len() {
        let curv = sse[k - 2] - 2.0 * sse[k - 1] + sse[k];
        if curv > best.1 {
            best = (k, curv);
        }
    }
    best.0
}
