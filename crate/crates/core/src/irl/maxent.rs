//! Maximum-entropy IRL over a finite candidate set per demonstration.
//!
//! Objective: `L(θ) = Σ_d [θ·f_d − log Σ_j exp(θ·f̃_dj)] − λ‖θ‖²` on z-scored
//! features. Ascent uses step `α/N` with halving whenever `L` would drop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ExpertDemo;
use crate::error::IrlError;
use crate::features::RewardWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlConfig {
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub horizon: usize,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig {
            learning_rate: 1.0,
            regularization: 1e-3,
            epochs: 400,
            horizon: 10,
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0) || !(self.regularization > 0.0) || self.epochs < 1 || self.horizon < 1 {
            return Err("need learning_rate > 0, regularization > 0, epochs >= 1, horizon >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlResult {
    /// Weights in raw feature units, comparable with the driver presets.
    pub weights: RewardWeights,
    /// Weights in z-scored feature space.
    pub theta_normalized: [f64; 3],
    pub feature_mean: [f64; 3],
    pub feature_std: [f64; 3],
    /// Objective value before the first epoch and after each accepted step.
    pub likelihood_trace: Vec<f64>,
}

/// Z-scored likelihood problem built from a demo corpus.
#[derive(Debug, Clone)]
pub struct IrlProblem {
    expert: Vec<[f64; 3]>,
    candidates: Vec<Vec<[f64; 3]>>,
    pub lambda: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Softmax probabilities of `θ·f` over `feats`.
pub fn softmax_weights(theta: &[f64; 3], feats: &[[f64; 3]]) -> Vec<f64> {
    let logits: Vec<f64> = feats.iter().map(|f| dot(theta, f)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn log_sum_exp(theta: &[f64; 3], feats: &[[f64; 3]]) -> f64 {
    let m = feats.iter().map(|f| dot(theta, f)).fold(f64::NEG_INFINITY, f64::max);
    m + feats.iter().map(|f| (dot(theta, f) - m).exp()).sum::<f64>().ln()
}

impl IrlProblem {
    /// Each demo is shifted by its own candidate mean (the softmax is
    /// invariant to per-demo shifts), then scaled by the pooled std of the
    /// centered candidate features.
    pub fn new(demos: &[ExpertDemo], lambda: f64) -> Result<Self, IrlError> {
        if demos.is_empty() {
            return Err(IrlError::EmptyDemos);
        }
        let mut expert = Vec::with_capacity(demos.len());
        let mut candidates = Vec::with_capacity(demos.len());
        let mut mean = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut count = 0.0;
        for d in demos {
            if d.candidates.is_empty() {
                return Err(IrlError::EmptyDemos);
            }
            let m = d.candidates.len() as f64;
            let c: [f64; 3] = std::array::from_fn(|k| d.candidates.iter().map(|f| f[k]).sum::<f64>() / m);
            let centered: Vec<[f64; 3]> = d.candidates.iter().map(|f| std::array::from_fn(|k| f[k] - c[k])).collect();
            for f in &centered {
                for k in 0..3 {
                    sq[k] += f[k] * f[k];
                }
                count += 1.0;
            }
            for k in 0..3 {
                mean[k] += c[k];
            }
            expert.push(std::array::from_fn(|k| d.features[k] - c[k]));
            candidates.push(centered);
        }
        let mut std = [0.0; 3];
        for k in 0..3 {
            mean[k] /= demos.len() as f64;
            let var = sq[k] / count;
            std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let scale = |f: &mut [f64; 3]| {
            for k in 0..3 {
                f[k] /= std[k];
            }
        };
        expert.iter_mut().for_each(scale);
        candidates.iter_mut().flatten().for_each(scale);
        if expert.iter().chain(candidates.iter().flatten()).any(|f: &[f64; 3]| f.iter().any(|x| !x.is_finite())) {
            return Err(IrlError::NonFiniteGradient);
        }
        Ok(IrlProblem {
            expert,
            candidates,
            lambda,
            mean,
            std,
        })
    }

    pub fn len(&self) -> usize {
        self.expert.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expert.is_empty()
    }

    pub fn objective(&self, theta: &[f64; 3]) -> f64 {
        let mut l = 0.0;
        for (f, c) in self.expert.iter().zip(&self.candidates) {
            l += dot(theta, f) - log_sum_exp(theta, c);
        }
        l - self.lambda * dot(theta, theta)
    }

    pub fn gradient(&self, theta: &[f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (f, c) in self.expert.iter().zip(&self.candidates) {
            let p = softmax_weights(theta, c);
            for k in 0..3 {
                let expected: f64 = p.iter().zip(c).map(|(pi, fi)| pi * fi[k]).sum();
                g[k] += f[k] - expected;
            }
        }
        for k in 0..3 {
            g[k] -= 2.0 * self.lambda * theta[k];
        }
        g
    }

    /// Map normalized weights back to raw feature units.
    pub fn to_raw(&self, theta: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| theta[k] / self.std[k])
    }
}

/// Gradient ascent with step halving on objective decrease.
pub fn maxent_irl(demos: &[ExpertDemo], config: &IrlConfig, seed: u64) -> Result<IrlResult, IrlError> {
    let problem = IrlProblem::new(demos, config.regularization)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 0.05).unwrap();
    let mut theta: [f64; 3] = std::array::from_fn(|_| init.sample(&mut rng));
    let n = problem.len() as f64;
    let mut value = problem.objective(&theta);
    let mut trace = vec![value];
    let mut alpha = config.learning_rate;
    for _ in 0..config.epochs {
        let g = problem.gradient(&theta);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(IrlError::NonFiniteGradient);
        }
        let mut accepted = false;
        for _ in 0..40 {
            let cand: [f64; 3] = std::array::from_fn(|k| theta[k] + alpha / n * g[k]);
            let v = problem.objective(&cand);
            if v >= value {
                theta = cand;
                value = v;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(value);
    }
    Ok(IrlResult {
        weights: RewardWeights::from_array(problem.to_raw(&theta)),
        theta_normalized: theta,
        feature_mean: problem.mean,
        feature_std: problem.std,
        likelihood_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn demo(expert: [f64; 3], candidates: Vec<[f64; 3]>) -> ExpertDemo {
        ExpertDemo::from_features(expert, candidates)
    }

    /// Demos drawn from a known softmax policy over random candidate sets.
    fn planted(theta: [f64; 3], n: usize, seed: u64) -> Vec<ExpertDemo> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c: Vec<[f64; 3]> = (0..6)
                    .map(|_| [-rng.random::<f64>() * 3.0, -rng.random::<f64>(), -rng.random::<f64>() * 2.0])
                    .collect();
                let p = softmax_weights(&theta, &c);
                let mut u: f64 = rng.random();
                let mut pick = 5;
                for (i, pi) in p.iter().enumerate() {
                    if u < *pi {
                        pick = i;
                        break;
                    }
                    u -= pi;
                }
                demo(c[pick], c)
            })
            .collect()
    }

    #[test]
    fn softmax_normalizes() {
        let c = vec![[1.0, 2.0, 3.0], [0.0, -1.0, 5.0], [100.0, 0.0, 0.0]];
        let p = softmax_weights(&[0.3, -0.2, 1.0], &c);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_candidates_give_pure_decay() {
        let f = [-3.0, -0.5, -1.0];
        let demos = vec![demo(f, vec![f; 6]), demo([-1.0, 0.0, 0.0], vec![[-1.0, 0.0, 0.0]; 6])];
        let p = IrlProblem::new(&demos, 0.5).unwrap();
        let th = [0.4, -0.2, 0.1];
        let g = p.gradient(&th);
        for k in 0..3 {
            assert!((g[k] + 2.0 * 0.5 * th[k]).abs() < 1e-12);
        }
        let r = maxent_irl(&demos, &IrlConfig { regularization: 0.5, ..IrlConfig::default() }, 1).unwrap();
        assert!(r.theta_normalized.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn heavy_regularization_shrinks_theta() {
        let demos = planted([2.0, 1.0, 1.5], 200, 3);
        let r = maxent_irl(&demos, &IrlConfig { regularization: 1e3, ..IrlConfig::default() }, 2).unwrap();
        let norm: f64 = r.theta_normalized.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 0.2, "{norm}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let demos = planted([1.0, 0.5, 2.0], 100, 5);
        let p = IrlProblem::new(&demos, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let th: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let g = p.gradient(&th);
            for k in 0..3 {
                let h = 1e-5;
                let mut a = th;
                let mut b = th;
                a[k] += h;
                b[k] -= h;
                let fd = (p.objective(&a) - p.objective(&b)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * fd.abs().max(g[k].abs()).max(1.0));
            }
        }
    }

    #[test]
    fn recovers_planted_direction_and_ascends() {
        let truth = [2.0, 1.0, 1.5];
        let demos = planted(truth, 4000, 7);
        let r = maxent_irl(&demos, &IrlConfig { regularization: 1e-4, ..IrlConfig::default() }, 3).unwrap();
        let w = r.weights.to_array();
        let cos = dot(&w, &truth) / (dot(&w, &w).sqrt() * dot(&truth, &truth).sqrt());
        assert!(cos > 0.99, "{w:?}");
        assert!(r.likelihood_trace.last().unwrap() >= r.likelihood_trace.first().unwrap());
        let p = IrlProblem::new(&demos, 1e-4).unwrap();
        assert!(p.objective(&r.theta_normalized) >= p.objective(&[0.0; 3]));
    }
}
