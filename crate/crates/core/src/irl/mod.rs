//! Driver clustering and maximum-entropy IRL calibration of reward weights.

pub mod cluster;
pub mod maxent;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::dynamics::{action_set, rollout, Action, Trajectory, VehicleState, ACCELERATE_INDEX};
use crate::features::features_at;
use crate::scenario::{IntersectionLayout, ReferencePath};

pub use cluster::{elbow_k, elbow_sse, extract_cluster_features, kmeans, ClusterFeatures, KMeansResult};
pub use maxent::{maxent_irl, softmax_weights, IrlConfig, IrlProblem, IrlResult};
pub use synthetic::{generate_synthetic_demos, SyntheticConfig};

/// Frame context from which a demo's candidate trajectories are regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoContext {
    pub ego: VehicleState,
    pub ego_stream: u32,
    pub opponents: Vec<VehicleState>,
    /// Accelerate is unavailable at or above this speed.
    pub v_target: f64,
    pub horizon: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertDemo {
    pub trajectory: Trajectory,
    pub features: [f64; 3],
    pub cluster_label: Option<usize>,
    /// Features of every alternative the driver could have taken.
    pub candidates: Vec<[f64; 3]>,
    pub context: Option<DemoContext>,
}

impl ExpertDemo {
    /// Demo known only through its features.
    pub fn from_features(features: [f64; 3], candidates: Vec<[f64; 3]>) -> Self {
        ExpertDemo {
            trajectory: Trajectory {
                t0: 0.0,
                dt: 0.1,
                states: Vec::new(),
            },
            features,
            cluster_label: None,
            candidates,
            context: None,
        }
    }
}

/// One rollout per action plus constant-velocity opponent predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    pub candidates: Vec<Trajectory>,
    pub opponents: Vec<Trajectory>,
}

pub fn feasible_trajectories(state: &VehicleState, opponents: &[VehicleState], horizon: usize, dt: f64) -> FeasibleSet {
    FeasibleSet {
        candidates: action_set().iter().map(|u| rollout(state, u, horizon, dt)).collect(),
        opponents: opponents.iter().map(|o| rollout(o, &Action::MAINTAIN, horizon, dt)).collect(),
    }
}

/// Per-state features averaged over the trajectory.
pub fn trajectory_features(trajectory: &Trajectory, path: &ReferencePath, opponents: &[Trajectory]) -> [f64; 3] {
    let n = trajectory.states.len() as f64;
    let mut acc = [0.0; 3];
    let mut others = Vec::with_capacity(opponents.len());
    for (k, st) in trajectory.states.iter().enumerate() {
        others.clear();
        others.extend(opponents.iter().map(|o| {
            if k < o.states.len() {
                o.states[k]
            } else {
                let p = o.position_at(k);
                let last = o.states.last().unwrap();
                VehicleState::new(p[0], p[1], last.v, last.gamma)
            }
        }));
        let f = features_at(st, path, &others).to_array();
        for i in 0..3 {
            acc[i] += f[i] / n;
        }
    }
    acc
}

/// Available action indices and their candidate features for a context.
pub fn candidate_features(ctx: &DemoContext, layout: &IntersectionLayout) -> (Vec<usize>, Vec<Trajectory>, Vec<[f64; 3]>) {
    let set = feasible_trajectories(&ctx.ego, &ctx.opponents, ctx.horizon, ctx.dt);
    let path = layout.path(ctx.ego_stream);
    let mut idx = Vec::new();
    let mut trajs = Vec::new();
    let mut feats = Vec::new();
    for (i, t) in set.candidates.into_iter().enumerate() {
        if i == ACCELERATE_INDEX && ctx.ego.v >= ctx.v_target {
            continue;
        }
        feats.push(trajectory_features(&t, path, &set.opponents));
        idx.push(i);
        trajs.push(t);
    }
    (idx, trajs, feats)
}

/// Recorded per-vehicle state series on a known stream, one state per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u32,
    pub stream: u32,
    pub first_frame: u64,
    pub states: Vec<VehicleState>,
}

impl Track {
    pub fn state_at(&self, frame: u64) -> Option<&VehicleState> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|k| self.states.get(k as usize))
    }

    pub fn trajectory(&self, dt: f64) -> Trajectory {
        Trajectory {
            t0: self.first_frame as f64 * dt,
            dt,
            states: self.states.clone(),
        }
    }
}

/// Demos from recorded tracks, one list per track in input order: every
/// `stride` frames the observed next `horizon` frames are snapped to the
/// nearest action rollout.
pub fn demos_from_tracks(
    tracks: &[Track],
    layout: &IntersectionLayout,
    horizon: usize,
    stride: usize,
    dt: f64,
) -> Vec<Vec<ExpertDemo>> {
    let mut out = Vec::with_capacity(tracks.len());
    for tr in tracks {
        let mut own = Vec::new();
        let mut k = 0;
        while k + horizon < tr.states.len() {
            let frame = tr.first_frame + k as u64;
            let ego = tr.states[k];
            let opponents: Vec<VehicleState> = tracks
                .iter()
                .filter(|o| o.id != tr.id)
                .filter_map(|o| o.state_at(frame).copied())
                .filter(|o| crate::scenario::distance(o.position(), ego.position()) < 30.0)
                .collect();
            let ctx = DemoContext {
                ego,
                ego_stream: tr.stream,
                opponents,
                v_target: f64::INFINITY,
                horizon,
                dt,
            };
            let (_, trajs, feats) = candidate_features(&ctx, layout);
            let observed = &tr.states[k..=k + horizon];
            let nearest = trajs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let err: f64 = t
                        .states
                        .iter()
                        .zip(observed)
                        .map(|(a, b)| crate::scenario::distance(a.position(), b.position()))
                        .sum();
                    (i, err)
                })
                .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
                .0;
            own.push(ExpertDemo {
                trajectory: trajs[nearest].clone(),
                features: feats[nearest],
                cluster_label: None,
                candidates: feats,
                context: Some(ctx),
            });
            k += stride.max(1);
        }
        out.push(own);
    }
    out
}
