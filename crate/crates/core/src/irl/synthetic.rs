//! Synthetic expert demonstrations for validating IRL.
//!
//! The planted driver is Boltzmann-rational: each frame it samples an action
//! from the softmax of its reward over the available candidates (the model
//! IRL inverts). Its crossing opponent is a normal-profile driver playing
//! `hv_decide`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{candidate_features, softmax_weights, DemoContext, ExpertDemo};
use crate::dynamics::{action_set, step};
use crate::hv::{hv_decide, path_step, DriverKind, DriverProfile, HvConfig};
use crate::scenario::{project_to_path, IntersectionLayout, Movement};
use crate::world::{Vehicle, VehicleClass, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub horizon: usize,
    pub dt: f64,
    pub frames_per_scenario: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            horizon: 10,
            dt: 0.1,
            frames_per_scenario: 30,
        }
    }
}

/// First pair of straight streams that cross.
fn crossing_pair(layout: &IntersectionLayout) -> (u32, u32, f64, f64) {
    let straight = |id: u32| layout.stream(id).map(|s| s.movement == Movement::Straight).unwrap_or(false);
    let cp = layout
        .conflict_points
        .iter()
        .find(|c| straight(c.stream_a) && straight(c.stream_b))
        .or_else(|| layout.conflict_points.first())
        .expect("layout needs at least one conflict point");
    (cp.stream_a, cp.stream_b, cp.arc_pos_a, cp.arc_pos_b)
}

fn place(layout: &IntersectionLayout, id: u32, stream: u32, s: f64, v: f64, profile: DriverProfile) -> Vehicle {
    let (p, h) = layout.path(stream).pose_at(s);
    Vehicle {
        id,
        class: VehicleClass::Hv,
        stream,
        profile,
        state: crate::dynamics::VehicleState::new(p[0], p[1], v, h),
        s,
        l: 0.0,
        spawn_time: 0.0,
        entry_order: id as u64,
    }
}

/// `n` randomized two-vehicle conflict scenarios; one demo per ego frame.
pub fn generate_synthetic_demos(
    profile: &DriverProfile,
    layout: &IntersectionLayout,
    n: usize,
    seed: u64,
    cfg: &SyntheticConfig,
) -> Vec<ExpertDemo> {
    assert!(n >= 1, "need at least one scenario");
    let (sa, sb, ca, cb) = crossing_pair(layout);
    let theta = profile.weights.to_array();
    let hv_cfg = HvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos = Vec::with_capacity(n * cfg.frames_per_scenario);
    for _ in 0..n {
        let (ego_stream, opp_stream, ce, co) = if rng.random::<bool>() { (sa, sb, ca, cb) } else { (sb, sa, cb, ca) };
        let ego_s = rng.random_range(0.0..(ce - 5.0).max(1.0));
        let ego_v = profile.v_target * rng.random_range(0.3..1.1);
        let lead = (ce - ego_s) * rng.random_range(0.5..1.5);
        let opp_s = (co - lead).max(0.0);
        let opp_v = rng.random_range(1.0..6.0);
        // Choices draw from their own per-scenario stream, so a given seed
        // poses the same scenarios and uniforms to every profile.
        let mut choice_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut ego = place(layout, 1, ego_stream, ego_s, ego_v, *profile);
        let mut opp = place(layout, 2, opp_stream, opp_s, opp_v, DriverProfile::preset(DriverKind::Normal));
        let ego_path = layout.path(ego_stream);
        let opp_path = layout.path(opp_stream);
        for _ in 0..cfg.frames_per_scenario {
            if ego.s >= ego_path.length() - 1.0 {
                break;
            }
            let ctx = DemoContext {
                ego: ego.state,
                ego_stream,
                opponents: vec![opp.state],
                v_target: profile.v_target,
                horizon: cfg.horizon,
                dt: cfg.dt,
            };
            let (idx, trajs, feats) = candidate_features(&ctx, layout);
            let p = softmax_weights(&theta, &feats);
            let mut u: f64 = choice_rng.random();
            let mut pick = p.len() - 1;
            for (i, pi) in p.iter().enumerate() {
                if u < *pi {
                    pick = i;
                    break;
                }
                u -= pi;
            }
            let world = WorldState {
                vehicles: vec![ego.clone(), opp.clone()],
                ..WorldState::default()
            };
            let opp_action = if opp.s < opp_path.length() {
                hv_decide(2, &world, layout, &hv_cfg, cfg.dt)
            } else {
                action_set()[0]
            };
            demos.push(ExpertDemo {
                trajectory: trajs[pick].clone(),
                features: feats[pick],
                cluster_label: None,
                candidates: feats,
                context: Some(ctx),
            });
            ego.state = step(&ego.state, &action_set()[idx[pick]], cfg.dt);
            let (s, l) = project_to_path(ego_path, ego.state.position());
            ego.s = s;
            ego.l = l;
            let (st, s, l) = path_step(&opp.state, opp_path, &opp_action, cfg.dt);
            opp.state = st;
            opp.s = s;
            opp.l = l;
        }
    }
    demos
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_intersection, ScenarioConfig};

    fn layout() -> IntersectionLayout {
        build_intersection(&ScenarioConfig::default()).unwrap()
    }

    fn mean_speed(demos: &[ExpertDemo]) -> f64 {
        let (sum, n) = demos
            .iter()
            .flat_map(|d| d.trajectory.states.iter())
            .fold((0.0, 0usize), |(s, n), st| (s + st.v, n + 1));
        sum / n as f64
    }

    #[test]
    fn aggressive_demos_are_faster() {
        let lay = layout();
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic_demos(&DriverProfile::preset(DriverKind::Aggressive), &lay, 50, 5, &cfg);
        let c = generate_synthetic_demos(&DriverProfile::preset(DriverKind::Conservative), &lay, 50, 5, &cfg);
        assert!(mean_speed(&a) > mean_speed(&c));
    }

    #[test]
    fn demos_are_deterministic_and_consistent() {
        let lay = layout();
        let cfg = SyntheticConfig::default();
        let p = DriverProfile::preset(DriverKind::Normal);
        let a = generate_synthetic_demos(&p, &lay, 5, 9, &cfg);
        let b = generate_synthetic_demos(&p, &lay, 5, 9, &cfg);
        assert_eq!(a, b);
        for d in &a {
            let ctx = d.context.as_ref().unwrap();
            let (_, _, feats) = candidate_features(ctx, &lay);
            assert_eq!(feats, d.candidates);
            let recomputed = super::super::trajectory_features(
                &d.trajectory,
                lay.path(ctx.ego_stream),
                &super::super::feasible_trajectories(&ctx.ego, &ctx.opponents, ctx.horizon, ctx.dt).opponents,
            );
            assert_eq!(recomputed, d.features);
        }
    }
}
