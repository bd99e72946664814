//! Efficiency, comfort and safety features and the linear reward over them.

use serde::{Deserialize, Serialize};

use crate::dynamics::{step, Action, VehicleState};
use crate::scenario::{project_to_path, ReferencePath};

/// Disc footprint radius shared by every vehicle, meters.
pub const FOOTPRINT_RADIUS: f64 = 1.5;
/// TTC floor; bounds the safety penalty at `1 / TTC_FLOOR`.
pub const TTC_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub f_eff: f64,
    pub f_comf: f64,
    pub f_safe: f64,
}

impl FeatureVector {
    pub fn new(f_eff: f64, f_comf: f64, f_safe: f64) -> Self {
        FeatureVector { f_eff, f_comf, f_safe }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.f_eff, self.f_comf, self.f_safe]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        FeatureVector::new(a[0], a[1], a[2])
    }

    /// Features of a single state: `(-d, -|l|, -min(1/TTC, 1/floor))`.
    pub fn from_terms(distance: f64, offset: f64, ttc: f64) -> Self {
        FeatureVector::new(-distance, -offset.abs(), safety_feature(ttc))
    }
}

pub fn safety_feature(ttc: f64) -> f64 {
    -(1.0 / ttc).min(1.0 / TTC_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_eff: f64,
    pub w_comf: f64,
    pub w_safe: f64,
}

impl RewardWeights {
    pub fn new(w_eff: f64, w_comf: f64, w_safe: f64) -> Self {
        RewardWeights { w_eff, w_comf, w_safe }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.w_eff, self.w_comf, self.w_safe]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        RewardWeights::new(a[0], a[1], a[2])
    }

    pub fn dot(&self, f: &FeatureVector) -> f64 {
        self.w_eff * f.f_eff + self.w_comf * f.f_comf + self.w_safe * f.f_safe
    }

    pub fn scaled(&self, c: f64) -> Self {
        RewardWeights::new(c * self.w_eff, c * self.w_comf, c * self.w_safe)
    }
}

pub fn distance_to_destination(state: &VehicleState, path: &ReferencePath) -> f64 {
    let (s, _) = project_to_path(path, state.position());
    (path.length() - s).max(0.0)
}

pub fn path_offset(state: &VehicleState, path: &ReferencePath) -> f64 {
    project_to_path(path, state.position()).1.abs()
}

/// Earliest contact time of two constant-velocity discs of radius `radius`.
pub fn pair_ttc(p: [f64; 2], vp: [f64; 2], q: [f64; 2], vq: [f64; 2], radius: f64) -> f64 {
    let r = 2.0 * radius;
    let d = [q[0] - p[0], q[1] - p[1]];
    let w = [vq[0] - vp[0], vq[1] - vp[1]];
    let c = d[0] * d[0] + d[1] * d[1] - r * r;
    if c <= 0.0 {
        return 0.0;
    }
    let a = w[0] * w[0] + w[1] * w[1];
    let b = d[0] * w[0] + d[1] * w[1];
    if a == 0.0 || b >= 0.0 {
        return f64::INFINITY;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    // Numerically stable smaller root of a t^2 + 2 b t + c = 0 with b < 0.
    c / (-b + disc.sqrt())
}

pub fn time_to_collision(ego: &VehicleState, others: &[VehicleState], footprint_radius: f64) -> f64 {
    let (p, vp) = (ego.position(), ego.velocity());
    others
        .iter()
        .map(|o| pair_ttc(p, vp, o.position(), o.velocity(), footprint_radius))
        .fold(f64::INFINITY, f64::min)
}

pub fn features_at(state: &VehicleState, path: &ReferencePath, others: &[VehicleState]) -> FeatureVector {
    let (s, l) = project_to_path(path, state.position());
    let ttc = time_to_collision(state, others, FOOTPRINT_RADIUS);
    FeatureVector::from_terms((path.length() - s).max(0.0), l, ttc)
}

/// One-step reward: every vehicle advances once, features are taken at the
/// ego's successor state.
pub fn reward(
    ego_state: &VehicleState,
    ego_action: &Action,
    opponents: &[(VehicleState, Action)],
    ego_path: &ReferencePath,
    weights: &RewardWeights,
    dt: f64,
) -> f64 {
    let ego_next = step(ego_state, ego_action, dt);
    let others: Vec<VehicleState> = opponents.iter().map(|(s, a)| step(s, a, dt)).collect();
    weights.dot(&features_at(&ego_next, ego_path, &others))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::action_set;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Step both discs forward at 1e-3 s until contact.
    fn simulated_ttc(a: &VehicleState, b: &VehicleState, radius: f64, t_max: f64) -> f64 {
        let h = 1e-3;
        let (va, vb) = (a.velocity(), b.velocity());
        let mut t = 0.0;
        while t <= t_max {
            let dx = (b.x + vb[0] * t) - (a.x + va[0] * t);
            let dy = (b.y + vb[1] * t) - (a.y + va[1] * t);
            if (dx * dx + dy * dy).sqrt() <= 2.0 * radius {
                return t;
            }
            t += h;
        }
        f64::INFINITY
    }

    #[test]
    fn head_on_ttc() {
        let a = VehicleState::new(0.0, 0.0, 2.0, 0.0);
        let b = VehicleState::new(20.0, 0.0, 2.0, std::f64::consts::PI);
        let t = time_to_collision(&a, &[b], 1.5);
        assert_abs_diff_eq!(t, 4.25, epsilon = 1e-12);
        assert!((simulated_ttc(&a, &b, 1.5, 10.0) - 4.25).abs() < 2e-3);
    }

    #[test]
    fn diverging_and_alone() {
        let a = VehicleState::new(0.0, 0.0, 2.0, std::f64::consts::PI);
        let b = VehicleState::new(20.0, 0.0, 2.0, 0.0);
        assert!(time_to_collision(&a, &[b], 1.5).is_infinite());
        assert!(time_to_collision(&a, &[], 1.5).is_infinite());
    }

    #[test]
    fn distance_and_offset() {
        let p40 = ReferencePath::straight([0.0, 0.0], 0.0, 40.0);
        assert_abs_diff_eq!(distance_to_destination(&VehicleState::default(), &p40), 40.0);
        assert_abs_diff_eq!(distance_to_destination(&VehicleState::new(40.0, 0.0, 0.0, 0.0), &p40), 0.0);
        let p65 = ReferencePath::straight([0.0, 0.0], 0.0, 65.0);
        assert_abs_diff_eq!(distance_to_destination(&VehicleState::new(25.0, 0.0, 0.0, 0.0), &p65), 40.0);
        assert_abs_diff_eq!(path_offset(&VehicleState::new(5.0, 0.0, 0.0, 0.0), &p40), 0.0);
        assert_abs_diff_eq!(path_offset(&VehicleState::new(5.0, 1.0, 0.0, 0.0), &p40), 1.0);
        assert_abs_diff_eq!(path_offset(&VehicleState::new(5.0, -0.5, 0.0, 0.0), &p40), 0.5);
    }

    #[test]
    fn reward_examples() {
        let path = ReferencePath::straight([0.0, 0.0], 0.0, 60.0);
        let s = VehicleState::new(20.0, 0.0, 0.0, 0.0);
        let r = reward(&s, &Action::MAINTAIN, &[], &path, &RewardWeights::new(1.0, 0.0, 0.0), 0.1);
        assert_abs_diff_eq!(r, -40.0, epsilon = 1e-12);
        let r = reward(&s, &Action::MAINTAIN, &[], &path, &RewardWeights::new(0.0, 0.0, 1.0), 0.1);
        assert_eq!(r, 0.0);
        let opp = [(VehicleState::new(25.0, 0.0, 3.0, std::f64::consts::PI), Action::MAINTAIN)];
        let r = reward(&s, &Action::BRAKE, &opp, &path, &RewardWeights::default(), 0.1);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn safety_feature_bounded() {
        assert_eq!(safety_feature(f64::INFINITY), 0.0);
        assert_eq!(safety_feature(0.0), -10.0);
        assert_eq!(safety_feature(0.05), -10.0);
        assert_abs_diff_eq!(safety_feature(2.0), -0.5);
    }

    fn arb_state() -> impl Strategy<Value = VehicleState> {
        (-30.0f64..30.0, -30.0f64..30.0, 0.0f64..8.0, -3.1f64..3.1)
            .prop_map(|(x, y, v, g)| VehicleState::new(x, y, v, g))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn ttc_matches_forward_simulation(a in arb_state(), b in arb_state()) {
            let analytic = time_to_collision(&a, &[b], 1.5);
            let sim = simulated_ttc(&a, &b, 1.5, 20.0);
            if analytic <= 19.9 {
                prop_assert!((analytic - sim).abs() < 2e-3, "{} vs {}", analytic, sim);
            } else {
                prop_assert!(sim > 19.9 || (analytic - sim).abs() < 2e-3);
            }
        }

        #[test]
        fn safety_monotone(t1 in 0.0f64..50.0, t2 in 0.0f64..50.0) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(safety_feature(lo) <= safety_feature(hi));
        }

        #[test]
        fn argmax_scale_invariant(
            ego in arb_state(), opp in arb_state(), c in 0.01f64..100.0,
            w in (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0),
        ) {
            let path = ReferencePath::straight([-40.0, 0.0], 0.0, 80.0);
            let theta = RewardWeights::new(w.0, w.1, w.2);
            let argmax = |wt: &RewardWeights| {
                let mut best = (0, f64::NEG_INFINITY);
                for (i, u) in action_set().iter().enumerate() {
                    let r = reward(&ego, u, &[(opp, Action::MAINTAIN)], &path, wt, 0.1);
                    if r > best.1 { best = (i, r); }
                }
                best.0
            };
            let a = argmax(&theta);
            let b = argmax(&theta.scaled(c));
            if a != b {
                // Only exact float ties may flip; confirm equal rewards.
                let ra = reward(&ego, &action_set()[a], &[(opp, Action::MAINTAIN)], &path, &theta, 0.1);
                let rb = reward(&ego, &action_set()[b], &[(opp, Action::MAINTAIN)], &path, &theta, 0.1);
                prop_assert!((ra - rb).abs() <= 1e-9 * ra.abs().max(1.0));
            }
        }
    }
}
