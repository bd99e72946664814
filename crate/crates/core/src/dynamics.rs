//! Discrete-time uni-cycle model and the shared six-element action set.

use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub gamma: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, v: f64, gamma: f64) -> Self {
        VehicleState { x, y, v, gamma }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        let (s, c) = self.gamma.sin_cos();
        [self.v * c, self.v * s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub a: f64,
    pub omega: f64,
}

impl Action {
    pub const MAINTAIN: Action = Action { a: 0.0, omega: 0.0 };
    pub const ACCELERATE: Action = Action { a: 2.0, omega: 0.0 };
    pub const DECELERATE: Action = Action { a: -2.0, omega: 0.0 };
    pub const BRAKE: Action = Action { a: -4.0, omega: 0.0 };
    pub const TURN_LEFT: Action = Action { a: 0.0, omega: FRAC_PI_4 };
    pub const TURN_RIGHT: Action = Action { a: 0.0, omega: -FRAC_PI_4 };
}

pub const ACCELERATE_INDEX: usize = 1;
pub const MAX_BRAKE: f64 = 4.0;
/// Largest steering rate in the action set.
pub const MAX_YAW_RATE: f64 = FRAC_PI_4;

/// The game action set, in fixed order: maintain, accelerate, decelerate,
/// brake, turn left, turn right.
pub fn action_set() -> [Action; 6] {
    [
        Action::MAINTAIN,
        Action::ACCELERATE,
        Action::DECELERATE,
        Action::BRAKE,
        Action::TURN_LEFT,
        Action::TURN_RIGHT,
    ]
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Speeds below `SPEED_EPS` are snapped to rest so repeated braking lands on zero.
const SPEED_EPS: f64 = 1e-12;

fn clamp_speed(v: f64) -> f64 {
    if v < SPEED_EPS {
        0.0
    } else {
        v
    }
}

/// One uni-cycle step. Position uses the pre-update speed and yaw.
pub fn step(state: &VehicleState, action: &Action, dt: f64) -> VehicleState {
    let (s, c) = state.gamma.sin_cos();
    VehicleState {
        x: state.x + state.v * c * dt,
        y: state.y + state.v * s * dt,
        v: clamp_speed(state.v + action.a * dt),
        gamma: normalize_angle(state.gamma + action.omega * dt),
    }
}

/// Uniformly sampled state sequence starting at time `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<VehicleState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position at frame offset `k`; past the last state the motion is
    /// extrapolated at constant velocity.
    pub fn position_at(&self, k: usize) -> [f64; 2] {
        let n = self.states.len();
        if k < n {
            return self.states[k].position();
        }
        let last = &self.states[n - 1];
        let vel = last.velocity();
        let extra = (k - (n - 1)) as f64 * self.dt;
        [last.x + vel[0] * extra, last.y + vel[1] * extra]
    }
}

/// Hold `action` for `horizon` frames; the result has `horizon + 1` states.
pub fn rollout(state: &VehicleState, action: &Action, horizon: usize, dt: f64) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(*state);
    let mut cur = *state;
    for _ in 0..horizon {
        cur = step(&cur, action, dt);
        states.push(cur);
    }
    Trajectory { t0: 0.0, dt, states }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn action_set_order() {
        let u = action_set();
        assert_eq!(u[1], Action { a: 2.0, omega: 0.0 });
        assert_eq!(u[3], Action { a: -4.0, omega: 0.0 });
        assert_eq!(u[4], Action { a: 0.0, omega: FRAC_PI_4 });
        assert_eq!(u[5].omega, -FRAC_PI_4);
        assert_eq!(u[ACCELERATE_INDEX], Action::ACCELERATE);
    }

    #[test]
    fn step_examples() {
        let s0 = VehicleState::new(0.0, 0.0, 2.0, 0.0);
        assert_eq!(step(&s0, &Action::MAINTAIN, 0.1), VehicleState::new(0.2, 0.0, 2.0, 0.0));
        let s1 = step(&s0, &Action::ACCELERATE, 0.1);
        assert_abs_diff_eq!(s1.x, 0.2);
        assert_abs_diff_eq!(s1.v, 2.2, epsilon = 1e-15);
        let slow = VehicleState::new(0.0, 0.0, 0.2, 0.0);
        let s2 = step(&slow, &Action::BRAKE, 0.1);
        assert_abs_diff_eq!(s2.x, 0.02, epsilon = 1e-15);
        assert_eq!(s2.v, 0.0);
    }

    #[test]
    fn rollout_examples() {
        let s0 = VehicleState::new(0.0, 0.0, 2.0, 0.0);
        let t = rollout(&s0, &Action::MAINTAIN, 10, 0.1);
        assert_eq!(t.len(), 11);
        assert_abs_diff_eq!(t.states[10].x, 2.0, epsilon = 1e-12);

        let b = rollout(&s0, &Action::BRAKE, 10, 0.1);
        assert!(b.states[4].v > 0.0);
        for s in &b.states[5..] {
            assert_eq!(s.v, 0.0);
        }

        let l = rollout(&VehicleState::new(0.0, 0.0, 1.0, 0.0), &Action::TURN_LEFT, 4, 0.1);
        assert_abs_diff_eq!(l.states[4].gamma, PI / 10.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(0.5), 0.5);
    }

    #[test]
    fn trajectory_extrapolates_past_end() {
        let t = rollout(&VehicleState::new(0.0, 0.0, 1.0, 0.0), &Action::MAINTAIN, 2, 0.5);
        assert_abs_diff_eq!(t.position_at(4)[0], 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn displacement_bounded_by_speed(
            x in -50.0f64..50.0, y in -50.0f64..50.0, v in 0.0f64..15.0,
            g in -3.14f64..3.14, idx in 0usize..6, dt in 0.01f64..0.5,
        ) {
            let s0 = VehicleState::new(x, y, v, g);
            let s1 = step(&s0, &action_set()[idx], dt);
            let d = ((s1.x - x).powi(2) + (s1.y - y).powi(2)).sqrt();
            prop_assert!(d <= v * dt + 1e-12);
            prop_assert!(s1.v >= 0.0);
            prop_assert!(s1.gamma > -PI && s1.gamma <= PI);
        }
    }
}
