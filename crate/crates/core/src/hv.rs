//! Human-driver model: each frame an HV plays a non-cooperative game with the
//! vehicles it interacts with and executes its Nash action.
//!
//! Actions are executed in the path-aligned frame of the driver's reference
//! path, which reduces to the plain uni-cycle step on straight segments and
//! lets `Maintain` follow curved connectors.

use serde::{Deserialize, Serialize};

use crate::dynamics::{action_set, normalize_angle, Action, VehicleState, ACCELERATE_INDEX};
use crate::features::{safety_feature, FeatureVector, RewardWeights, FOOTPRINT_RADIUS};
use crate::features::pair_ttc;
use crate::game::{pure_nash, NormalFormGame};
use crate::scenario::{project_to_path, IntersectionLayout, ReferencePath};
use crate::world::{zones, Vehicle, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    Aggressive,
    Normal,
    Conservative,
}

impl DriverKind {
    pub const ALL: [DriverKind; 3] = [DriverKind::Aggressive, DriverKind::Normal, DriverKind::Conservative];

    pub fn as_str(self) -> &'static str {
        match self {
            DriverKind::Aggressive => "aggressive",
            DriverKind::Normal => "normal",
            DriverKind::Conservative => "conservative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub kind: DriverKind,
    pub weights: RewardWeights,
    pub v_init: f64,
    pub v_target: f64,
}

impl DriverProfile {
    pub fn preset(kind: DriverKind) -> Self {
        let (w, v_init, v_target) = match kind {
            DriverKind::Aggressive => ([8.33, 1.56, 3.69], 6.29, 6.98),
            DriverKind::Normal => ([8.2, 1.72, 5.7], 3.31, 4.42),
            DriverKind::Conservative => ([7.79, 2.1, 8.44], 1.34, 1.60),
        };
        DriverProfile {
            kind,
            weights: RewardWeights::from_array(w),
            v_init,
            v_target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvConfig {
    /// Frames each candidate action is held when scoring the game.
    pub horizon: usize,
    pub interaction_radius: f64,
    pub max_opponents: usize,
    /// Extra car-following gap beyond touching footprints, meters.
    pub follow_gap: f64,
    /// Stop this far short of a zone when yielding, meters.
    pub yield_buffer: f64,
    /// Largest lateral excursion a driver accepts, meters. Adjacent lanes sit
    /// 3.5 m apart and footprints need 3.0 m, which leaves 0.25 m per side.
    pub lane_bound: f64,
}

impl Default for HvConfig {
    fn default() -> Self {
        HvConfig {
            horizon: 10,
            interaction_radius: 30.0,
            max_opponents: 2,
            follow_gap: 2.0,
            yield_buffer: 0.5,
            lane_bound: 0.2,
        }
    }
}

/// Path-relative kinematic state: arclength, lateral offset, heading
/// relative to the path tangent, and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPose {
    pub s: f64,
    pub l: f64,
    pub psi: f64,
    pub v: f64,
}

impl PathPose {
    pub fn from_state(state: &VehicleState, path: &ReferencePath) -> Self {
        let (s, l) = project_to_path(path, state.position());
        let (_, h) = path.pose_at(s);
        PathPose {
            s,
            l,
            psi: normalize_angle(state.gamma - h),
            v: state.v,
        }
    }

    pub fn to_state(&self, path: &ReferencePath) -> VehicleState {
        let p = path.frenet_point(self.s, self.l);
        let (_, h) = path.pose_at(self.s);
        VehicleState::new(p[0], p[1], self.v, normalize_angle(h + self.psi))
    }

    /// The uni-cycle update written in path coordinates.
    pub fn step(&self, action: &Action, dt: f64) -> PathPose {
        let (sn, cs) = self.psi.sin_cos();
        let v = self.v + action.a * dt;
        PathPose {
            s: self.s + self.v * cs * dt,
            l: self.l + self.v * sn * dt,
            psi: normalize_angle(self.psi + action.omega * dt),
            v: if v < 1e-12 { 0.0 } else { v },
        }
    }
}

/// Advance a vehicle one frame along its path; returns the new state and `(s, l)`.
pub fn path_step(state: &VehicleState, path: &ReferencePath, action: &Action, dt: f64) -> (VehicleState, f64, f64) {
    let next = PathPose::from_state(state, path).step(action, dt);
    (next.to_state(path), next.s, next.l)
}

/// Opponents for `ego`: vehicles on crossing streams near a shared conflict
/// point, plus the in-stream predecessor; nearest first, capped.
pub fn interaction_set(ego_id: u32, world: &WorldState, layout: &IntersectionLayout, cfg: &HvConfig) -> Vec<u32> {
    let Some(ego) = world.get(ego_id) else {
        return Vec::new();
    };
    let mut cands: Vec<(f64, u32)> = Vec::new();
    for other in &world.vehicles {
        if other.id == ego.id || other.stream == ego.stream {
            continue;
        }
        let mut best = f64::INFINITY;
        for z in layout.spans(ego.stream) {
            if z.other_stream != other.stream || zones::cleared(ego, z) {
                continue;
            }
            let Some(oz) = layout.span(other.stream, z.conflict) else {
                continue;
            };
            if zones::cleared(other, oz) {
                continue;
            }
            let cp = layout.conflict_points[z.conflict].position;
            let d = crate::scenario::distance(other.state.position(), cp);
            best = best.min(d);
        }
        if best < cfg.interaction_radius {
            cands.push((best, other.id));
        }
    }
    if let Some(pred) = world.predecessor(ego) {
        let gap = pred.s - ego.s;
        if gap < cfg.interaction_radius {
            cands.push((gap, pred.id));
        }
    }
    cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    cands.dedup_by_key(|c| c.1);
    cands.truncate(cfg.max_opponents);
    cands.into_iter().map(|c| c.1).collect()
}

/// Candidate action indices: Accelerate is dropped at or above target speed.
pub fn candidate_actions(v: f64, v_target: f64) -> Vec<usize> {
    (0..6).filter(|&i| !(i == ACCELERATE_INDEX && v >= v_target)).collect()
}

struct PlayerRollouts {
    actions: Vec<usize>,
    /// Per candidate: states at frames 1..=H.
    states: Vec<Vec<VehicleState>>,
    /// Per candidate: summed efficiency and comfort features over frames 1..=H.
    eff_comf: Vec<(f64, f64)>,
}

fn player_rollouts(v: &Vehicle, path: &ReferencePath, actions: Vec<usize>, horizon: usize, dt: f64) -> PlayerRollouts {
    let u = action_set();
    let start = PathPose::from_state(&v.state, path);
    let mut states = Vec::with_capacity(actions.len());
    let mut eff_comf = Vec::with_capacity(actions.len());
    for &ai in &actions {
        let mut pose = start;
        let mut seq = Vec::with_capacity(horizon);
        let (mut e, mut c) = (0.0, 0.0);
        for _ in 0..horizon {
            pose = pose.step(&u[ai], dt);
            seq.push(pose.to_state(path));
            e -= (path.length() - pose.s.min(path.length())).max(0.0);
            c -= pose.l.abs();
        }
        states.push(seq);
        eff_comf.push((e, c));
    }
    PlayerRollouts {
        actions,
        states,
        eff_comf,
    }
}

/// Horizon-averaged features of every player for a joint candidate profile
/// (indices into each player's candidate list).
fn profile_features(players: &[PlayerRollouts], profile: &[usize], horizon: usize) -> Vec<FeatureVector> {
    let n = players.len();
    let mut safe = vec![0.0; n];
    for t in 0..horizon {
        let mut ttc = vec![f64::INFINITY; n];
        for i in 0..n {
            let si = &players[i].states[profile[i]][t];
            for j in i + 1..n {
                let sj = &players[j].states[profile[j]][t];
                let tt = pair_ttc(si.position(), si.velocity(), sj.position(), sj.velocity(), FOOTPRINT_RADIUS);
                ttc[i] = ttc[i].min(tt);
                ttc[j] = ttc[j].min(tt);
            }
        }
        for i in 0..n {
            safe[i] += safety_feature(ttc[i]);
        }
    }
    let h = horizon as f64;
    (0..n)
        .map(|i| {
            let (e, c) = players[i].eff_comf[profile[i]];
            FeatureVector::new(e / h, c / h, safe[i] / h)
        })
        .collect()
}

/// Game over the players' candidate sets with horizon rollout rewards.
/// Returns each player's chosen action index into the full action set.
fn play_game(players: &[PlayerRollouts], weights: &[RewardWeights], horizon: usize) -> (Vec<usize>, bool) {
    let dims: Vec<usize> = players.iter().map(|p| p.actions.len()).collect();
    let game = NormalFormGame::new(dims, |profile| {
        profile_features(players, profile, horizon)
            .iter()
            .zip(weights)
            .map(|(f, w)| w.dot(f))
            .collect()
    });
    let r = pure_nash(&game).expect("at most 6^3 profiles");
    let chosen = r.profile.iter().zip(players).map(|(&k, p)| p.actions[k]).collect();
    (chosen, r.approximate)
}

/// Nash action of `ego` before the safety filter. Index into `action_set()`.
pub fn hv_game_action(ego_id: u32, world: &WorldState, layout: &IntersectionLayout, cfg: &HvConfig, dt: f64) -> usize {
    let ego = world.get(ego_id).expect("ego must exist");
    let mut ids = vec![ego_id];
    ids.extend(interaction_set(ego_id, world, layout, cfg));
    // A driver holding the box expects crossers still outside not to speed up.
    let ego_holds = holds_box(ego, layout, cfg, dt);
    let players: Vec<PlayerRollouts> = ids
        .iter()
        .map(|&id| {
            let v = world.get(id).unwrap();
            let mut cands = candidate_actions(v.state.v, v.profile.v_target);
            if id != ego_id && ego_holds && layout.streams_conflict(ego.stream, v.stream) && !holds_box(v, layout, cfg, dt) {
                cands.retain(|&i| i != ACCELERATE_INDEX);
            }
            player_rollouts(v, layout.path(v.stream), cands, cfg.horizon, dt)
        })
        .collect();
    let weights: Vec<RewardWeights> = ids.iter().map(|&id| world.get(id).unwrap().profile.weights).collect();
    play_game(&players, &weights, cfg.horizon).0[0]
}

/// Arclength where a stream's first conflict zone begins.
fn box_entry(layout: &IntersectionLayout, stream: u32) -> Option<f64> {
    layout.spans(stream).iter().map(|z| z.s_in).min_by(f64::total_cmp)
}

/// Inside the box, or too close to stop before it: crossing traffic that
/// is still outside gives way.
pub fn holds_box(v: &Vehicle, layout: &IntersectionLayout, cfg: &HvConfig, dt: f64) -> bool {
    box_entry(layout, v.stream).is_some_and(|e| v.s >= e || e - cfg.yield_buffer - v.s < zones::stop_distance(v.state.v, dt))
}

/// Furthest arclength `ego` may reach and still be able to stop.
pub fn stop_target(ego: &Vehicle, world: &WorldState, layout: &IntersectionLayout, cfg: &HvConfig, dt: f64) -> f64 {
    let mut target = f64::INFINITY;
    if let Some(pred) = world.predecessor(ego) {
        let vp = (pred.state.v - crate::dynamics::MAX_BRAKE * dt).max(0.0);
        let pred_stop = pred.s + pred.state.v * dt + vp * vp / (2.0 * crate::dynamics::MAX_BRAKE);
        target = target.min(pred_stop - (2.0 * FOOTPRINT_RADIUS + cfg.follow_gap));
    }
    // Anything standing in the corridor ahead: blockers, and vehicles of
    // other streams that drifted or are crossing in front.
    let path = layout.path(ego.stream);
    let others = world.vehicles.iter().filter(|v| v.stream != ego.stream).map(|v| v.state.position());
    let blockers = layout.blockers.iter().map(|b| [b.x, b.y]);
    for p in blockers.chain(others) {
        let (so, lo) = project_to_path(path, p);
        let reach = 2.0 * FOOTPRINT_RADIUS + 0.3;
        if (lo - ego.l).abs() < reach && so > ego.s && crate::scenario::distance(path.frenet_point(so, lo), p) < 1e-3 {
            target = target.min(so - (2.0 * FOOTPRINT_RADIUS + cfg.follow_gap));
        }
    }
    // Crossing traffic is settled once, before the first zone: a driver
    // inside the box never stops for it, so waits cannot form a cycle.
    let Some(entry) = box_entry(layout, ego.stream) else {
        return target;
    };
    if ego.s >= entry || entry - cfg.yield_buffer - ego.s < zones::stop_distance(ego.state.v, dt) {
        return target;
    }
    let ego_key = zones::arrival_key(ego, layout);
    let must_yield = layout.spans(ego.stream).iter().any(|z| {
        world.on_stream(z.other_stream).any(|x| {
            let Some(xz) = layout.span(x.stream, z.conflict) else {
                return false;
            };
            if zones::cleared(x, xz) {
                return false;
            }
            if holds_box(x, layout, cfg, dt) {
                return true;
            }
            let xk = zones::arrival_key(x, layout);
            xk < ego_key || (xk == ego_key && x.entry_order < ego.entry_order)
        })
    });
    if must_yield {
        target = target.min(entry - cfg.yield_buffer);
    }
    target
}

/// Whether taking longitudinal acceleration `a` this frame keeps a full stop
/// before `target` possible.
pub fn can_stop(ego: &Vehicle, a: f64, target: f64, dt: f64) -> bool {
    let v_next = (ego.state.v + a * dt).max(0.0);
    let s_next = ego.s + ego.state.v * dt;
    target - s_next >= zones::stop_distance(v_next, dt)
}

/// Replace `choice` by the strongest longitudinal action that keeps the
/// driver able to stop for its predecessor and for crossing traffic with
/// right of way. Brake when nothing else is safe.
pub fn safety_filter(ego: &Vehicle, choice: usize, target: f64, dt: f64) -> usize {
    let u = action_set();
    if target.is_infinite() || can_stop(ego, u[choice].a, target, dt) {
        return choice;
    }
    for idx in [0usize, 2, 3] {
        if u[idx].a <= u[choice].a && can_stop(ego, u[idx].a, target, dt) {
            return idx;
        }
    }
    3
}

/// Worst lateral offset reached by taking `action` now, holding the heading
/// one more frame (the longitudinal filter may override the correction), then
/// steering back to the path heading at full yaw rate.
fn excursion(pose: &PathPose, action: &Action, dt: f64) -> f64 {
    let mut p = pose.step(action, dt);
    let mut worst = p.l.abs();
    p = p.step(&Action { a: 0.0, omega: 0.0 }, dt);
    worst = worst.max(p.l.abs());
    for _ in 0..64 {
        if p.psi.abs() < 1e-9 {
            break;
        }
        let w = -p.psi.signum() * crate::dynamics::MAX_YAW_RATE.min(p.psi.abs() / dt);
        p = p.step(&Action { a: 0.0, omega: w }, dt);
        worst = worst.max(p.l.abs());
    }
    worst
}

/// Keep the driver inside its lane: a choice whose excursion exceeds the
/// bound is swapped for the coasting or steering action that stays closest.
pub fn lane_filter(ego: &Vehicle, path: &ReferencePath, choice: usize, bound: f64, dt: f64) -> usize {
    let u = action_set();
    let pose = PathPose::from_state(&ego.state, path);
    let exc = excursion(&pose, &u[choice], dt);
    if exc <= bound {
        return choice;
    }
    let best = [0usize, 4, 5]
        .into_iter()
        .map(|i| (excursion(&pose, &u[i], dt), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .unwrap();
    if best.0 < exc {
        best.1
    } else {
        choice
    }
}

/// Action of HV `ego` for this frame.
pub fn hv_decide(ego_id: u32, world: &WorldState, layout: &IntersectionLayout, cfg: &HvConfig, dt: f64) -> Action {
    action_set()[hv_decide_index(ego_id, world, layout, cfg, dt)]
}

pub fn hv_decide_index(ego_id: u32, world: &WorldState, layout: &IntersectionLayout, cfg: &HvConfig, dt: f64) -> usize {
    let ego = world.get(ego_id).expect("ego must exist");
    let choice = hv_game_action(ego_id, world, layout, cfg, dt);
    let choice = lane_filter(ego, layout.path(ego.stream), choice, cfg.lane_bound, dt);
    let target = stop_target(ego, world, layout, cfg, dt);
    safety_filter(ego, choice, target, dt)
}
