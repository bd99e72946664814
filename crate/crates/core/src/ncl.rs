//! Cooperative CAV control. Every occupied stream receives a reasoning level
//! `k ∈ {0, 1, 2}`; each allocation is rolled out with the lattice planner
//! (level-k plans avoid the plans of all lower levels and treat the rest as
//! frozen) and scored by a cooperative progress objective.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dynamics::{normalize_angle, Action, Trajectory, VehicleState, MAX_BRAKE};
use crate::error::NclError;
use crate::features::{RewardWeights, FOOTPRINT_RADIUS};
use crate::hv::{DriverKind, DriverProfile};
use crate::lattice::{plan_with_pool, CandidatePool, KeepOut, Obstacle, ObstacleKind, PlanRequest, PlannerConfig};
use crate::scenario::{IntersectionLayout, Movement};
use crate::world::zones::{self, ZoneHistory};
use crate::world::{Vehicle, WorldState};

pub const MAX_LEVEL: u8 = 2;
/// Straight-equivalent distance of a turning group: `(d̄ + TURN_OFFSET) / TURN_SCALE`.
pub const TURN_SCALE: f64 = 1.44;
pub const TURN_OFFSET: f64 = 25.4;
pub const DBAR_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct KAllocation {
    pub assignment: BTreeMap<u32, u8>,
}

impl KAllocation {
    pub fn level(&self, stream: u32) -> Option<u8> {
        self.assignment.get(&stream).copied()
    }

    /// Levels ordered by stream id.
    pub fn as_vec(&self) -> Vec<u8> {
        self.assignment.values().copied().collect()
    }
}

/// All maps from `streams` to levels in which conflicting streams differ,
/// in lexicographic order of the level vector (streams ascending). When no
/// such map exists, the single allocation ranking streams by `arrival`.
pub fn enumerate_k_allocations(
    streams: &[u32],
    conflicts: impl Fn(u32, u32) -> bool,
    arrival: impl Fn(u32) -> f64,
) -> Vec<KAllocation> {
    let mut ids = streams.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    let levels = MAX_LEVEL as usize + 1;
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| conflicts(ids[i], ids[j]))
        .collect();
    let mut out = Vec::new();
    let mut digits = vec![0u8; n];
    'outer: loop {
        if edges.iter().all(|&(i, j)| digits[i] != digits[j]) {
            out.push(KAllocation {
                assignment: ids.iter().copied().zip(digits.iter().copied()).collect(),
            });
        }
        // Odometer with the first stream most significant.
        let mut i = n;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            if (digits[i] as usize) + 1 < levels {
                digits[i] += 1;
                digits[i + 1..].fill(0);
                break;
            }
        }
    }
    if out.is_empty() {
        let mut ranked = ids.clone();
        ranked.sort_by(|a, b| arrival(*a).total_cmp(&arrival(*b)).then(a.cmp(b)));
        out.push(KAllocation {
            assignment: ranked
                .iter()
                .enumerate()
                .map(|(r, &s)| (s, (r as u8).min(MAX_LEVEL)))
                .collect(),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Turning groups scored at their straight-equivalent distance.
    Normalized,
    /// Every group scored `1/d̄` (the CL variant).
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub allocation: KAllocation,
    pub value: f64,
    /// Stream → mean of its vehicles' average planned distance to go.
    pub per_group_dbar: BTreeMap<u32, f64>,
    /// Vehicle → (stream, average planned distance to go); one objective term each.
    pub per_vehicle_dbar: BTreeMap<u32, (u32, f64)>,
}

/// Objective term of one vehicle with average planned distance `dbar`.
pub fn group_contribution(dbar: f64, movement: Movement, kind: ObjectiveKind) -> f64 {
    let d = dbar.max(DBAR_FLOOR);
    match (kind, movement.is_turn()) {
        (ObjectiveKind::Normalized, true) => TURN_SCALE / (d + TURN_OFFSET),
        _ => 1.0 / d,
    }
}

fn movement_of(layout: &IntersectionLayout, stream: u32) -> Movement {
    layout.stream(stream).map(|t| t.movement).unwrap_or(Movement::Straight)
}

/// Sum of per-vehicle terms.
pub fn objective_report(
    allocation: &KAllocation,
    per_vehicle: BTreeMap<u32, (u32, f64)>,
    layout: &IntersectionLayout,
    kind: ObjectiveKind,
) -> ObjectiveReport {
    let value = per_vehicle
        .values()
        .map(|&(s, d)| group_contribution(d, movement_of(layout, s), kind))
        .sum();
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for &(s, d) in per_vehicle.values() {
        let e = acc.entry(s).or_default();
        e.0 += d;
        e.1 += 1;
    }
    ObjectiveReport {
        allocation: allocation.clone(),
        value,
        per_group_dbar: acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect(),
        per_vehicle_dbar: per_vehicle,
    }
}

/// Probability that the straight-going vehicle passes first, from the
/// turning vehicle's and the straight vehicle's distances to the conflict.
pub fn logistic_pass_probability(d_turn: f64, d_gs: f64) -> f64 {
    1.0 / (1.0 + (-(0.0925 * d_turn - 0.1332 * d_gs + 2.35)).exp())
}

/// A planned or predicted trajectory with its arclength series.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub stream: u32,
    pub trajectory: Trajectory,
    pub s: Vec<f64>,
}

impl PlannedPath {
    /// Mean remaining distance over frames `1..`.
    pub fn mean_distance_to_go(&self, length: f64) -> f64 {
        let n = self.s.len().saturating_sub(1).max(1);
        self.s.iter().skip(1).map(|s| (length - s).max(0.0)).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub allocation: KAllocation,
    /// CAV plans and HV predictions by vehicle id.
    pub paths: BTreeMap<u32, PlannedPath>,
}

fn vehicle_dbar(paths: &BTreeMap<u32, PlannedPath>, layout: &IntersectionLayout) -> BTreeMap<u32, (u32, f64)> {
    paths
        .iter()
        .map(|(&id, p)| (id, (p.stream, p.mean_distance_to_go(layout.path(p.stream).length()))))
        .collect()
}

pub fn normalized_objective(rollout: &Rollout, layout: &IntersectionLayout) -> ObjectiveReport {
    objective_report(&rollout.allocation, vehicle_dbar(&rollout.paths, layout), layout, ObjectiveKind::Normalized)
}

pub fn cl_objective(rollout: &Rollout, layout: &IntersectionLayout) -> ObjectiveReport {
    objective_report(&rollout.allocation, vehicle_dbar(&rollout.paths, layout), layout, ObjectiveKind::Plain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NclConfig {
    pub objective: ObjectiveKind,
    pub planner: PlannerConfig,
    pub weights: RewardWeights,
    pub v_desired: f64,
    /// Minimum time between a crossing vehicle leaving a zone and the ego entering it.
    pub pet_gap: f64,
}

impl Default for NclConfig {
    fn default() -> Self {
        let normal = DriverProfile::preset(DriverKind::Normal);
        NclConfig {
            objective: ObjectiveKind::Normalized,
            planner: PlannerConfig::default(),
            weights: normal.weights,
            v_desired: normal.v_target,
            pet_gap: 1.5,
        }
    }
}

/// Path-following prediction decelerating at `decel` (0 for constant speed).
pub fn path_prediction(v: &Vehicle, layout: &IntersectionLayout, horizon: usize, dt: f64, decel: f64) -> PlannedPath {
    let path = layout.path(v.stream);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut s = Vec::with_capacity(horizon + 1);
    states.push(v.state);
    s.push(v.s);
    let (mut pos, mut speed) = (v.s, v.state.v);
    for _ in 0..horizon {
        let next = (speed - decel * dt).max(0.0);
        pos += speed * dt;
        speed = next;
        let p = path.frenet_point(pos, v.l);
        let (_, h) = path.pose_at(pos);
        states.push(VehicleState::new(p[0], p[1], speed, h));
        s.push(pos);
    }
    PlannedPath {
        stream: v.stream,
        trajectory: Trajectory { t0: 0.0, dt, states },
        s,
    }
}

/// Neither vehicle has cleared a zone their streams share.
fn relevant_pair(a: &Vehicle, b: &Vehicle, layout: &IntersectionLayout) -> bool {
    layout.spans(a.stream).iter().any(|za| {
        za.other_stream == b.stream
            && a.s < za.s_out
            && layout.span(b.stream, za.conflict).is_some_and(|zb| b.s < zb.s_out)
    })
}

fn ahead(a: &Vehicle, ego: &Vehicle) -> bool {
    a.s > ego.s || (a.s == ego.s && a.entry_order < ego.entry_order)
}

fn occupancy_window(traj: &Trajectory, conflict: usize, layout: &IntersectionLayout, gap_frames: usize) -> Option<(usize, usize)> {
    let mut first = None;
    let mut last = 0;
    for (k, st) in traj.states.iter().enumerate() {
        if zones::occupies(st.position(), conflict, layout) {
            first.get_or_insert(k);
            last = k;
        }
    }
    let first = first?;
    let to = if last + 1 == traj.states.len() { usize::MAX } else { last + gap_frames };
    Some((first.saturating_sub(gap_frames), to))
}

type MemoKey = (u32, Vec<(u32, usize)>);

/// Per-frame planning state shared by every allocation.
pub struct RolloutContext<'a> {
    world: &'a WorldState,
    layout: &'a IntersectionLayout,
    history: &'a ZoneHistory,
    cfg: &'a NclConfig,
    dt: f64,
    horizon: usize,
    gap_frames: usize,
    hv_paths: BTreeMap<u32, PlannedPath>,
    hv_braking: BTreeMap<u32, PlannedPath>,
    /// Constant-speed predictions of CAVs that share no open conflict with the ego.
    coast: BTreeMap<u32, PlannedPath>,
    pools: BTreeMap<u32, CandidatePool>,
    arena: Vec<PlannedPath>,
    memo: HashMap<MemoKey, Result<usize, ()>>,
}

impl<'a> RolloutContext<'a> {
    pub fn new(world: &'a WorldState, layout: &'a IntersectionLayout, history: &'a ZoneHistory, cfg: &'a NclConfig, dt: f64) -> Self {
        let horizon = cfg.planner.horizon;
        let mut hv_paths = BTreeMap::new();
        let mut hv_braking = BTreeMap::new();
        let mut coast = BTreeMap::new();
        for v in &world.vehicles {
            if v.is_cav() {
                coast.insert(v.id, path_prediction(v, layout, horizon, dt, 0.0));
            } else {
                hv_paths.insert(v.id, path_prediction(v, layout, horizon, dt, 0.0));
                hv_braking.insert(v.id, path_prediction(v, layout, horizon, dt, MAX_BRAKE));
            }
        }
        RolloutContext {
            world,
            layout,
            history,
            cfg,
            dt,
            horizon,
            gap_frames: (cfg.pet_gap / dt).ceil() as usize,
            hv_paths,
            hv_braking,
            coast,
            pools: BTreeMap::new(),
            arena: Vec::new(),
            memo: HashMap::new(),
        }
    }

    /// Number of distinct vehicle plans computed so far.
    pub fn plans_computed(&self) -> usize {
        self.arena.len()
    }

    fn obstacle(id: u32, kind: ObstacleKind, path: &PlannedPath) -> Obstacle {
        Obstacle {
            id,
            kind,
            trajectory: path.trajectory.clone(),
        }
    }

    fn keep_out(&self, ego: &Vehicle, level: u8, alloc: &KAllocation, plans: &BTreeMap<u32, usize>) -> Vec<KeepOut> {
        let mut out = Vec::new();
        let now = self.world.time;
        let pos = ego.state.position();
        for z in self.layout.spans(ego.stream) {
            if ego.s >= z.disc_out || zones::occupies(pos, z.conflict, self.layout) {
                continue;
            }
            // Too late to stop short of the disc: keep-out would only force a stop inside it.
            if zones::braking_enters(ego, z.conflict, self.layout, self.dt) {
                continue;
            }
            let cp = &self.layout.conflict_points[z.conflict];
            let zone = |from: usize, to: usize| KeepOut {
                center: cp.position,
                reach: cp.zone_radius + FOOTPRINT_RADIUS,
                from,
                to,
            };
            if let Some(t) = self.history.last_occupied(z.conflict, z.other_stream) {
                let left = t + self.cfg.pet_gap - now;
                if left > 0.0 {
                    out.push(zone(0, (left / self.dt).ceil() as usize));
                }
            }
            for v in self.world.on_stream(z.other_stream) {
                let Some(vz) = self.layout.span(v.stream, z.conflict) else {
                    continue;
                };
                let here = zones::occupies(v.state.position(), z.conflict, self.layout);
                if v.s >= vz.disc_out && !here {
                    continue;
                }
                let predicted;
                let traj = if !v.is_cav() {
                    &self.hv_paths[&v.id].trajectory
                } else if alloc.level(v.stream).is_some_and(|k| k < level) {
                    &self.arena[plans[&v.id]].trajectory
                } else if here {
                    out.push(zone(0, usize::MAX));
                    continue;
                } else if zones::braking_enters(v, z.conflict, self.layout, self.dt) {
                    predicted = path_prediction(v, self.layout, self.horizon, self.dt, 0.0);
                    &predicted.trajectory
                } else {
                    continue;
                };
                if let Some((from, to)) = occupancy_window(traj, z.conflict, self.layout, self.gap_frames) {
                    out.push(zone(from, to));
                }
            }
        }
        out
    }

    /// Plan of `ego` at `level` given the plans already made in this rollout.
    fn plan_vehicle(&mut self, ego: &Vehicle, level: u8, alloc: &KAllocation, plans: &BTreeMap<u32, usize>) -> Result<usize, ()> {
        let mut deps: Vec<(u32, usize)> = Vec::new();
        let mut obstacles = Vec::new();
        for v in &self.world.vehicles {
            if v.id == ego.id {
                continue;
            }
            if v.stream == ego.stream {
                if !ahead(v, ego) {
                    continue;
                }
                if v.is_cav() {
                    let id = plans[&v.id];
                    deps.push((v.id, id));
                    obstacles.push(Self::obstacle(v.id, ObstacleKind::Planned, &self.arena[id]));
                } else {
                    obstacles.push(Self::obstacle(v.id, ObstacleKind::Planned, &self.hv_braking[&v.id]));
                }
                continue;
            }
            if !v.is_cav() {
                obstacles.push(Self::obstacle(v.id, ObstacleKind::Predicted, &self.hv_paths[&v.id]));
                continue;
            }
            if !relevant_pair(ego, v, self.layout) {
                // No right of way left to settle: assume it keeps its speed.
                obstacles.push(Self::obstacle(v.id, ObstacleKind::Predicted, &self.coast[&v.id]));
                continue;
            }
            if alloc.level(v.stream).is_some_and(|k| k < level) {
                let id = plans[&v.id];
                deps.push((v.id, id));
                obstacles.push(Self::obstacle(v.id, ObstacleKind::Planned, &self.arena[id]));
            } else {
                obstacles.push(Obstacle::fixed(v.id, v.state.position()));
            }
        }
        let key = (ego.id, deps);
        if let Some(r) = self.memo.get(&key) {
            return *r;
        }
        for (i, b) in self.layout.blockers.iter().enumerate() {
            obstacles.push(Obstacle::fixed(u32::MAX - i as u32, [b.x, b.y]));
        }
        // Keep-out only reads the planned trajectories listed in `deps`.
        let keep_out = self.keep_out(ego, level, alloc, plans);
        let lead = self.world.predecessor(ego).map(|p| {
            if p.is_cav() {
                self.arena[plans[&p.id]].s.clone()
            } else {
                self.hv_braking[&p.id].s.clone()
            }
        });
        let path = self.layout.path(ego.stream);
        let req = PlanRequest {
            start: ego.state,
            path,
            obstacles,
            keep_out,
            lead,
            weights: self.cfg.weights,
            v_desired: self.cfg.v_desired,
            horizon: self.horizon,
            dt: self.dt,
            margin: self.cfg.planner.margin,
        };
        let pool = self.pools.entry(ego.id).or_default();
        let result = plan_with_pool(&req, &self.cfg.planner, pool)
            .map(|p| {
                self.arena.push(PlannedPath {
                    stream: ego.stream,
                    trajectory: p.trajectory,
                    s: p.s,
                });
                self.arena.len() - 1
            })
            .map_err(|_| ());
        self.memo.insert(key, result);
        result
    }

    /// Arena index of every CAV plan under `alloc`, or the first vehicle without a plan.
    fn rollout_ids(&mut self, alloc: &KAllocation) -> Result<BTreeMap<u32, usize>, u32> {
        let world = self.world;
        let mut order: Vec<(u8, u32, &Vehicle)> = world
            .vehicles
            .iter()
            .filter(|v| v.is_cav())
            .map(|v| (alloc.level(v.stream).unwrap_or(0), v.stream, v))
            .collect();
        order.sort_by(|a, b| {
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then(b.2.s.total_cmp(&a.2.s))
                .then(a.2.entry_order.cmp(&b.2.entry_order))
        });
        let mut plans = BTreeMap::new();
        for (level, _, v) in order {
            match self.plan_vehicle(v, level, alloc, &plans) {
                Ok(id) => {
                    plans.insert(v.id, id);
                }
                Err(()) => return Err(v.id),
            }
        }
        Ok(plans)
    }

    fn paths(&self, ids: &BTreeMap<u32, usize>) -> BTreeMap<u32, PlannedPath> {
        let mut out: BTreeMap<u32, PlannedPath> = ids.iter().map(|(&v, &i)| (v, self.arena[i].clone())).collect();
        out.extend(self.hv_paths.iter().map(|(&k, p)| (k, p.clone())));
        out
    }

    fn dbar(&self, ids: &BTreeMap<u32, usize>) -> BTreeMap<u32, (u32, f64)> {
        let cav = ids.iter().map(|(&v, &i)| (v, &self.arena[i]));
        let hv = self.hv_paths.iter().map(|(&v, p)| (v, p));
        cav.chain(hv)
            .map(|(v, p)| (v, (p.stream, p.mean_distance_to_go(self.layout.path(p.stream).length()))))
            .collect()
    }

    pub fn rollout(&mut self, alloc: &KAllocation) -> Result<Rollout, NclError> {
        let ids = self.rollout_ids(alloc).map_err(|vehicle| NclError::NoSolution { vehicle })?;
        Ok(Rollout {
            allocation: alloc.clone(),
            paths: self.paths(&ids),
        })
    }
}

/// Plans of every CAV (and predictions of every HV) under one allocation.
pub fn level_k_rollout(
    allocation: &KAllocation,
    world: &WorldState,
    layout: &IntersectionLayout,
    history: &ZoneHistory,
    cfg: &NclConfig,
    dt: f64,
) -> Result<Rollout, NclError> {
    RolloutContext::new(world, layout, history, cfg, dt).rollout(allocation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavCommand {
    pub next: VehicleState,
    pub action: Action,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NclDecision {
    pub report: ObjectiveReport,
    pub commands: BTreeMap<u32, CavCommand>,
    pub allocations_evaluated: usize,
}

/// Streams with at least one vehicle, and the allocations over them.
pub fn allocations_for(world: &WorldState, layout: &IntersectionLayout) -> Vec<KAllocation> {
    let streams = world.occupied_streams();
    enumerate_k_allocations(
        &streams,
        |a, b| layout.streams_conflict(a, b),
        |s| {
            world
                .on_stream(s)
                .map(|v| zones::arrival_key(v, layout))
                .fold(f64::INFINITY, f64::min)
        },
    )
}

/// Effective discrete-time action between two consecutive states.
pub fn implied_action(from: &VehicleState, to: &VehicleState, dt: f64) -> Action {
    Action {
        a: (to.v - from.v) / dt,
        omega: normalize_angle(to.gamma - from.gamma) / dt,
    }
}

/// Best allocation (ties to the lexicographically smallest level vector)
/// and the first planned step of every CAV under it.
pub fn ncl_decide(
    world: &WorldState,
    layout: &IntersectionLayout,
    history: &ZoneHistory,
    cfg: &NclConfig,
    dt: f64,
) -> Result<NclDecision, NclError> {
    let allocations = allocations_for(world, layout);
    let mut ctx = RolloutContext::new(world, layout, history, cfg, dt);
    let mut best: Option<(ObjectiveReport, BTreeMap<u32, usize>)> = None;
    for alloc in &allocations {
        let Ok(ids) = ctx.rollout_ids(alloc) else {
            continue;
        };
        let r = objective_report(alloc, ctx.dbar(&ids), layout, cfg.objective);
        if best.as_ref().is_none_or(|(b, _)| r.value > b.value) {
            best = Some((r, ids));
        }
    }
    let (report, ids) = best.ok_or(NclError::AllAllocationsInfeasible)?;
    let commands = ids
        .iter()
        .map(|(&id, &pi)| {
            let v = world.get(id).unwrap();
            let next = ctx.arena[pi].trajectory.states[1];
            (
                id,
                CavCommand {
                    next,
                    action: implied_action(&v.state, &next, dt),
                    level: report.allocation.level(v.stream).unwrap_or(0),
                },
            )
        })
        .collect();
    Ok(NclDecision {
        report,
        commands,
        allocations_evaluated: allocations.len(),
    })
}
