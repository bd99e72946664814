//! Frame-stepped simulation: spawn, decide on the frozen state, record,
//! commit, despawn, then safety checks.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::baselines::{batch_controller, fcfs_controller, BaselineConfig, ReservationBook};
use crate::dynamics::{action_set, Action, VehicleState};
use crate::error::{NclError, SimError};
use crate::features::FOOTPRINT_RADIUS;
use crate::hv::{hv_decide_index, path_step, DriverKind, DriverProfile, HvConfig};
use crate::ncl::{ncl_decide, NclConfig, ObjectiveKind};
use crate::scenario::{build_intersection, distance, project_to_path, IntersectionLayout, ScenarioConfig};
use crate::world::zones::{self, ZoneHistory};
use crate::world::{Vehicle, VehicleClass, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ncl,
    Cl,
    Fcfs,
    Batch,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ncl => "ncl",
            Method::Cl => "cl",
            Method::Fcfs => "fcfs",
            Method::Batch => "batch",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ncl" => Ok(Method::Ncl),
            "cl" => Ok(Method::Cl),
            "fcfs" => Ok(Method::Fcfs),
            "batch" => Ok(Method::Batch),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// HV driver-type shares, aggressive / normal / conservative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvComposition {
    pub aggressive: f64,
    pub normal: f64,
    pub conservative: f64,
}

impl Default for HvComposition {
    fn default() -> Self {
        HvComposition {
            aggressive: 0.13,
            normal: 0.41,
            conservative: 0.46,
        }
    }
}

impl HvComposition {
    pub fn new(aggressive: f64, normal: f64, conservative: f64) -> Self {
        HvComposition {
            aggressive,
            normal,
            conservative,
        }
    }

    /// Driver type for a uniform draw in [0, 1).
    pub fn pick(&self, u: f64) -> DriverKind {
        if u < self.aggressive {
            DriverKind::Aggressive
        } else if u < self.aggressive + self.normal {
            DriverKind::Normal
        } else {
            DriverKind::Conservative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub method: Method,
    pub seed: u64,
    pub frames: u64,
    pub dt: f64,
    /// Arrivals per stream per hour.
    pub lane_volume: f64,
    /// Share of CAVs among arrivals.
    pub rop: f64,
    pub hv_composition: HvComposition,
    /// Lower bound of the shifted-exponential headway, seconds.
    pub min_headway: f64,
    /// No spawn while any vehicle is this close to the spawn point, meters.
    pub spawn_clearance: f64,
    pub deadlock_frames: u64,
    pub deadlock_speed: f64,
    pub scenario: ScenarioConfig,
    pub hv: HvConfig,
    pub ncl: NclConfig,
    pub baseline: BaselineConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            method: Method::Ncl,
            seed: 0,
            frames: 1200,
            dt: 0.1,
            lane_volume: 300.0,
            rop: 1.0,
            hv_composition: HvComposition::default(),
            min_headway: 2.0,
            spawn_clearance: 8.0,
            deadlock_frames: 100,
            deadlock_speed: 0.05,
            scenario: ScenarioConfig::default(),
            hv: HvConfig::default(),
            ncl: NclConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let c = &self.hv_composition;
        let shares = [c.aggressive, c.normal, c.conservative];
        if shares.iter().any(|p| !p.is_finite() || *p < 0.0) || (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("hv_composition must be non-negative and sum to 1, got {shares:?}"));
        }
        if !(0.0..=1.0).contains(&self.rop) {
            return bad(format!("rop must lie in [0, 1], got {}", self.rop));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.lane_volume.is_finite() && self.lane_volume >= 0.0) {
            return bad(format!("lane_volume must be non-negative, got {}", self.lane_volume));
        }
        if !(self.min_headway.is_finite() && self.min_headway >= 0.0) {
            return bad(format!("min_headway must be non-negative, got {}", self.min_headway));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub class: VehicleClass,
    pub kind: DriverKind,
}

/// Seeded arrivals per stream up to the end of the run.
pub fn spawn_schedule(config: &SimConfig, streams: &[u32]) -> BTreeMap<u32, Vec<Arrival>> {
    let horizon = config.frames as f64 * config.dt;
    let mut out = BTreeMap::new();
    for &stream in streams {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream as u64 + 1);
        let mut list = Vec::new();
        if config.lane_volume > 0.0 {
            let mean = 3600.0 / config.lane_volume;
            let excess = (mean - config.min_headway).max(0.0);
            let exp = (excess > 0.0).then(|| Exp::new(1.0 / excess).expect("positive rate"));
            let mut t = 0.0;
            loop {
                t += config.min_headway + exp.as_ref().map_or(0.0, |e| e.sample(&mut rng));
                if t >= horizon {
                    break;
                }
                let u: f64 = rng.random();
                let (class, kind) = if u < config.rop {
                    (VehicleClass::Cav, DriverKind::Normal)
                } else {
                    let w = (u - config.rop) / (1.0 - config.rop);
                    (VehicleClass::Hv, config.hv_composition.pick(w))
                };
                list.push(Arrival { time: t, class, kind });
            }
        }
        out.insert(stream, list);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: u64,
    pub time: f64,
    pub vehicle_id: u32,
    pub class: VehicleClass,
    pub kind: DriverKind,
    pub stream: u32,
    pub state: VehicleState,
    pub action: Action,
    pub k_level: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleInfo {
    pub id: u32,
    pub class: VehicleClass,
    pub kind: DriverKind,
    pub stream: u32,
    pub v_target: f64,
    pub spawn_time: f64,
    pub exit_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub dt: f64,
    pub frames_run: u64,
    pub records: Vec<FrameRecord>,
    pub vehicles: BTreeMap<u32, VehicleInfo>,
    pub deadlock: bool,
    pub collisions: Vec<(u64, u32, u32)>,
    /// Arrivals still waiting for a free spawn point at the end.
    pub unspawned: usize,
    /// World the failing frame decided on, when the run stopped early.
    pub failure_state: Option<WorldState>,
}

impl SimLog {
    pub fn spawned(&self) -> usize {
        self.vehicles.len()
    }

    pub fn exited(&self) -> usize {
        self.vehicles.values().filter(|v| v.exit_time.is_some()).count()
    }
}

fn profile_for(class: VehicleClass, kind: DriverKind) -> DriverProfile {
    match class {
        VehicleClass::Cav => DriverProfile::preset(DriverKind::Normal),
        VehicleClass::Hv => DriverProfile::preset(kind),
    }
}

struct Engine<'a> {
    config: &'a SimConfig,
    layout: IntersectionLayout,
    world: WorldState,
    history: ZoneHistory,
    book: ReservationBook,
    pending: BTreeMap<u32, VecDeque<Arrival>>,
    next_id: u32,
    still_frames: u64,
    log: SimLog,
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, layout: IntersectionLayout) -> Self {
        let ids: Vec<u32> = layout.streams.iter().map(|s| s.id).collect();
        let pending = spawn_schedule(config, &ids)
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();
        Engine {
            config,
            layout,
            world: WorldState::default(),
            history: ZoneHistory::default(),
            book: ReservationBook::new(),
            pending,
            next_id: 1,
            still_frames: 0,
            log: SimLog {
                dt: config.dt,
                ..SimLog::default()
            },
        }
    }

    /// The entrant must clear the spawn point and be able to stop behind its predecessor.
    fn spawn_blocked(&self, stream: u32, v_init: f64) -> bool {
        let start = self.layout.path(stream).start();
        if self
            .world
            .vehicles
            .iter()
            .any(|v| distance(v.state.position(), start) < self.config.spawn_clearance)
        {
            return true;
        }
        let dt = self.config.dt;
        self.world.on_stream(stream).any(|p| {
            let room = p.s + zones::stop_distance(p.state.v, dt) - 2.0 * FOOTPRINT_RADIUS - self.config.hv.follow_gap;
            room < zones::stop_distance(v_init, dt)
        })
    }

    fn spawn(&mut self) {
        let now = self.world.time;
        let streams: Vec<u32> = self.pending.keys().copied().collect();
        for stream in streams {
            let Some(next) = self.pending[&stream].front().copied() else {
                continue;
            };
            if next.time > now + 1e-9 {
                continue;
            }
            let profile = profile_for(next.class, next.kind);
            if self.spawn_blocked(stream, profile.v_init) {
                continue;
            }
            self.pending.get_mut(&stream).unwrap().pop_front();
            let path = self.layout.path(stream);
            let (p, heading) = path.pose_at(0.0);
            let id = self.next_id;
            self.next_id += 1;
            let v = Vehicle {
                id,
                class: next.class,
                stream,
                profile,
                state: VehicleState::new(p[0], p[1], profile.v_init, heading),
                s: 0.0,
                l: 0.0,
                spawn_time: now,
                entry_order: id as u64,
            };
            self.book.register(&v, &self.config.baseline);
            self.log.vehicles.insert(
                id,
                VehicleInfo {
                    id,
                    class: next.class,
                    kind: profile.kind,
                    stream,
                    v_target: profile.v_target,
                    spawn_time: now,
                    exit_time: None,
                },
            );
            self.world.vehicles.push(v);
        }
    }

    /// Next state, action and level for every vehicle, from the frozen world.
    fn decide(&mut self) -> Result<BTreeMap<u32, (VehicleState, Action, Option<u8>)>, SimError> {
        let cfg = self.config;
        let dt = cfg.dt;
        let u = action_set();
        let mut out = BTreeMap::new();
        for v in self.world.vehicles.iter().filter(|v| !v.is_cav()) {
            let idx = hv_decide_index(v.id, &self.world, &self.layout, &cfg.hv, dt);
            let (next, _, _) = path_step(&v.state, self.layout.path(v.stream), &u[idx], dt);
            out.insert(v.id, (next, u[idx], None));
        }
        if !self.world.vehicles.iter().any(|v| v.is_cav()) {
            return Ok(out);
        }
        match cfg.method {
            Method::Ncl | Method::Cl => {
                let mut ncfg = cfg.ncl.clone();
                if cfg.method == Method::Cl {
                    ncfg.objective = ObjectiveKind::Plain;
                }
                match ncl_decide(&self.world, &self.layout, &self.history, &ncfg, dt) {
                    Ok(d) => {
                        for (id, c) in d.commands {
                            out.insert(id, (c.next, c.action, Some(c.level)));
                        }
                    }
                    Err(e) => {
                        self.log.deadlock = matches!(e, NclError::AllAllocationsInfeasible);
                        return Err(SimError::NoSolution {
                            frame: self.world.frame,
                            detail: e.to_string(),
                        });
                    }
                }
            }
            Method::Fcfs | Method::Batch => {
                let cmds = if cfg.method == Method::Fcfs {
                    fcfs_controller(&self.world, &self.layout, &cfg.baseline, dt)
                } else {
                    batch_controller(&self.world, &self.layout, &self.book, &cfg.baseline, dt)
                };
                for (id, c) in cmds {
                    self.book.set_granted(id, c.granted);
                    out.insert(id, (c.next, c.action, None));
                }
            }
        }
        Ok(out)
    }

    fn record(&mut self, decisions: &BTreeMap<u32, (VehicleState, Action, Option<u8>)>) {
        for v in &self.world.vehicles {
            let (_, action, k) = decisions[&v.id];
            self.log.records.push(FrameRecord {
                frame: self.world.frame,
                time: self.world.time,
                vehicle_id: v.id,
                class: v.class,
                kind: v.profile.kind,
                stream: v.stream,
                state: v.state,
                action,
                k_level: k,
            });
        }
    }

    fn commit(&mut self, decisions: &BTreeMap<u32, (VehicleState, Action, Option<u8>)>) {
        let exit_time = self.world.time + self.config.dt;
        for v in &mut self.world.vehicles {
            v.state = decisions[&v.id].0;
            let (s, l) = project_to_path(self.layout.path(v.stream), v.state.position());
            v.s = s;
            v.l = l;
        }
        let layout = &self.layout;
        let log = &mut self.log;
        self.world.vehicles.retain(|v| {
            let done = v.s >= layout.path(v.stream).length() - 1e-9;
            if done {
                log.vehicles.get_mut(&v.id).unwrap().exit_time = Some(exit_time);
            }
            !done
        });
    }

    fn check_collisions(&mut self) -> Result<(), SimError> {
        let limit = 2.0 * FOOTPRINT_RADIUS;
        let vs = &self.world.vehicles;
        for i in 0..vs.len() {
            let pi = vs[i].state.position();
            for vj in &vs[i + 1..] {
                if distance(pi, vj.state.position()) < limit {
                    return Err(self.collision(vs[i].id, vj.id));
                }
            }
            for (k, b) in self.layout.blockers.iter().enumerate() {
                if distance(pi, [b.x, b.y]) < limit {
                    return Err(self.collision(vs[i].id, u32::MAX - k as u32));
                }
            }
        }
        Ok(())
    }

    fn collision(&self, a: u32, b: u32) -> SimError {
        SimError::CollisionDetected {
            frame: self.world.frame,
            a,
            b,
        }
    }

    fn check_deadlock(&mut self) -> Result<(), SimError> {
        let all_still =
            !self.world.vehicles.is_empty() && self.world.vehicles.iter().all(|v| v.state.v < self.config.deadlock_speed);
        self.still_frames = if all_still { self.still_frames + 1 } else { 0 };
        if self.still_frames >= self.config.deadlock_frames {
            self.log.deadlock = true;
            return Err(SimError::DeadlockDetected { frame: self.world.frame });
        }
        Ok(())
    }

    fn frame(&mut self, frame: u64) -> Result<(), SimError> {
        self.world.frame = frame;
        self.world.time = frame as f64 * self.config.dt;
        self.spawn();
        self.world.vehicles.sort_by_key(|v| v.id);
        let decisions = self.decide()?;
        self.record(&decisions);
        self.commit(&decisions);
        self.log.frames_run = frame + 1;
        if let Err(e) = self.check_collisions() {
            if let SimError::CollisionDetected { frame, a, b } = e {
                self.log.collisions.push((frame, a, b));
            }
            return Err(e);
        }
        self.check_deadlock()?;
        self.world.time = (frame + 1) as f64 * self.config.dt;
        self.history.record(&self.world, &self.layout);
        Ok(())
    }
}

/// Run the configured scenario. The log is returned even when the run
/// stops early; it then covers the frames up to the failure.
pub fn run_with_log(config: &SimConfig) -> (SimLog, Option<SimError>) {
    if let Err(e) = config.validate() {
        return (SimLog::default(), Some(e));
    }
    let layout = match build_intersection(&config.scenario) {
        Ok(l) => l,
        Err(e) => return (SimLog::default(), Some(e.into())),
    };
    let mut engine = Engine::new(config, layout);
    for frame in 0..config.frames {
        if let Err(e) = engine.frame(frame) {
            engine.log.failure_state = Some(engine.world.clone());
            engine.log.unspawned = engine.pending.values().map(|q| q.len()).sum();
            return (engine.log, Some(e));
        }
    }
    engine.log.unspawned = engine.pending.values().map(|q| q.len()).sum();
    (engine.log, None)
}

pub fn run(config: &SimConfig) -> Result<SimLog, SimError> {
    match run_with_log(config) {
        (log, None) => Ok(log),
        (_, Some(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn short(method: Method, rop: f64, seed: u64) -> SimConfig {
        SimConfig {
            method,
            rop,
            seed,
            frames: 300,
            lane_volume: 400.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = SimConfig::default();
        c.hv_composition = HvComposition::new(0.5, 0.5, 0.5);
        assert!(matches!(run(&c), Err(SimError::InvalidConfig(_))));
        let c = SimConfig {
            rop: 1.5,
            ..SimConfig::default()
        };
        assert!(matches!(run(&c), Err(SimError::InvalidConfig(_))));
        let c = SimConfig {
            dt: 0.0,
            ..SimConfig::default()
        };
        assert!(matches!(run(&c), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn schedule_respects_headway_and_rate() {
        let c = SimConfig {
            frames: 360_000,
            lane_volume: 300.0,
            rop: 0.5,
            ..SimConfig::default()
        };
        let s = spawn_schedule(&c, &[0, 1]);
        for list in s.values() {
            for w in list.windows(2) {
                assert!(w[1].time - w[0].time >= c.min_headway - 1e-9);
            }
            let rate = list.len() as f64 / 10.0;
            assert!((rate - 300.0).abs() < 15.0, "{rate}");
            let cav = list.iter().filter(|a| a.class == VehicleClass::Cav).count() as f64 / list.len() as f64;
            assert!((cav - 0.5).abs() < 0.05);
        }
        assert_ne!(s[&0][0].time, s[&1][0].time, "streams draw independently");
    }

    #[test]
    fn class_draw_follows_composition() {
        let c = SimConfig {
            frames: 720_000,
            rop: 0.0,
            hv_composition: HvComposition::new(0.2, 0.3, 0.5),
            ..SimConfig::default()
        };
        let s = spawn_schedule(&c, &[0]);
        let n = s[&0].len() as f64;
        let share = |k| s[&0].iter().filter(|a| a.kind == k).count() as f64 / n;
        assert!((share(DriverKind::Aggressive) - 0.2).abs() < 0.03);
        assert!((share(DriverKind::Normal) - 0.3).abs() < 0.03);
        assert!((share(DriverKind::Conservative) - 0.5).abs() < 0.03);
    }

    #[test]
    fn runs_are_reproducible() {
        let a = run(&short(Method::Fcfs, 0.5, 7)).unwrap();
        let b = run(&short(Method::Fcfs, 0.5, 7)).unwrap();
        assert_eq!(a, b);
        let c = run(&short(Method::Fcfs, 0.5, 8)).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn empty_demand_runs_clean() {
        let c = SimConfig {
            lane_volume: 0.0,
            frames: 50,
            ..SimConfig::default()
        };
        let log = run(&c).unwrap();
        assert!(log.records.is_empty() && log.vehicles.is_empty());
    }

    #[test]
    fn blocked_scenario_fails_with_partial_log() {
        // A blocker 4 m past the stream 0 spawn point: no stop clears it.
        let mut c = short(Method::Ncl, 1.0, 3);
        c.scenario.streams.retain(|s| s.id <= 1);
        let layout = build_intersection(&c.scenario).unwrap();
        let (p, _) = layout.path(0).pose_at(4.0);
        c.scenario.blockers.push(crate::scenario::Blocker { x: p[0], y: p[1] });
        let (log, err) = run_with_log(&c);
        assert!(matches!(err, Some(SimError::NoSolution { .. })), "{err:?}");
        assert!(log.deadlock);
        assert!(!log.records.is_empty(), "stream 1 traffic is logged before the failure");
        assert_eq!(log.frames_run, log.records.iter().map(|r| r.frame + 1).max().unwrap());
        assert!(log.failure_state.is_some());
    }

    #[test]
    fn standstill_is_a_deadlock() {
        // Single stream with a blocker mid-approach: the queue stops behind it.
        let mut c = short(Method::Fcfs, 1.0, 1);
        c.frames = 600;
        c.scenario.streams.retain(|s| s.id == 0);
        let layout = build_intersection(&c.scenario).unwrap();
        let (p, _) = layout.path(0).pose_at(30.0);
        c.scenario.blockers.push(crate::scenario::Blocker { x: p[0], y: p[1] });
        let (log, err) = run_with_log(&c);
        assert!(matches!(err, Some(SimError::DeadlockDetected { .. })), "{err:?}");
        assert!(log.deadlock);
    }

    fn check_log(log: &SimLog) {
        // Conservation: every spawned vehicle either exited or is still recorded in the last frame.
        let last = log.records.iter().map(|r| r.frame).max().unwrap_or(0);
        let present: std::collections::BTreeSet<u32> =
            log.records.iter().filter(|r| r.frame == last).map(|r| r.vehicle_id).collect();
        for (id, info) in &log.vehicles {
            assert!(info.exit_time.is_some() || present.contains(id), "vehicle {id} vanished");
        }
        for r in &log.records {
            assert!(r.state.v >= 0.0);
        }
    }

    #[test]
    fn fcfs_and_batch_run_collision_free() {
        for m in [Method::Fcfs, Method::Batch] {
            let log = run(&short(m, 1.0, 11)).unwrap();
            assert!(log.exited() > 0);
            check_log(&log);
        }
    }

    #[test]
    fn ncl_runs_collision_free() {
        let log = run(&short(Method::Ncl, 1.0, 5)).unwrap();
        assert!(log.exited() > 0);
        check_log(&log);
        assert!(log.records.iter().all(|r| r.k_level.is_some()));
    }

    #[test]
    fn mixed_traffic_runs() {
        for m in [Method::Ncl, Method::Fcfs] {
            let log = run(&short(m, 0.5, 2)).unwrap();
            check_log(&log);
            assert!(log.records.iter().any(|r| r.class == VehicleClass::Hv));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn conservation_and_safety(seed in 0u64..1000, rop in 0.0f64..=1.0) {
            let c = SimConfig { frames: 200, ..short(Method::Fcfs, rop, seed) };
            let log = run(&c).unwrap();
            check_log(&log);
            let mut by_frame: BTreeMap<u64, Vec<[f64; 2]>> = BTreeMap::new();
            for r in &log.records {
                by_frame.entry(r.frame).or_default().push(r.state.position());
            }
            for ps in by_frame.values() {
                for i in 0..ps.len() {
                    for j in i + 1..ps.len() {
                        prop_assert!(distance(ps[i], ps[j]) >= 2.0 * FOOTPRINT_RADIUS);
                    }
                }
            }
        }
    }
}
