//! Reservation baselines: first-come-first-served by network entry order,
//! and the same rule over batches of consecutive same-stream vehicles.
//! Longitudinal control uses the discrete action set only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{action_set, Action, VehicleState, MAX_BRAKE};
use crate::features::FOOTPRINT_RADIUS;
use crate::hv::{can_stop, path_step};
use crate::scenario::{project_to_path, IntersectionLayout};
use crate::world::{zones, Vehicle, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Waiting vehicles stop this far before the zone, meters.
    pub stop_offset: f64,
    /// Gap beyond touching footprints kept behind the predecessor, meters.
    pub follow_gap: f64,
    /// Same-stream arrivals at most this far apart join one batch, seconds.
    pub batch_gap: f64,
    pub batch_size_max: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            stop_offset: 3.0,
            follow_gap: 2.0,
            batch_gap: 4.0,
            batch_size_max: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub vehicle: u32,
    pub entry_order: u64,
    pub batch: Option<u64>,
    pub granted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BatchTail {
    batch: u64,
    leader_order: u64,
    last_spawn: f64,
    size: usize,
}

/// Reservations in entry order, with batch membership fixed at spawn.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReservationBook {
    pub reservations: BTreeMap<u32, Reservation>,
    leader_order: BTreeMap<u64, u64>,
    tails: BTreeMap<u32, BatchTail>,
    next_batch: u64,
}

impl ReservationBook {
    pub fn new() -> Self {
        ReservationBook::default()
    }

    /// Must be called in spawn order.
    pub fn register(&mut self, v: &Vehicle, cfg: &BaselineConfig) {
        let join = self.tails.get(&v.stream).copied().filter(|t| {
            v.spawn_time - t.last_spawn <= cfg.batch_gap && t.size < cfg.batch_size_max.max(1)
        });
        let tail = match join {
            Some(t) => BatchTail {
                last_spawn: v.spawn_time,
                size: t.size + 1,
                ..t
            },
            None => {
                let b = self.next_batch;
                self.next_batch += 1;
                self.leader_order.insert(b, v.entry_order);
                BatchTail {
                    batch: b,
                    leader_order: v.entry_order,
                    last_spawn: v.spawn_time,
                    size: 1,
                }
            }
        };
        self.tails.insert(v.stream, tail);
        self.reservations.insert(
            v.id,
            Reservation {
                vehicle: v.id,
                entry_order: v.entry_order,
                batch: Some(tail.batch),
                granted: false,
            },
        );
    }

    /// Entry order of the vehicle's batch leader.
    pub fn batch_priority(&self, v: &Vehicle) -> u64 {
        self.reservations
            .get(&v.id)
            .and_then(|r| r.batch)
            .and_then(|b| self.leader_order.get(&b).copied())
            .unwrap_or(v.entry_order)
    }

    pub fn set_granted(&mut self, id: u32, granted: bool) {
        if let Some(r) = self.reservations.get_mut(&id) {
            r.granted = granted;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineCommand {
    pub next: VehicleState,
    pub action: Action,
    /// No crossing vehicle currently holds right of way over this one.
    pub granted: bool,
}

/// Furthest arclength the vehicle may stop at, and whether it holds right of way.
fn stop_target(
    ego: &Vehicle,
    world: &WorldState,
    layout: &IntersectionLayout,
    priority: &impl Fn(&Vehicle) -> u64,
    cfg: &BaselineConfig,
    dt: f64,
) -> (f64, bool) {
    let mut target = f64::INFINITY;
    let keep = 2.0 * FOOTPRINT_RADIUS + cfg.follow_gap;
    if let Some(pred) = world.predecessor(ego) {
        let vp = (pred.state.v - MAX_BRAKE * dt).max(0.0);
        let pred_stop = pred.s + pred.state.v * dt + vp * vp / (2.0 * MAX_BRAKE);
        target = target.min(pred_stop - keep);
    }
    let path = layout.path(ego.stream);
    for b in &layout.blockers {
        let (sb, lb) = project_to_path(path, [b.x, b.y]);
        if lb.abs() < 2.0 * FOOTPRINT_RADIUS + 0.3 && sb > ego.s {
            target = target.min(sb - keep);
        }
    }
    let mine = priority(ego);
    let mut granted = true;
    for z in layout.spans(ego.stream) {
        if zones::cleared(ego, z) || zones::inside(ego, z) || zones::committed(ego, z, cfg.stop_offset, dt) {
            continue;
        }
        let blocked = world.on_stream(z.other_stream).any(|x| {
            let Some(xz) = layout.span(x.stream, z.conflict) else {
                return false;
            };
            if zones::cleared(x, xz) {
                return false;
            }
            if !x.is_cav() && (zones::inside(x, xz) || zones::committed(x, xz, 0.5, dt)) {
                return true;
            }
            priority(x) < mine
        });
        if blocked {
            granted = false;
            target = target.min(z.s_in - cfg.stop_offset);
        }
    }
    (target, granted)
}

fn command(
    ego: &Vehicle,
    world: &WorldState,
    layout: &IntersectionLayout,
    priority: &impl Fn(&Vehicle) -> u64,
    cfg: &BaselineConfig,
    dt: f64,
) -> BaselineCommand {
    let u = action_set();
    let (target, granted) = stop_target(ego, world, layout, priority, cfg, dt);
    let mut prefs = Vec::with_capacity(4);
    if ego.state.v < ego.profile.v_target {
        prefs.push(1);
    }
    prefs.extend([0usize, 2, 3]);
    let idx = prefs
        .iter()
        .copied()
        .find(|&i| target.is_infinite() || can_stop(ego, u[i].a, target, dt))
        .unwrap_or(3);
    let mut action = u[idx];
    if idx == 1 {
        // Close the gap to the target without overshooting it.
        action.a = action.a.min((ego.profile.v_target - ego.state.v) / dt);
    }
    let (next, _, _) = path_step(&ego.state, layout.path(ego.stream), &action, dt);
    BaselineCommand { next, action, granted }
}

fn control(
    world: &WorldState,
    layout: &IntersectionLayout,
    priority: impl Fn(&Vehicle) -> u64,
    cfg: &BaselineConfig,
    dt: f64,
) -> BTreeMap<u32, BaselineCommand> {
    world
        .vehicles
        .iter()
        .filter(|v| v.is_cav())
        .map(|v| (v.id, command(v, world, layout, &priority, cfg, dt)))
        .collect()
}

/// Right of way by network entry order.
pub fn fcfs_controller(world: &WorldState, layout: &IntersectionLayout, cfg: &BaselineConfig, dt: f64) -> BTreeMap<u32, BaselineCommand> {
    control(world, layout, |v| v.entry_order, cfg, dt)
}

/// Right of way by the entry order of each vehicle's batch leader.
pub fn batch_controller(
    world: &WorldState,
    layout: &IntersectionLayout,
    book: &ReservationBook,
    cfg: &BaselineConfig,
    dt: f64,
) -> BTreeMap<u32, BaselineCommand> {
    control(world, layout, |v| book.batch_priority(v), cfg, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hv::{DriverKind, DriverProfile};
    use crate::scenario::{build_intersection, ScenarioConfig};
    use crate::world::VehicleClass;

    fn layout() -> IntersectionLayout {
        build_intersection(&ScenarioConfig::default()).unwrap()
    }

    fn cav(layout: &IntersectionLayout, id: u32, stream: u32, s: f64, v: f64, spawn: f64) -> Vehicle {
        let (p, h) = layout.path(stream).pose_at(s);
        Vehicle {
            id,
            class: VehicleClass::Cav,
            stream,
            profile: DriverProfile::preset(DriverKind::Normal),
            state: VehicleState::new(p[0], p[1], v, h),
            s,
            l: 0.0,
            spawn_time: spawn,
            entry_order: id as u64,
        }
    }

    fn world(mut v: Vec<Vehicle>) -> WorldState {
        v.sort_by_key(|x| x.id);
        WorldState {
            frame: 0,
            time: 0.0,
            vehicles: v,
        }
    }

    /// Advance every vehicle with the controller's commands.
    fn advance(w: &mut WorldState, lay: &IntersectionLayout, cmds: &BTreeMap<u32, BaselineCommand>) {
        for v in &mut w.vehicles {
            let c = cmds[&v.id];
            v.state = c.next;
            let (s, l) = project_to_path(lay.path(v.stream), v.state.position());
            v.s = s;
            v.l = l;
        }
        w.frame += 1;
        w.time += 0.1;
    }

    #[test]
    fn lower_entry_order_goes_first() {
        let lay = layout();
        let cfg = BaselineConfig::default();
        let s0 = lay.span(0, 0).unwrap().s_in - 20.0;
        let s1 = lay.span(1, 3).unwrap().s_in - 20.0;
        // Streams 0 and 1 cross at conflict 0; stream 1 meets conflict 3 first, shared with nobody here.
        let w = world(vec![cav(&lay, 1, 0, s0, 4.0, 0.0), cav(&lay, 2, 1, s1, 4.0, 1.0)]);
        let c = fcfs_controller(&w, &lay, &cfg, 0.1);
        assert!(c[&1].granted && !c[&2].granted);
        assert!(c[&1].action.a >= 0.0);
        // Released once vehicle 1 has cleared.
        let z = lay.span(0, 0).unwrap();
        let w2 = world(vec![cav(&lay, 1, 0, z.s_out + 0.1, 4.0, 0.0), cav(&lay, 2, 1, s1, 4.0, 1.0)]);
        let c2 = fcfs_controller(&w2, &lay, &cfg, 0.1);
        assert!(c2[&2].granted);
        assert!(c2[&2].action.a > 0.0);
    }

    #[test]
    fn lone_vehicle_tracks_its_target() {
        let lay = layout();
        let w = world(vec![cav(&lay, 1, 2, 5.0, 3.0, 0.0)]);
        let c = fcfs_controller(&w, &lay, &BaselineConfig::default(), 0.1);
        assert_eq!(c[&1].action, Action::ACCELERATE);
        // The last step lands on the target exactly.
        let w = world(vec![cav(&lay, 1, 2, 5.0, 4.35, 0.0)]);
        let c = fcfs_controller(&w, &lay, &BaselineConfig::default(), 0.1);
        assert!((c[&1].next.v - 4.42).abs() < 1e-12);
        let w = world(vec![cav(&lay, 1, 2, 5.0, 4.42, 0.0)]);
        assert_eq!(fcfs_controller(&w, &lay, &BaselineConfig::default(), 0.1)[&1].action, Action::MAINTAIN);
    }

    #[test]
    fn waiting_vehicle_stops_short_of_the_zone() {
        let lay = layout();
        let cfg = BaselineConfig::default();
        let z = *lay.span(1, 0).unwrap();
        // Vehicle 1 on stream 0 is stopped just before its zone and keeps right of way.
        let stop0 = lay.span(0, 0).unwrap().s_in - 1.0;
        let mut w = world(vec![cav(&lay, 1, 0, stop0, 0.0, 0.0), cav(&lay, 2, 1, 25.0, 4.42, 1.0)]);
        w.vehicles[0].profile.v_target = 0.0;
        for _ in 0..200 {
            let c = fcfs_controller(&w, &lay, &cfg, 0.1);
            advance(&mut w, &lay, &c);
        }
        let v2 = w.get(2).unwrap();
        assert!(v2.state.v == 0.0);
        assert!(v2.s <= z.s_in - cfg.stop_offset + 1e-9 && v2.s > z.s_in - cfg.stop_offset - 1.0, "{}", v2.s);
    }

    #[test]
    fn follower_keeps_its_gap() {
        let lay = layout();
        let cfg = BaselineConfig::default();
        let mut w = world(vec![cav(&lay, 1, 3, 20.0, 0.0, 0.0), cav(&lay, 2, 3, 5.0, 4.42, 1.0)]);
        w.vehicles[0].profile.v_target = 0.0;
        for _ in 0..100 {
            let c = fcfs_controller(&w, &lay, &cfg, 0.1);
            advance(&mut w, &lay, &c);
            let gap = w.get(1).unwrap().s - w.get(2).unwrap().s;
            assert!(gap >= 2.0 * FOOTPRINT_RADIUS + cfg.follow_gap - 1e-9, "{gap}");
        }
    }

    #[test]
    fn batches_follow_gap_and_cap() {
        let lay = layout();
        let cfg = BaselineConfig {
            batch_size_max: 2,
            ..BaselineConfig::default()
        };
        let mut book = ReservationBook::new();
        let spawns = [(1, 0, 0.0), (2, 1, 1.0), (3, 0, 2.0), (4, 0, 3.0), (5, 0, 9.0)];
        for &(id, stream, t) in &spawns {
            book.register(&cav(&lay, id, stream, 0.0, 3.0, t), &cfg);
        }
        let b = |id: u32| book.reservations[&id].batch.unwrap();
        assert_eq!(b(1), b(3));
        assert_ne!(b(3), b(4), "cap of two");
        assert_ne!(b(4), b(5), "gap over four seconds");
        assert_ne!(b(1), b(2));
        let v3 = cav(&lay, 3, 0, 0.0, 3.0, 2.0);
        assert_eq!(book.batch_priority(&v3), 1);
    }

    #[test]
    fn batch_member_passes_before_later_leader() {
        // Orders 1 (stream 0), 2 (stream 1), 3 (stream 0, 2 s behind 1).
        let lay = layout();
        let cfg = BaselineConfig::default();
        let z0 = *lay.span(0, 0).unwrap();
        let z1 = *lay.span(1, 0).unwrap();
        let vs = vec![
            cav(&lay, 1, 0, z0.s_in - 6.0, 4.42, 0.0),
            cav(&lay, 2, 1, z1.s_in - 12.0, 4.42, 1.0),
            cav(&lay, 3, 0, z0.s_in - 15.0, 4.42, 2.0),
        ];
        let mut book = ReservationBook::new();
        for v in &vs {
            book.register(v, &cfg);
        }
        let mut w = world(vs);
        let mut entered: Vec<u32> = Vec::new();
        for _ in 0..300 {
            let c = batch_controller(&w, &lay, &book, &cfg, 0.1);
            advance(&mut w, &lay, &c);
            for v in &w.vehicles {
                let z = if v.stream == 0 { z0 } else { z1 };
                if zones::occupies(v.state.position(), z.conflict, &lay) && !entered.contains(&v.id) {
                    entered.push(v.id);
                }
            }
        }
        assert_eq!(entered, vec![1, 3, 2]);
    }

    #[test]
    fn unit_batches_match_fcfs() {
        let lay = layout();
        let cfg = BaselineConfig {
            batch_size_max: 1,
            ..BaselineConfig::default()
        };
        let vs = vec![
            cav(&lay, 1, 0, 20.0, 4.0, 0.0),
            cav(&lay, 2, 1, 22.0, 4.0, 0.5),
            cav(&lay, 3, 0, 8.0, 4.0, 1.0),
            cav(&lay, 4, 4, 18.0, 3.0, 1.5),
        ];
        let mut book = ReservationBook::new();
        for v in &vs {
            book.register(v, &cfg);
        }
        let mut a = world(vs);
        let mut b = a.clone();
        for _ in 0..150 {
            let ca = fcfs_controller(&a, &lay, &cfg, 0.1);
            let cb = batch_controller(&b, &lay, &book, &cfg, 0.1);
            assert_eq!(ca, cb);
            advance(&mut a, &lay, &ca);
            advance(&mut b, &lay, &cb);
        }
    }
}
