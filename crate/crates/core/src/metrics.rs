//! Efficiency and surrogate-safety measures computed from a run log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::hv::{DriverKind, DriverProfile};
use crate::scenario::{distance, IntersectionLayout};
use crate::sim::{FrameRecord, SimLog};
use crate::world::zones::occupies;
use crate::world::VehicleClass;

pub const SERIOUS_BELOW: f64 = 0.7;
pub const GENERAL_BELOW: f64 = 1.31;
pub const SLIGHT_BELOW: f64 = 2.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Serious,
    General,
    Slight,
    Potential,
}

impl Severity {
    pub fn of(pet: f64) -> Severity {
        if pet < SERIOUS_BELOW {
            Severity::Serious
        } else if pet < GENERAL_BELOW {
            Severity::General
        } else if pet < SLIGHT_BELOW {
            Severity::Slight
        } else {
            Severity::Potential
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConflictCounts {
    pub serious: usize,
    pub general: usize,
    pub slight: usize,
    pub potential: usize,
}

impl ConflictCounts {
    pub fn total(&self) -> usize {
        self.serious + self.general + self.slight + self.potential
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PetEvent {
    pub conflict: usize,
    pub leader: u32,
    pub follower: u32,
    pub t_leader_exit: f64,
    pub t_follower_entry: f64,
    pub pet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub id: u32,
    pub class: VehicleClass,
    pub driver_type: DriverKind,
    pub stream: u32,
    pub frames: usize,
    pub avg_speed: f64,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub avg_travel_speed: f64,
    pub total_delay: f64,
    pub conflict_counts: ConflictCounts,
    pub pet_list: Vec<PetEvent>,
    pub per_vehicle: Vec<VehicleMetrics>,
}

/// Records grouped per vehicle, each series in frame order.
fn series(log: &SimLog) -> BTreeMap<u32, Vec<&FrameRecord>> {
    let mut m: BTreeMap<u32, Vec<&FrameRecord>> = BTreeMap::new();
    for r in &log.records {
        m.entry(r.vehicle_id).or_default().push(r);
    }
    for s in m.values_mut() {
        s.sort_by_key(|r| r.frame);
    }
    m
}

fn vehicle_speed(s: &[&FrameRecord], dt: f64) -> f64 {
    if s.len() < 2 {
        return s.first().map_or(0.0, |r| r.state.v);
    }
    let path: f64 = s.windows(2).map(|w| distance(w[0].state.position(), w[1].state.position())).sum();
    path / ((s[s.len() - 1].frame - s[0].frame) as f64 * dt)
}

fn v_target(log: &SimLog, r: &FrameRecord) -> f64 {
    log.vehicles.get(&r.vehicle_id).map(|v| v.v_target).unwrap_or_else(|| {
        let kind = if r.class == VehicleClass::Cav { DriverKind::Normal } else { r.kind };
        DriverProfile::preset(kind).v_target
    })
}

fn vehicle_delay(log: &SimLog, s: &[&FrameRecord]) -> f64 {
    s.iter()
        .map(|r| {
            let vt = v_target(log, r);
            if vt > 0.0 {
                (1.0 - r.state.v / vt).max(0.0) * log.dt
            } else {
                0.0
            }
        })
        .sum()
}

/// Mean over vehicles of distance traveled over time in the network.
pub fn average_travel_speed(log: &SimLog) -> Result<f64, MetricsError> {
    let per = series(log);
    if per.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    Ok(per.values().map(|s| vehicle_speed(s, log.dt)).sum::<f64>() / per.len() as f64)
}

pub fn total_delay(log: &SimLog) -> f64 {
    series(log).values().map(|s| vehicle_delay(log, s)).sum()
}

#[derive(Debug, Clone, Copy)]
struct Passage {
    vehicle: u32,
    stream: u32,
    entry: f64,
    exit: f64,
    open: bool,
}

/// One passage per vehicle and conflict point: first to last frame its
/// footprint overlaps the zone.
pub fn pet_events(log: &SimLog, layout: &IntersectionLayout) -> Vec<PetEvent> {
    let last_frame = log.records.iter().map(|r| r.frame).max();
    let per = series(log);
    let mut out = Vec::new();
    for (c, cp) in layout.conflict_points.iter().enumerate() {
        let mut passages: Vec<Passage> = Vec::new();
        for (&id, s) in &per {
            let stream = s[0].stream;
            if !cp.involves(stream) {
                continue;
            }
            let inside: Vec<&&FrameRecord> = s.iter().filter(|r| occupies(r.state.position(), c, layout)).collect();
            let (Some(first), Some(last)) = (inside.first(), inside.last()) else {
                continue;
            };
            let exited = log.vehicles.get(&id).is_some_and(|v| v.exit_time.is_some());
            passages.push(Passage {
                vehicle: id,
                stream,
                entry: first.time,
                exit: last.time,
                open: !exited && Some(last.frame) == last_frame && s[s.len() - 1].frame == last.frame,
            });
        }
        passages.sort_by(|a, b| a.entry.total_cmp(&b.entry).then(a.vehicle.cmp(&b.vehicle)));
        for w in passages.windows(2) {
            let (lead, follow) = (w[0], w[1]);
            if lead.stream == follow.stream || lead.open {
                continue;
            }
            out.push(PetEvent {
                conflict: c,
                leader: lead.vehicle,
                follower: follow.vehicle,
                t_leader_exit: lead.exit,
                t_follower_entry: follow.entry,
                pet: (follow.entry - lead.exit).max(0.0),
            });
        }
    }
    out
}

pub fn classify_conflicts(pets: &[f64]) -> ConflictCounts {
    let mut c = ConflictCounts::default();
    for &p in pets {
        match Severity::of(p) {
            Severity::Serious => c.serious += 1,
            Severity::General => c.general += 1,
            Severity::Slight => c.slight += 1,
            Severity::Potential => c.potential += 1,
        }
    }
    c
}

pub fn summarize(log: &SimLog, layout: &IntersectionLayout) -> Result<MetricsSummary, MetricsError> {
    let avg = average_travel_speed(log)?;
    let pet_list = pet_events(log, layout);
    let pets: Vec<f64> = pet_list.iter().map(|e| e.pet).collect();
    let per_vehicle = series(log)
        .into_iter()
        .map(|(id, s)| VehicleMetrics {
            id,
            class: s[0].class,
            driver_type: s[0].kind,
            stream: s[0].stream,
            frames: s.len(),
            avg_speed: vehicle_speed(&s, log.dt),
            delay: vehicle_delay(log, &s),
        })
        .collect();
    Ok(MetricsSummary {
        avg_travel_speed: avg,
        total_delay: total_delay(log),
        conflict_counts: classify_conflicts(&pets),
        pet_list,
        per_vehicle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Action, VehicleState};
    use crate::scenario::{build_intersection, ScenarioConfig};
    use crate::sim::VehicleInfo;
    use proptest::prelude::*;

    fn rec(frame: u64, id: u32, stream: u32, p: [f64; 2], v: f64) -> FrameRecord {
        FrameRecord {
            frame,
            time: frame as f64 * 0.1,
            vehicle_id: id,
            class: VehicleClass::Cav,
            kind: DriverKind::Normal,
            stream,
            state: VehicleState::new(p[0], p[1], v, 0.0),
            action: Action::MAINTAIN,
            k_level: Some(0),
        }
    }

    fn straight(id: u32, v: f64, frames: u64) -> Vec<FrameRecord> {
        (0..frames).map(|f| rec(f, id, 0, [v * 0.1 * f as f64, id as f64 * 10.0], v)).collect()
    }

    fn log(records: Vec<FrameRecord>) -> SimLog {
        SimLog {
            dt: 0.1,
            records,
            ..SimLog::default()
        }
    }

    #[test]
    fn speed_examples() {
        assert!((average_travel_speed(&log(straight(1, 5.0, 50))).unwrap() - 5.0).abs() < 1e-9);
        let mut r = straight(1, 4.0, 50);
        r.extend(straight(2, 6.0, 30));
        assert!((average_travel_speed(&log(r)).unwrap() - 5.0).abs() < 1e-9);
        let mut r = straight(1, 0.0, 50);
        r.extend(straight(2, 6.0, 30));
        assert!((average_travel_speed(&log(r)).unwrap() - 3.0).abs() < 1e-9);
        assert!(matches!(average_travel_speed(&log(vec![])), Err(MetricsError::EmptyLog)));
    }

    #[test]
    fn delay_examples() {
        let vt = DriverProfile::preset(DriverKind::Normal).v_target;
        assert!(total_delay(&log(straight(1, vt, 40))).abs() < 1e-12);
        assert!((total_delay(&log(straight(1, 0.0, 50))) - 5.0).abs() < 1e-9);
        assert!((total_delay(&log(straight(1, vt / 2.0, 100))) - 5.0).abs() < 1e-9);
        // Own target from the vehicle table takes precedence.
        let mut l = log(straight(1, 3.0, 10));
        l.vehicles.insert(
            1,
            VehicleInfo {
                id: 1,
                class: VehicleClass::Cav,
                kind: DriverKind::Normal,
                stream: 0,
                v_target: 3.0,
                spawn_time: 0.0,
                exit_time: None,
            },
        );
        assert!(total_delay(&l).abs() < 1e-12);
    }

    #[test]
    fn classification_thresholds() {
        let pets = [0.5, 0.7, 1.0, 1.31, 2.0, 2.25, 3.0];
        let expect = [
            Severity::Serious,
            Severity::General,
            Severity::General,
            Severity::Slight,
            Severity::Slight,
            Severity::Potential,
            Severity::Potential,
        ];
        for (p, e) in pets.iter().zip(expect) {
            assert_eq!(Severity::of(*p), e, "{p}");
        }
        let c = classify_conflicts(&pets);
        assert_eq!((c.serious, c.general, c.slight, c.potential), (1, 2, 2, 2));
    }

    fn crossing_log(lead_exit_frame: u64, follow_entry_frame: u64) -> (SimLog, IntersectionLayout) {
        let layout = build_intersection(&ScenarioConfig::default()).unwrap();
        let cp = &layout.conflict_points[0];
        let (a, b) = (cp.stream_a, cp.stream_b);
        let mut r = Vec::new();
        let far = [100.0, 100.0];
        for f in 0..200 {
            let pa = if (lead_exit_frame - 10..=lead_exit_frame).contains(&f) { cp.position } else { far };
            let pb = if (follow_entry_frame..follow_entry_frame + 10).contains(&f) { cp.position } else { [-100.0, 100.0] };
            r.push(rec(f, 1, a, pa, 4.0));
            r.push(rec(f, 2, b, pb, 4.0));
        }
        (log(r), layout)
    }

    #[test]
    fn pet_of_a_crossing_pair() {
        let (l, layout) = crossing_log(100, 112);
        let ev = pet_events(&l, &layout);
        assert_eq!(ev.len(), 1);
        let e = ev[0];
        assert_eq!((e.conflict, e.leader, e.follower), (0, 1, 2));
        assert!((e.t_leader_exit - 10.0).abs() < 1e-9);
        assert!((e.pet - 1.2).abs() < 1e-9);
    }

    #[test]
    fn pet_edge_cases() {
        let layout = build_intersection(&ScenarioConfig::default()).unwrap();
        assert!(pet_events(&log(straight(1, 4.0, 50)), &layout).is_empty());
        // Same stream passages do not pair up.
        let cp = layout.conflict_points[0].position;
        let s = layout.conflict_points[0].stream_a;
        let mut r = Vec::new();
        for f in 0..60 {
            r.push(rec(f, 1, s, if f < 10 { cp } else { [90.0, 90.0] }, 4.0));
            r.push(rec(f, 2, s, if (20..30).contains(&f) { cp } else { [90.0, -90.0] }, 4.0));
        }
        assert!(pet_events(&log(r), &layout).is_empty());
        // Overlapping passages give zero, never negative.
        let (l, layout) = crossing_log(100, 95);
        assert_eq!(pet_events(&l, &layout)[0].pet, 0.0);
    }

    #[test]
    fn summary_counts_match_events() {
        let (l, layout) = crossing_log(100, 105);
        let s = summarize(&l, &layout).unwrap();
        assert_eq!(s.conflict_counts.total(), s.pet_list.len());
        assert_eq!(s.conflict_counts.serious, 1);
        assert_eq!(s.per_vehicle.len(), 2);
    }

    proptest! {
        #[test]
        fn classification_partitions(pets in proptest::collection::vec(0.0f64..10.0, 0..50)) {
            prop_assert_eq!(classify_conflicts(&pets).total(), pets.len());
        }

        #[test]
        fn speed_ignores_record_order(seed in 0u64..1000) {
            let mut r = straight(1, 4.0, 30);
            r.extend(straight(2, 2.5, 20));
            let a = average_travel_speed(&log(r.clone())).unwrap();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            r.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((average_travel_speed(&log(r)).unwrap() - a).abs() < 1e-12);
        }
    }
}
