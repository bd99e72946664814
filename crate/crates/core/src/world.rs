//! Frozen per-frame view of every vehicle in the network.

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::hv::DriverProfile;
use crate::scenario::IntersectionLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Cav,
    Hv,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Cav => "cav",
            VehicleClass::Hv => "hv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub class: VehicleClass,
    pub stream: u32,
    pub profile: DriverProfile,
    pub state: VehicleState,
    /// Frenet coordinates on the stream's reference path.
    pub s: f64,
    pub l: f64,
    pub spawn_time: f64,
    /// Network entry rank; unique and increasing in spawn time.
    pub entry_order: u64,
}

impl Vehicle {
    pub fn is_cav(&self) -> bool {
        self.class == VehicleClass::Cav
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorldState {
    pub frame: u64,
    pub time: f64,
    /// Sorted by id.
    pub vehicles: Vec<Vehicle>,
}

impl WorldState {
    pub fn get(&self, id: u32) -> Option<&Vehicle> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| &self.vehicles[i])
    }

    /// Nearest vehicle ahead on the same stream.
    pub fn predecessor(&self, ego: &Vehicle) -> Option<&Vehicle> {
        self.vehicles
            .iter()
            .filter(|v| v.id != ego.id && v.stream == ego.stream)
            .filter(|v| v.s > ego.s || (v.s == ego.s && v.entry_order < ego.entry_order))
            .min_by(|a, b| a.s.partial_cmp(&b.s).unwrap().then(b.entry_order.cmp(&a.entry_order)))
    }

    pub fn on_stream(&self, stream: u32) -> impl Iterator<Item = &Vehicle> + '_ {
        self.vehicles.iter().filter(move |v| v.stream == stream)
    }

    /// Streams with at least one vehicle, ascending.
    pub fn occupied_streams(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.vehicles.iter().map(|v| v.stream).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Zone bookkeeping shared by the rule-based controllers and HV yielding.
pub mod zones {
    use super::*;
    use crate::dynamics::MAX_BRAKE;
    use crate::scenario::ZoneSpan;

    /// Stopping distance with the strongest brake plus one frame of travel.
    pub fn stop_distance(v: f64, dt: f64) -> f64 {
        v * v / (2.0 * MAX_BRAKE) + v * dt
    }

    pub fn inside(v: &Vehicle, span: &ZoneSpan) -> bool {
        v.s >= span.s_in && v.s < span.s_out
    }

    pub fn cleared(v: &Vehicle, span: &ZoneSpan) -> bool {
        v.s >= span.s_out
    }

    /// Too close to stop `buffer` meters short of the zone.
    pub fn committed(v: &Vehicle, span: &ZoneSpan, buffer: f64, dt: f64) -> bool {
        v.s < span.s_in && span.s_in - buffer - v.s < stop_distance(v.state.v, dt)
    }

    /// Whether a footprint centered at `p` overlaps the disc of conflict point `conflict`.
    pub fn occupies(p: crate::scenario::Point, conflict: usize, layout: &IntersectionLayout) -> bool {
        let cp = &layout.conflict_points[conflict];
        let reach = cp.zone_radius + crate::features::FOOTPRINT_RADIUS;
        crate::scenario::dist2(p, cp.position) <= reach * reach
    }

    /// Whether braking as hard as possible from now, holding the lateral
    /// offset, still puts the footprint over the disc of `conflict`.
    pub fn braking_enters(v: &Vehicle, conflict: usize, layout: &IntersectionLayout, dt: f64) -> bool {
        let path = layout.path(v.stream);
        let (mut s, mut speed) = (v.s, v.state.v);
        while speed > 1e-12 {
            s += speed * dt;
            speed -= MAX_BRAKE * dt;
            if occupies(path.frenet_point(s, v.l), conflict, layout) {
                return true;
            }
        }
        false
    }

    /// Last time each stream occupied each conflict disc.
    #[derive(Debug, Clone, Default, PartialEq)]
    pub struct ZoneHistory {
        last_in: std::collections::BTreeMap<(usize, u32), f64>,
    }

    impl ZoneHistory {
        pub fn record(&mut self, world: &WorldState, layout: &IntersectionLayout) {
            for v in &world.vehicles {
                for z in layout.spans(v.stream) {
                    if occupies(v.state.position(), z.conflict, layout) {
                        self.last_in.insert((z.conflict, v.stream), world.time);
                    }
                }
            }
        }

        pub fn last_occupied(&self, conflict: usize, stream: u32) -> Option<f64> {
            self.last_in.get(&(conflict, stream)).copied()
        }
    }

    /// Estimated time to the first zone not yet cleared (speed floored at 1 m/s).
    pub fn arrival_key(v: &Vehicle, layout: &IntersectionLayout) -> f64 {
        layout
            .spans(v.stream)
            .iter()
            .filter(|z| !cleared(v, z))
            .map(|z| (z.s_in - v.s).max(0.0))
            .fold(f64::INFINITY, f64::min)
            / v.state.v.max(1.0)
    }
}
