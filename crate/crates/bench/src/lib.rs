//! Fixtures shared by the `hot_paths` benchmarks.

use ncl_core::{
    build_intersection, rollout, Action, DriverKind, DriverProfile, IntersectionLayout, KeepOut, Obstacle, ObstacleKind,
    PlanRequest, RewardWeights, ScenarioConfig, Vehicle, VehicleClass, VehicleState, WorldState,
};

pub fn default_layout() -> IntersectionLayout {
    build_intersection(&ScenarioConfig::default()).expect("default scenario builds")
}

pub fn vehicle(layout: &IntersectionLayout, id: u32, class: VehicleClass, stream: u32, s: f64, v: f64) -> Vehicle {
    let (p, h) = layout.path(stream).pose_at(s);
    Vehicle {
        id,
        class,
        stream,
        profile: DriverProfile::preset(DriverKind::Normal),
        state: VehicleState::new(p[0], p[1], v, h),
        s,
        l: 0.0,
        spawn_time: 0.0,
        entry_order: id as u64,
    }
}

/// One vehicle per stream, all a few meters short of the box.
pub fn busy_world(layout: &IntersectionLayout, class: VehicleClass) -> WorldState {
    let vehicles = layout
        .streams
        .iter()
        .enumerate()
        .map(|(i, st)| vehicle(layout, i as u32 + 1, class, st.id, 28.0 + 1.5 * i as f64, 3.5))
        .collect();
    WorldState {
        frame: 0,
        time: 0.0,
        vehicles,
    }
}

/// Plan request on stream 0 with a crossing vehicle, a queue leader and one
/// reserved zone.
pub fn plan_request(layout: &IntersectionLayout) -> PlanRequest<'_> {
    let path = layout.path(0);
    let crosser = vehicle(layout, 2, VehicleClass::Cav, 1, 30.0, 4.0);
    let leader = vehicle(layout, 3, VehicleClass::Hv, 0, 42.0, 2.0);
    let cp = layout.conflict_points.iter().find(|c| c.involves(0)).expect("stream 0 has a conflict");
    PlanRequest {
        start: vehicle(layout, 1, VehicleClass::Cav, 0, 30.0, 4.0).state,
        path,
        obstacles: vec![
            Obstacle {
                id: 2,
                kind: ObstacleKind::Planned,
                trajectory: rollout(&crosser.state, &Action::MAINTAIN, 30, 0.1),
            },
            Obstacle {
                id: 3,
                kind: ObstacleKind::Predicted,
                trajectory: rollout(&leader.state, &Action::MAINTAIN, 30, 0.1),
            },
        ],
        keep_out: vec![KeepOut {
            center: cp.position,
            reach: 3.5,
            from: 5,
            to: 15,
        }],
        lead: None,
        weights: RewardWeights::new(8.2, 1.72, 5.7),
        v_desired: 5.0,
        horizon: 30,
        dt: 0.1,
        margin: 0.3,
    }
}
