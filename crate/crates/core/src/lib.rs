//! Game-theoretic simulation of connected autonomous and heterogeneous
//! human-driven vehicles at an unsignalized intersection.

pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod features;
pub mod game;
pub mod hv;
pub mod irl;
pub mod lattice;
pub mod metrics;
pub mod ncl;
pub mod scenario;
pub mod sim;
pub mod world;

pub use dynamics::{action_set, rollout, step, Action, Trajectory, VehicleState};
pub use error::*;
pub use features::{FeatureVector, RewardWeights, FOOTPRINT_RADIUS};
pub use game::{best_response, pure_nash, NashResult, NormalFormGame};
pub use scenario::{
    build_intersection, project_to_path, ConflictPoint, IntersectionLayout, Movement, ReferencePath,
    ScenarioConfig, StreamSpec, TrafficStream,
};
pub use hv::{hv_decide, interaction_set, DriverKind, DriverProfile, HvConfig};
pub use world::{Vehicle, VehicleClass, WorldState};
pub use lattice::{plan, KeepOut, Obstacle, ObstacleKind, Plan, PlanRequest, PlannerConfig};
pub use ncl::{ncl_decide, KAllocation, NclConfig, NclDecision, ObjectiveKind, ObjectiveReport};
pub use baselines::{batch_controller, fcfs_controller, BaselineCommand, BaselineConfig, Reservation, ReservationBook};
pub use sim::{run, run_with_log, spawn_schedule, FrameRecord, HvComposition, Method, SimConfig, SimLog, VehicleInfo};
pub use metrics::{average_travel_speed, classify_conflicts, pet_events, summarize, total_delay, ConflictCounts, MetricsSummary, PetEvent, Severity};
