//! Deterministic closed-loop simulation: terrain, lidar, vehicle and scenarios.

mod scenario;
mod sensor;
mod vehicle;
mod world;
pub mod worlds;

pub use scenario::{
    run_scenario, unsafe_configs, virtual_bound_check, window_region, PlanRecord, RunResult, RunStats, ScenarioSpec,
    SimConfig, Snapshot, TerminalReason, TickRecord,
};
pub use sensor::{raycast_scan, BodyBox, Pose6, SensorModel};
pub use vehicle::{place, settle, step, Settle, VehicleModel, VehicleState};
pub use world::{BoxObstacle, Heightfield, WorldModel};
pub use worlds::{builtin_world, builtin_worlds, BuiltinWorld, SuccessRule, BUILTIN_NAMES};
