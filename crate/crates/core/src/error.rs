use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("joint profile count {count} exceeds enumeration budget {budget}")]
    EnumerationBudgetExceeded { count: u64, budget: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrlError {
    #[error("trajectory has fewer than 2 states")]
    DegenerateTrajectory,
    #[error("k = {k} exceeds sample count {n}")]
    InvalidK { k: usize, n: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("no demonstrations")]
    EmptyDemos,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no solution")]
    NoSolution,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NclError {
    #[error("no solution for vehicle {vehicle}")]
    NoSolution { vehicle: u32 },
    #[error("all k-allocations infeasible (no solution)")]
    AllAllocationsInfeasible,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("collision detected between vehicles {a} and {b} at frame {frame}")]
    CollisionDetected { frame: u64, a: u32, b: u32 },
    #[error("deadlock detected at frame {frame}")]
    DeadlockDetected { frame: u64 },
    #[error("no solution at frame {frame}: {detail}")]
    NoSolution { frame: u64, detail: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("log has no vehicle records")]
    EmptyLog,
}
