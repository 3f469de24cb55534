pub mod agent;
pub mod envs;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod neural;
pub mod orchestrator;
pub mod replay;
pub mod seed;
pub mod types;
pub mod worldmodel;

pub use error::{Error, Result};
pub use orchestrator::RunConfig;
pub use types::{EnvSpec, IdAllocator, LabeledTrajectory, Trajectory, Transition};
