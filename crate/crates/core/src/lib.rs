//! Action-tolerance-aware regularization for discretized, instruction
//! conditioned control policies.

pub mod env;
pub mod error;
pub mod eval;
pub mod fanreg;
pub mod grid;
pub mod policy;
pub mod rft;
pub mod seeding;
pub mod sft;
pub mod tabular;

pub use env::{Env, EnvConfig, OodAxis, QTable, RewardMode, WorldState};
pub use error::{Error, Result};
pub use eval::{ExperimentConfig, FanSets, Method, ModelConfig, ShapeMetrics, Variant};
pub use fanreg::{TargetContext, TargetDistribution, TargetSpec};
pub use grid::ActionGrid;
pub use policy::{
    ActionDistribution, Checkpoint, NetShape, Network, Parameterized, PolicyModel, ValueModel,
};
pub use rft::{PpoConfig, PpoReport, Trajectory};
pub use sft::{Demonstration, SftConfig, SftObjective, SftReport};
pub use tabular::TabularProblem;
