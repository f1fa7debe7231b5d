//! Shared fixtures for the benchmarks.

use fan_core::sft::{collect_expert_demos, snap_demonstrations};
use fan_core::{ActionGrid, Demonstration, EnvConfig, ExperimentConfig, PolicyModel};

pub struct Fixture {
    pub env: EnvConfig,
    pub grid: ActionGrid,
    pub model: PolicyModel,
    pub demos: Vec<Demonstration>,
}

/// Default-sized policy plus `n_demos` expert demonstrations.
pub fn fixture(n_demos: usize) -> Fixture {
    let cfg = ExperimentConfig::default();
    let grid = cfg.grid().expect("default grid");
    let model = cfg.model.policy(&cfg.env, &grid, 0).expect("default model");
    let raw = collect_expert_demos(&cfg.env, n_demos, 1).expect("expert demos");
    let demos = snap_demonstrations(raw, &grid).expect("snappable demos");
    Fixture {
        env: cfg.env,
        grid,
        model,
        demos,
    }
}
