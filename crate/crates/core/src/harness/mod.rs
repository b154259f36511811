//! Scenario configuration, Monte Carlo trials and experiment outputs.

pub mod config;
pub mod experiments;
pub mod scenario;

pub use config::{ConfigError, ScenarioConfig};
pub use experiments::{
    heatmap, run, sweep_power, sweep_rb, ExperimentError, Heatmap, PowerRow, RbRow,
};
pub use scenario::{
    build_scenario, place_users, run_trial, trial_rng, ResultRecord, Scenario, ScenarioError,
};
