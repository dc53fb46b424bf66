//! Massive-MIMO downlink simulator with energy-efficient power allocation
//! under RF mismatch and imperfect channel estimation.

pub mod cli;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod sysmodel;

pub use harness::{
    monte_carlo, run_trial, sweep, trial_realization, Execution, SweepParam, SweepTable,
    TrialResult,
};
pub use metrics::{evaluate, PowerAllocation, RateReport};
pub use optimizer::{equal_power_baseline, grid_oracle, solve, SolveError, SolveResult};
pub use sysmodel::{partition_users, ChannelRealization, SystemConfig, UserPartition};
