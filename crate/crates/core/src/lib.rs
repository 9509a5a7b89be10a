//! Optimal Advanced Sleep Mode control for 5G base stations.
//!
//! During an idle period the base station cycles through sleep blocks of
//! configurable depth, waking only at block boundaries to check its
//! buffer. This crate models the idle period (hyper-exponential off-time),
//! solves for the cost-optimal sleep-level sequence with a finite-horizon
//! MDP over residual off-time distributions, and validates policies with
//! a seeded Monte-Carlo simulator reporting energy reduction, buffering
//! delay, level time shares, and switching behavior.
//!
//! Modules:
//!
//! - [`hyperexp`] — closed-form kernel of the off-time distribution
//! - [`model`] — sleep-level catalog, power states, system configuration
//! - [`mdp`] — state space, value iteration, policy extraction, analytics
//! - [`sim`] — idle-period simulator and experiment sweeps
//! - [`config`] — TOML configuration schema

pub mod config;
pub mod hyperexp;
pub mod mdp;
pub mod model;
pub mod sim;

pub use config::{load_config, parse_config, LoadedConfig, SimulationParams};
pub use hyperexp::{HyperExp, ResidualWeights};
pub use mdp::{
    analytic_cost, build_state_space, evaluate_policy, extract_policy, space_digest,
    value_iteration, AnalyticCost, BlockStep, CostWeights, DpState, MdpError, Normalization,
    Policy, PolicyFile, StateSpace, ValueTable,
};
pub use model::{
    standard_catalog, Catalog, LevelId, Nanos, PowerStates, SleepLevel, SolverParams,
    SystemConfig, ValidationReport,
};
pub use sim::{run_experiment, simulate_idle_period, sweep, IdleTrace, SimMetrics, SweepRow};
