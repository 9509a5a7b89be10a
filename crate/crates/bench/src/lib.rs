//! Shared setup for the solver and simulator benchmarks.

use asmopt_core::{parse_config, LoadedConfig};

pub const REFERENCE_TOML: &str = include_str!("../../../configs/nsa_sm23.toml");

pub fn reference() -> LoadedConfig {
    parse_config(REFERENCE_TOML).expect("reference config parses")
}
