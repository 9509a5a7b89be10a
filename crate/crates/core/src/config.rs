//! Configuration file schema and loading.
//!
//! The on-disk format is TOML with five sections; every physical quantity
//! carries its unit in the key name:
//!
//! ```toml
//! [system]
//! enabled_levels = ["sm2", "sm3"]
//! active_power_w = 250.0
//! idle_power_w = 109.0
//! # max_off_duration_ms = 160.0      # optional cap (e.g. SA signalling)
//!
//! [levels.sm2]                       # per-level overrides; levels absent
//! deactivation_us = 500.0            # here fall back to the standard
//! min_sleep_us = 1000.0              # catalog. sm1/sm4 have no catalog
//! activation_us = 500.0              # power and require power_w when
//! power_w = 14.3                     # enabled.
//!
//! [distribution]
//! rates_per_s = [10.0, 500.0]
//! weights = [0.5, 0.5]
//!
//! [weights]
//! eps1 = 0.3
//! eps2 = 0.7
//! eps3 = 0.0
//!
//! [solver]
//! tail_threshold = 1e-6
//! theta = 1e-10
//! max_iterations = 100000
//! max_states = 1000000
//! # d_norm_s = 0.02                  # optional normalization overrides
//! # e_norm_j = 0.286
//!
//! [simulation]
//! n_periods = 1000000
//! master_seed = 1
//! ```

use crate::hyperexp::HyperExp;
use crate::mdp::CostWeights;
use crate::model::{
    standard_catalog, LevelId, Nanos, PowerStates, SleepLevel, SolverParams, SystemConfig,
    ValidationReport, Violation,
};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("TOML parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(#[from] ValidationReport),
}

/// Simulation defaults carried by the config file; the CLI can override
/// both per invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationParams {
    pub n_periods: u64,
    pub master_seed: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            n_periods: 1_000_000,
            master_seed: 1,
        }
    }
}

/// Everything a run needs: the validated system, the cost weights, and
/// simulation defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub system: SystemConfig,
    pub weights: CostWeights,
    pub simulation: SimulationParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    system: SystemSection,
    #[serde(default)]
    levels: BTreeMap<String, LevelSection>,
    distribution: DistributionSection,
    #[serde(default)]
    weights: Option<WeightsSection>,
    #[serde(default)]
    solver: Option<SolverSection>,
    #[serde(default)]
    simulation: Option<SimulationSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    enabled_levels: Vec<String>,
    active_power_w: f64,
    idle_power_w: f64,
    #[serde(default)]
    max_off_duration_ms: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelSection {
    #[serde(default)]
    deactivation_us: Option<f64>,
    #[serde(default)]
    min_sleep_us: Option<f64>,
    #[serde(default)]
    activation_us: Option<f64>,
    #[serde(default)]
    power_w: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionSection {
    rates_per_s: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSection {
    eps1: f64,
    #[serde(default)]
    eps2: Option<f64>,
    #[serde(default)]
    eps3: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    #[serde(default)]
    tail_threshold: Option<f64>,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    max_iterations: Option<u32>,
    #[serde(default)]
    max_states: Option<usize>,
    #[serde(default)]
    d_norm_s: Option<f64>,
    #[serde(default)]
    e_norm_j: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    #[serde(default)]
    n_periods: Option<u64>,
    #[serde(default)]
    master_seed: Option<u64>,
}

fn duration_field(
    violations: &mut Vec<Violation>,
    value: Option<f64>,
    fallback: Nanos,
    level: LevelId,
    field: &str,
) -> Nanos {
    match value {
        Some(us) if us > 0.0 && us.is_finite() => Nanos::from_micros_f64(us),
        Some(us) => {
            violations.push(Violation::new(
                &format!("levels.{}.{field}", level.name()),
                format!("must be a positive duration in microseconds, got {us}"),
            ));
            fallback
        }
        None => fallback,
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Parses and validates a config document, collecting every violation
/// with its field path rather than stopping at the first.
pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text)?;
    let mut violations: Vec<Violation> = Vec::new();

    let catalog = standard_catalog();
    let mut enabled_levels = Vec::new();
    for name in &file.system.enabled_levels {
        let Some(id) = LevelId::parse(name) else {
            violations.push(Violation::new(
                "system.enabled_levels",
                format!("unknown level {name:?} (expected sm1..sm4)"),
            ));
            continue;
        };
        let template = catalog.template(id);
        let section_or_default = LevelSection::default();
        let s = file.levels.get(id.name()).unwrap_or(&section_or_default);
        let deactivation = duration_field(
            &mut violations,
            s.deactivation_us,
            template.deactivation,
            id,
            "deactivation_us",
        );
        let min_sleep = duration_field(
            &mut violations,
            s.min_sleep_us,
            template.min_sleep,
            id,
            "min_sleep_us",
        );
        let activation = duration_field(
            &mut violations,
            s.activation_us,
            template.activation,
            id,
            "activation_us",
        );
        let power_w = match s.power_w.or(template.power_w) {
            Some(p) => p,
            None => {
                violations.push(Violation::new(
                    &format!("levels.{}.power_w", id.name()),
                    "required when this level is enabled (no published default)",
                ));
                continue;
            }
        };
        enabled_levels.push(SleepLevel {
            id,
            deactivation,
            min_sleep,
            activation,
            power_w,
        });
    }
    enabled_levels.sort_by_key(|l| l.off_duration());

    for name in file.levels.keys() {
        if LevelId::parse(name).is_none() {
            violations.push(Violation::new(
                "levels",
                format!("unknown level section {name:?}"),
            ));
        }
    }

    let off_time = match HyperExp::new(
        file.distribution.rates_per_s.clone(),
        file.distribution.weights.clone(),
    ) {
        Ok(d) => Some(d),
        Err(err) => {
            let path = match err {
                crate::hyperexp::HyperExpError::InvalidRate { .. } => "off_time.rates",
                _ => "off_time.weights",
            };
            violations.push(Violation::new(path, err.to_string()));
            None
        }
    };

    let defaults = SolverParams::default();
    let solver = match &file.solver {
        Some(s) => SolverParams {
            tail_threshold: s.tail_threshold.unwrap_or(defaults.tail_threshold),
            theta: s.theta.unwrap_or(defaults.theta),
            max_iterations: s.max_iterations.unwrap_or(defaults.max_iterations),
            max_states: s.max_states.unwrap_or(defaults.max_states),
            d_norm_s: s.d_norm_s,
            e_norm_j: s.e_norm_j,
        },
        None => defaults,
    };

    let weights = match &file.weights {
        Some(w) => {
            let eps3 = w.eps3.unwrap_or(0.0);
            let eps2 = w.eps2.unwrap_or(1.0 - w.eps1 - eps3);
            match CostWeights::new(w.eps1, eps2, eps3) {
                Ok(cw) => cw,
                Err(err) => {
                    violations.push(Violation::new("weights", err.to_string()));
                    CostWeights { eps1: 1.0, eps2: 0.0, eps3: 0.0 }
                }
            }
        }
        None => CostWeights { eps1: 1.0, eps2: 0.0, eps3: 0.0 },
    };

    let sim_defaults = SimulationParams::default();
    let simulation = match &file.simulation {
        Some(s) => {
            let n_periods = s.n_periods.unwrap_or(sim_defaults.n_periods);
            if n_periods == 0 {
                violations.push(Violation::new("simulation.n_periods", "must be at least 1"));
            }
            SimulationParams {
                n_periods: n_periods.max(1),
                master_seed: s.master_seed.unwrap_or(sim_defaults.master_seed),
            }
        }
        None => sim_defaults,
    };

    let power_states = PowerStates {
        active_w: file.system.active_power_w,
        idle_w: file.system.idle_power_w,
    };
    let max_off_duration = file
        .system
        .max_off_duration_ms
        .map(|ms| Nanos::from_micros_f64(ms * 1e3));

    let Some(off_time) = off_time else {
        // still report every structural problem alongside the broken
        // distribution
        violations.extend(crate::model::structural_violations(
            &enabled_levels,
            &power_states,
            max_off_duration,
            &solver,
        ));
        return Err(ConfigError::Invalid(ValidationReport { violations }));
    };

    let system = SystemConfig {
        enabled_levels,
        power_states,
        off_time,
        max_off_duration,
        solver,
    };

    if let Err(report) = system.validate() {
        violations.extend(report.violations);
    }
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(ValidationReport { violations }));
    }

    Ok(LoadedConfig {
        system,
        weights,
        simulation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = r#"
[system]
enabled_levels = ["sm2", "sm3"]
active_power_w = 250.0
idle_power_w = 109.0

[distribution]
rates_per_s = [10.0, 500.0]
weights = [0.5, 0.5]

[weights]
eps1 = 0.3

[simulation]
n_periods = 1000
master_seed = 42
"#;

    #[test]
    fn reference_config_parses_with_catalog_defaults() {
        let cfg = parse_config(REFERENCE).unwrap();
        assert_eq!(cfg.system.enabled_levels.len(), 2);
        let sm2 = cfg.system.level(LevelId::Sm2).unwrap();
        assert_eq!(sm2.off_duration(), Nanos(2_000_000));
        assert_eq!(sm2.power_w, 14.3);
        let sm3 = cfg.system.level(LevelId::Sm3).unwrap();
        assert_eq!(sm3.power_w, 9.51);
        assert_eq!(cfg.weights.eps1, 0.3);
        assert_eq!(cfg.weights.eps2, 0.7);
        assert_eq!(cfg.simulation.n_periods, 1000);
        assert_eq!(cfg.simulation.master_seed, 42);
        assert_eq!(cfg.system.solver.tail_threshold, 1e-6);
    }

    #[test]
    fn bad_distribution_weights_name_the_field() {
        let text = REFERENCE.replace("weights = [0.5, 0.5]", "weights = [0.5, 0.4]");
        let err = parse_config(&text).unwrap_err();
        let ConfigError::Invalid(report) = err else {
            panic!("expected validation failure");
        };
        assert!(
            report.violations.iter().any(|v| v.path == "off_time.weights"),
            "{report}"
        );
    }

    #[test]
    fn sm4_without_power_is_rejected() {
        let text = REFERENCE.replace(
            r#"enabled_levels = ["sm2", "sm3"]"#,
            r#"enabled_levels = ["sm2", "sm3", "sm4"]"#,
        );
        let err = parse_config(&text).unwrap_err();
        let ConfigError::Invalid(report) = err else {
            panic!("expected validation failure");
        };
        assert!(
            report
                .violations
                .iter()
                .any(|v| v.path == "levels.sm4.power_w"),
            "{report}"
        );
        // supplying the power fixes it
        let fixed = format!("{text}\n[levels.sm4]\npower_w = 5.0\n");
        assert!(parse_config(&fixed).is_ok());
    }

    #[test]
    fn empty_enabled_levels_rejected() {
        let text = REFERENCE.replace(
            r#"enabled_levels = ["sm2", "sm3"]"#,
            "enabled_levels = []",
        );
        let err = parse_config(&text).unwrap_err();
        let ConfigError::Invalid(report) = err else {
            panic!("expected validation failure");
        };
        assert!(report.violations.iter().any(|v| v.path == "enabled_levels"));
    }

    #[test]
    fn duration_overrides_apply() {
        let text = format!("{REFERENCE}\n[levels.sm2]\nmin_sleep_us = 2000.0\n");
        let cfg = parse_config(&text).unwrap();
        let sm2 = cfg.system.level(LevelId::Sm2).unwrap();
        assert_eq!(sm2.off_duration(), Nanos(3_000_000));
    }

    #[test]
    fn weight_section_derives_eps2() {
        let text = REFERENCE.replace("eps1 = 0.3", "eps1 = 0.6\neps3 = 0.1");
        let cfg = parse_config(&text).unwrap();
        assert!((cfg.weights.eps2 - 0.3).abs() < 1e-12);
        assert_eq!(cfg.weights.eps3, 0.1);
    }

    #[test]
    fn multiple_violations_reported_together() {
        let text = REFERENCE
            .replace("weights = [0.5, 0.5]", "weights = [0.5, 0.4]")
            .replace("idle_power_w = 109.0", "idle_power_w = 300.0");
        let err = parse_config(&text).unwrap_err();
        let ConfigError::Invalid(report) = err else {
            panic!("expected validation failure");
        };
        assert!(report.violations.len() >= 2, "{report}");
    }
}
