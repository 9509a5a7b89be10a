//! Advanced Sleep Mode levels, reference power states, and system
//! configuration.
//!
//! A sleep block for level `l` is deactivation + minimum sleep +
//! reactivation, executed at the level's uniform power draw `P_l`. The
//! four standard levels span one OFDM symbol (SM1, 142 µs total) to
//! standby (SM4, 2 s total). Durations are kept as integer nanoseconds so
//! elapsed-time state keys add exactly.

use crate::hyperexp::{HyperExp, WEIGHT_SUM_TOL};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Advanced Sleep Mode level identifier, ordered lightest (shortest
/// transition) to deepest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelId {
    Sm1,
    Sm2,
    Sm3,
    Sm4,
}

impl LevelId {
    pub const ALL: [LevelId; 4] = [LevelId::Sm1, LevelId::Sm2, LevelId::Sm3, LevelId::Sm4];

    /// Stable index 0..4, used for per-level metric arrays.
    pub fn index(self) -> usize {
        match self {
            LevelId::Sm1 => 0,
            LevelId::Sm2 => 1,
            LevelId::Sm3 => 2,
            LevelId::Sm4 => 3,
        }
    }

    /// Lowercase machine name (`sm1`..`sm4`) as used in config files and
    /// CSV headers.
    pub fn name(self) -> &'static str {
        match self {
            LevelId::Sm1 => "sm1",
            LevelId::Sm2 => "sm2",
            LevelId::Sm3 => "sm3",
            LevelId::Sm4 => "sm4",
        }
    }

    pub fn parse(s: &str) -> Option<LevelId> {
        match s.to_ascii_lowercase().as_str() {
            "sm1" => Some(LevelId::Sm1),
            "sm2" => Some(LevelId::Sm2),
            "sm3" => Some(LevelId::Sm3),
            "sm4" => Some(LevelId::Sm4),
            _ => None,
        }
    }
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LevelId::Sm1 => "SM1",
            LevelId::Sm2 => "SM2",
            LevelId::Sm3 => "SM3",
            LevelId::Sm4 => "SM4",
        };
        f.write_str(s)
    }
}

/// A duration in integer nanoseconds. Sleep-block lengths and elapsed-time
/// state keys are exact in this unit.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Nanos(pub u64);

impl Nanos {
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    /// Converts microseconds to nanoseconds, rounding to the nearest
    /// nanosecond (the standard catalog values are all exact).
    pub fn from_micros_f64(us: f64) -> Nanos {
        Nanos((us * 1e3).round() as u64)
    }
}

/// One enabled sleep level: block phase durations plus the uniform power
/// drawn across deactivation, minimum sleep, and reactivation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepLevel {
    pub id: LevelId,
    pub deactivation: Nanos,
    pub min_sleep: Nanos,
    pub activation: Nanos,
    pub power_w: f64,
}

impl SleepLevel {
    /// OFF period of one block: deactivation + minimum sleep + reactivation.
    pub fn off_duration(&self) -> Nanos {
        Nanos(self.deactivation.0 + self.min_sleep.0 + self.activation.0)
    }

    pub fn off_duration_s(&self) -> f64 {
        self.off_duration().as_secs_f64()
    }
}

/// Reference power draw of the base station outside sleep blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerStates {
    pub active_w: f64,
    pub idle_w: f64,
}

/// Catalog entry: standard durations plus the power value where one is
/// published (SM2 and SM3 only; SM1 and SM4 powers are deployment inputs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelTemplate {
    pub id: LevelId,
    pub deactivation: Nanos,
    pub min_sleep: Nanos,
    pub activation: Nanos,
    pub power_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub levels: [LevelTemplate; 4],
    pub power_states: PowerStates,
}

impl Catalog {
    pub fn template(&self, id: LevelId) -> &LevelTemplate {
        &self.levels[id.index()]
    }
}

/// The standard ASM catalog: SM1 35.5/71/35.5 µs, SM2 0.5/1/0.5 ms,
/// SM3 5/10/5 ms, SM4 0.5/1/0.5 s; 250 W active, 109 W idle, 14.3 W SM2,
/// 9.51 W SM3 (2x2 MIMO, 46 dBm, 20 MHz reference configuration).
pub fn standard_catalog() -> Catalog {
    let us = Nanos::from_micros_f64;
    Catalog {
        levels: [
            LevelTemplate {
                id: LevelId::Sm1,
                deactivation: us(35.5),
                min_sleep: us(71.0),
                activation: us(35.5),
                power_w: None,
            },
            LevelTemplate {
                id: LevelId::Sm2,
                deactivation: us(500.0),
                min_sleep: us(1_000.0),
                activation: us(500.0),
                power_w: Some(14.3),
            },
            LevelTemplate {
                id: LevelId::Sm3,
                deactivation: us(5_000.0),
                min_sleep: us(10_000.0),
                activation: us(5_000.0),
                power_w: Some(9.51),
            },
            LevelTemplate {
                id: LevelId::Sm4,
                deactivation: us(500_000.0),
                min_sleep: us(1_000_000.0),
                activation: us(500_000.0),
                power_w: None,
            },
        ],
        power_states: PowerStates {
            active_w: 250.0,
            idle_w: 109.0,
        },
    }
}

/// Solver knobs: state-space truncation, value-iteration stopping rule,
/// and the two stage-cost normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Survival-probability threshold δ below which a state is terminal.
    pub tail_threshold: f64,
    /// Value-iteration stopping threshold θ on the max value change.
    pub theta: f64,
    pub max_iterations: u32,
    pub max_states: usize,
    /// Delay normalization in seconds; defaults to the largest enabled
    /// off-duration.
    pub d_norm_s: Option<f64>,
    /// Energy normalization in joules; defaults to
    /// (max enabled sleep power) · (largest enabled off-duration), so both
    /// stage-cost terms lie in [0, 1].
    pub e_norm_j: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tail_threshold: 1e-6,
            theta: 1e-10,
            max_iterations: 100_000,
            max_states: 1_000_000,
            d_norm_s: None,
            e_norm_j: None,
        }
    }
}

/// Validated system description: the enabled sleep levels (ascending
/// off-duration), reference powers, off-time distribution, and solver
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub enabled_levels: Vec<SleepLevel>,
    pub power_states: PowerStates,
    pub off_time: HyperExp,
    /// Optional hard cap on a single block's off-duration (for example an
    /// SA signalling period); levels exceeding it are rejected.
    pub max_off_duration: Option<Nanos>,
    pub solver: SolverParams,
}

impl SystemConfig {
    pub fn level(&self, id: LevelId) -> Option<&SleepLevel> {
        self.enabled_levels.iter().find(|l| l.id == id)
    }

    /// Largest enabled off-duration (b_max).
    pub fn max_block(&self) -> Nanos {
        self.enabled_levels
            .iter()
            .map(|l| l.off_duration())
            .max()
            .unwrap_or(Nanos(0))
    }

    /// Resolved delay normalization constant (seconds).
    pub fn d_norm_s(&self) -> f64 {
        self.solver
            .d_norm_s
            .unwrap_or_else(|| self.max_block().as_secs_f64())
    }

    /// Resolved energy normalization constant (joules).
    pub fn e_norm_j(&self) -> f64 {
        self.solver.e_norm_j.unwrap_or_else(|| {
            let p_max = self
                .enabled_levels
                .iter()
                .map(|l| l.power_w)
                .fold(0.0f64, f64::max);
            p_max * self.max_block().as_secs_f64()
        })
    }

    /// Checks every structural invariant, reporting all violations with
    /// their field paths.
    pub fn validate(&self) -> Result<(), ValidationReport> {
        let mut violations = structural_violations(
            &self.enabled_levels,
            &self.power_states,
            self.max_off_duration,
            &self.solver,
        );
        let qsum: f64 = self.off_time.weights().iter().sum();
        if (qsum - 1.0).abs() > WEIGHT_SUM_TOL {
            violations.push(Violation::new(
                "off_time.weights",
                format!("weights sum to {qsum}, expected 1 within {WEIGHT_SUM_TOL:e}"),
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ValidationReport { violations })
        }
    }
}

/// Invariants that do not involve the off-time distribution, shared by
/// [`SystemConfig::validate`] and the config-file loader (which must keep
/// reporting even when the distribution itself failed to construct).
pub(crate) fn structural_violations(
    enabled_levels: &[SleepLevel],
    power_states: &PowerStates,
    max_off_duration: Option<Nanos>,
    solver: &SolverParams,
) -> Vec<Violation> {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;

    if enabled_levels.is_empty() {
        v.push(Violation::new("enabled_levels", "must not be empty"));
    }
    let mut seen = Vec::new();
    for (i, level) in enabled_levels.iter().enumerate() {
        let path = |field: &str| format!("enabled_levels[{i}].{field}");
        if seen.contains(&level.id) {
            v.push(Violation::new(
                &path("id"),
                format!("duplicate level {}", level.id),
            ));
        }
        seen.push(level.id);
        for (field, d) in [
            ("deactivation", level.deactivation),
            ("min_sleep", level.min_sleep),
            ("activation", level.activation),
        ] {
            if d.0 == 0 {
                v.push(Violation::new(&path(field), "duration must be positive"));
            }
        }
        if !level.power_w.is_finite() || level.power_w <= 0.0 {
            v.push(Violation::new(
                &path("power_w"),
                format!("power must be positive, got {}", level.power_w),
            ));
        } else if level.power_w >= power_states.idle_w {
            v.push(Violation::new(
                &path("power_w"),
                format!(
                    "sleep power {} W must be below idle power {} W",
                    level.power_w, power_states.idle_w
                ),
            ));
        }
        if i > 0 {
            let prev = &enabled_levels[i - 1];
            if prev.off_duration() >= level.off_duration() {
                v.push(Violation::new(
                    "enabled_levels",
                    format!(
                        "levels must be sorted by strictly ascending off-duration ({} before {})",
                        prev.id, level.id
                    ),
                ));
            }
        }
        if let Some(cap) = max_off_duration {
            if level.off_duration() > cap {
                v.push(Violation::new(
                    &path("id"),
                    format!(
                        "off-duration {:.6} s exceeds max_off_duration {:.6} s",
                        level.off_duration_s(),
                        cap.as_secs_f64()
                    ),
                ));
            }
        }
    }

    if !power_states.idle_w.is_finite() || power_states.idle_w <= 0.0 {
        v.push(Violation::new(
            "power_states.idle_w",
            "idle power must be positive",
        ));
    }
    if power_states.active_w <= power_states.idle_w {
        v.push(Violation::new(
            "power_states.active_w",
            format!(
                "active power {} W must exceed idle power {} W",
                power_states.active_w, power_states.idle_w
            ),
        ));
    }

    let s = solver;
    if !s.tail_threshold.is_finite() || s.tail_threshold <= 0.0 || s.tail_threshold >= 1.0 {
        v.push(Violation::new(
            "solver.tail_threshold",
            format!("must lie in (0, 1), got {}", s.tail_threshold),
        ));
    }
    if !s.theta.is_finite() || s.theta <= 0.0 {
        v.push(Violation::new(
            "solver.theta",
            format!("must be positive, got {}", s.theta),
        ));
    }
    if s.max_iterations == 0 {
        v.push(Violation::new("solver.max_iterations", "must be at least 1"));
    }
    if s.max_states == 0 {
        v.push(Violation::new("solver.max_states", "must be at least 1"));
    }
    for (key, value) in [("solver.d_norm_s", s.d_norm_s), ("solver.e_norm_j", s.e_norm_j)] {
        if let Some(x) = value {
            if !x.is_finite() || x <= 0.0 {
                v.push(Violation::new(key, format!("must be positive, got {x}")));
            }
        }
    }

    report.violations
}

/// One violated invariant, addressed by the path of the offending field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: &str, message: impl Into<String>) -> Self {
        Violation {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Error)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "configuration invalid ({} problem(s)):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}
