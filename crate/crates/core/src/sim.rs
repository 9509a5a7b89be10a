//! Seeded Monte-Carlo simulation of generic idle periods.
//!
//! Each idle period draws an off-time τ, then executes the policy's block
//! sequence until the first wake-up check that finds the arrival: the
//! first block whose end time reaches τ. The arrival waits T_X − τ where
//! T_X is that block's end. Energy is the sum of P_l·B over executed
//! blocks; the baseline for energy reduction is the idle power over the
//! same horizon. Replications derive their RNG streams from the master
//! seed by counter, and aggregation runs over fixed-size chunks combined
//! in order, so results are bit-identical at any parallelism level.

use crate::mdp::{CostWeights, Policy};
use crate::model::{LevelId, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Replications per aggregation chunk. Fixing the chunk geometry fixes
/// the floating-point reduction order regardless of thread count.
const CHUNK: u64 = 8192;

/// One executed sleep block of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceBlock {
    pub level: LevelId,
    pub start_s: f64,
    pub end_s: f64,
}

/// Full record of one simulated idle period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdleTrace {
    /// Sampled off-time τ.
    pub tau: f64,
    /// Blocks executed until the wake-up that discovers the arrival.
    pub blocks: Vec<TraceBlock>,
    /// End of the final block, T_X.
    pub t_x: f64,
    /// Buffering time of the first arrival, T_X − τ.
    pub added_delay: f64,
    /// Σ P_l · (block length) over executed blocks.
    pub energy_j: f64,
    /// Consecutive-block level changes.
    pub switches: u32,
}

/// Aggregated outcomes of a batch of independent idle periods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub n_periods: u64,
    /// 1 − (Σ energy)/(P_idle · Σ T_X).
    pub energy_reduction: f64,
    pub energy_reduction_stderr: f64,
    pub mean_delay_s: f64,
    pub mean_delay_stderr_s: f64,
    pub mean_t_x_s: f64,
    pub mean_t_x_stderr_s: f64,
    pub mean_energy_j: f64,
    pub mean_switches: f64,
    pub mean_switches_stderr: f64,
    /// Time share of each level over all executed blocks, indexed by
    /// [`LevelId::index`]; shares sum to 1.
    pub level_shares: [f64; 4],
}

/// One row of a weight-grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub weights: CostWeights,
    /// Error text when the solve failed for this grid point.
    pub status: Option<String>,
    /// First 16 hex digits of a digest of the root block sequence.
    pub blocks_digest: String,
    pub switch_count: u32,
    pub metrics: Option<SimMetrics>,
}

/// Counter-based derivation of per-replication seeds from the master
/// seed (a splitmix64 step), so replication `i` gets the same stream no
/// matter which worker runs it.
pub fn replication_seed(master_seed: u64, replication: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(replication.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-level off-duration and power lookup, indexed by [`LevelId::index`].
#[derive(Clone, Copy)]
struct LevelInfo {
    dur_ns: u64,
    power_w: f64,
}

fn level_table(config: &SystemConfig) -> [Option<LevelInfo>; 4] {
    let mut table = [None; 4];
    for l in &config.enabled_levels {
        table[l.id.index()] = Some(LevelInfo {
            dur_ns: l.off_duration().0,
            power_w: l.power_w,
        });
    }
    table
}

/// Walks the policy's block sequence for a fixed τ, invoking `visit` for
/// every executed block; past the materialized horizon the last level
/// repeats. Returns the end of the final block in nanoseconds.
fn walk_blocks<F: FnMut(LevelId, u64, u64)>(
    policy: &Policy,
    table: &[Option<LevelInfo>; 4],
    tau: f64,
    mut visit: F,
) -> u64 {
    let mut k = 0usize;
    let mut start_ns = 0u64;
    let last = *policy.blocks.last().expect("policy has at least one block");
    loop {
        let level = if k < policy.blocks.len() {
            policy.blocks[k].level
        } else {
            last.level
        };
        let info = table[level.index()].expect("policy level is enabled");
        let end_ns = start_ns + info.dur_ns;
        visit(level, start_ns, end_ns);
        if end_ns as f64 * 1e-9 >= tau {
            return end_ns;
        }
        start_ns = end_ns;
        k += 1;
    }
}

/// Simulates one idle period under `policy`, drawing τ from the
/// configured off-time distribution.
pub fn simulate_idle_period<R: Rng + ?Sized>(
    policy: &Policy,
    config: &SystemConfig,
    rng: &mut R,
) -> IdleTrace {
    let table = level_table(config);
    let tau = config.off_time.sample(rng);
    let mut blocks = Vec::new();
    let mut energy = 0.0f64;
    let mut switches = 0u32;
    let mut prev: Option<LevelId> = None;
    let end_ns = walk_blocks(policy, &table, tau, |level, start_ns, end_ns| {
        let len_s = (end_ns - start_ns) as f64 * 1e-9;
        let power = table[level.index()].unwrap().power_w;
        blocks.push(TraceBlock {
            level,
            start_s: start_ns as f64 * 1e-9,
            end_s: end_ns as f64 * 1e-9,
        });
        energy += power * len_s;
        if prev.is_some() && prev != Some(level) {
            switches += 1;
        }
        prev = Some(level);
    });
    let t_x = end_ns as f64 * 1e-9;
    IdleTrace {
        tau,
        blocks,
        t_x,
        added_delay: (t_x - tau).max(0.0),
        energy_j: energy,
        switches,
    }
}

/// Running sums for one aggregation chunk.
#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    n: u64,
    t: f64,
    t2: f64,
    e: f64,
    e2: f64,
    et: f64,
    d: f64,
    d2: f64,
    sw: f64,
    sw2: f64,
    level_time: [f64; 4],
}

impl Accum {
    fn add_trace(&mut self, delay: f64, t_x: f64, energy: f64, switches: u32, time: &[f64; 4]) {
        self.n += 1;
        self.t += t_x;
        self.t2 += t_x * t_x;
        self.e += energy;
        self.e2 += energy * energy;
        self.et += energy * t_x;
        self.d += delay;
        self.d2 += delay * delay;
        let s = switches as f64;
        self.sw += s;
        self.sw2 += s * s;
        for (total, t) in self.level_time.iter_mut().zip(time) {
            *total += t;
        }
    }

    fn merge(&mut self, other: &Accum) {
        self.n += other.n;
        self.t += other.t;
        self.t2 += other.t2;
        self.e += other.e;
        self.e2 += other.e2;
        self.et += other.et;
        self.d += other.d;
        self.d2 += other.d2;
        self.sw += other.sw;
        self.sw2 += other.sw2;
        for (total, t) in self.level_time.iter_mut().zip(&other.level_time) {
            *total += t;
        }
    }
}

fn run_chunk(
    policy: &Policy,
    table: &[Option<LevelInfo>; 4],
    config: &SystemConfig,
    master_seed: u64,
    range: std::ops::Range<u64>,
) -> Accum {
    let mut acc = Accum::default();
    for rep in range {
        let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(master_seed, rep));
        let tau = config.off_time.sample(&mut rng);
        let mut energy = 0.0f64;
        let mut switches = 0u32;
        let mut prev: Option<LevelId> = None;
        let mut time = [0.0f64; 4];
        let end_ns = walk_blocks(policy, table, tau, |level, start_ns, end_ns| {
            let len_s = (end_ns - start_ns) as f64 * 1e-9;
            energy += table[level.index()].unwrap().power_w * len_s;
            time[level.index()] += len_s;
            if prev.is_some() && prev != Some(level) {
                switches += 1;
            }
            prev = Some(level);
        });
        let t_x = end_ns as f64 * 1e-9;
        acc.add_trace((t_x - tau).max(0.0), t_x, energy, switches, &time);
    }
    acc
}

fn sample_var(sum: f64, sumsq: f64, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    ((sumsq - sum * sum / nf) / (nf - 1.0)).max(0.0)
}

/// Aggregates `n_periods` independent idle periods. Replication seeds
/// derive from `master_seed` by counter, so the outcome is independent of
/// execution order and thread count.
pub fn run_experiment(
    policy: &Policy,
    config: &SystemConfig,
    n_periods: u64,
    master_seed: u64,
) -> SimMetrics {
    assert!(n_periods >= 1, "n_periods must be at least 1");
    let table = level_table(config);
    let chunks: Vec<std::ops::Range<u64>> = (0..n_periods)
        .step_by(CHUNK as usize)
        .map(|lo| lo..(lo + CHUNK).min(n_periods))
        .collect();
    let partials: Vec<Accum> = chunks
        .into_par_iter()
        .map(|range| run_chunk(policy, &table, config, master_seed, range))
        .collect();
    let mut acc = Accum::default();
    for p in &partials {
        acc.merge(p);
    }

    let n = acc.n;
    let nf = n as f64;
    let mean_t = acc.t / nf;
    let mean_e = acc.e / nf;
    let mean_d = acc.d / nf;
    let mean_sw = acc.sw / nf;
    let p_idle = config.power_states.idle_w;

    let var_t = sample_var(acc.t, acc.t2, n);
    let var_e = sample_var(acc.e, acc.e2, n);
    let var_d = sample_var(acc.d, acc.d2, n);
    let var_sw = sample_var(acc.sw, acc.sw2, n);
    let cov_et = if n < 2 {
        0.0
    } else {
        (acc.et - acc.e * acc.t / nf) / (nf - 1.0)
    };

    // delta method for R = 1 - mean_e / (P_idle * mean_t)
    let er = 1.0 - mean_e / (p_idle * mean_t);
    let de = -1.0 / (p_idle * mean_t);
    let dt = mean_e / (p_idle * mean_t * mean_t);
    let var_er = (de * de * var_e + dt * dt * var_t + 2.0 * de * dt * cov_et) / nf;

    let mut level_shares = [0.0f64; 4];
    if acc.t > 0.0 {
        for (share, t) in level_shares.iter_mut().zip(&acc.level_time) {
            *share = t / acc.t;
        }
    }

    SimMetrics {
        n_periods: n,
        energy_reduction: er,
        energy_reduction_stderr: var_er.max(0.0).sqrt(),
        mean_delay_s: mean_d,
        mean_delay_stderr_s: (var_d / nf).sqrt(),
        mean_t_x_s: mean_t,
        mean_t_x_stderr_s: (var_t / nf).sqrt(),
        mean_energy_j: mean_e,
        mean_switches: mean_sw,
        mean_switches_stderr: (var_sw / nf).sqrt(),
        level_shares,
    }
}

fn blocks_digest(policy: &Policy) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for b in &policy.blocks {
        h.update(b.start.0.to_le_bytes());
        h.update([b.level.index() as u8]);
    }
    let out = h.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Solves and simulates every grid point independently with a shared
/// master seed (common random numbers across rows). Solver failures are
/// reported in the row status without aborting the sweep.
pub fn sweep(
    config: &SystemConfig,
    grid: &[CostWeights],
    n_periods: u64,
    master_seed: u64,
) -> Vec<SweepRow> {
    grid.iter()
        .map(|w| {
            let solved = crate::mdp::build_state_space(config, w).and_then(|space| {
                let table = crate::mdp::value_iteration(&space, w, config.solver.theta)?;
                Ok(crate::mdp::extract_policy(&space, &table, w))
            });
            match solved {
                Ok(policy) => {
                    let metrics = run_experiment(&policy, config, n_periods, master_seed);
                    SweepRow {
                        weights: *w,
                        status: None,
                        blocks_digest: blocks_digest(&policy),
                        switch_count: policy.switch_count(),
                        metrics: Some(metrics),
                    }
                }
                Err(err) => SweepRow {
                    weights: *w,
                    status: Some(err.to_string()),
                    blocks_digest: String::new(),
                    switch_count: 0,
                    metrics: None,
                },
            }
        })
        .collect()
}
