//! Finite-horizon MDP over residual off-time distributions.
//!
//! Decision epochs are the ends of sleep blocks. The state is the
//! conditional residual off-time distribution, identified exactly by the
//! integer-nanosecond elapsed time since the idle period began (the
//! residual weights are a deterministic function of elapsed time), plus
//! the previously chosen level when a switching cost is active. Actions
//! are the enabled sleep levels; choosing level `l` advances elapsed time
//! by its off-duration and survives (no arrival in the block) with the
//! residual tail probability.
//!
//! The per-stage cost is
//!
//! ```text
//! c(q, b) = ε₁·E[(b−τ(q))·1{τ(q)≤b}]/D + ε₂·(P_l·b)/E + ε₃·β
//! ```
//!
//! with β = 1 when the chosen level differs from the previous one. `D`
//! and `E` default to the per-stage maxima over the enabled actions
//! (largest off-duration, and largest sleep power times largest
//! off-duration), placing both terms in [0, 1]; scaling both by a common
//! factor provably leaves the argmin unchanged. States whose survival
//! probability from the root falls below the tail threshold δ are
//! terminal with zero continuation value, which bounds the truncation
//! error by δ·V_max.

use crate::hyperexp::{HyperExp, HyperExpError, ResidualWeights};
use crate::model::{LevelId, Nanos, SleepLevel, SystemConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("level {0} is not enabled in this configuration")]
    LevelNotEnabled(LevelId),
    #[error(
        "state space exceeded the cap of {cap} states at tail threshold delta={delta:e}; \
         raise solver.tail_threshold or solver.max_states"
    )]
    StateCapExceeded { cap: usize, delta: f64 },
    #[error("value iteration did not converge after {iterations} iterations (final delta = {delta:e})")]
    NonConvergence { iterations: u32, delta: f64 },
    #[error(transparent)]
    Kernel(#[from] HyperExpError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cost weights must lie in [0,1] and sum to 1 within 1e-12, got ({eps1}, {eps2}, {eps3})")]
pub struct WeightsError {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

/// Weights of the three stage-cost terms: delay, energy, switching.
/// They sum to 1; ε₃ = 0 recovers the two-term cost with ε₂ = 1 − ε₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

impl CostWeights {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(eps1: f64, eps2: f64, eps3: f64) -> Result<Self, WeightsError> {
        let ok = [eps1, eps2, eps3]
            .iter()
            .all(|e| e.is_finite() && (-Self::SUM_TOL..=1.0 + Self::SUM_TOL).contains(e))
            && ((eps1 + eps2 + eps3) - 1.0).abs() <= Self::SUM_TOL;
        if ok {
            Ok(CostWeights { eps1, eps2, eps3 })
        } else {
            Err(WeightsError { eps1, eps2, eps3 })
        }
    }

    /// Delay/energy split without a switching term.
    pub fn delay_energy(eps1: f64) -> Result<Self, WeightsError> {
        Self::new(eps1, 1.0 - eps1, 0.0)
    }
}

/// Stage-cost normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub d_norm_s: f64,
    pub e_norm_j: f64,
}

impl Normalization {
    pub fn for_config(config: &SystemConfig) -> Self {
        Normalization {
            d_norm_s: config.d_norm_s(),
            e_norm_j: config.e_norm_j(),
        }
    }
}

/// One node of the finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct DpState {
    pub residual: ResidualWeights,
    pub elapsed: Nanos,
    pub prev_level: Option<LevelId>,
}

/// Precomputed consequences of taking one action in one state.
#[derive(Debug, Clone, Copy)]
struct ActionArc {
    level: usize,
    next: usize,
    survive: f64,
    overshoot_s: f64,
    energy_j: f64,
    switch: bool,
}

/// Finite set of states reachable from the root, as a merged DAG.
#[derive(Debug, Clone)]
pub struct StateSpace {
    levels: Vec<SleepLevel>,
    off_time: HyperExp,
    delta: f64,
    split_prev: bool,
    norm: Normalization,
    max_iterations: u32,
    states: Vec<DpState>,
    tail_from_root: Vec<f64>,
    terminal: Vec<bool>,
    actions: Vec<Vec<ActionArc>>,
    digest: String,
}

/// Outcome of value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub converged: bool,
    pub iterations: u32,
    pub final_delta: f64,
}

/// One step of the deterministic block sequence induced from the root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStep {
    pub start: Nanos,
    pub level: LevelId,
}

/// Deterministic state → level map plus the induced root block sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// Chosen level per state, aligned with [`StateSpace::states`].
    pub decisions: Vec<LevelId>,
    /// Greedy trajectory from the root, one entry per block started while
    /// the survival probability is still above the tail threshold.
    pub blocks: Vec<BlockStep>,
    /// Digest of the state-space identity this policy was solved on.
    pub digest: String,
}

/// Closed-form evaluation of a deterministic block sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticCost {
    /// E[τ] — mean off-time.
    pub expected_off_time_s: f64,
    /// E[T_X] — mean time of the wake-up that discovers the arrival.
    pub expected_wakeup_s: f64,
    /// E[T_X] − E[τ].
    pub mean_added_delay_s: f64,
    /// Expected energy spent in sleep blocks over one idle period.
    pub expected_energy_j: f64,
    /// Realized per-level time shares w_l (survival-mass weighted),
    /// indexed by [`LevelId::index`].
    pub level_time_shares: [f64; 4],
    /// Weighted combination −ε₁E[τ] + (ε₁ + ε₂ Σ w_l P_l)·E[T_X]
    /// in raw SI units; a closed-form cross-check of simulation.
    pub cost_value: f64,
}

impl StateSpace {
    pub fn levels(&self) -> &[SleepLevel] {
        &self.levels
    }

    pub fn off_time(&self) -> &HyperExp {
        &self.off_time
    }

    pub fn states(&self) -> &[DpState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the root state (elapsed 0, no previous level).
    pub fn root(&self) -> usize {
        0
    }

    pub fn is_terminal(&self, idx: usize) -> bool {
        self.terminal[idx]
    }

    /// Survival probability of reaching this state from the root, i.e.
    /// the unconditional tail at its elapsed time.
    pub fn tail_from_root(&self, idx: usize) -> f64 {
        self.tail_from_root[idx]
    }

    pub fn split_prev(&self) -> bool {
        self.split_prev
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn tail_threshold(&self) -> f64 {
        self.delta
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Longest action path from the root to a terminal state.
    pub fn depth(&self) -> usize {
        let b_min = self
            .levels
            .iter()
            .map(|l| l.off_duration().0)
            .min()
            .unwrap_or(1);
        let max_elapsed = self.states.iter().map(|s| s.elapsed.0).max().unwrap_or(0);
        (max_elapsed / b_min) as usize
    }

    fn level_index(&self, id: LevelId) -> Result<usize, MdpError> {
        self.levels
            .iter()
            .position(|l| l.id == id)
            .ok_or(MdpError::LevelNotEnabled(id))
    }

    /// Per-stage cost of starting one `level` block in `state`.
    pub fn stage_cost(
        &self,
        state: &DpState,
        level: &SleepLevel,
        w: &CostWeights,
    ) -> Result<f64, MdpError> {
        self.level_index(level.id)?;
        let b = level.off_duration_s();
        let overshoot = self.off_time.expected_overshoot(&state.residual, b)?;
        let switch = state.prev_level.is_some() && state.prev_level != Some(level.id);
        Ok(self.stage_cost_terms(overshoot, level.power_w * b, switch, w, &self.norm))
    }

    fn stage_cost_terms(
        &self,
        overshoot_s: f64,
        energy_j: f64,
        switch: bool,
        w: &CostWeights,
        norm: &Normalization,
    ) -> f64 {
        let beta = if switch { 1.0 } else { 0.0 };
        w.eps1 * overshoot_s / norm.d_norm_s + w.eps2 * energy_j / norm.e_norm_j + w.eps3 * beta
    }

    /// Successor state and survival probability for one `level` block.
    pub fn transition(
        &self,
        state: &DpState,
        level: &SleepLevel,
    ) -> Result<(DpState, f64), MdpError> {
        let b = level.off_duration_s();
        let residual = self.off_time.residual(&state.residual, b)?;
        let survive = self.off_time.tail_from(&state.residual, b)?;
        let next = DpState {
            residual,
            elapsed: Nanos(state.elapsed.0 + level.off_duration().0),
            prev_level: Some(level.id),
        };
        Ok((next, survive))
    }
}

/// Digest of everything that determines the state space and block
/// geometry: enabled levels, reference powers, off-time distribution,
/// tail threshold, and whether states are split by previous level.
pub fn space_digest(config: &SystemConfig, split_prev: bool) -> String {
    let mut h = Sha256::new();
    h.update(b"asmopt-space-v1");
    for l in &config.enabled_levels {
        h.update(l.id.name().as_bytes());
        for v in [l.deactivation.0, l.min_sleep.0, l.activation.0] {
            h.update(v.to_le_bytes());
        }
        h.update(l.power_w.to_bits().to_le_bytes());
    }
    h.update(config.power_states.active_w.to_bits().to_le_bytes());
    h.update(config.power_states.idle_w.to_bits().to_le_bytes());
    for &r in config.off_time.rates() {
        h.update(r.to_bits().to_le_bytes());
    }
    for &q in config.off_time.weights() {
        h.update(q.to_bits().to_le_bytes());
    }
    h.update(config.solver.tail_threshold.to_bits().to_le_bytes());
    h.update([split_prev as u8]);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Breadth-first expansion of the reachable states. Two states merge iff
/// their exact elapsed nanoseconds (and previous level, when ε₃ > 0)
/// coincide. Expansion stops at states whose survival probability from
/// the root falls below δ; those become terminal.
pub fn build_state_space(config: &SystemConfig, w: &CostWeights) -> Result<StateSpace, MdpError> {
    let split_prev = w.eps3 > 0.0;
    let delta = config.solver.tail_threshold;
    let cap = config.solver.max_states;
    let levels = config.enabled_levels.clone();
    let off_time = config.off_time.clone();
    let q0 = off_time.initial_weights();

    let mut states: Vec<DpState> = Vec::new();
    let mut tails: Vec<f64> = Vec::new();
    let mut index: HashMap<(u64, Option<LevelId>), usize> = HashMap::new();
    let mut queue: VecDeque<usize> = VecDeque::new();

    let root = DpState {
        residual: q0.clone(),
        elapsed: Nanos(0),
        prev_level: None,
    };
    states.push(root);
    tails.push(1.0);
    index.insert((0, None), 0);
    queue.push_back(0);

    let mut arcs: Vec<Vec<ActionArc>> = vec![Vec::new()];
    let mut terminal: Vec<bool> = vec![false];

    while let Some(i) = queue.pop_front() {
        if tails[i] < delta {
            terminal[i] = true;
            continue;
        }
        let residual = states[i].residual.clone();
        let elapsed = states[i].elapsed;
        let mut out = Vec::with_capacity(levels.len());
        for (li, level) in levels.iter().enumerate() {
            let b = level.off_duration_s();
            let next_elapsed = Nanos(elapsed.0 + level.off_duration().0);
            let key = (
                next_elapsed.0,
                if split_prev { Some(level.id) } else { None },
            );
            let next = match index.get(&key) {
                Some(&j) => j,
                None => {
                    let j = states.len();
                    if j >= cap {
                        return Err(MdpError::StateCapExceeded { cap, delta });
                    }
                    let t = next_elapsed.as_secs_f64();
                    states.push(DpState {
                        residual: off_time.residual(&q0, t)?,
                        elapsed: next_elapsed,
                        prev_level: if split_prev { Some(level.id) } else { None },
                    });
                    tails.push(off_time.tail(t)?);
                    arcs.push(Vec::new());
                    terminal.push(false);
                    index.insert(key, j);
                    queue.push_back(j);
                    j
                }
            };
            out.push(ActionArc {
                level: li,
                next,
                survive: off_time.tail_from(&residual, b)?,
                overshoot_s: off_time.expected_overshoot(&residual, b)?,
                energy_j: level.power_w * b,
                switch: states[i].prev_level.is_some()
                    && states[i].prev_level != Some(level.id),
            });
        }
        arcs[i] = out;
    }

    Ok(StateSpace {
        digest: space_digest(config, split_prev),
        levels,
        off_time,
        delta,
        split_prev,
        norm: Normalization::for_config(config),
        max_iterations: config.solver.max_iterations,
        states,
        tail_from_root: tails,
        terminal,
        actions: arcs,
    })
}

fn bellman_min(
    space: &StateSpace,
    idx: usize,
    values: &[f64],
    w: &CostWeights,
    norm: &Normalization,
) -> f64 {
    let mut best = f64::INFINITY;
    for arc in &space.actions[idx] {
        let c = space.stage_cost_terms(arc.overshoot_s, arc.energy_j, arc.switch, w, norm);
        let q = c + arc.survive * values[arc.next];
        if q < best {
            best = q;
        }
    }
    best
}

/// Jacobi value iteration: each sweep reads only the previous sweep's
/// table, so per-state updates run in parallel and results are
/// bit-identical to the sequential order; Δ is reduced sequentially.
/// Terminal states stay fixed at 0.
pub fn value_iteration(
    space: &StateSpace,
    w: &CostWeights,
    theta: f64,
) -> Result<ValueTable, MdpError> {
    let norm = space.norm;
    let n = space.len();
    let mut values = vec![0.0f64; n];
    let max_iterations = space.max_iterations.max(1);
    let mut iterations = 0u32;
    loop {
        iterations += 1;
        let prev = &values;
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                if space.terminal[i] {
                    0.0
                } else {
                    bellman_min(space, i, prev, w, &norm)
                }
            })
            .collect();
        let mut delta = 0.0f64;
        for i in 0..n {
            let d = (next[i] - values[i]).abs();
            if d > delta {
                delta = d;
            }
        }
        values = next;
        if delta < theta {
            return Ok(ValueTable {
                values,
                converged: true,
                iterations,
                final_delta: delta,
            });
        }
        if iterations >= max_iterations {
            return Err(MdpError::NonConvergence { iterations, delta });
        }
    }
}

fn greedy_decision(
    space: &StateSpace,
    idx: usize,
    values: &[f64],
    w: &CostWeights,
    norm: &Normalization,
) -> LevelId {
    if space.terminal[idx] {
        // beyond the truncation frontier the continuation is zero by
        // construction, so the decision is the myopic stage-cost argmin
        let state = &space.states[idx];
        let mut best = f64::INFINITY;
        let mut pick = space.levels[0].id;
        for level in &space.levels {
            let b = level.off_duration_s();
            let overshoot = space
                .off_time
                .expected_overshoot(&state.residual, b)
                .expect("off-durations are non-negative");
            let switch = state.prev_level.is_some() && state.prev_level != Some(level.id);
            let c = space.stage_cost_terms(overshoot, level.power_w * b, switch, w, norm);
            if c < best {
                best = c;
                pick = level.id;
            }
        }
        return pick;
    }
    let mut best = f64::INFINITY;
    let mut pick = space.levels[space.actions[idx][0].level].id;
    // actions are stored in ascending off-duration order, so keeping the
    // first minimum implements the lightest-level tie-break
    for arc in &space.actions[idx] {
        let c = space.stage_cost_terms(arc.overshoot_s, arc.energy_j, arc.switch, w, &space.norm);
        let q = c + arc.survive * values[arc.next];
        if q < best {
            best = q;
            pick = space.levels[arc.level].id;
        }
    }
    pick
}

/// Greedy policy extraction with deterministic lightest-level
/// tie-breaking, plus the induced root-to-horizon block sequence.
pub fn extract_policy(space: &StateSpace, table: &ValueTable, w: &CostWeights) -> Policy {
    let norm = space.norm;
    let decisions: Vec<LevelId> = (0..space.len())
        .map(|i| greedy_decision(space, i, &table.values, w, &norm))
        .collect();

    let mut blocks = Vec::new();
    let mut idx = space.root();
    while !space.terminal[idx] {
        let level_id = decisions[idx];
        blocks.push(BlockStep {
            start: space.states[idx].elapsed,
            level: level_id,
        });
        let arc = space.actions[idx]
            .iter()
            .find(|a| space.levels[a.level].id == level_id)
            .expect("decision refers to an enabled action");
        idx = arc.next;
    }

    Policy {
        decisions,
        blocks,
        digest: space.digest.clone(),
    }
}

impl Policy {
    /// The constant policy that always chooses `level` (must be enabled).
    pub fn uniform(space: &StateSpace, level: LevelId) -> Result<Policy, MdpError> {
        space.level_index(level)?;
        let decisions = vec![level; space.len()];
        let mut blocks = Vec::new();
        let mut idx = space.root();
        while !space.terminal[idx] {
            blocks.push(BlockStep {
                start: space.states[idx].elapsed,
                level,
            });
            let arc = space.actions[idx]
                .iter()
                .find(|a| space.levels[a.level].id == level)
                .expect("enabled level has an arc");
            idx = arc.next;
        }
        Ok(Policy {
            decisions,
            blocks,
            digest: space.digest.clone(),
        })
    }

    /// Number of consecutive-block level changes in the root sequence.
    pub fn switch_count(&self) -> u32 {
        self.blocks
            .windows(2)
            .filter(|w| w[0].level != w[1].level)
            .count() as u32
    }
}

/// Expected per-period cost of following `policy`'s decisions, state by
/// state (the fixed-point of the policy's own Bellman operator, solved by
/// one backward pass over the DAG).
pub fn evaluate_policy(space: &StateSpace, policy: &Policy, w: &CostWeights) -> Vec<f64> {
    let norm = space.norm;
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(space.states[i].elapsed.0));
    let mut values = vec![0.0f64; space.len()];
    for &i in &order {
        if space.terminal[i] {
            continue;
        }
        let level_id = policy.decisions[i];
        let arc = space.actions[i]
            .iter()
            .find(|a| space.levels[a.level].id == level_id)
            .expect("policy decision is an enabled action");
        let c = space.stage_cost_terms(arc.overshoot_s, arc.energy_j, arc.switch, w, &norm);
        values[i] = c + arc.survive * values[arc.next];
    }
    values
}

/// Closed-form metrics of a deterministic block sequence:
/// E[T_X] = Σ_k P(τ > T_k)·B_{k+1}, with energy and per-level time shares
/// weighted the same way, truncated where the block sequence ends (tail
/// below δ).
pub fn analytic_cost(
    policy: &Policy,
    config: &SystemConfig,
    w: &CostWeights,
) -> Result<AnalyticCost, MdpError> {
    let off_time = &config.off_time;
    let mut expected_wakeup = 0.0f64;
    let mut expected_energy = 0.0f64;
    let mut level_time = [0.0f64; 4];
    for step in &policy.blocks {
        let level = config
            .level(step.level)
            .ok_or(MdpError::LevelNotEnabled(step.level))?;
        let b = level.off_duration_s();
        let reach = off_time.tail(step.start.as_secs_f64())?;
        expected_wakeup += reach * b;
        expected_energy += reach * b * level.power_w;
        level_time[step.level.index()] += reach * b;
    }
    let expected_off_time = off_time.mean();
    let mut shares = [0.0f64; 4];
    if expected_wakeup > 0.0 {
        for (s, t) in shares.iter_mut().zip(level_time) {
            *s = t / expected_wakeup;
        }
    }
    let mean_power: f64 = config
        .enabled_levels
        .iter()
        .map(|l| shares[l.id.index()] * l.power_w)
        .sum();
    let eta = w.eps1 + w.eps2 * mean_power;
    Ok(AnalyticCost {
        expected_off_time_s: expected_off_time,
        expected_wakeup_s: expected_wakeup,
        mean_added_delay_s: expected_wakeup - expected_off_time,
        expected_energy_j: expected_energy,
        level_time_shares: shares,
        cost_value: -w.eps1 * expected_off_time + eta * expected_wakeup,
    })
}

/// Serialized form of a solved policy: per-state decisions and values,
/// the root block sequence, and the state-space digest that ties the file
/// to the configuration it was solved on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format_version: u32,
    pub digest: String,
    pub split_prev: bool,
    pub weights: CostWeights,
    pub normalization: Normalization,
    pub iterations: u32,
    pub final_delta: f64,
    pub states: Vec<PolicyStateRow>,
    pub blocks: Vec<BlockStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStateRow {
    pub elapsed_ns: u64,
    pub prev_level: Option<LevelId>,
    pub chosen_level: LevelId,
    pub value: f64,
}

pub const POLICY_FORMAT_VERSION: u32 = 1;

impl PolicyFile {
    pub fn new(
        space: &StateSpace,
        table: &ValueTable,
        policy: &Policy,
        w: &CostWeights,
    ) -> PolicyFile {
        let states = space
            .states()
            .iter()
            .enumerate()
            .map(|(i, s)| PolicyStateRow {
                elapsed_ns: s.elapsed.0,
                prev_level: s.prev_level,
                chosen_level: policy.decisions[i],
                value: table.values[i],
            })
            .collect();
        PolicyFile {
            format_version: POLICY_FORMAT_VERSION,
            digest: policy.digest.clone(),
            split_prev: space.split_prev,
            weights: *w,
            normalization: space.norm,
            iterations: table.iterations,
            final_delta: table.final_delta,
            states,
            blocks: policy.blocks.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("policy file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<PolicyFile, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reconstructs the in-memory policy (decisions follow the serialized
    /// state order, which is the deterministic build order).
    pub fn to_policy(&self) -> Policy {
        Policy {
            decisions: self.states.iter().map(|r| r.chosen_level).collect(),
            blocks: self.blocks.clone(),
            digest: self.digest.clone(),
        }
    }
}
