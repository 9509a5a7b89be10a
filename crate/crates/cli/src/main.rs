//! Command-line front end: validate configurations, solve for sleep
//! policies, replay them in the simulator, and sweep weight grids.

mod grid;

use asmopt_core::config::ConfigError;
use asmopt_core::{
    build_state_space, extract_policy, load_config, space_digest, sweep, value_iteration,
    CostWeights, LevelId, LoadedConfig, MdpError, Policy, PolicyFile, SimMetrics, SystemConfig,
};
use clap::{Parser, Subcommand};
use grid::{parse_grid, GridVar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "asmopt",
    version,
    about = "Sleep-mode policy optimization for 5G base stations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a configuration, echoing the effective system.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve for the optimal policy and write policy.json + timeline.csv.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Delay weight override.
        #[arg(long)]
        eps1: Option<f64>,
        /// Energy weight override (default: 1 - eps1 - eps3).
        #[arg(long)]
        eps2: Option<f64>,
        /// Switching weight override.
        #[arg(long)]
        eps3: Option<f64>,
    },
    /// Replay a solved policy in the simulator and write metrics.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// policy.json produced by solve.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Idle periods to simulate (default from config).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        periods: Option<u64>,
        /// Master seed (default from config).
        #[arg(long)]
        seed: Option<u64>,
        /// Also dump the first N traces to traces.jsonl.
        #[arg(long, default_value_t = 0)]
        dump_traces: u64,
    },
    /// Solve and simulate a grid of cost weights; write results.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid spec: eps1=start:stop:step or eps3=a,b,c.
        #[arg(long)]
        grid: String,
        /// Fixed eps1 when sweeping eps3.
        #[arg(long)]
        eps1: Option<f64>,
        /// Fixed eps3 when sweeping eps1 (default 0).
        #[arg(long)]
        eps3: Option<f64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        periods: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Solver(#[from] MdpError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("policy file {path} is not valid JSON: {source}")]
    PolicyParse {
        path: String,
        source: serde_json::Error,
    },
    #[error(
        "policy digest {policy} does not match this configuration's digest {config}; \
         re-solve with the current config"
    )]
    DigestMismatch { policy: String, config: String },
}

/// Exit codes: 2 configuration/usage, 3 solver, 4 I/O, 5 digest mismatch.
fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Config(_) | CliError::Usage(_) | CliError::PolicyParse { .. } => 2,
        CliError::Solver(_) => 3,
        CliError::Write { .. } | CliError::Read { .. } => 4,
        CliError::DigestMismatch { .. } => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Solve {
            config,
            out,
            eps1,
            eps2,
            eps3,
        } => cmd_solve(&config, &out, eps1, eps2, eps3),
        Command::Simulate {
            config,
            policy,
            out,
            periods,
            seed,
            dump_traces,
        } => cmd_simulate(&config, &policy, &out, periods, seed, dump_traces),
        Command::Sweep {
            config,
            out,
            grid,
            eps1,
            eps3,
            periods,
            seed,
        } => cmd_sweep(&config, &out, &grid, eps1, eps3, periods, seed),
    }
}

fn resolve_weights(
    base: CostWeights,
    eps1: Option<f64>,
    eps2: Option<f64>,
    eps3: Option<f64>,
) -> Result<CostWeights, CliError> {
    if eps1.is_none() && eps2.is_none() && eps3.is_none() {
        return Ok(base);
    }
    let e1 = eps1.unwrap_or(base.eps1);
    let e3 = eps3.unwrap_or(if eps1.is_some() { 0.0 } else { base.eps3 });
    let e2 = eps2.unwrap_or(1.0 - e1 - e3);
    CostWeights::new(e1, e2, e3).map_err(|e| CliError::Usage(e.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.display().to_string(),
        source,
    })
}

fn cmd_validate(config: &Path) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let sys = &loaded.system;
    println!("configuration OK: {}", config.display());
    println!("enabled levels:");
    for l in &sys.enabled_levels {
        println!(
            "  {}: deactivation {} us, min sleep {} us, activation {} us, off {} ms, power {} W",
            l.id,
            l.deactivation.0 as f64 / 1e3,
            l.min_sleep.0 as f64 / 1e3,
            l.activation.0 as f64 / 1e3,
            l.off_duration().0 as f64 / 1e6,
            l.power_w
        );
    }
    println!(
        "power states: active {} W, idle {} W",
        sys.power_states.active_w, sys.power_states.idle_w
    );
    println!(
        "off-time: rates {:?} 1/s, weights {:?}, mean {} s",
        sys.off_time.rates(),
        sys.off_time.weights(),
        sys.off_time.mean()
    );
    println!(
        "solver: tail_threshold {:e}, theta {:e}, max_iterations {}, max_states {}",
        sys.solver.tail_threshold,
        sys.solver.theta,
        sys.solver.max_iterations,
        sys.solver.max_states
    );
    println!(
        "normalization: d_norm {} s, e_norm {} J",
        sys.d_norm_s(),
        sys.e_norm_j()
    );
    println!(
        "weights: eps1 {} eps2 {} eps3 {}",
        loaded.weights.eps1, loaded.weights.eps2, loaded.weights.eps3
    );
    println!(
        "simulation defaults: n_periods {}, master_seed {}",
        loaded.simulation.n_periods, loaded.simulation.master_seed
    );
    Ok(())
}

fn solve_policy(
    system: &SystemConfig,
    w: &CostWeights,
) -> Result<(PolicyFile, Policy), CliError> {
    let space = build_state_space(system, w)?;
    let table = value_iteration(&space, w, system.solver.theta)?;
    let policy = extract_policy(&space, &table, w);
    Ok((PolicyFile::new(&space, &table, &policy, w), policy))
}

fn cmd_solve(
    config: &Path,
    out: &Path,
    eps1: Option<f64>,
    eps2: Option<f64>,
    eps3: Option<f64>,
) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let w = resolve_weights(loaded.weights, eps1, eps2, eps3)?;
    let (file, policy) = solve_policy(&loaded.system, &w)?;

    ensure_out_dir(out)?;
    write_file(&out.join("policy.json"), &file.to_json())?;

    let mut timeline = String::from("start_s,level\n");
    for b in &policy.blocks {
        timeline.push_str(&format!("{},{}\n", b.start.as_secs_f64(), b.level.name()));
    }
    write_file(&out.join("timeline.csv"), &timeline)?;

    println!(
        "solved: {} states, {} blocks, {} switches, digest {}",
        file.states.len(),
        policy.blocks.len(),
        policy.switch_count(),
        &policy.digest[..16]
    );
    println!("wrote {}", out.join("policy.json").display());
    println!("wrote {}", out.join("timeline.csv").display());
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const METRIC_COLUMNS: &str = "n_periods,energy_reduction,energy_reduction_stderr,\
mean_delay_s,mean_delay_stderr_s,mean_t_x_s,mean_t_x_stderr_s,mean_energy_j,\
mean_switches,mean_switches_stderr,w_sm1,w_sm2,w_sm3,w_sm4";

fn metric_fields(m: &SimMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.n_periods,
        m.energy_reduction,
        m.energy_reduction_stderr,
        m.mean_delay_s,
        m.mean_delay_stderr_s,
        m.mean_t_x_s,
        m.mean_t_x_stderr_s,
        m.mean_energy_j,
        m.mean_switches,
        m.mean_switches_stderr,
        m.level_shares[LevelId::Sm1.index()],
        m.level_shares[LevelId::Sm2.index()],
        m.level_shares[LevelId::Sm3.index()],
        m.level_shares[LevelId::Sm4.index()],
    )
}

fn cmd_simulate(
    config: &Path,
    policy_path: &Path,
    out: &Path,
    periods: Option<u64>,
    seed: Option<u64>,
    dump_traces: u64,
) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let text = std::fs::read_to_string(policy_path).map_err(|source| CliError::Read {
        path: policy_path.display().to_string(),
        source,
    })?;
    let file = PolicyFile::from_json(&text).map_err(|source| CliError::PolicyParse {
        path: policy_path.display().to_string(),
        source,
    })?;

    let expected = space_digest(&loaded.system, file.split_prev);
    if expected != file.digest {
        return Err(CliError::DigestMismatch {
            policy: file.digest.chars().take(16).collect(),
            config: expected.chars().take(16).collect(),
        });
    }

    let policy = file.to_policy();
    let n_periods = periods.unwrap_or(loaded.simulation.n_periods).max(1);
    let master_seed = seed.unwrap_or(loaded.simulation.master_seed);
    let metrics = asmopt_core::run_experiment(&policy, &loaded.system, n_periods, master_seed);

    ensure_out_dir(out)?;
    let csv = format!("{METRIC_COLUMNS}\n{}\n", metric_fields(&metrics));
    write_file(&out.join("metrics.csv"), &csv)?;
    println!(
        "simulated {} periods: energy reduction {:.4}, mean delay {:.6} s, mean switches {:.3}",
        metrics.n_periods, metrics.energy_reduction, metrics.mean_delay_s, metrics.mean_switches
    );
    println!("wrote {}", out.join("metrics.csv").display());

    if dump_traces > 0 {
        let mut lines = String::new();
        for rep in 0..dump_traces {
            let mut rng = ChaCha8Rng::seed_from_u64(asmopt_core::sim::replication_seed(
                master_seed,
                rep,
            ));
            let trace = asmopt_core::simulate_idle_period(&policy, &loaded.system, &mut rng);
            lines.push_str(&serde_json::to_string(&trace).expect("trace serializes"));
            lines.push('\n');
        }
        write_file(&out.join("traces.jsonl"), &lines)?;
        println!("wrote {}", out.join("traces.jsonl").display());
    }
    Ok(())
}

fn sweep_grid(
    loaded: &LoadedConfig,
    spec: &str,
    eps1: Option<f64>,
    eps3: Option<f64>,
) -> Result<Vec<CostWeights>, CliError> {
    let parsed = parse_grid(spec).map_err(CliError::Usage)?;
    let fixed_eps1 = eps1.unwrap_or(loaded.weights.eps1);
    let fixed_eps3 = eps3.unwrap_or(0.0);
    parsed
        .values
        .iter()
        .map(|&v| {
            let (e1, e3) = match parsed.var {
                GridVar::Eps1 => (v, fixed_eps3),
                GridVar::Eps3 => (fixed_eps1, v),
            };
            CostWeights::new(e1, 1.0 - e1 - e3, e3).map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn cmd_sweep(
    config: &Path,
    out: &Path,
    spec: &str,
    eps1: Option<f64>,
    eps3: Option<f64>,
    periods: Option<u64>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let grid = sweep_grid(&loaded, spec, eps1, eps3)?;
    let n_periods = periods.unwrap_or(loaded.simulation.n_periods).max(1);
    let master_seed = seed.unwrap_or(loaded.simulation.master_seed);

    let rows = sweep(&loaded.system, &grid, n_periods, master_seed);

    ensure_out_dir(out)?;
    let mut csv = format!("eps1,eps2,eps3,status,blocks_digest,switch_count,{METRIC_COLUMNS}\n");
    for row in &rows {
        let status = row.status.as_deref().unwrap_or("ok");
        let metrics = match &row.metrics {
            Some(m) => metric_fields(m),
            None => ",".repeat(13),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.weights.eps1,
            row.weights.eps2,
            row.weights.eps3,
            csv_field(status),
            row.blocks_digest,
            row.switch_count,
            metrics
        ));
    }
    write_file(&out.join("results.csv"), &csv)?;

    let failed = rows.iter().filter(|r| r.status.is_some()).count();
    println!(
        "swept {} grid points ({} failed), {} periods each",
        rows.len(),
        failed,
        n_periods
    );
    println!("wrote {}", out.join("results.csv").display());
    Ok(())
}
