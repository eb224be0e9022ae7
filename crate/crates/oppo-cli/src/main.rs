use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use oppo::harness::{emit_all, summarize, sweep, RunConfig};
use oppo::lemma::run_all;
use oppo::par::Execution;
use oppo::seed::rng_from_seed;
use oppo::{AgentKind, LinearMdp};

/// Regret simulator for optimistic multi-batched policy optimization.
///
/// Sweeps and lemma suites use `OPPO_WORKERS` threads (default: all cores).
#[derive(Parser)]
#[command(name = "oppo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its CSV series and JSON summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed` from the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run the cartesian product of one or more grids over a base configuration.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `KEY=v1,v2,...` with KEY one of K, c_beta, agent_kind, seed. Repeatable.
        #[arg(long, required = true)]
        grid: Vec<String>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run the randomized lemma suites and print their reports as JSON.
    Check {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a generated instance to a JSON file.
    Gen {
        #[arg(long, default_value = "simplex")]
        kind: String,
        #[arg(long)]
        d: usize,
        #[arg(long = "states", short = 'S', default_value_t = 10)]
        states: usize,
        #[arg(long = "actions", short = 'A', default_value_t = 3)]
        actions: usize,
        #[arg(long = "horizon", short = 'H', default_value_t = 4)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the regret exponent over the summaries in a results directory.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn apply_grid(base: Vec<RunConfig>, spec: &str) -> Result<Vec<RunConfig>> {
    let (key, values) = spec
        .split_once('=')
        .with_context(|| format!("grid `{spec}` is not KEY=v1,v2,..."))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        bail!("grid `{spec}` has no values");
    }
    let mut out = Vec::with_capacity(base.len() * values.len());
    for cfg in &base {
        for v in &values {
            let mut c = cfg.clone();
            match key.trim() {
                "K" => c.k = v.parse().with_context(|| format!("bad K value `{v}`"))?,
                "c_beta" => c.c_beta = v.parse().with_context(|| format!("bad c_beta value `{v}`"))?,
                "agent_kind" => c.agent_kind = v.parse::<AgentKind>()?,
                "seed" => c.master_seed = v.parse().with_context(|| format!("bad seed `{v}`"))?,
                other => bail!("unknown grid key `{other}`"),
            }
            out.push(c);
        }
    }
    Ok(out)
}

fn run_configs(configs: &[RunConfig], out: &Path) -> Result<bool> {
    let results = sweep(configs, Execution::from_env());
    emit_all(&results, configs, out)?;
    let mut all_ok = true;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(r) => println!(
                "run {i}: {} K={} final regret {:.6} ({:.2}s)",
                r.config.agent_kind,
                r.config.k,
                r.final_regret(),
                r.wall_time.as_secs_f64()
            ),
            Err(e) => {
                all_ok = false;
                eprintln!("run {i}: failed: {e}");
            }
        }
    }
    if let Some(fit) = summarize(&results, configs).fit {
        println!("fitted exponent {:.4} (r^2 {:.4})", fit.slope, fit.r_squared);
    }
    println!("wrote {}", out.display());
    Ok(all_ok)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let ok = run_configs(&[cfg], &out)?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep { config, grid, out } => {
            let base = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut configs = vec![base];
            for g in &grid {
                configs = apply_grid(configs, g)?;
            }
            let ok = run_configs(&configs, &out)?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Check { trials, seed } => {
            let reports = run_all(trials, seed, Execution::from_env());
            println!("{}", serde_json::to_string_pretty(&reports)?);
            let ok = reports.iter().all(|r| r.passed());
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Gen {
            kind,
            d,
            states,
            actions,
            horizon,
            seed,
            out,
        } => {
            if kind != "simplex" {
                bail!("unknown instance kind `{kind}` (expected simplex)");
            }
            let mdp = LinearMdp::gen_simplex(d, states, actions, horizon, &mut rng_from_seed(seed))?;
            mdp.save(&out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { input } => {
            let fit = oppo::harness::fit_directory(&input)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_json(
            r#"{"mdp_spec":{"kind":"simplex","d":2,"S":3,"A":2,"H":2,"seed":1},
                "schedule_spec":{"kind":"fixed_random","seed":5},"agent_kind":"oppo_plus","K":10}"#,
        )
        .unwrap()
    }

    #[test]
    fn grids_multiply() {
        let c = apply_grid(vec![base()], "K=4,8,16").unwrap();
        let c = apply_grid(c, "agent_kind=uniform,oppo_b1").unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c[1].agent_kind, AgentKind::OppoB1);
        assert_eq!(c[5].k, 16);
    }

    #[test]
    fn bad_grids_are_rejected() {
        assert!(apply_grid(vec![base()], "K").is_err());
        assert!(apply_grid(vec![base()], "H=2").is_err());
        assert!(apply_grid(vec![base()], "K=abc").is_err());
        assert!(apply_grid(vec![base()], "K=").is_err());
    }
}
