//! Seeded experiment runs, sweeps and result files.
//!
//! A run draws the instance and schedule from the seeds in its config, derives
//! its own seed from `(master_seed, index)`, and splits that into independent
//! streams for action sampling and environment transitions. Wall time is kept
//! in memory only so that emitted files depend on the config alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentKind, AgentMonitors, HyperParams};
use crate::error::{Error, Result};
use crate::exact::{decompose_with_occupancy, hindsight_optimal, occupancy_measure, policy_value};
use crate::lemma::{fit_regret_exponent, ExponentFit, OPTIMISM_TOL};
use crate::mdp::{dot, LinearMdp};
use crate::par::{map_indexed, Execution};
use crate::reward::{RewardSchedule, ScheduleKind, ScheduleSpec};
use crate::seed::{derive_seed, rng_from_seed, stream_rng, Stream};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MdpSpec {
    Simplex {
        d: usize,
        #[serde(rename = "S")]
        n_states: usize,
        #[serde(rename = "A")]
        n_actions: usize,
        #[serde(rename = "H")]
        horizon: usize,
        seed: u64,
    },
    /// A JSON instance file as written by [`LinearMdp::save`].
    TabularFile { path: PathBuf },
}

impl MdpSpec {
    pub fn build(&self) -> Result<LinearMdp> {
        match self {
            MdpSpec::Simplex {
                d,
                n_states,
                n_actions,
                horizon,
                seed,
            } => LinearMdp::gen_simplex(*d, *n_states, *n_actions, *horizon, &mut rng_from_seed(*seed)),
            MdpSpec::TabularFile { path } => LinearMdp::load(path),
        }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_c_beta() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mdp_spec: MdpSpec,
    /// A `batch_aware` schedule without `B` is aligned with the agent's batch size.
    pub schedule_spec: ScheduleSpec,
    pub agent_kind: AgentKind,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_c_beta")]
    pub c_beta: f64,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "yes")]
    pub enable_decomposition: bool,
    #[serde(default = "yes")]
    pub enable_optimism_monitor: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("B override must be positive".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::Config(format!("{name} override must be positive, got {x}")));
                }
            }
        }
        Ok(())
    }

    /// Theory defaults for the instance dimensions, then the overrides. A
    /// `B` override without an `alpha` override re-derives `alpha` from the new `B`.
    pub fn resolve_hyper(&self, mdp: &LinearMdp) -> Result<HyperParams> {
        let mut hp = HyperParams::theory(mdp.d(), self.k, mdp.horizon(), mdp.n_actions(), self.delta, self.c_beta)?;
        if let Some(b) = self.batch_size {
            hp.batch_size = b.min(self.k);
            hp.alpha = HyperParams::theory_alpha(hp.batch_size, self.k, mdp.horizon(), mdp.n_actions());
        }
        if let Some(a) = self.alpha {
            hp.alpha = a;
        }
        if let Some(b) = self.beta {
            hp.beta = b;
        }
        if let Some(l) = self.lambda {
            hp.lambda = l;
        }
        Ok(hp)
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: usize,
    pub batch_index: usize,
    pub value_exec: f64,
    pub value_opt: f64,
    pub regret_inst: f64,
    pub regret_cum: f64,
    pub polopt_term: Option<f64>,
    pub stat_term: Option<f64>,
    pub optimism_violations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMonitors {
    pub agent: AgentMonitors,
    /// `(k, h, s, a)` tuples examined by the optimism monitor.
    pub optimism_entries: u64,
    pub optimism_violations: u64,
    pub optimism_worst_slack: f64,
    /// Largest `|policy_opt + statistical - regret|` over episodes.
    pub decomposition_max_residual: f64,
}

impl RunMonitors {
    pub fn optimism_rate(&self) -> f64 {
        if self.optimism_entries == 0 {
            0.0
        } else {
            self.optimism_violations as f64 / self.optimism_entries as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    pub seed: u64,
    pub hyper: HyperParams,
    pub episodes: Vec<EpisodeRecord>,
    pub monitors: RunMonitors,
    pub wall_time: Duration,
}

impl RunResult {
    pub fn final_regret(&self) -> f64 {
        self.episodes.last().map_or(0.0, |e| e.regret_cum)
    }
}

/// Runs `config` as entry 0 of a sweep.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    run_indexed(config, 0)
}

/// Runs `config` with the seed derived for sweep position `index`.
pub fn run_indexed(config: &RunConfig, index: usize) -> Result<RunResult> {
    config.validate()?;
    let started = Instant::now();
    let mdp = config.mdp_spec.build()?;
    let hyper = config.resolve_hyper(&mdp)?;
    let mut sched_spec = config.schedule_spec.clone();
    if sched_spec.kind == ScheduleKind::BatchAware && sched_spec.batch.is_none() {
        sched_spec.batch = Some(hyper.batch_size);
    }
    let schedule = RewardSchedule::new(&sched_spec, mdp.horizon(), mdp.n_states(), mdp.n_actions())?;
    let agent = Agent::new(config.agent_kind, mdp.features(), config.k, hyper.clone())?;
    let seed = derive_seed(config.master_seed, index as u64);
    let (episodes, monitors) = simulate(&mdp, &schedule, agent, config, seed)?;
    Ok(RunResult {
        config: config.clone(),
        seed,
        hyper,
        episodes,
        monitors,
        wall_time: started.elapsed(),
    })
}

/// Plays `agent` for `K` episodes and records the exact regret series.
pub fn simulate(
    mdp: &LinearMdp,
    schedule: &RewardSchedule,
    mut agent: Agent,
    config: &RunConfig,
    seed: u64,
) -> Result<(Vec<EpisodeRecord>, RunMonitors)> {
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut act_rng = stream_rng(seed, Stream::Actions);
    let mut env_rng = stream_rng(seed, Stream::Transitions);

    let hs = hindsight_optimal(mdp, schedule, config.k);
    let occ_star = occupancy_measure(mdp, &hs.policy);
    let mut occ = occupancy_measure(mdp, agent.policy());
    let mut batch_violations = 0u64;
    let mut monitors = RunMonitors {
        optimism_worst_slack: f64::INFINITY,
        ..RunMonitors::default()
    };
    let mut episodes = Vec::with_capacity(config.k);
    let mut regret_cum = 0.0;

    for k in 1..=config.k {
        if agent.maybe_update(k)? {
            occ = occupancy_measure(mdp, agent.policy());
            if config.enable_optimism_monitor {
                let (count, worst) = optimism_counts(mdp, &agent);
                batch_violations = count;
                monitors.optimism_worst_slack = monitors.optimism_worst_slack.min(worst);
            }
        }
        let reward = schedule.reward_table(k);
        let value_exec = policy_value(mdp, agent.policy(), &reward).v1;
        let value_opt = hs.values[k - 1];
        let regret_inst = value_opt - value_exec;
        regret_cum += regret_inst;

        let (polopt_term, stat_term) = if config.enable_decomposition {
            let dec = decompose_with_occupancy(mdp, &reward, &hs.policy, &occ_star, agent.policy(), &occ, agent.q_table());
            monitors.decomposition_max_residual = monitors
                .decomposition_max_residual
                .max((dec.total() - regret_inst).abs());
            (Some(dec.policy_opt), Some(dec.statistical))
        } else {
            (None, None)
        };
        let optimism_violations = if config.enable_optimism_monitor {
            monitors.optimism_entries += (h_n * s_n * a_n) as u64;
            monitors.optimism_violations += batch_violations;
            batch_violations
        } else {
            0
        };

        let mut x = mdp.x1();
        for h in 0..h_n {
            let a = agent.act(h, x, &mut act_rng);
            let next = mdp.transition_sample(h, x, a, &mut env_rng);
            agent.record_transition(h, x, a, next)?;
            x = next;
        }
        agent.record_rewards(k, &reward)?;

        episodes.push(EpisodeRecord {
            k,
            batch_index: agent.batch_index(),
            value_exec,
            value_opt,
            regret_inst,
            regret_cum,
            polopt_term,
            stat_term,
            optimism_violations,
        });
    }
    if !monitors.optimism_worst_slack.is_finite() {
        monitors.optimism_worst_slack = 0.0;
    }
    monitors.agent = agent.monitors().clone();
    Ok((episodes, monitors))
}

/// Violations of the optimism sandwich in the agent's current tables, and the
/// worst margin. Same computation as [`crate::lemma::check_optimism`] without
/// building a snapshot.
fn optimism_counts(mdp: &LinearMdp, agent: &Agent) -> (u64, f64) {
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let (q, phat, bonus) = (agent.q_table(), agent.phat_v_table(), agent.bonus_table());
    let policy = agent.policy();
    let cap = h_n as f64;
    let mut count = 0;
    let mut worst = f64::INFINITY;
    for h in 0..h_n {
        let v_next: Vec<f64> = if h + 1 < h_n {
            (0..s_n)
                .map(|s| {
                    let row = ((h + 1) * s_n + s) * a_n;
                    dot(policy.row(h + 1, s), &q[row..row + a_n])
                })
                .collect()
        } else {
            vec![0.0; s_n]
        };
        let pv = mdp.expect_next(h, &v_next);
        for s in 0..s_n {
            for a in 0..a_n {
                let i = (h * s_n + s) * a_n + a;
                let diff = pv[s * a_n + a] - phat[i];
                let margin = (-diff).min(diff + 2.0 * cap.min(bonus[i]));
                worst = worst.min(margin);
                if margin < -OPTIMISM_TOL {
                    count += 1;
                }
            }
        }
    }
    (count, worst)
}

/// Runs every config, each with the seed for its position. Failures are
/// kept per entry; output order follows input order.
pub fn sweep(configs: &[RunConfig], exec: Execution) -> Vec<std::result::Result<RunResult, String>> {
    map_indexed(configs, exec, |i, cfg| run_indexed(cfg, i).map_err(|e| e.to_string()))
}

/// Copies of `base` with `K` set to each grid value.
pub fn k_grid(base: &RunConfig, ks: &[usize]) -> Vec<RunConfig> {
    ks.iter()
        .map(|&k| RunConfig { k, ..base.clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub config: Option<RunConfig>,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: Option<u64>,
    pub hyper: Option<HyperParams>,
    pub final_regret: Option<f64>,
    pub monitors: Option<RunMonitors>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<RunSummary>,
    /// Present when at least three distinct `K` values have positive regret.
    pub fit: Option<ExponentFit>,
}

pub fn summarize(results: &[std::result::Result<RunResult, String>], configs: &[RunConfig]) -> SweepSummary {
    let runs: Vec<RunSummary> = results
        .iter()
        .zip(configs)
        .enumerate()
        .map(|(index, (r, cfg))| match r {
            Ok(r) => RunSummary {
                index,
                config: Some(r.config.clone()),
                k: r.config.k,
                seed: Some(r.seed),
                hyper: Some(r.hyper.clone()),
                final_regret: Some(r.final_regret()),
                monitors: Some(r.monitors.clone()),
                error: None,
            },
            Err(e) => RunSummary {
                index,
                config: Some(cfg.clone()),
                k: cfg.k,
                seed: None,
                hyper: None,
                final_regret: None,
                monitors: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    let fit = fit_from_summaries(&runs);
    SweepSummary { runs, fit }
}

fn fit_from_summaries(runs: &[RunSummary]) -> Option<ExponentFit> {
    let points: Vec<(usize, f64)> = runs.iter().filter_map(|r| Some((r.k, r.final_regret?))).collect();
    let mut ks: Vec<usize> = points.iter().map(|p| p.0).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 3 {
        return None;
    }
    fit_regret_exponent(&points).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn csv_file_name(index: usize) -> String {
    format!("run_{index:03}.csv")
}

/// Per-episode series in CSV, header first.
pub fn write_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for e in &result.episodes {
        w.serialize(e).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

/// Writes `run_NNN.csv` per successful run (CSV) or `summary.json` (JSON)
/// into the directory `dir`, creating it if needed.
pub fn emit(
    results: &[std::result::Result<RunResult, String>],
    configs: &[RunConfig],
    format: Format,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        Format::Csv => {
            for (i, r) in results.iter().enumerate() {
                if let Ok(r) = r {
                    let path = dir.join(csv_file_name(i));
                    write_csv(r, &path)?;
                    written.push(path);
                }
            }
        }
        Format::Json => {
            let path = dir.join(SUMMARY_FILE);
            let mut text = serde_json::to_string_pretty(&summarize(results, configs))?;
            text.push('\n');
            fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Both formats.
pub fn emit_all(
    results: &[std::result::Result<RunResult, String>],
    configs: &[RunConfig],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut paths = emit(results, configs, Format::Csv, dir)?;
    paths.extend(emit(results, configs, Format::Json, dir)?);
    Ok(paths)
}

/// Exponent fit over every `summary.json` found directly in `dir` or one
/// level below it.
pub fn fit_directory(dir: &Path) -> Result<ExponentFit> {
    let mut files = Vec::new();
    let top = dir.join(SUMMARY_FILE);
    if top.is_file() {
        files.push(top);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    files.extend(subdirs.into_iter().map(|d| d.join(SUMMARY_FILE)).filter(|p| p.is_file()));

    let mut points = Vec::new();
    for f in files {
        let summary: SweepSummary = serde_json::from_str(&fs::read_to_string(&f)?)?;
        points.extend(summary.runs.iter().filter_map(|r| Some((r.k, r.final_regret?))));
    }
    fit_regret_exponent(&points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(agent: AgentKind, k: usize) -> RunConfig {
        RunConfig {
            mdp_spec: MdpSpec::Simplex {
                d: 3,
                n_states: 5,
                n_actions: 2,
                horizon: 3,
                seed: 7,
            },
            schedule_spec: ScheduleSpec {
                kind: ScheduleKind::DriftingSinusoid,
                period: Some(40),
                batch: None,
                seed: 3,
            },
            agent_kind: agent,
            k,
            delta: 0.1,
            c_beta: 0.1,
            batch_size: None,
            alpha: None,
            beta: None,
            lambda: None,
            master_seed: 42,
            enable_decomposition: true,
            enable_optimism_monitor: true,
        }
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let text = r#"{"mdp_spec":{"kind":"simplex","d":2,"S":3,"A":2,"H":2,"seed":1},
            "schedule_spec":{"kind":"fixed_random","seed":5},"agent_kind":"oppo_plus","K":10}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.delta, 0.1);
        assert_eq!(cfg.c_beta, 1.0);
        assert!(cfg.enable_decomposition && cfg.enable_optimism_monitor);
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = base(AgentKind::OppoPlus, 0);
        assert!(cfg.validate().is_err());
        cfg.k = 5;
        cfg.alpha = Some(-1.0);
        assert!(cfg.validate().is_err());
        let text = r#"{"mdp_spec":{"kind":"simplex","d":2,"S":3,"A":2,"H":2,"seed":1},
            "schedule_spec":{"kind":"fixed_random","seed":5},"agent_kind":"ppo","K":10}"#;
        assert!(RunConfig::from_json(text).is_err());
    }

    #[test]
    fn uniform_agent_on_zero_rewards_has_no_regret() {
        let mut cfg = base(AgentKind::Uniform, 20);
        cfg.schedule_spec = ScheduleSpec {
            kind: ScheduleKind::BatchAware,
            period: None,
            batch: Some(1),
            seed: 0,
        };
        let r = run(&cfg).unwrap();
        assert!(r.episodes.iter().all(|e| e.regret_cum == 0.0));
    }

    #[test]
    fn benchmark_policy_has_no_regret() {
        let cfg = base(AgentKind::Uniform, 30);
        let mdp = cfg.mdp_spec.build().unwrap();
        let sched = RewardSchedule::new(&cfg.schedule_spec, 3, 5, 2).unwrap();
        let hs = hindsight_optimal(&mdp, &sched, 30);
        let hyper = cfg.resolve_hyper(&mdp).unwrap();
        let agent = Agent::with_fixed_policy(mdp.features(), 30, hyper, hs.policy.clone()).unwrap();
        let (eps, _) = simulate(&mdp, &sched, agent, &cfg, 1).unwrap();
        assert!(eps.last().unwrap().regret_cum.abs() <= 1e-9);
    }

    #[test]
    fn series_invariants_hold() {
        let r = run(&base(AgentKind::OppoPlus, 60)).unwrap();
        let mut acc = 0.0;
        for e in &r.episodes {
            acc += e.regret_inst;
            assert!((acc - e.regret_cum).abs() <= 1e-9);
            let total = e.polopt_term.unwrap() + e.stat_term.unwrap();
            assert!((total - e.regret_inst).abs() <= 1e-8);
        }
        assert!(r.monitors.decomposition_max_residual <= 1e-8);
        assert_eq!(r.monitors.agent.weight_bound_violations, 0);
    }

    #[test]
    fn batch_index_stops_after_last_anchor() {
        let mut cfg = base(AgentKind::OppoPlus, 23);
        cfg.batch_size = Some(10);
        let r = run(&cfg).unwrap();
        let idx: Vec<usize> = r.episodes.iter().map(|e| e.batch_index).collect();
        assert_eq!(&idx[..10], &[1; 10]);
        assert_eq!(&idx[10..], &[2; 13]);
    }

    #[test]
    fn repeat_runs_write_identical_files() {
        let cfgs = vec![base(AgentKind::OppoPlus, 25)];
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_all(&sweep(&cfgs, Execution::Sequential), &cfgs, d1.path()).unwrap();
        emit_all(&sweep(&cfgs, Execution::Sequential), &cfgs, d2.path()).unwrap();
        for name in [csv_file_name(0), SUMMARY_FILE.to_string()] {
            assert_eq!(fs::read(d1.path().join(&name)).unwrap(), fs::read(d2.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn csv_shape_and_cross_format_consistency() {
        let cfgs = vec![base(AgentKind::GreedyLsvi, 3)];
        let results = sweep(&cfgs, Execution::Sequential);
        let dir = tempfile::tempdir().unwrap();
        emit_all(&results, &cfgs, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(csv_file_name(0))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "k,batch_index,value_exec,value_opt,regret_inst,regret_cum,polopt_term,stat_term,optimism_violations"
        );
        let rows = read_csv(&dir.path().join(csv_file_name(0))).unwrap();
        let summary: SweepSummary =
            serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
        assert_eq!(summary.runs[0].final_regret.unwrap(), rows.last().unwrap().regret_cum);
    }

    #[test]
    fn sweep_of_one_equals_run() {
        let cfg = base(AgentKind::OppoPlus, 15);
        let single = run(&cfg).unwrap();
        let swept = sweep(std::slice::from_ref(&cfg), Execution::Sequential).remove(0).unwrap();
        assert_eq!(single.episodes, swept.episodes);
    }

    #[test]
    fn k_grid_sweep_is_ordered_and_worker_independent() {
        let cfgs = k_grid(&base(AgentKind::OppoPlus, 1), &[8, 16, 32, 64]);
        let seq = sweep(&cfgs, Execution::Sequential);
        let par = sweep(&cfgs, Execution::with_workers(4));
        let ks: Vec<usize> = seq.iter().map(|r| r.as_ref().unwrap().config.k).collect();
        assert_eq!(ks, vec![8, 16, 32, 64]);
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.as_ref().unwrap().episodes, b.as_ref().unwrap().episodes);
        }
        assert!(summarize(&seq, &cfgs).fit.is_some());
    }

    #[test]
    fn failures_stay_in_their_slot() {
        let mut bad = base(AgentKind::OppoPlus, 10);
        bad.mdp_spec = MdpSpec::TabularFile {
            path: PathBuf::from("/nonexistent/instance.json"),
        };
        let cfgs = vec![base(AgentKind::OppoPlus, 10), bad, base(AgentKind::Uniform, 10)];
        let out = sweep(&cfgs, Execution::Sequential);
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
        let summary = summarize(&out, &cfgs);
        assert!(summary.runs[1].error.is_some());
    }

    #[test]
    fn batch_aware_aligns_with_agent_batch() {
        let mut cfg = base(AgentKind::OppoPlus, 40);
        cfg.schedule_spec = ScheduleSpec {
            kind: ScheduleKind::BatchAware,
            period: None,
            batch: None,
            seed: 9,
        };
        cfg.batch_size = Some(8);
        let r = run(&cfg).unwrap();
        for e in &r.episodes {
            if (e.k - 1) % 8 == 0 {
                assert_eq!(e.value_opt, 0.0);
            }
        }
    }

    #[test]
    fn file_backed_instance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mdp.json");
        let cfg = base(AgentKind::OppoPlus, 12);
        cfg.mdp_spec.build().unwrap().save(&path).unwrap();
        let mut from_file = cfg.clone();
        from_file.mdp_spec = MdpSpec::TabularFile { path };
        assert_eq!(run(&cfg).unwrap().episodes, run(&from_file).unwrap().episodes);
    }

    #[test]
    fn fit_directory_reads_summaries() {
        let mut cfg = base(AgentKind::Uniform, 1);
        cfg.schedule_spec.kind = ScheduleKind::FixedRandom;
        let cfgs = k_grid(&cfg, &[10, 20, 40]);
        let results = sweep(&cfgs, Execution::Sequential);
        let dir = tempfile::tempdir().unwrap();
        emit(&results, &cfgs, Format::Json, dir.path()).unwrap();
        let fit = fit_directory(dir.path()).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-9);
    }
}
