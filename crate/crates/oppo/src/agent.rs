//! Optimistic multi-batched proximal policy optimization and its baselines.
//!
//! The episode range `1..=K` is cut into `L = floor(K / B)` batches starting
//! at `k_i = (i - 1) B + 1`. At each batch start the agent
//!
//! 1. folds the previous batch's estimated Q-function into its policy logits
//!    (`pi ∝ pi_old * exp(alpha Q)`), and
//! 2. re-estimates `Q_h = rbar_h + min{phi^T w_h + Gamma_h, H - h}^+` backward
//!    over the steps, where `w_h` is a ridge fit of `V_{h+1}` at the observed
//!    next states, `Gamma_h = beta ||phi||_{Lambda_h^{-1}}`, and `rbar_h` is
//!    the mean reward function of the previous batch.
//!
//! Between batch starts every table is frozen. Episodes after `L * B` run
//! under the last policy with no further updates.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{dot, norm, FeatureMap, PolicyTable};
use crate::ridge::Covariance;
use crate::seed::sample_index;

/// Slack allowed on the entrywise policy-drift inequality.
pub const DRIFT_TOL: f64 = 1e-10;
/// Slack allowed on the Q/V range checks.
pub const RANGE_TOL: f64 = 1e-12;
/// Largest tolerated `||Lambda Lambda^{-1} - I||_F`.
pub const INVERSE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    #[serde(rename = "B")]
    pub batch_size: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub iota: f64,
    pub delta: f64,
    pub c_beta: f64,
    /// Set when `K < d^3`, outside the regime the regret bound covers.
    #[serde(default)]
    pub k_below_d_cubed: bool,
}

impl HyperParams {
    /// Theory-driven defaults:
    /// `B = round(sqrt(d^3 K))` clamped to `[1, K]`,
    /// `alpha = sqrt(2 B ln A / (K H^2))`, `lambda = 1`,
    /// `iota = ln(d H K A / delta)`, `beta = c_beta d^{1/4} H K^{1/4} sqrt(iota)`.
    pub fn theory(d: usize, k: usize, horizon: usize, n_actions: usize, delta: f64, c_beta: f64) -> Result<Self> {
        if d == 0 || k == 0 || horizon == 0 || n_actions == 0 {
            return Err(Error::Hyper("d, K, H and A must be positive".into()));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Hyper(format!("delta = {delta} is outside (0, 1]")));
        }
        if !(c_beta > 0.0 && c_beta.is_finite()) {
            return Err(Error::Hyper(format!("c_beta = {c_beta} must be positive")));
        }
        let (df, kf, hf, af) = (d as f64, k as f64, horizon as f64, n_actions as f64);
        let batch_size = ((df.powi(3) * kf).sqrt().round() as usize).clamp(1, k);
        let alpha = Self::theory_alpha(batch_size, k, horizon, n_actions);
        let iota = (df * hf * kf * af / delta).ln();
        let beta = c_beta * df.powf(0.25) * hf * kf.powf(0.25) * iota.sqrt();
        Ok(HyperParams {
            batch_size,
            alpha,
            lambda: 1.0,
            beta,
            iota,
            delta,
            c_beta,
            k_below_d_cubed: kf < df.powi(3),
        })
    }

    /// `sqrt(2 B ln A / (K H^2))`.
    pub fn theory_alpha(batch_size: usize, k: usize, horizon: usize, n_actions: usize) -> f64 {
        let h = horizon as f64;
        (2.0 * batch_size as f64 * (n_actions as f64).ln() / (k as f64 * h * h)).sqrt()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > k {
            return Err(Error::Hyper(format!("B = {} is outside [1, K = {k}]", self.batch_size)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Hyper(format!("alpha = {} must be finite and non-negative", self.alpha)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Hyper(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Hyper(format!("beta = {} must be finite and non-negative", self.beta)));
        }
        Ok(())
    }
}

/// Free-function form of [`HyperParams::theory`].
pub fn default_hyperparams(
    d: usize,
    k: usize,
    horizon: usize,
    n_actions: usize,
    delta: f64,
    c_beta: f64,
) -> Result<HyperParams> {
    HyperParams::theory(d, k, horizon, n_actions, delta, c_beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    OppoPlus,
    /// Same algorithm with the batch size forced to one.
    OppoB1,
    /// Greedy in the optimistic Q estimate, ties to the lowest action.
    GreedyLsvi,
    /// Never updates.
    Uniform,
    /// Evaluates with the reward of the previous batch's first episode instead
    /// of the previous batch's mean reward.
    InstantRewardAblation,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::OppoPlus,
        AgentKind::OppoB1,
        AgentKind::GreedyLsvi,
        AgentKind::Uniform,
        AgentKind::InstantRewardAblation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::OppoPlus => "oppo_plus",
            AgentKind::OppoB1 => "oppo_b1",
            AgentKind::GreedyLsvi => "greedy_lsvi",
            AgentKind::Uniform => "uniform",
            AgentKind::InstantRewardAblation => "instant_reward_ablation",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownKind {
                what: "agent",
                name: s.to_string(),
            })
    }
}

/// One observed transition at a fixed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

/// Counters for the in-run invariant monitors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentMonitors {
    pub evaluations: u64,
    pub improvements: u64,
    pub weight_bound_violations: u64,
    pub max_weight_ratio: f64,
    pub range_violations: u64,
    pub drift_violations: u64,
    /// `None` until the first improvement step.
    pub min_drift_slack: Option<f64>,
    pub max_inverse_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    kind: AgentKind,
    hyper: HyperParams,
    features: FeatureMap,
    num_episodes: usize,
    frozen: bool,

    cov: Vec<Covariance>,
    /// `[h][s][a][s']` visit counts; regression targets are linear in them.
    counts: Vec<f64>,
    history: Vec<Vec<Transition>>,

    weights: Vec<Vec<f64>>,
    rbar: Vec<f64>,
    batch_accum: Vec<f64>,
    batch_first: Vec<f64>,
    logits: Vec<f64>,
    q: Vec<f64>,
    v: Vec<f64>,
    phat_v: Vec<f64>,
    bonus: Vec<f64>,
    policy: PolicyTable,

    last_episode: usize,
    batch_index: usize,
    anchor: usize,
    monitors: AgentMonitors,
}

impl Agent {
    /// Fresh agent: `Lambda = lambda I`, zero weights, rewards, logits and
    /// tables, uniform policy, empty history. `num_episodes` is `K`.
    pub fn new(kind: AgentKind, features: FeatureMap, num_episodes: usize, mut hyper: HyperParams) -> Result<Self> {
        if kind == AgentKind::OppoB1 {
            hyper.batch_size = 1;
        }
        hyper.validate(num_episodes)?;
        let (h, s, a, d) = (features.horizon, features.n_states, features.n_actions, features.d);
        let hsa = h * s * a;
        Ok(Agent {
            kind,
            cov: (0..h).map(|_| Covariance::new(d, hyper.lambda)).collect(),
            counts: vec![0.0; hsa * s],
            history: vec![Vec::new(); h],
            weights: vec![vec![0.0; d]; h],
            rbar: vec![0.0; hsa],
            batch_accum: vec![0.0; hsa],
            batch_first: vec![0.0; hsa],
            logits: vec![0.0; hsa],
            q: vec![0.0; hsa],
            v: vec![0.0; h * s],
            phat_v: vec![0.0; hsa],
            bonus: vec![0.0; hsa],
            policy: PolicyTable::uniform(h, s, a),
            hyper,
            features,
            num_episodes,
            frozen: false,
            last_episode: 0,
            batch_index: 0,
            anchor: 0,
            monitors: AgentMonitors::default(),
        })
    }

    /// Baseline constructor; identical to [`Agent::new`].
    pub fn make_baseline(kind: AgentKind, features: FeatureMap, num_episodes: usize, hyper: HyperParams) -> Result<Self> {
        Self::new(kind, features, num_episodes, hyper)
    }

    /// Agent that plays `policy` forever and keeps zero Q/V tables.
    pub fn with_fixed_policy(
        features: FeatureMap,
        num_episodes: usize,
        hyper: HyperParams,
        policy: PolicyTable,
    ) -> Result<Self> {
        if policy.horizon != features.horizon
            || policy.n_states != features.n_states
            || policy.n_actions != features.n_actions
        {
            return Err(Error::Shape("policy does not match the feature map".into()));
        }
        let mut agent = Self::new(AgentKind::Uniform, features, num_episodes, hyper)?;
        agent.policy = policy;
        agent.frozen = true;
        Ok(agent)
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn batch_size(&self) -> usize {
        self.hyper.batch_size
    }

    pub fn num_batches(&self) -> usize {
        self.num_episodes / self.hyper.batch_size
    }

    /// Index `i` of the batch the last episode belongs to (0 before the first call).
    pub fn batch_index(&self) -> usize {
        self.batch_index
    }

    /// First episode of the current batch, `t_k`.
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn monitors(&self) -> &AgentMonitors {
        &self.monitors
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    /// `Q[h][s][a]` of the current batch.
    pub fn q_table(&self) -> &[f64] {
        &self.q
    }

    /// `V[h][s]` of the current batch.
    pub fn v_table(&self) -> &[f64] {
        &self.v
    }

    /// Optimistic next-value estimate `[h][s][a]` of the current batch.
    pub fn phat_v_table(&self) -> &[f64] {
        &self.phat_v
    }

    /// Bonus `Gamma[h][s][a]` of the current batch.
    pub fn bonus_table(&self) -> &[f64] {
        &self.bonus
    }

    /// Reward table `[h][s][a]` the current batch was evaluated with.
    pub fn rbar_table(&self) -> &[f64] {
        &self.rbar
    }

    pub fn logits_table(&self) -> &[f64] {
        &self.logits
    }

    pub fn weights(&self, h: usize) -> &[f64] {
        &self.weights[h]
    }

    pub fn covariance(&self, h: usize) -> &Covariance {
        &self.cov[h]
    }

    pub fn history(&self, h: usize) -> &[Transition] {
        &self.history[h]
    }

    /// `H sqrt(d K / lambda)`, the deterministic bound on every `||w_h||`.
    pub fn weight_bound(&self) -> f64 {
        let f = &self.features;
        f.horizon as f64 * (f.d as f64 * self.num_episodes as f64 / self.hyper.lambda).sqrt()
    }

    fn is_anchor(&self, k: usize) -> bool {
        self.batch_index < self.num_batches() && k == self.batch_index * self.hyper.batch_size + 1
    }

    /// Advances to episode `k` and runs improvement + evaluation if `k` opens a
    /// batch. Returns whether the policy/value tables were recomputed.
    pub fn maybe_update(&mut self, k: usize) -> Result<bool> {
        if k != self.last_episode + 1 || k > self.num_episodes {
            return Err(Error::EpisodeOrder {
                expected: self.last_episode + 1,
                got: k,
            });
        }
        self.last_episode = k;
        if !self.is_anchor(k) {
            return Ok(false);
        }
        self.batch_index += 1;
        self.anchor = k;
        self.finalize_batch_rewards();
        if self.kind == AgentKind::Uniform || self.frozen {
            return Ok(false);
        }
        self.policy_improve();
        self.policy_eval()?;
        Ok(true)
    }

    /// Turns the reward accumulator into the table used by the next
    /// evaluation. The first batch sees the zero pre-episode rewards.
    fn finalize_batch_rewards(&mut self) {
        if self.batch_index <= 1 {
            self.rbar.iter_mut().for_each(|x| *x = 0.0);
        } else if self.kind == AgentKind::InstantRewardAblation {
            self.rbar.copy_from_slice(&self.batch_first);
        } else {
            let b = self.hyper.batch_size as f64;
            for (r, acc) in self.rbar.iter_mut().zip(&self.batch_accum) {
                *r = acc / b;
            }
        }
        self.batch_accum.iter_mut().for_each(|x| *x = 0.0);
    }

    /// `logits += alpha * Q` with the previous batch's Q; the policy becomes
    /// the row-wise softmax of the logits. Greedy agents take their policy
    /// from the evaluation step instead.
    pub fn policy_improve(&mut self) {
        if self.kind == AgentKind::GreedyLsvi {
            return;
        }
        let alpha = self.hyper.alpha;
        for (l, q) in self.logits.iter_mut().zip(&self.q) {
            *l += alpha * q;
        }
        let new_policy = self.softmax_policy();
        let old = std::mem::replace(&mut self.policy, new_policy);
        self.monitors.improvements += 1;

        let bound = alpha * self.features.horizon as f64;
        for (p_old, p_new) in old.as_slice().iter().zip(self.policy.as_slice()) {
            let slack = bound * p_new - (p_new - p_old);
            let worst = self.monitors.min_drift_slack.map_or(slack, |m| m.min(slack));
            self.monitors.min_drift_slack = Some(worst);
            if slack < -DRIFT_TOL {
                self.monitors.drift_violations += 1;
            }
        }
    }

    fn softmax_policy(&self) -> PolicyTable {
        let f = &self.features;
        let mut probs = Vec::with_capacity(self.logits.len());
        for row in self.logits.chunks(f.n_actions) {
            probs.extend(softmax(row));
        }
        PolicyTable::from_probs(f.horizon, f.n_states, f.n_actions, probs)
            .expect("softmax rows are distributions")
    }

    /// `Lambda_h^{-1} sum_tau phi_tau v_next(x'_tau)` over the stored history of step `h`.
    pub fn ridge_weights(&self, h: usize, v_next: &[f64]) -> Vec<f64> {
        let f = &self.features;
        let (s_n, a_n) = (f.n_states, f.n_actions);
        let mut target = vec![0.0; f.d];
        for s in 0..s_n {
            for a in 0..a_n {
                let off = ((h * s_n + s) * a_n + a) * s_n;
                let y = dot(&self.counts[off..off + s_n], v_next);
                if y != 0.0 {
                    for (t, p) in target.iter_mut().zip(f.phi(s, a)) {
                        *t += p * y;
                    }
                }
            }
        }
        self.cov[h].solve(&target)
    }

    /// Backward optimistic evaluation over all steps for the current batch.
    pub fn policy_eval(&mut self) -> Result<()> {
        let f = self.features.clone();
        let (h_n, s_n, a_n) = (f.horizon, f.n_states, f.n_actions);
        let beta = self.hyper.beta;
        let w_bound = self.weight_bound();
        let greedy = self.kind == AgentKind::GreedyLsvi;
        let mut v_next = vec![0.0; s_n];

        for h in (0..h_n).rev() {
            let residual = self.cov[h].inverse_residual();
            if !residual.is_finite() {
                return Err(Error::NotPositiveDefinite(h));
            }
            self.monitors.max_inverse_residual = self.monitors.max_inverse_residual.max(residual);

            let w = self.ridge_weights(h, &v_next);
            let w_norm = norm(&w);
            self.monitors.max_weight_ratio = self.monitors.max_weight_ratio.max(w_norm / w_bound);
            if w_norm > w_bound {
                self.monitors.weight_bound_violations += 1;
            }

            let cap = (h_n - h - 1) as f64;
            for s in 0..s_n {
                for a in 0..a_n {
                    let i = (h * s_n + s) * a_n + a;
                    let phi = f.phi(s, a);
                    let gamma = beta * self.cov[h].quad_inv(phi).sqrt();
                    let est = (dot(phi, &w) + gamma).clamp(0.0, cap);
                    self.bonus[i] = gamma;
                    self.phat_v[i] = est;
                    self.q[i] = self.rbar[i] + est;
                }
                let row = (h * s_n + s) * a_n;
                let q_row = &self.q[row..row + a_n];
                if greedy {
                    let best = argmax(q_row);
                    let p = self.policy.row_mut(h, s);
                    p.iter_mut().for_each(|x| *x = 0.0);
                    p[best] = 1.0;
                }
                self.v[h * s_n + s] = dot(self.policy.row(h, s), q_row);
            }

            let top = (h_n - h) as f64 + RANGE_TOL;
            let q_bad = self.q[h * s_n * a_n..(h + 1) * s_n * a_n]
                .iter()
                .filter(|&&x| !(-RANGE_TOL..=top).contains(&x))
                .count();
            let v_bad = self.v[h * s_n..(h + 1) * s_n]
                .iter()
                .filter(|&&x| !(-RANGE_TOL..=top).contains(&x))
                .count();
            self.monitors.range_violations += (q_bad + v_bad) as u64;

            self.weights[h] = w;
            v_next.copy_from_slice(&self.v[h * s_n..(h + 1) * s_n]);
        }
        self.monitors.evaluations += 1;
        Ok(())
    }

    /// Current action distribution at `(h, s)`.
    pub fn policy_probs(&self, h: usize, s: usize) -> Vec<f64> {
        self.policy.row(h, s).to_vec()
    }

    pub fn act<R: Rng + ?Sized>(&self, h: usize, s: usize, rng: &mut R) -> usize {
        sample_index(self.policy.row(h, s), rng)
    }

    /// `Lambda_h += phi phi^T` and appends the transition to the step-`h` history.
    pub fn record_transition(&mut self, h: usize, s: usize, a: usize, next_state: usize) -> Result<()> {
        let f = &self.features;
        let (s_n, a_n) = (f.n_states, f.n_actions);
        self.cov[h].rank_one_update(f.phi(s, a))?;
        self.counts[((h * s_n + s) * a_n + a) * s_n + next_state] += 1.0;
        self.history[h].push(Transition {
            state: s,
            action: a,
            next_state,
        });
        Ok(())
    }

    /// Full-information reveal of episode `k`'s reward function `[h][s][a]`.
    pub fn record_rewards(&mut self, k: usize, table: &[f64]) -> Result<()> {
        if k != self.last_episode {
            return Err(Error::EpisodeOrder {
                expected: self.last_episode,
                got: k,
            });
        }
        let f = &self.features;
        if table.len() != self.batch_accum.len() {
            return Err(Error::Shape("reward table has the wrong size".into()));
        }
        if let Some(i) = table.iter().position(|r| !(0.0..=1.0).contains(r)) {
            let a = i % f.n_actions;
            let s = (i / f.n_actions) % f.n_states;
            let h = i / (f.n_actions * f.n_states);
            return Err(Error::RewardRange { h, s, a, value: table[i] });
        }
        for (acc, r) in self.batch_accum.iter_mut().zip(table) {
            *acc += r;
        }
        if k == self.anchor {
            self.batch_first.copy_from_slice(table);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        let f = &self.features;
        let (s_n, a_n) = (f.n_states, f.n_actions);
        let sa = s_n * a_n;
        let steps = (0..f.horizon)
            .map(|h| StepSnapshot {
                lambda: self.cov[h].matrix_rows(),
                w: self.weights[h].clone(),
                rbar: self.rbar[h * sa..(h + 1) * sa].to_vec(),
                logits: self.logits[h * sa..(h + 1) * sa].to_vec(),
                q: self.q[h * sa..(h + 1) * sa].to_vec(),
                v: self.v[h * s_n..(h + 1) * s_n].to_vec(),
                phat_v: self.phat_v[h * sa..(h + 1) * sa].to_vec(),
                bonus: self.bonus[h * sa..(h + 1) * sa].to_vec(),
            })
            .collect();
        AgentSnapshot {
            k: self.last_episode,
            i: self.batch_index,
            anchor: self.anchor,
            n_states: s_n,
            n_actions: a_n,
            steps,
        }
    }
}

/// JSON-serializable dump of the per-step agent state. Tables over `(s, a)`
/// are laid out `[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub k: usize,
    pub i: usize,
    pub anchor: usize,
    #[serde(rename = "S")]
    pub n_states: usize,
    #[serde(rename = "A")]
    pub n_actions: usize,
    pub steps: Vec<StepSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSnapshot {
    #[serde(rename = "Lambda")]
    pub lambda: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub rbar: Vec<f64>,
    pub logits: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub phat_v: Vec<f64>,
    pub bonus: Vec<f64>,
}

/// Softmax with the row maximum subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
