//! Exact dynamic programming over the finite state space: policy values,
//! occupancy measures, the hindsight-optimal benchmark and the per-episode
//! regret decomposition.
//!
//! Tables are flat: `[h][s]` for values and occupancies, `[h][s][a]` for Q,
//! rewards and Bellman errors.

use serde::{Deserialize, Serialize};

use crate::agent::argmax;
use crate::mdp::{dot, LinearMdp, PolicyTable};
use crate::reward::RewardSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    /// `V_1(x_1)`.
    pub v1: f64,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
}

/// Backward Bellman recursion `Q_h = r_h + P_h V_{h+1}`, `V_h = <Q_h, pi_h>`, `V_{H+1} = 0`.
pub fn policy_value(mdp: &LinearMdp, policy: &PolicyTable, reward: &[f64]) -> PolicyValue {
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; h_n * s_n];
    let mut q = vec![0.0; h_n * s_n * a_n];
    let mut v_next = vec![0.0; s_n];
    for h in (0..h_n).rev() {
        let pv = mdp.expect_next(h, &v_next);
        for s in 0..s_n {
            let row = (h * s_n + s) * a_n;
            for a in 0..a_n {
                q[row + a] = reward[row + a] + pv[s * a_n + a];
            }
            v[h * s_n + s] = dot(policy.row(h, s), &q[row..row + a_n]);
        }
        v_next.copy_from_slice(&v[h * s_n..(h + 1) * s_n]);
    }
    PolicyValue {
        v1: v[mdp.x1()],
        v,
        q,
    }
}

/// State-visitation distribution per step, starting from unit mass at `x_1`.
pub fn occupancy_measure(mdp: &LinearMdp, policy: &PolicyTable) -> Vec<f64> {
    let (h_n, s_n) = (mdp.horizon(), mdp.n_states());
    let mut occ = vec![0.0; h_n * s_n];
    occ[mdp.x1()] = 1.0;
    for h in 0..h_n - 1 {
        let (cur, next) = occ.split_at_mut((h + 1) * s_n);
        let cur = &cur[h * s_n..];
        let next = &mut next[..s_n];
        for (s, &mass) in cur.iter().enumerate().take(s_n) {
            if mass == 0.0 {
                continue;
            }
            for (a, &p) in policy.row(h, s).iter().enumerate() {
                let w = mass * p;
                if w == 0.0 {
                    continue;
                }
                for (n, t) in next.iter_mut().zip(mdp.kernel_row(h, s, a)) {
                    *n += w * t;
                }
            }
        }
    }
    occ
}

/// `sum_h E_pi[f_h(x_h, a_h)]` for a table `f[h][s][a]`, given the occupancy of `pi`.
pub fn expectation(occ: &[f64], policy: &PolicyTable, f: &[f64]) -> f64 {
    let (h_n, s_n, a_n) = (policy.horizon, policy.n_states, policy.n_actions);
    let mut total = 0.0;
    for h in 0..h_n {
        for s in 0..s_n {
            let d = occ[h * s_n + s];
            if d != 0.0 {
                let row = (h * s_n + s) * a_n;
                total += d * dot(policy.row(h, s), &f[row..row + a_n]);
            }
        }
    }
    total
}

/// Deterministic optimal policy for one reward table, by backward induction
/// with ties broken toward the lowest action index.
pub fn greedy_optimal(mdp: &LinearMdp, reward: &[f64]) -> PolicyTable {
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut actions = vec![0usize; h_n * s_n];
    let mut v_next = vec![0.0; s_n];
    for h in (0..h_n).rev() {
        let pv = mdp.expect_next(h, &v_next);
        let mut v = vec![0.0; s_n];
        for s in 0..s_n {
            let row = (h * s_n + s) * a_n;
            let q: Vec<f64> = (0..a_n).map(|a| reward[row + a] + pv[s * a_n + a]).collect();
            let best = argmax(&q);
            actions[h * s_n + s] = best;
            v[s] = q[best];
        }
        v_next = v;
    }
    PolicyTable::deterministic(h_n, s_n, a_n, &actions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hindsight {
    pub policy: PolicyTable,
    /// `V_1^{pi*, k}(x_1)` for `k = 1..=K`, stored at index `k - 1`.
    pub values: Vec<f64>,
}

impl Hindsight {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Best fixed policy over episodes `1..=K`. Transitions do not change across
/// episodes, so the summed value of a policy is its value under the summed
/// reward; backward induction on that sum gives a deterministic maximizer.
pub fn hindsight_optimal(mdp: &LinearMdp, schedule: &RewardSchedule, k_total: usize) -> Hindsight {
    let tables: Vec<Vec<f64>> = (1..=k_total).map(|k| schedule.reward_table(k)).collect();
    let mut summed = vec![0.0; tables.first().map_or(0, Vec::len)];
    for t in &tables {
        for (acc, r) in summed.iter_mut().zip(t) {
            *acc += r;
        }
    }
    let policy = greedy_optimal(mdp, &summed);
    let values = tables.iter().map(|t| policy_value(mdp, &policy, t).v1).collect();
    Hindsight { policy, values }
}

/// `V_1^{pi*, k}(x_1) - V_1^{pi^k, k}(x_1)`; individual episodes may be negative.
pub fn episode_regret(
    mdp: &LinearMdp,
    schedule: &RewardSchedule,
    k: usize,
    pi_star_values: &[f64],
    agent_policy: &PolicyTable,
) -> f64 {
    pi_star_values[k - 1] - policy_value(mdp, agent_policy, &schedule.reward_table(k)).v1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretDecomposition {
    pub policy_opt: f64,
    pub statistical: f64,
    /// `delta_h(s, a) = r_h(s, a) + (P_h V_{h+1})(s, a) - Q_h(s, a)`, laid out `[h][s][a]`.
    pub bellman_error: Vec<f64>,
}

impl RegretDecomposition {
    pub fn total(&self) -> f64 {
        self.policy_opt + self.statistical
    }
}

/// Splits one episode's regret into the policy-optimization term
/// `sum_h E_{pi*}<Q_h, pi*_h - pi_h>` and the statistical term
/// `sum_h (E_{pi*}[delta_h] - E_{pi}[delta_h])`, where `V_h = <Q_h, pi_h>` and
/// `delta` is the Bellman error of `Q` under `reward`.
pub fn decompose_regret(
    mdp: &LinearMdp,
    reward: &[f64],
    pi_star: &PolicyTable,
    policy: &PolicyTable,
    q: &[f64],
) -> RegretDecomposition {
    decompose_with_occupancy(
        mdp,
        reward,
        pi_star,
        &occupancy_measure(mdp, pi_star),
        policy,
        &occupancy_measure(mdp, policy),
        q,
    )
}

/// [`decompose_regret`] with precomputed occupancies, for callers that reuse
/// them across episodes.
pub fn decompose_with_occupancy(
    mdp: &LinearMdp,
    reward: &[f64],
    pi_star: &PolicyTable,
    occ_star: &[f64],
    policy: &PolicyTable,
    occ: &[f64],
    q: &[f64],
) -> RegretDecomposition {
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let bellman_error = bellman_error(mdp, reward, policy, q);

    let mut gap = vec![0.0; h_n * s_n * a_n];
    for h in 0..h_n {
        for s in 0..s_n {
            let row = (h * s_n + s) * a_n;
            // <Q, pi* - pi> is a state function; spread it over pi* so that
            // `expectation` under pi* returns it unchanged.
            let diff: f64 = (0..a_n)
                .map(|a| q[row + a] * (pi_star.row(h, s)[a] - policy.row(h, s)[a]))
                .sum();
            gap[row..row + a_n].iter_mut().for_each(|g| *g = diff);
        }
    }
    let policy_opt = expectation(occ_star, pi_star, &gap);
    let statistical = expectation(occ_star, pi_star, &bellman_error) - expectation(occ, policy, &bellman_error);
    RegretDecomposition {
        policy_opt,
        statistical,
        bellman_error,
    }
}

/// `r_h + P_h V_{h+1} - Q_h` with `V_h = <Q_h, pi_h>` and `V_{H+1} = 0`.
pub fn bellman_error(mdp: &LinearMdp, reward: &[f64], policy: &PolicyTable, q: &[f64]) -> Vec<f64> {
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let mut delta = vec![0.0; h_n * s_n * a_n];
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
                delta[i] = reward[i] + pv[s * a_n + a] - q[i];
            }
        }
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{ScheduleKind, ScheduleSpec};
    use crate::seed::{rng_from_seed, sample_index};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_policy<R: Rng>(h: usize, s: usize, a: usize, rng: &mut R) -> PolicyTable {
        let mut probs = Vec::with_capacity(h * s * a);
        for _ in 0..h * s {
            let row: Vec<f64> = (0..a).map(|_| rng.random::<f64>() + 1e-3).collect();
            let t: f64 = row.iter().sum();
            probs.extend(row.iter().map(|x| x / t));
        }
        PolicyTable::from_probs(h, s, a, probs).unwrap()
    }

    fn random_table<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn simplex(seed: u64, d: usize, s: usize, a: usize, h: usize) -> LinearMdp {
        LinearMdp::gen_simplex(d, s, a, h, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn single_step_uniform_average() {
        let mdp = LinearMdp::tabular_embedding(&[1.0, 1.0], 1, 1, 2, 0).unwrap();
        let pv = policy_value(&mdp, &PolicyTable::uniform(1, 1, 2), &[0.0, 1.0]);
        assert_eq!(pv.v1, 0.5);
    }

    #[test]
    fn zero_reward_has_zero_value() {
        let mdp = simplex(1, 3, 4, 3, 3);
        let mut rng = rng_from_seed(2);
        let pi = random_policy(3, 4, 3, &mut rng);
        assert_eq!(policy_value(&mdp, &pi, &vec![0.0; 36]).v1, 0.0);
    }

    // Monte-Carlo oracle: 10^6 independent rollouts of the same policy.
    #[test]
    fn value_and_occupancy_match_rollouts() {
        let (s_n, a_n, h_n) = (3, 2, 3);
        let mdp = simplex(3, 2, s_n, a_n, h_n);
        let mut rng = rng_from_seed(4);
        let pi = random_policy(h_n, s_n, a_n, &mut rng);
        let reward = random_table(h_n * s_n * a_n, &mut rng);
        let exact = policy_value(&mdp, &pi, &reward).v1;
        let occ = occupancy_measure(&mdp, &pi);

        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut visits = vec![0.0; h_n * s_n];
        for _ in 0..n {
            let mut x = mdp.x1();
            let mut ret = 0.0;
            for h in 0..h_n {
                visits[h * s_n + x] += 1.0;
                let a = sample_index(pi.row(h, x), &mut rng);
                ret += reward[(h * s_n + x) * a_n + a];
                x = sample_index(mdp.kernel_row(h, x, a), &mut rng);
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
        for (c, p) in visits.iter().zip(&occ) {
            let freq = c / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
            assert!((freq - p).abs() <= 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn occupancy_is_a_distribution_per_step() {
        let mdp = simplex(5, 4, 7, 3, 5);
        let pi = random_policy(5, 7, 3, &mut rng_from_seed(6));
        let occ = occupancy_measure(&mdp, &pi);
        for h in 0..5 {
            let total: f64 = occ[h * 7..(h + 1) * 7].iter().sum();
            assert!((total - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn deterministic_chain_occupancy() {
        // S = 3, A = 1: state s moves to s + 1 (the last state loops).
        let p = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let flat: Vec<f64> = (0..3).flat_map(|_| p).collect();
        let mdp = LinearMdp::tabular_embedding(&flat, 3, 3, 1, 0).unwrap();
        let occ = occupancy_measure(&mdp, &PolicyTable::uniform(3, 3, 1));
        assert_eq!(occ, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    fn spec(kind: ScheduleKind, period: Option<usize>, seed: u64) -> ScheduleSpec {
        ScheduleSpec {
            kind,
            period,
            batch: None,
            seed,
        }
    }

    #[test]
    fn single_episode_benchmark_is_the_optimal_policy() {
        let mdp = simplex(7, 3, 4, 3, 3);
        let sched = RewardSchedule::new(&spec(ScheduleKind::FixedRandom, None, 1), 3, 4, 3).unwrap();
        let hs = hindsight_optimal(&mdp, &sched, 1);
        let mut rng = rng_from_seed(8);
        for _ in 0..200 {
            let pi = random_policy(3, 4, 3, &mut rng);
            assert!(policy_value(&mdp, &pi, &sched.reward_table(1)).v1 <= hs.values[0] + 1e-12);
        }
    }

    #[test]
    fn single_state_picks_best_summed_action() {
        let mdp = LinearMdp::tabular_embedding(&[1.0; 6], 2, 1, 3, 0).unwrap();
        let sched = RewardSchedule::new(&spec(ScheduleKind::Switching, Some(1), 3), 2, 1, 3).unwrap();
        let k_total = 5;
        let hs = hindsight_optimal(&mdp, &sched, k_total);
        for h in 0..2 {
            let sums: Vec<f64> = (0..3)
                .map(|a| (1..=k_total).map(|k| sched.reward_at(k, h, 0, a)).sum())
                .collect();
            assert_eq!(hs.policy.row(h, 0)[argmax(&sums)], 1.0);
        }
    }

    // Exhaustive oracle: all 2^(3*2) = 64 deterministic policies.
    #[test]
    fn benchmark_matches_exhaustive_search() {
        let (s_n, a_n, h_n) = (3, 2, 2);
        for seed in 0..5 {
            let mdp = simplex(100 + seed, 2, s_n, a_n, h_n);
            let sched = RewardSchedule::new(&spec(ScheduleKind::Switching, Some(1), seed), h_n, s_n, a_n).unwrap();
            let hs = hindsight_optimal(&mdp, &sched, 2);
            let mut best = f64::NEG_INFINITY;
            for code in 0..64u32 {
                let actions: Vec<usize> = (0..6).map(|i| ((code >> i) & 1) as usize).collect();
                let pi = PolicyTable::deterministic(h_n, s_n, a_n, &actions);
                let total: f64 = (1..=2).map(|k| policy_value(&mdp, &pi, &sched.reward_table(k)).v1).sum();
                best = best.max(total);
            }
            assert!((hs.total() - best).abs() <= 1e-12);
        }
    }

    #[test]
    fn regret_of_benchmark_is_zero() {
        let mdp = simplex(9, 3, 5, 2, 3);
        let sched = RewardSchedule::new(&spec(ScheduleKind::DriftingSinusoid, Some(7), 2), 3, 5, 2).unwrap();
        let hs = hindsight_optimal(&mdp, &sched, 12);
        for k in 1..=12 {
            assert_eq!(episode_regret(&mdp, &sched, k, &hs.values, &hs.policy), 0.0);
        }
    }

    #[test]
    fn regret_matches_two_evaluations() {
        let mdp = simplex(10, 3, 5, 2, 3);
        let sched = RewardSchedule::new(&spec(ScheduleKind::FixedRandom, None, 4), 3, 5, 2).unwrap();
        let hs = hindsight_optimal(&mdp, &sched, 3);
        let pi = random_policy(3, 5, 2, &mut rng_from_seed(11));
        for k in 1..=3 {
            let r = sched.reward_table(k);
            let direct = policy_value(&mdp, &hs.policy, &r).v1 - policy_value(&mdp, &pi, &r).v1;
            assert!((episode_regret(&mdp, &sched, k, &hs.values, &pi) - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn decomposition_vanishes_at_the_benchmark() {
        let mdp = simplex(12, 3, 4, 3, 3);
        let mut rng = rng_from_seed(13);
        let reward = random_table(36, &mut rng);
        let star = greedy_optimal(&mdp, &reward);
        let q = policy_value(&mdp, &star, &reward).q;
        let dec = decompose_regret(&mdp, &reward, &star, &star, &q);
        assert!(dec.policy_opt.abs() <= 1e-12);
        assert!(dec.statistical.abs() <= 1e-12);
        assert!(dec.bellman_error.iter().all(|x| x.abs() <= 1e-12));
    }

    #[test]
    fn decomposition_sums_to_regret_for_arbitrary_q() {
        let mdp = simplex(14, 4, 6, 3, 4);
        let mut rng = rng_from_seed(15);
        for _ in 0..50 {
            let reward = random_table(4 * 6 * 3, &mut rng);
            let star = random_policy(4, 6, 3, &mut rng);
            let pi = random_policy(4, 6, 3, &mut rng);
            let q: Vec<f64> = random_table(4 * 6 * 3, &mut rng).iter().map(|x| 4.0 * x).collect();
            let dec = decompose_regret(&mdp, &reward, &star, &pi, &q);
            let regret = policy_value(&mdp, &star, &reward).v1 - policy_value(&mdp, &pi, &reward).v1;
            assert!((dec.total() - regret).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn value_is_linear_in_reward(seed in 0u64..1000) {
            let mdp = simplex(seed, 3, 4, 2, 3);
            let mut rng = rng_from_seed(seed ^ 0xabc);
            let pi = random_policy(3, 4, 2, &mut rng);
            let r1 = random_table(24, &mut rng);
            let r2 = random_table(24, &mut rng);
            let mid: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| (a + b) / 2.0).collect();
            let v = |r: &[f64]| policy_value(&mdp, &pi, r).v1;
            prop_assert!((v(&mid) - (v(&r1) + v(&r2)) / 2.0).abs() <= 1e-12);
        }
    }
}
