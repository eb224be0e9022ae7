//! Numerical checks of the identities and inequalities behind the regret
//! analysis, usable one instance at a time or as randomized suites.
//!
//! Every check reports a margin where non-negative means "holds". Identity
//! checks use `-|lhs - rhs|` as their margin.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{softmax, AgentSnapshot};
use crate::error::{Error, Result};
use crate::exact::{expectation, occupancy_measure, policy_value};
use crate::mdp::{dot, LinearMdp, PolicyTable};
use crate::par::{map_range, Execution};
use crate::ridge::Covariance;
use crate::seed::{derive_seed, rng_from_seed};

/// Tolerance for exact identities summed over `H * S * A` terms.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Tolerance for closed-form inequalities.
pub const INEQUALITY_TOL: f64 = 1e-9;
/// Tighter tolerance for the mirror-descent and drift inequalities.
pub const DESCENT_TOL: f64 = 1e-10;
/// Entries of the optimism sandwich are counted as failures beyond this.
pub const OPTIMISM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: u64,
    pub violations: u64,
    /// Trials whose quantities were undefined (an infinite divergence).
    pub undefined: u64,
    /// Smallest margin seen; negative beyond `tolerance` is a violation.
    pub worst_slack: f64,
    pub tolerance: f64,
    /// Whether a violation should fail the run, as opposed to a rate monitor.
    pub hard: bool,
    pub witness: Value,
}

impl CheckReport {
    fn empty(name: &str, tolerance: f64, hard: bool) -> Self {
        CheckReport {
            name: name.to_string(),
            trials: 0,
            violations: 0,
            undefined: 0,
            worst_slack: f64::INFINITY,
            tolerance,
            hard,
            witness: Value::Null,
        }
    }

    fn record(&mut self, slack: Option<f64>, witness: impl FnOnce() -> Value) {
        self.trials += 1;
        let Some(slack) = slack else {
            self.undefined += 1;
            return;
        };
        if slack < -self.tolerance || slack.is_nan() {
            self.violations += 1;
        }
        if slack < self.worst_slack || slack.is_nan() {
            self.worst_slack = slack;
            self.witness = witness();
        }
    }

    pub fn violation_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.violations as f64 / self.trials as f64
        }
    }

    /// True unless this is a hard check with at least one violation.
    pub fn passed(&self) -> bool {
        !self.hard || self.violations == 0
    }
}

/// Both sides of the value difference identity
/// `Vbar_1(x_1) - V_1^{pi'}(x_1) = sum_h E_{pi'}<Qbar_h, pi_h - pi'_h>
///   + sum_h E_{pi'}[Qbar_h - r_h - P_h Vbar_{h+1}]`
/// with `Vbar_h = <Qbar_h, pi_h>`.
pub fn value_difference_sides(
    mdp: &LinearMdp,
    reward: &[f64],
    pi: &PolicyTable,
    pi_prime: &PolicyTable,
    qbar: &[f64],
) -> (f64, f64) {
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let vbar = |h: usize, s: usize| {
        let row = (h * s_n + s) * a_n;
        dot(pi.row(h, s), &qbar[row..row + a_n])
    };
    let lhs = vbar(0, mdp.x1()) - policy_value(mdp, pi_prime, reward).v1;

    let mut gap = vec![0.0; h_n * s_n * a_n];
    let mut residual = vec![0.0; h_n * s_n * a_n];
    for h in 0..h_n {
        let v_next: Vec<f64> = if h + 1 < h_n {
            (0..s_n).map(|s| vbar(h + 1, s)).collect()
        } else {
            vec![0.0; s_n]
        };
        let pv = mdp.expect_next(h, &v_next);
        for s in 0..s_n {
            let row = (h * s_n + s) * a_n;
            let diff: f64 = (0..a_n)
                .map(|a| qbar[row + a] * (pi.row(h, s)[a] - pi_prime.row(h, s)[a]))
                .sum();
            for a in 0..a_n {
                gap[row + a] = diff;
                residual[row + a] = qbar[row + a] - reward[row + a] - pv[s * a_n + a];
            }
        }
    }
    let occ = occupancy_measure(mdp, pi_prime);
    let rhs = expectation(&occ, pi_prime, &gap) + expectation(&occ, pi_prime, &residual);
    (lhs, rhs)
}

/// `|lhs - rhs|` of the value difference identity.
pub fn check_value_difference(
    mdp: &LinearMdp,
    reward: &[f64],
    pi: &PolicyTable,
    pi_prime: &PolicyTable,
    qbar: &[f64],
) -> f64 {
    let (lhs, rhs) = value_difference_sides(mdp, reward, pi, pi_prime, qbar);
    (lhs - rhs).abs()
}

/// `KL(p || q)` in nats; infinite when `q` has a zero where `p` does not.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).ln();
        }
    }
    total.max(0.0)
}

/// `pi_new ∝ pi_old * exp(alpha q)` computed in log space.
pub fn mirror_step(pi_old: &[f64], q: &[f64], alpha: f64) -> Vec<f64> {
    let logits: Vec<f64> = pi_old
        .iter()
        .zip(q)
        .map(|(&p, &x)| if p > 0.0 { p.ln() + alpha * x } else { f64::NEG_INFINITY })
        .collect();
    softmax(&logits)
}

/// Margin of `<Q, pi* - pi_old> <= alpha H^2 / 2 + (KL(pi*||pi_old) - KL(pi*||pi_new)) / alpha`.
///
/// `None` when `pi*` puts mass where `pi_old` has none, so both divergences
/// are infinite. At `alpha = 0` the right side tends to the left side and the
/// margin is zero.
pub fn check_one_step_descent(q: &[f64], pi_star: &[f64], pi_old: &[f64], alpha: f64, horizon: usize) -> Option<f64> {
    let kl_old = kl(pi_star, pi_old);
    if kl_old.is_infinite() {
        return None;
    }
    if alpha == 0.0 {
        return Some(0.0);
    }
    let pi_new = mirror_step(pi_old, q, alpha);
    let lhs: f64 = q.iter().zip(pi_star.iter().zip(pi_old)).map(|(x, (s, o))| x * (s - o)).sum();
    let h = horizon as f64;
    let rhs = alpha * h * h / 2.0 + (kl_old - kl(pi_star, &pi_new)) / alpha;
    Some(rhs - lhs)
}

/// `2 sqrt(||Q - Q'||_inf) - ||softmax(Q) - softmax(Q')||_1`.
pub fn check_smooth_policy(q: &[f64], q_prime: &[f64]) -> f64 {
    let sup = q.iter().zip(q_prime).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let l1: f64 = softmax(q).iter().zip(softmax(q_prime)).map(|(a, b)| (a - b).abs()).sum();
    2.0 * sup.sqrt() - l1
}

/// Margins of `ln(det L_{n+1} / det L_1) <= sum_i phi_i^T L_i^{-1} phi_i <= 2 ln(det L_{n+1} / det L_1)`
/// with `L_i = lambda I + sum_{j<i} phi_j phi_j^T`. Returns `(lower, upper)`.
pub fn check_elliptical_potential(phis: &[Vec<f64>], d: usize, lambda: f64) -> Result<(f64, f64)> {
    let mut cov = Covariance::new(d, lambda);
    let mut potential = 0.0;
    for phi in phis {
        potential += cov.quad_inv(phi);
        cov.rank_one_update(phi)?;
    }
    let log_ratio = cov.log_det()? - d as f64 * lambda.ln();
    Ok((potential - log_ratio, 2.0 * log_ratio - potential))
}

/// `min_a (alpha H pi_new(a) - (pi_new(a) - pi_old(a)))`.
pub fn check_policy_drift(pi_old: &[f64], pi_new: &[f64], alpha: f64, horizon: usize) -> f64 {
    let bound = alpha * horizon as f64;
    pi_old
        .iter()
        .zip(pi_new)
        .map(|(o, n)| bound * n - (n - o))
        .fold(f64::INFINITY, f64::min)
}

/// Per-entry margins of `-2 min{H, Gamma} <= P V_{h+1} - Phat V <= 0` against
/// the true kernel, for the tables stored in a snapshot. Each `(h, s, a)` is
/// one trial.
pub fn check_optimism(snapshot: &AgentSnapshot, mdp: &LinearMdp) -> CheckReport {
    let mut report = CheckReport::empty("optimism", OPTIMISM_TOL, false);
    let (h_n, s_n, a_n) = (mdp.horizon(), mdp.n_states(), mdp.n_actions());
    let cap = h_n as f64;
    for h in 0..h_n {
        let v_next = if h + 1 < h_n {
            snapshot.steps[h + 1].v.clone()
        } else {
            vec![0.0; s_n]
        };
        let pv = mdp.expect_next(h, &v_next);
        let step = &snapshot.steps[h];
        for s in 0..s_n {
            for a in 0..a_n {
                let i = s * a_n + a;
                let diff = pv[i] - step.phat_v[i];
                let upper = -diff;
                let lower = diff + 2.0 * cap.min(step.bonus[i]);
                report.record(Some(upper.min(lower)), || {
                    json!({
                        "k": snapshot.k, "h": h, "s": s, "a": a,
                        "pv": pv[i], "phat_v": step.phat_v[i], "bonus": step.bonus[i],
                    })
                });
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points dropped because their regret was not positive.
    pub excluded: Vec<(usize, f64)>,
}

/// Least squares of `ln(regret)` on `ln(K)`.
pub fn fit_regret_exponent(points: &[(usize, f64)]) -> Result<ExponentFit> {
    let (kept, excluded): (Vec<_>, Vec<_>) = points.iter().copied().partition(|&(k, r)| k > 0 && r > 0.0);
    if kept.len() < 3 {
        return Err(Error::TooFewPoints(kept.len()));
    }
    let xs: Vec<f64> = kept.iter().map(|&(k, _)| (k as f64).ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|&(_, r)| r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::TooFewPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ExponentFit {
        slope,
        intercept,
        r_squared,
        excluded,
    })
}

// ---- randomized suites ----

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn random_policy(rng: &mut ChaCha8Rng, h: usize, s: usize, a: usize) -> PolicyTable {
    let probs = (0..h * s).flat_map(|_| random_distribution(rng, a)).collect();
    PolicyTable::from_probs(h, s, a, probs).expect("rows are normalized")
}

fn random_unit_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = rng.random::<f64>();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x *= target / n);
    }
    v
}

/// One randomized trial: the margin (or `None` if undefined) and a witness.
type Trial = (Option<f64>, Value);

fn run_suite<F>(name: &str, tolerance: f64, trials: usize, master_seed: u64, exec: Execution, trial: F) -> CheckReport
where
    F: Fn(&mut ChaCha8Rng) -> Trial + Sync,
{
    let outcomes = map_range(trials, exec, |i| {
        let mut rng = rng_from_seed(derive_seed(master_seed, i as u64));
        trial(&mut rng)
    });
    let mut report = CheckReport::empty(name, tolerance, true);
    for (slack, witness) in outcomes {
        report.record(slack, || witness);
    }
    report
}

/// Random instances with `S <= 5`, `A <= 3`, `H <= 4`, policies and arbitrary `Qbar`.
pub fn suite_value_difference(trials: usize, master_seed: u64, exec: Execution) -> CheckReport {
    run_suite("value_difference", IDENTITY_TOL, trials, master_seed, exec, |rng| {
        let s = rng.random_range(1..=5);
        let a = rng.random_range(1..=3);
        let h = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let mdp = LinearMdp::gen_simplex(d, s, a, h, rng).expect("simplex instance");
        let n = h * s * a;
        let reward: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let qbar: Vec<f64> = (0..n).map(|_| h as f64 * rng.random::<f64>()).collect();
        let pi = random_policy(rng, h, s, a);
        let pi_prime = random_policy(rng, h, s, a);
        let slack = -check_value_difference(&mdp, &reward, &pi, &pi_prime, &qbar);
        (Some(slack), json!({ "S": s, "A": a, "H": h, "d": d }))
    })
}

/// `A <= 8`, `alpha <= 1`, `H <= 10`, `Q` in `[0, H]`.
pub fn suite_one_step_descent(trials: usize, master_seed: u64, exec: Execution) -> CheckReport {
    run_suite("one_step_descent", DESCENT_TOL, trials, master_seed, exec, |rng| {
        let a = rng.random_range(1..=8);
        let h = rng.random_range(1..=10);
        let alpha = 1.0 - rng.random::<f64>();
        let q: Vec<f64> = (0..a).map(|_| h as f64 * rng.random::<f64>()).collect();
        let pi_star = random_distribution(rng, a);
        let pi_old = random_distribution(rng, a);
        let slack = check_one_step_descent(&q, &pi_star, &pi_old, alpha, h);
        (slack, json!({ "q": q, "pi_star": pi_star, "pi_old": pi_old, "alpha": alpha, "H": h }))
    })
}

/// `A <= 16`, entries in `[0, 5]`.
pub fn suite_smooth_policy(trials: usize, master_seed: u64, exec: Execution) -> CheckReport {
    run_suite("smooth_policy", INEQUALITY_TOL, trials, master_seed, exec, |rng| {
        let a = rng.random_range(1..=16);
        let q: Vec<f64> = (0..a).map(|_| 5.0 * rng.random::<f64>()).collect();
        let q_prime: Vec<f64> = (0..a).map(|_| 5.0 * rng.random::<f64>()).collect();
        let slack = check_smooth_policy(&q, &q_prime);
        (Some(slack), json!({ "q": q, "q_prime": q_prime }))
    })
}

/// Sequences of length `<= 200` in the unit ball of dimension `<= 8`, `lambda` in `[1, 4]`.
pub fn suite_elliptical_potential(trials: usize, master_seed: u64, exec: Execution) -> CheckReport {
    run_suite("elliptical_potential", INEQUALITY_TOL, trials, master_seed, exec, |rng| {
        let d = rng.random_range(1..=8);
        let len = rng.random_range(0..=200);
        let lambda = 1.0 + 3.0 * rng.random::<f64>();
        let phis: Vec<Vec<f64>> = (0..len).map(|_| random_unit_ball(rng, d)).collect();
        let slack = check_elliptical_potential(&phis, d, lambda)
            .map(|(lo, hi)| lo.min(hi))
            .unwrap_or(f64::NAN);
        (Some(slack), json!({ "d": d, "len": len, "lambda": lambda }))
    })
}

/// One improvement step from a random `pi_old` with `Q` in `[0, H]` and `alpha <= 1`.
pub fn suite_policy_drift(trials: usize, master_seed: u64, exec: Execution) -> CheckReport {
    run_suite("policy_drift", DESCENT_TOL, trials, master_seed, exec, |rng| {
        let a = rng.random_range(1..=8);
        let h = rng.random_range(1..=10);
        let alpha = rng.random::<f64>();
        let q: Vec<f64> = (0..a).map(|_| h as f64 * rng.random::<f64>()).collect();
        let pi_old = random_distribution(rng, a);
        let pi_new = mirror_step(&pi_old, &q, alpha);
        let slack = check_policy_drift(&pi_old, &pi_new, alpha, h);
        (Some(slack), json!({ "q": q, "pi_old": pi_old, "alpha": alpha, "H": h }))
    })
}

/// `KL(p || q) >= 0`, with near-equality exactly when `p = q`.
pub fn suite_kl(trials: usize, master_seed: u64, exec: Execution) -> CheckReport {
    run_suite("kl_nonnegative", 1e-12, trials, master_seed, exec, |rng| {
        let a = rng.random_range(1..=8);
        let p = random_distribution(rng, a);
        let q = random_distribution(rng, a);
        let slack = kl(&p, &q).min(1e-12 - kl(&p, &p));
        (Some(slack), json!({ "p": p, "q": q }))
    })
}

/// The full randomized battery, one report per check.
pub fn run_all(trials: usize, master_seed: u64, exec: Execution) -> Vec<CheckReport> {
    type Suite = fn(usize, u64, Execution) -> CheckReport;
    let suites: [Suite; 6] = [
        suite_value_difference,
        suite_one_step_descent,
        suite_smooth_policy,
        suite_elliptical_potential,
        suite_policy_drift,
        suite_kl,
    ];
    suites
        .iter()
        .enumerate()
        .map(|(i, suite)| suite(trials, derive_seed(master_seed, i as u64), exec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Agent, AgentKind, HyperParams};
    use crate::exact::policy_value;
    use proptest::{prop_assert, proptest};

    fn simplex(seed: u64, d: usize, s: usize, a: usize, h: usize) -> LinearMdp {
        LinearMdp::gen_simplex(d, s, a, h, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn value_difference_at_true_q_is_zero() {
        let mdp = simplex(1, 3, 4, 3, 3);
        let mut rng = rng_from_seed(2);
        let pi = random_policy(&mut rng, 3, 4, 3);
        let reward: Vec<f64> = (0..36).map(|_| rng.random::<f64>()).collect();
        let q = policy_value(&mdp, &pi, &reward).q;
        let (lhs, rhs) = value_difference_sides(&mdp, &reward, &pi, &pi, &q);
        assert!(lhs.abs() <= 1e-12 && rhs.abs() <= 1e-12);
    }

    #[test]
    fn value_difference_with_zero_qbar() {
        let mdp = simplex(3, 2, 5, 2, 4);
        let mut rng = rng_from_seed(4);
        let pi = random_policy(&mut rng, 4, 5, 2);
        let pi_prime = random_policy(&mut rng, 4, 5, 2);
        let reward: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let v = policy_value(&mdp, &pi_prime, &reward).v1;
        let (lhs, rhs) = value_difference_sides(&mdp, &reward, &pi, &pi_prime, &vec![0.0; 40]);
        assert!((lhs + v).abs() <= 1e-12);
        assert!((rhs + v).abs() <= 1e-12);
    }

    #[test]
    fn kl_properties() {
        assert_eq!(kl(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!(kl(&[0.3, 0.7], &[0.6, 0.4]) > 0.0);
        assert_eq!(kl(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
        assert_eq!(kl(&[1.0, 0.0], &[0.5, 0.5]), 2f64.ln());
    }

    #[test]
    fn descent_with_constant_q() {
        let pi_old = [0.2, 0.3, 0.5];
        let pi_star = [0.6, 0.1, 0.3];
        let (alpha, h) = (0.4, 3);
        let slack = check_one_step_descent(&[1.7; 3], &pi_star, &pi_old, alpha, h).unwrap();
        let new = mirror_step(&pi_old, &[1.7; 3], alpha);
        for (a, b) in new.iter().zip(pi_old) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((slack - alpha * 9.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn descent_with_star_equal_to_old() {
        let pi = [0.25, 0.25, 0.5];
        let slack = check_one_step_descent(&[2.0, 0.0, 1.0], &pi, &pi, 0.8, 2).unwrap();
        assert!(slack >= 0.0);
    }

    #[test]
    fn descent_with_unsupported_star_is_undefined() {
        assert_eq!(check_one_step_descent(&[1.0, 0.0], &[0.5, 0.5], &[1.0, 0.0], 0.5, 1), None);
    }

    #[test]
    fn smooth_policy_examples() {
        assert_eq!(check_smooth_policy(&[0.3, 1.2], &[0.3, 1.2]), 0.0);
        let e = std::f64::consts::E;
        let l1 = 2.0 * (e / (1.0 + e) - 0.5);
        let slack = check_smooth_policy(&[1.0, 0.0], &[0.0, 0.0]);
        assert!((slack - (2.0 - l1)).abs() < 1e-15);
        assert!((l1 - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn elliptical_potential_one_step() {
        let (lo, hi) = check_elliptical_potential(&[vec![1.0, 0.0]], 2, 1.0).unwrap();
        let ln2 = 2f64.ln();
        assert!((lo - (1.0 - ln2)).abs() < 1e-12);
        assert!((hi - (2.0 * ln2 - 1.0)).abs() < 1e-12);
        assert_eq!(check_elliptical_potential(&[], 3, 1.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn drift_examples() {
        assert_eq!(check_policy_drift(&[0.5, 0.5], &[0.5, 0.5], 0.0, 4), 0.0);
        let old = [0.25; 4];
        let new = mirror_step(&old, &[3.0, 0.0, 0.0, 0.0], 0.05);
        assert!(check_policy_drift(&old, &new, 0.05, 3) > 0.0);
    }

    #[test]
    fn exponent_fit_recovers_power_laws() {
        let ks = [256usize, 512, 1024, 2048, 4096, 8192];
        let pts: Vec<(usize, f64)> = ks.iter().map(|&k| (k, 7.0 * (k as f64).powf(0.75))).collect();
        let fit = fit_regret_exponent(&pts).unwrap();
        assert!((fit.slope - 0.75).abs() <= 1e-6);
        assert!(fit.r_squared >= 0.999999);
        let pts: Vec<(usize, f64)> = ks.iter().map(|&k| (k, 0.3 * k as f64)).collect();
        assert!((fit_regret_exponent(&pts).unwrap().slope - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn exponent_fit_drops_nonpositive_points() {
        let pts = [(10, 1.0), (20, -1.0), (40, 4.0), (80, 8.0)];
        let fit = fit_regret_exponent(&pts).unwrap();
        assert_eq!(fit.excluded, vec![(20, -1.0)]);
        assert!(matches!(fit_regret_exponent(&pts[..3]), Err(Error::TooFewPoints(2))));
    }

    fn features_two_state() -> LinearMdp {
        simplex(21, 3, 4, 2, 3)
    }

    #[test]
    fn optimism_upper_side_holds_before_any_data() {
        let mdp = features_two_state();
        let hp = HyperParams {
            batch_size: 1,
            alpha: 0.1,
            lambda: 1.0,
            beta: 3.0,
            iota: 1.0,
            delta: 0.1,
            c_beta: 1.0,
            k_below_d_cubed: false,
        };
        let mut agent = Agent::new(AgentKind::OppoPlus, mdp.features(), 4, hp).unwrap();
        agent.maybe_update(1).unwrap();
        let report = check_optimism(&agent.snapshot(), &mdp);
        assert_eq!(report.trials, 24);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn optimism_fails_without_bonus() {
        let mdp = features_two_state();
        let hp = HyperParams {
            batch_size: 1,
            alpha: 0.1,
            lambda: 1.0,
            beta: 0.0,
            iota: 1.0,
            delta: 0.1,
            c_beta: 1.0,
            k_below_d_cubed: false,
        };
        let mut agent = Agent::new(AgentKind::OppoPlus, mdp.features(), 40, hp).unwrap();
        let mut rng = rng_from_seed(3);
        let reward = vec![1.0; 24];
        for k in 1..=40 {
            agent.maybe_update(k).unwrap();
            let mut x = mdp.x1();
            for h in 0..3 {
                let a = agent.act(h, x, &mut rng);
                let nx = mdp.transition_sample(h, x, a, &mut rng);
                agent.record_transition(h, x, a, nx).unwrap();
                x = nx;
            }
            agent.record_rewards(k, &reward).unwrap();
        }
        // With lambda shrinkage and no bonus the estimate sits below the truth.
        let report = check_optimism(&agent.snapshot(), &mdp);
        assert!(report.violations > 0);
        assert!(report.worst_slack < 0.0);
    }

    #[test]
    fn suites_are_clean_and_reproducible() {
        let a = run_all(200, 9, Execution::Sequential);
        for r in &a {
            assert_eq!(r.trials, 200, "{}", r.name);
            assert_eq!(r.violations, 0, "{} {:?}", r.name, r.witness);
        }
        let b = run_all(200, 9, Execution::with_workers(3));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    proptest! {
        #[test]
        fn kl_is_zero_only_on_the_diagonal(raw in proptest::collection::vec(0.01f64..1.0, 2..8)) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            prop_assert!(kl(&p, &p).abs() <= 1e-12);
            let mut q = p.clone();
            q.rotate_left(1);
            let differs = p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-6);
            prop_assert!(!differs || kl(&p, &q) > 0.0);
        }
    }
}
