//! Finite-state linear MDPs: `P_h(x' | x, a) = phi(x, a)^T mu_h(x')`.
//!
//! Steps are indexed `0..horizon` internally; step `h` here is step `h + 1`
//! in the usual one-based notation.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::sample_index;

/// Feature norms may exceed one by this much.
pub const FEATURE_NORM_TOL: f64 = 1e-12;
/// Transition entries may dip this far below zero.
pub const NEGATIVITY_TOL: f64 = 1e-12;
/// Allowed deviation of a transition row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Allowed excess of `||mu_h 1||_2` over `sqrt(d)`.
pub const MEASURE_TOL: f64 = 1e-9;
/// Largest total clipped mass that is treated as rounding noise.
pub const CLIP_TOL: f64 = 1e-9;

/// The learner-visible part of a linear MDP: the feature map and the sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub d: usize,
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    phi: Vec<f64>,
}

impl FeatureMap {
    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let off = (s * self.n_actions + a) * self.d;
        &self.phi[off..off + self.d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMdp {
    d: usize,
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    x1: usize,
    /// `[s][a][j]`, row-major.
    phi: Vec<f64>,
    /// `[h][j][s']`, row-major.
    mu: Vec<f64>,
    /// Cached `[h][s][a][s']` transition kernel.
    kernel: Vec<f64>,
}

impl LinearMdp {
    /// Builds an instance and rejects it unless every invariant holds.
    pub fn new(
        d: usize,
        horizon: usize,
        n_states: usize,
        n_actions: usize,
        x1: usize,
        phi: Vec<f64>,
        mu: Vec<f64>,
    ) -> Result<Self> {
        let mut mdp = Self::unvalidated(d, horizon, n_states, n_actions, x1, phi, mu)?;
        let report = mdp.validate();
        if !report.all_hold() {
            return Err(Error::InvalidMdp(report.summary()));
        }
        let mut kernel = Vec::with_capacity(horizon * n_states * n_actions * n_states);
        for h in 0..horizon {
            for s in 0..n_states {
                for a in 0..n_actions {
                    kernel.extend(mdp.transition_probs(h, s, a)?);
                }
            }
        }
        mdp.kernel = kernel;
        Ok(mdp)
    }

    /// Builds an instance after checking shapes only. The cached kernel holds
    /// the raw products `phi^T mu_h`; intended for inspecting faulty instances
    /// with [`LinearMdp::validate`].
    pub fn unvalidated(
        d: usize,
        horizon: usize,
        n_states: usize,
        n_actions: usize,
        x1: usize,
        phi: Vec<f64>,
        mu: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 || horizon == 0 || n_states == 0 || n_actions == 0 {
            return Err(Error::Shape("d, H, S and A must be positive".into()));
        }
        if x1 >= n_states {
            return Err(Error::Shape(format!("x1 = {x1} but S = {n_states}")));
        }
        if phi.len() != n_states * n_actions * d {
            return Err(Error::Shape(format!(
                "phi has {} entries, expected S*A*d = {}",
                phi.len(),
                n_states * n_actions * d
            )));
        }
        if mu.len() != horizon * d * n_states {
            return Err(Error::Shape(format!(
                "mu has {} entries, expected H*d*S = {}",
                mu.len(),
                horizon * d * n_states
            )));
        }
        if phi.iter().chain(mu.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Shape("non-finite entry in phi or mu".into()));
        }
        let mut mdp = LinearMdp {
            d,
            horizon,
            n_states,
            n_actions,
            x1,
            phi,
            mu,
            kernel: Vec::new(),
        };
        let mut kernel = Vec::with_capacity(horizon * n_states * n_actions * n_states);
        for h in 0..horizon {
            for s in 0..n_states {
                for a in 0..n_actions {
                    kernel.extend(mdp.raw_row(h, s, a));
                }
            }
        }
        mdp.kernel = kernel;
        Ok(mdp)
    }

    /// Standard embedding of a tabular kernel `P[h][s][a][s']` (flattened
    /// row-major): one-hot features over the `S*A` pairs, `mu_h` rows copied
    /// from `P`.
    pub fn tabular_embedding(
        p: &[f64],
        horizon: usize,
        n_states: usize,
        n_actions: usize,
        x1: usize,
    ) -> Result<Self> {
        if p.len() != horizon * n_states * n_actions * n_states {
            return Err(Error::Shape(format!(
                "transition tensor has {} entries, expected H*S*A*S = {}",
                p.len(),
                horizon * n_states * n_actions * n_states
            )));
        }
        for h in 0..horizon {
            for s in 0..n_states {
                for a in 0..n_actions {
                    let off = ((h * n_states + s) * n_actions + a) * n_states;
                    let row = &p[off..off + n_states];
                    if let Some(&value) = row.iter().find(|&&x| x < 0.0) {
                        return Err(Error::NegativeProbability { h, s, a, value });
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::RowNotStochastic { h, s, a, sum });
                    }
                }
            }
        }
        let d = n_states * n_actions;
        let mut phi = vec![0.0; n_states * n_actions * d];
        for j in 0..d {
            phi[j * d + j] = 1.0;
        }
        // mu_h[j = s*A + a][s'] = P[h][s][a][s'], which is exactly P's layout.
        let mu = p.to_vec();
        Self::new(d, horizon, n_states, n_actions, x1, phi, mu)
    }

    /// Random instance with features on the probability simplex and every row
    /// of `mu_h` a distribution over states, so each transition row is a convex
    /// mixture of distributions. Both are drawn from a flat Dirichlet.
    pub fn gen_simplex<R: Rng + ?Sized>(
        d: usize,
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d == 0 || n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::Shape("d, S, A and H must be positive".into()));
        }
        let mut phi = Vec::with_capacity(n_states * n_actions * d);
        for _ in 0..n_states * n_actions {
            phi.extend(flat_dirichlet(d, rng));
        }
        let mut mu = Vec::with_capacity(horizon * d * n_states);
        for _ in 0..horizon * d {
            mu.extend(flat_dirichlet(n_states, rng));
        }
        Self::new(d, horizon, n_states, n_actions, 0, phi, mu)
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn x1(&self) -> usize {
        self.x1
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let off = (s * self.n_actions + a) * self.d;
        &self.phi[off..off + self.d]
    }

    /// Row `j` of `mu_h`, a signed measure over states.
    #[inline]
    pub fn mu_row(&self, h: usize, j: usize) -> &[f64] {
        let off = (h * self.d + j) * self.n_states;
        &self.mu[off..off + self.n_states]
    }

    pub fn features(&self) -> FeatureMap {
        FeatureMap {
            d: self.d,
            horizon: self.horizon,
            n_states: self.n_states,
            n_actions: self.n_actions,
            phi: self.phi.clone(),
        }
    }

    fn raw_row(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let phi = self.phi(s, a);
        let mut row = vec![0.0; self.n_states];
        for (j, &w) in phi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (r, &m) in row.iter_mut().zip(self.mu_row(h, j)) {
                *r += w * m;
            }
        }
        row
    }

    /// `phi(s,a)^T mu_h`, with rounding-level negative entries clipped and the
    /// row renormalized. Larger defects are reported, never masked.
    pub fn transition_probs(&self, h: usize, s: usize, a: usize) -> Result<Vec<f64>> {
        let mut row = self.raw_row(h, s, a);
        let mut clipped = 0.0;
        for x in row.iter_mut() {
            if *x < 0.0 {
                clipped -= *x;
                *x = 0.0;
            }
        }
        if clipped >= CLIP_TOL {
            return Err(Error::InvalidMdp(format!(
                "transition row (h={h}, s={s}, a={a}) has negative mass {clipped:e}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidMdp(format!(
                "transition row (h={h}, s={s}, a={a}) sums to {sum}"
            )));
        }
        if clipped > 0.0 {
            row.iter_mut().for_each(|x| *x /= sum);
        }
        Ok(row)
    }

    /// Cached transition row, identical to [`LinearMdp::transition_probs`] for
    /// validated instances.
    #[inline]
    pub fn kernel_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let off = ((h * self.n_states + s) * self.n_actions + a) * self.n_states;
        &self.kernel[off..off + self.n_states]
    }

    pub fn transition_sample<R: Rng + ?Sized>(
        &self,
        h: usize,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> usize {
        sample_index(self.kernel_row(h, s, a), rng)
    }

    /// `(P_h V)(s, a)` for every pair, laid out `[s][a]`.
    pub fn expect_next(&self, h: usize, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n_states);
        let mut out = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.push(dot(self.kernel_row(h, s, a), v));
            }
        }
        out
    }

    /// Worst-case excess for each structural invariant.
    pub fn validate(&self) -> ValidationReport {
        let mut feature_norm = InvariantSlack::new("feature_norm", FEATURE_NORM_TOL);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let n = norm(self.phi(s, a));
                feature_norm.observe(n - 1.0, vec![s, a]);
            }
        }
        let mut nonneg = InvariantSlack::new("transition_nonnegative", NEGATIVITY_TOL);
        let mut row_sum = InvariantSlack::new("transition_row_sum", ROW_SUM_TOL);
        for h in 0..self.horizon {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let row = self.raw_row(h, s, a);
                    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
                    nonneg.observe(-min, vec![h, s, a]);
                    let sum: f64 = row.iter().sum();
                    row_sum.observe((sum - 1.0).abs(), vec![h, s, a]);
                }
            }
        }
        let mut measure = InvariantSlack::new("measure_bound", MEASURE_TOL);
        let sqrt_d = (self.d as f64).sqrt();
        for h in 0..self.horizon {
            let totals: Vec<f64> = (0..self.d)
                .map(|j| self.mu_row(h, j).iter().sum())
                .collect();
            measure.observe(norm(&totals) - sqrt_d, vec![h]);
        }
        ValidationReport {
            invariants: vec![feature_norm, nonneg, row_sum, measure],
        }
    }

    pub fn to_file_format(&self) -> MdpFile {
        MdpFile {
            d: self.d,
            horizon: self.horizon,
            n_states: self.n_states,
            n_actions: self.n_actions,
            x1: self.x1,
            phi: self.phi.chunks(self.d).map(|c| c.to_vec()).collect(),
            mu: (0..self.horizon)
                .map(|h| (0..self.d).map(|j| self.mu_row(h, j).to_vec()).collect())
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file_format())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads and re-validates an instance written by [`LinearMdp::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: MdpFile = serde_json::from_str(&text)?;
        file.into_mdp()
    }
}

/// On-disk JSON layout: `phi` is `[S*A][d]` with pair index `s*A + a`, `mu` is
/// `[H][d][S]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub d: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub n_states: usize,
    #[serde(rename = "A")]
    pub n_actions: usize,
    pub x1: usize,
    pub phi: Vec<Vec<f64>>,
    pub mu: Vec<Vec<Vec<f64>>>,
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<LinearMdp> {
        if self.phi.iter().any(|r| r.len() != self.d) {
            return Err(Error::Shape("every phi row must have length d".into()));
        }
        if self.mu.len() != self.horizon
            || self
                .mu
                .iter()
                .any(|m| m.len() != self.d || m.iter().any(|r| r.len() != self.n_states))
        {
            return Err(Error::Shape("mu must have shape [H][d][S]".into()));
        }
        let phi = self.phi.into_iter().flatten().collect();
        let mu = self.mu.into_iter().flatten().flatten().collect();
        LinearMdp::new(self.d, self.horizon, self.n_states, self.n_actions, self.x1, phi, mu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantSlack {
    pub name: &'static str,
    /// Largest observed `quantity - bound`; non-positive means the invariant holds exactly.
    pub excess: f64,
    pub index: Vec<usize>,
    pub tolerance: f64,
}

impl InvariantSlack {
    fn new(name: &'static str, tolerance: f64) -> Self {
        InvariantSlack {
            name,
            excess: f64::NEG_INFINITY,
            index: Vec::new(),
            tolerance,
        }
    }

    fn observe(&mut self, excess: f64, index: Vec<usize>) {
        if excess > self.excess || excess.is_nan() {
            self.excess = excess;
            self.index = index;
        }
    }

    pub fn holds(&self) -> bool {
        self.excess <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub invariants: Vec<InvariantSlack>,
}

impl ValidationReport {
    pub fn all_hold(&self) -> bool {
        self.invariants.iter().all(InvariantSlack::holds)
    }

    pub fn get(&self, name: &str) -> Option<&InvariantSlack> {
        self.invariants.iter().find(|i| i.name == name)
    }

    fn summary(&self) -> String {
        self.invariants
            .iter()
            .filter(|i| !i.holds())
            .map(|i| format!("{} exceeded by {:e} at {:?}", i.name, i.excess, i.index))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Per-step stochastic policy, `probs[h][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn uniform(horizon: usize, n_states: usize, n_actions: usize) -> Self {
        PolicyTable {
            horizon,
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; horizon * n_states * n_actions],
        }
    }

    /// Deterministic policy from an action table `[h][s]`.
    pub fn deterministic(horizon: usize, n_states: usize, n_actions: usize, actions: &[usize]) -> Self {
        assert_eq!(actions.len(), horizon * n_states);
        let mut probs = vec![0.0; horizon * n_states * n_actions];
        for (i, &a) in actions.iter().enumerate() {
            probs[i * n_actions + a] = 1.0;
        }
        PolicyTable {
            horizon,
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn from_probs(horizon: usize, n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != horizon * n_states * n_actions {
            return Err(Error::Shape("policy table has the wrong size".into()));
        }
        let table = PolicyTable {
            horizon,
            n_states,
            n_actions,
            probs,
        };
        if let Some((h, s)) = table.first_invalid_row(1e-12) {
            return Err(Error::Shape(format!("policy row (h={h}, s={s}) is not a distribution")));
        }
        Ok(table)
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let off = (h * self.n_states + s) * self.n_actions;
        &self.probs[off..off + self.n_actions]
    }

    #[inline]
    pub fn row_mut(&mut self, h: usize, s: usize) -> &mut [f64] {
        let off = (h * self.n_states + s) * self.n_actions;
        &mut self.probs[off..off + self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn first_invalid_row(&self, tol: f64) -> Option<(usize, usize)> {
        for h in 0..self.horizon {
            for s in 0..self.n_states {
                let row = self.row(h, s);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > tol {
                    return Some((h, s));
                }
            }
        }
        None
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn flat_dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}
