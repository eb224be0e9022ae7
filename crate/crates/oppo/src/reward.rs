//! Oblivious adversarial reward schedules `r_h^k(s, a) in [0, 1]`.
//!
//! A schedule is a pure function of its spec and `(k, h, s, a)`: any random
//! tables or phases are drawn once from the spec's seed at construction.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// One table, constant in `k`.
    FixedRandom,
    /// Alternates between two tables every `period` episodes.
    Switching,
    /// `0.5 + 0.5 sin(2 pi k / period + phase(h, s, a))`.
    DriftingSinusoid,
    /// Zero on the first episode of every length-`B` batch, a fixed table otherwise.
    BatchAware,
}

impl ScheduleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleKind::FixedRandom => "fixed_random",
            ScheduleKind::Switching => "switching",
            ScheduleKind::DriftingSinusoid => "drifting_sinusoid",
            ScheduleKind::BatchAware => "batch_aware",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_random" => Ok(ScheduleKind::FixedRandom),
            "switching" => Ok(ScheduleKind::Switching),
            "drifting_sinusoid" => Ok(ScheduleKind::DriftingSinusoid),
            "batch_aware" => Ok(ScheduleKind::BatchAware),
            other => Err(Error::UnknownKind {
                what: "schedule",
                name: other.to_string(),
            }),
        }
    }
}

/// Schedule description as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    /// Batch length for `batch_aware`. When absent the harness aligns it with
    /// the agent's batch size.
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSchedule {
    kind: ScheduleKind,
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    period: usize,
    batch: usize,
    tables: Vec<Vec<f64>>,
    phases: Vec<f64>,
}

impl RewardSchedule {
    pub fn new(spec: &ScheduleSpec, horizon: usize, n_states: usize, n_actions: usize) -> Result<Self> {
        let n = horizon * n_states * n_actions;
        if n == 0 {
            return Err(Error::Shape("H, S and A must be positive".into()));
        }
        let mut rng = rng_from_seed(spec.seed);
        let mut draw_table = || -> Vec<f64> { (0..n).map(|_| rng.random::<f64>()).collect() };
        let need_period = || -> Result<usize> {
            match spec.period {
                Some(p) if p > 0 => Ok(p),
                _ => Err(Error::Config(format!("{} needs a positive `period`", spec.kind))),
            }
        };
        let (period, batch, tables, phases) = match spec.kind {
            ScheduleKind::FixedRandom => (0, 0, vec![draw_table()], Vec::new()),
            ScheduleKind::Switching => {
                let period = need_period()?;
                let a = draw_table();
                let b = draw_table();
                (period, 0, vec![a, b], Vec::new())
            }
            ScheduleKind::DriftingSinusoid => {
                let period = need_period()?;
                let phases = draw_table().into_iter().map(|u| 2.0 * PI * u).collect();
                (period, 0, Vec::new(), phases)
            }
            ScheduleKind::BatchAware => {
                let batch = match spec.batch {
                    Some(b) if b > 0 => b,
                    _ => return Err(Error::Config("batch_aware needs a positive `B`".into())),
                };
                (0, batch, vec![draw_table()], Vec::new())
            }
        };
        Ok(RewardSchedule {
            kind: spec.kind,
            horizon,
            n_states,
            n_actions,
            period,
            batch,
            tables,
            phases,
        })
    }

    /// Sinusoid with explicit per-`(h, s, a)` phases, laid out `[h][s][a]`.
    pub fn drifting_sinusoid_with_phases(
        period: usize,
        horizon: usize,
        n_states: usize,
        n_actions: usize,
        phases: Vec<f64>,
    ) -> Result<Self> {
        if period == 0 {
            return Err(Error::Config("period must be positive".into()));
        }
        if phases.len() != horizon * n_states * n_actions {
            return Err(Error::Shape("phase table has the wrong size".into()));
        }
        Ok(RewardSchedule {
            kind: ScheduleKind::DriftingSinusoid,
            horizon,
            n_states,
            n_actions,
            period,
            batch: 0,
            tables: Vec::new(),
            phases,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
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

    /// Batch length of a `batch_aware` schedule, zero otherwise.
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    fn idx(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.n_states + s) * self.n_actions + a
    }

    /// Reward of `(s, a)` at step `h` (zero-based) of episode `k` (one-based).
    pub fn reward_at(&self, k: usize, h: usize, s: usize, a: usize) -> f64 {
        debug_assert!(k >= 1);
        let i = self.idx(h, s, a);
        match self.kind {
            ScheduleKind::FixedRandom => self.tables[0][i],
            ScheduleKind::Switching => {
                let block = (k - 1) / self.period;
                self.tables[block % 2][i]
            }
            ScheduleKind::DriftingSinusoid => {
                let angle = 2.0 * PI * k as f64 / self.period as f64 + self.phases[i];
                (0.5 + 0.5 * angle.sin()).clamp(0.0, 1.0)
            }
            ScheduleKind::BatchAware => {
                if (k - 1).is_multiple_of(self.batch) {
                    0.0
                } else {
                    self.tables[0][i]
                }
            }
        }
    }

    /// Full reward function of episode `k`, laid out `[h][s][a]`.
    pub fn reward_table(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.horizon * self.n_states * self.n_actions);
        for h in 0..self.horizon {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    out.push(self.reward_at(k, h, s, a));
                }
            }
        }
        out
    }

    /// Entrywise mean of `r_h^k` over `k in [k_lo, k_hi]`, laid out `[s][a]`.
    pub fn average_reward_window(&self, k_lo: usize, k_hi: usize, h: usize) -> Vec<f64> {
        assert!(1 <= k_lo && k_lo <= k_hi, "window must satisfy 1 <= k_lo <= k_hi");
        let mut acc = vec![0.0; self.n_states * self.n_actions];
        for k in k_lo..=k_hi {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    acc[s * self.n_actions + a] += self.reward_at(k, h, s, a);
                }
            }
        }
        let n = (k_hi - k_lo + 1) as f64;
        acc.iter_mut().for_each(|x| *x /= n);
        acc
    }
}
