//! Optimistic multi-batched policy optimization for episodic adversarial
//! linear MDPs with full-information reward feedback, plus the exact
//! evaluation and invariant-checking tools used to study it.

pub mod agent;
pub mod error;
pub mod exact;
pub mod harness;
pub mod lemma;
pub mod mdp;
pub mod par;
pub mod reward;
pub mod ridge;
pub mod seed;

pub use agent::{default_hyperparams, Agent, AgentKind, HyperParams};
pub use error::{Error, Result};
pub use mdp::{FeatureMap, LinearMdp, PolicyTable};
pub use reward::{RewardSchedule, ScheduleKind, ScheduleSpec};
