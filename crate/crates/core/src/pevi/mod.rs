//! Soft actor-critic with pessimistic Bellman targets. The penalty is either
//! the model's predictive spread (MOPO), the spread of sampled Bellman
//! targets (MOBILE) or a moment-matched lower confidence bound (MOMBO).

mod actor;
mod sac;
mod targets;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use actor::{log_one_minus_tanh_sq, squashed_log_density, Actor, ActorSample, ModePolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use sac::{actor_update, critic_update, ActorStats, CriticStats, SacState};
pub use targets::{
    bootstrap_min, penalty_mobile, penalty_mopo, pessimistic_targets, sample_bellman, target_mombo, ActionChoice,
    MomboTarget, TransitionBatch,
};
pub use train::{train, CurvePoint, ReplayBuffer, TrainConfig, TrainOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mopo,
    Mobile,
    Mombo,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Mopo, Strategy::Mobile, Strategy::Mombo];

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Mopo => "mopo",
            Strategy::Mobile => "mobile",
            Strategy::Mombo => "mombo",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.label() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {name:?}; expected mopo, mobile or mombo")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub strategy: Strategy,
    pub beta: f64,
    /// Next-state draws per target (MOBILE only).
    pub samples: usize,
    pub gamma: f64,
    pub rmax: f64,
    pub horizon: usize,
    pub delta: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mombo,
            beta: 2.0,
            samples: 10,
            gamma: 0.99,
            rmax: 1.0,
            horizon: 100,
            delta: 0.1,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be a finite non-negative number");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.rmax > 0.0) || self.horizon == 0 {
            return bad("rmax must be positive and horizon at least 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.strategy == Strategy::Mobile && self.samples < 2 {
            return bad("MOBILE needs at least 2 samples");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub batch_size: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    /// Starting entropy coefficient; kept fixed when `learn_alpha` is false.
    pub alpha: f64,
    pub learn_alpha: bool,
    pub tau: f64,
    /// Fraction of each batch drawn from real data.
    pub real_ratio: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            batch_size: 256,
            critic_lr: 3e-4,
            actor_lr: 1e-4,
            alpha_lr: 3e-4,
            alpha: 0.2,
            learn_alpha: true,
            tau: 0.005,
            real_ratio: 0.05,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidArgument("tau must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(Error::InvalidArgument("real_ratio must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument("batch size and alpha must be positive".into()));
        }
        Ok(())
    }
}
