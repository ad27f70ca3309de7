//! Model-based policy optimization with an imitation term: model fitting,
//! behavioral-cloning pretraining, policy phases through the learned model,
//! on-policy data collection and the outer iteration loop.

mod bc;
mod collect;
mod data;
mod experiment;
mod model_fit;
mod phase;
mod rollout;

pub use bc::{demo_fit, il_loss, pretrain_policy_bc, pretrain_policy_bc_observed, BcReport, DemoFit, DemoSet, IlTerms};
pub use collect::{collect_policy_data, collect_random_data};
pub use data::{BufferEntry, Origin, StateBuffer, Transition, TransitionDataset};
pub use experiment::{evaluate, initial_policy, run_experiment, ExperimentResult, IterationHook, IterationMetrics, EVAL_STREAM};
pub use model_fit::{heldout_loss, train_model, ModelReport};
pub use phase::{
    phase_loss, policy_phase, policy_phase_observed, validation_reward, validation_states, FaultInjection, LossParts, PhaseContext,
    PhaseEvent, PhaseReport,
};
pub use rollout::{clamp_joints, observe_blocks, reward_sum, ModelRollout, RolloutOut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::NetArch;
use crate::sim::{NoiseModel, RewardWeights, SimConfig};

/// All training hyperparameters. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Rollout horizon in control steps.
    pub horizon: usize,
    /// Policy updates per phase.
    pub updates: usize,
    pub batch: usize,
    pub buffer_size: usize,
    /// Updates between buffer refreshes.
    pub buffer_update_rate: usize,
    pub iterations: usize,
    pub lambda0: f64,
    pub lambda_decay: f64,
    pub entropy_weight: f64,
    pub policy_lr: f64,
    pub model_lr: f64,
    /// Updates between validation checks.
    pub validation_every: usize,
    /// Validation set size as a multiple of `batch`.
    pub validation_multiplier: usize,
    pub lr_cut: f64,
    pub lr_floor: f64,
    pub model_epochs: usize,
    pub model_batch: usize,
    pub holdout_fraction: f64,
    pub early_stop_patience: usize,
    pub random_trajectories: usize,
    pub trajectory_steps: usize,
    pub spline_knots: usize,
    pub collect_noiseless: usize,
    pub collect_noisy: usize,
    pub bc_updates: usize,
    pub bc_lr: f64,
    /// Demo windows per imitation mini-batch.
    pub demo_batch: usize,
    pub eval_starts: usize,
    pub eval_steps: usize,
    /// Record wall-clock seconds in metrics; off gives byte-stable output.
    pub timing: bool,
    pub arch: NetArch,
    pub weights: RewardWeights,
    pub sim: SimConfig,
    pub noise: NoiseModel,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizon: 30,
            updates: 2000,
            batch: 64,
            buffer_size: 512,
            buffer_update_rate: 50,
            iterations: 5,
            lambda0: 1.0,
            lambda_decay: 0.5,
            entropy_weight: 0.01,
            policy_lr: 3e-4,
            model_lr: 1e-3,
            validation_every: 100,
            validation_multiplier: 10,
            lr_cut: 0.5,
            lr_floor: 1e-6,
            model_epochs: 200,
            model_batch: 256,
            holdout_fraction: 0.1,
            early_stop_patience: 20,
            random_trajectories: 50,
            trajectory_steps: 100,
            spline_knots: 10,
            collect_noiseless: 10,
            collect_noisy: 40,
            bc_updates: 500,
            bc_lr: 2e-4,
            demo_batch: 16,
            eval_starts: 16,
            eval_steps: 200,
            timing: true,
            arch: NetArch::default(),
            weights: RewardWeights::default(),
            sim: SimConfig::default(),
            noise: NoiseModel::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 || !self.horizon.is_multiple_of(2) {
            return bad(format!("horizon must be even and >= 2, got {}", self.horizon));
        }
        if self.lambda0 < 0.0 || !(0.0..=1.0).contains(&self.lambda_decay) {
            return bad(format!(
                "need lambda0 >= 0 and decay in [0, 1], got {} / {}",
                self.lambda0, self.lambda_decay
            ));
        }
        if self.batch < 2 || self.buffer_size < self.batch {
            return bad(format!(
                "need batch >= 2 and buffer_size >= batch, got {} / {}",
                self.batch, self.buffer_size
            ));
        }
        let counts = [
            ("iterations", self.iterations),
            ("buffer_update_rate", self.buffer_update_rate),
            ("validation_every", self.validation_every),
            ("validation_multiplier", self.validation_multiplier),
            ("model_batch", self.model_batch),
            ("early_stop_patience", self.early_stop_patience),
            ("random_trajectories", self.random_trajectories),
            ("trajectory_steps", self.trajectory_steps),
            ("demo_batch", self.demo_batch),
            ("eval_starts", self.eval_starts),
            ("eval_steps", self.eval_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be >= 1"));
        }
        if self.spline_knots < 2 {
            return bad("spline_knots must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction must be in [0, 1), got {}", self.holdout_fraction));
        }
        if !(self.bc_lr > 0.0 && self.policy_lr > 0.0 && self.model_lr > 0.0) {
            return bad("step sizes must be positive".into());
        }
        if !(self.lr_floor > 0.0 && self.lr_cut > 0.0 && self.lr_cut < 1.0) {
            return bad("need lr_floor > 0 and lr_cut in (0, 1)".into());
        }
        self.arch.validate()
    }

    /// λ for iteration `i` (0-based).
    pub fn lambda_at(&self, i: usize) -> f64 {
        self.lambda0 * self.lambda_decay.powi(i as i32)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
