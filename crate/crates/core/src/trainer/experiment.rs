use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bc::{pretrain_policy_bc, BcReport, DemoSet};
use super::collect::{collect_policy_data, collect_random_data};
use super::data::StateBuffer;
use super::model_fit::train_model;
use super::phase::{policy_phase, PhaseContext};
use super::TrainConfig;
use crate::autodiff::Adam;
use crate::design::DesignGraph;
use crate::error::{Error, Result};
use crate::nets::{eval_policy_distance, ModelParams, PolicyParams};
use crate::rng::{derive_seed, stream};
use crate::sim::{DemoDataset, DistanceStats};

/// Seed label of the evaluation starts, shared by every iteration.
pub const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    /// 1-based.
    pub iteration: usize,
    pub dist: DistanceStats,
    pub loss_rl: f64,
    pub loss_il: f64,
    pub val_reward: f64,
    /// Imitation weight in effect (0 without demonstrations).
    pub lambda: f64,
    pub step_size: f64,
    /// Seconds since the run started (0 when timing is off).
    pub wall_s: f64,
    pub model_loss_initial: f64,
    pub model_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metrics: Vec<IterationMetrics>,
    pub theta: PolicyParams,
    pub phi: ModelParams,
    pub bc: Option<BcReport>,
    /// Wall-clock seconds per named phase, in execution order.
    pub timings: Vec<(String, f64)>,
}

/// Observer called after each iteration with its metrics and parameters.
pub type IterationHook<'a> = &'a mut dyn FnMut(&IterationMetrics, &PolicyParams, &ModelParams) -> Result<()>;

/// Policy parameters a run with `seed` starts from.
pub fn initial_policy(cfg: &TrainConfig, seed: u64) -> PolicyParams {
    PolicyParams::init(cfg.arch, derive_seed(seed, 1))
}

/// Evaluation distance of `theta` on the fixed starts of a run with `seed`.
pub fn evaluate(theta: &PolicyParams, design: &DesignGraph, cfg: &TrainConfig, seed: u64) -> Result<DistanceStats> {
    eval_policy_distance(
        theta,
        design,
        cfg.eval_starts,
        cfg.eval_steps,
        &cfg.noise,
        &cfg.sim,
        derive_seed(seed, EVAL_STREAM),
    )
}

fn abort(phase: &'static str, iteration: usize, e: Error) -> Error {
    match e {
        Error::PhaseAbort { .. } => e,
        e => Error::PhaseAbort {
            phase,
            iteration,
            reason: e.to_string(),
        },
    }
}

/// The full training procedure for `design`. Empty `demos` gives pure RL.
pub fn run_experiment(
    design: &DesignGraph,
    demos: &[DemoDataset],
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<IterationHook>,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let clock = |t: Instant| if cfg.timing { t.elapsed().as_secs_f64() } else { 0.0 };
    let mut timings = Vec::new();
    let mut theta = initial_policy(cfg, seed);
    let mut phi = ModelParams::init(cfg.arch, derive_seed(seed, 2));
    let demo_set = DemoSet::new(demos, &theta)?;
    let use_il = !demo_set.is_empty() && cfg.lambda0 > 0.0;

    let mut bc = None;
    if use_il {
        let t = Instant::now();
        bc = Some(pretrain_policy_bc(&mut theta, &demo_set, cfg, derive_seed(seed, 3)).map_err(|e| abort("bc", 0, e))?);
        timings.push(("bc".to_string(), clock(t)));
    }
    let t = Instant::now();
    let mut data = collect_random_data(design, cfg, derive_seed(seed, 4)).map_err(|e| abort("collect", 0, e))?;
    timings.push(("random_data".to_string(), clock(t)));
    let mut buffer = StateBuffer::new(design, &cfg.arch, &cfg.noise, cfg.buffer_size, &mut stream(derive_seed(seed, 5), 0));
    let mut adam = Adam::new(&theta.store, cfg.policy_lr);

    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut hook = hook;
    for i in 0..cfg.iterations {
        let it = i + 1;
        let lambda = if use_il { cfg.lambda_at(i) } else { 0.0 };
        let t = Instant::now();
        let model = train_model(&mut phi, &data, cfg, derive_seed(seed, 100 + i as u64)).map_err(|e| abort("model", it, e))?;
        timings.push((format!("model_{it}"), clock(t)));

        let t = Instant::now();
        let ctx = PhaseContext {
            design,
            phi: &phi,
            demos: use_il.then_some(&demo_set),
            cfg,
            lambda,
            seed: derive_seed(seed, 200 + i as u64),
            iteration: it,
            fault: None,
        };
        let phase = policy_phase(&mut theta, &mut adam, &mut buffer, &ctx).map_err(|e| abort("policy", it, e))?;
        timings.push((format!("policy_{it}"), clock(t)));

        let t = Instant::now();
        collect_policy_data(&theta, design, cfg, derive_seed(seed, 300 + i as u64), &mut data).map_err(|e| abort("collect", it, e))?;
        timings.push((format!("collect_{it}"), clock(t)));

        let t = Instant::now();
        let dist = evaluate(&theta, design, cfg, seed).map_err(|e| abort("eval", it, e))?;
        timings.push((format!("eval_{it}"), clock(t)));

        let m = IterationMetrics {
            iteration: it,
            dist,
            loss_rl: phase.loss_rl,
            loss_il: phase.loss_il,
            val_reward: phase.final_reward,
            lambda,
            step_size: phase.step_size,
            wall_s: clock(start),
            model_loss_initial: model.initial_loss,
            model_loss: model.final_loss,
        };
        if let Some(h) = hook.as_mut() {
            h(&m, &theta, &phi)?;
        }
        metrics.push(m);
    }
    Ok(ExperimentResult {
        metrics,
        theta,
        phi,
        bc,
        timings,
    })
}
