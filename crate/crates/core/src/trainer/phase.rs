use rand_distr::{Distribution, StandardNormal};

use super::bc::{il_loss, DemoSet};
use super::data::{BufferEntry, StateBuffer};
use super::rollout::ModelRollout;
use super::TrainConfig;
use crate::autodiff::{Adam, BoundParams, ParamStore, Tape, Tensor, Var};
use crate::design::{DesignGraph, ModuleKind};
use crate::error::{Error, Result};
use crate::nets::{ActBlocks, Blocks, HiddenState, ModelNet, ModelParams, PolicyNet, PolicyParams};
use crate::rng::{derive_seed, stream, Rng};
use crate::sim::initial_state;

const ROLLOUT_STREAM: u64 = 0x7011;
const DEMO_STREAM: u64 = 0xde30;
const VALIDATION_STREAM: u64 = 0x7a11;
const REFRESH_STREAM: u64 = 0x2ef2;

/// Forces the step size to `step_size` right after update `at_update`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultInjection {
    pub at_update: usize,
    pub step_size: f64,
}

/// Everything a policy phase reads but does not change.
#[derive(Clone, Copy)]
pub struct PhaseContext<'a> {
    pub design: &'a DesignGraph,
    pub phi: &'a ModelParams,
    pub demos: Option<&'a DemoSet>,
    pub cfg: &'a TrainConfig,
    pub lambda: f64,
    pub seed: u64,
    /// Outer iteration index, used in diagnostics.
    pub iteration: usize,
    pub fault: Option<FaultInjection>,
}

impl PhaseContext<'_> {
    fn imitation(&self) -> Option<&DemoSet> {
        self.demos.filter(|d| self.lambda > 0.0 && !d.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub rl: f64,
    pub il: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseEvent {
    Snapshot { update: usize, reward: f64 },
    Revert { update: usize, reward: f64, step_size: f64 },
    NanRestore { update: usize, step_size: f64 },
    Refresh { update: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    /// Mean RL loss over the phase's updates.
    pub loss_rl: f64,
    /// Mean imitation loss over the phase's updates (0 without imitation).
    pub loss_il: f64,
    pub initial_reward: f64,
    pub final_reward: f64,
    pub step_size: f64,
    pub reverts: usize,
    pub nan_restores: usize,
    pub events: Vec<PhaseEvent>,
}

struct Nets {
    policy: PolicyNet,
    model: ModelNet,
}

impl Nets {
    fn new(ctx: &PhaseContext) -> Self {
        Nets {
            policy: PolicyNet::new(ctx.cfg.arch, ctx.design),
            model: ModelNet::new(ctx.phi.arch, ctx.design),
        }
    }

    fn rollout<'a>(&'a self, ctx: &'a PhaseContext) -> ModelRollout<'a> {
        ModelRollout {
            policy: &self.policy,
            model: &self.model,
            norm: &ctx.phi.norm,
            weights: ctx.cfg.weights,
        }
    }
}

fn action_noise(net: &PolicyNet, batch: usize, steps: usize, rng: &mut Rng) -> Vec<ActBlocks<Tensor>> {
    (0..steps)
        .map(|_| {
            let mut b = ActBlocks { leg: None, wheel: None };
            for kind in [ModuleKind::Leg, ModuleKind::Wheel] {
                let n = net.layout.count(kind);
                if n > 0 {
                    let (r, c) = (n * batch, kind.action_dim());
                    let d = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
                    b.set(kind, Tensor::matrix(r, c, d));
                }
            }
            b
        })
        .collect()
}

fn start_blocks(tape: &mut Tape, nets: &Nets, entries: &[&BufferEntry]) -> (Blocks<Var>, Blocks<Var>) {
    let states: Vec<&[f64]> = entries.iter().map(|e| &e.state[..]).collect();
    let hidden: Vec<&HiddenState> = entries.iter().map(|e| &e.hidden).collect();
    let s = nets.model.state_blocks(&states).map(|_, t| tape.constant(t.clone()));
    let h = nets.policy.hidden_constants(tape, &hidden);
    (s, h)
}

/// Builds the loss of update `k` on `tape`. Returns the total loss node and
/// its parts.
fn build_loss(
    tape: &mut Tape,
    theta: &PolicyParams,
    ctx: &PhaseContext,
    nets: &Nets,
    buffer: &StateBuffer,
    k: usize,
) -> Result<(Var, BoundParams, LossParts)> {
    let cfg = ctx.cfg;
    let mut rng = stream(derive_seed(ctx.seed, ROLLOUT_STREAM), k as u64);
    let entries = buffer.sample(cfg.batch, &mut rng);
    let n = entries.len();
    let noise = action_noise(&nets.policy, n, cfg.horizon, &mut rng);
    let p = theta.store.bind(tape);
    let phi = ctx.phi.store.bind_frozen(tape);
    let (s, h) = start_blocks(tape, nets, &entries);
    let out = nets.rollout(ctx).run(tape, &p, &phi, s, h, n, cfg.horizon, Some(&noise))?;
    let rl = tape.scale(out.reward, -1.0 / n as f64);
    let mut parts = LossParts {
        total: 0.0,
        rl: tape.value(rl).item(),
        il: 0.0,
        entropy: 0.0,
    };
    let mut total = rl;
    if let Some(demos) = ctx.imitation() {
        let mut drng = stream(derive_seed(ctx.seed, DEMO_STREAM), k as u64);
        let terms = il_loss(tape, &p, demos, cfg, &mut drng)?;
        parts.il = tape.value(terms.nll).item();
        parts.entropy = tape.value(terms.entropy).item();
        let il = tape.scale(terms.nll, ctx.lambda);
        let ent = tape.scale(terms.entropy, cfg.entropy_weight);
        total = tape.add(total, il);
        total = tape.add(total, ent);
    }
    parts.total = tape.value(total).item();
    Ok((total, p, parts))
}

/// Loss parts of update `k` for the given parameters and buffer, exactly as
/// the phase computes them.
pub fn phase_loss(theta: &PolicyParams, ctx: &PhaseContext, buffer: &StateBuffer, k: usize) -> Result<LossParts> {
    let nets = Nets::new(ctx);
    let mut tape = Tape::new();
    Ok(build_loss(&mut tape, theta, ctx, &nets, buffer, k)?.2)
}

/// Mean accumulated reward of `horizon`-step mean-action model rollouts from
/// `states` with zero hidden state.
pub fn validation_reward(
    theta: &PolicyParams,
    phi: &ModelParams,
    design: &DesignGraph,
    states: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<f64> {
    let nets = Nets {
        policy: PolicyNet::new(theta.arch, design),
        model: ModelNet::new(phi.arch, design),
    };
    let ro = ModelRollout {
        policy: &nets.policy,
        model: &nets.model,
        norm: &phi.norm,
        weights: cfg.weights,
    };
    let zeros = HiddenState::zeros(design, &theta.arch);
    let mut total = 0.0;
    for chunk in states.chunks(256) {
        let mut tape = Tape::new();
        let p = theta.store.bind_frozen(&mut tape);
        let f = phi.store.bind_frozen(&mut tape);
        let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        let s = nets.model.state_blocks(&refs).map(|_, t| tape.constant(t.clone()));
        let h = nets.policy.hidden_constants(&mut tape, &vec![&zeros; chunk.len()]);
        let out = ro.run(&mut tape, &p, &f, s, h, chunk.len(), cfg.horizon, None)?;
        tape.check_finite()?;
        total += tape.value(out.reward).item();
    }
    Ok(total / states.len() as f64)
}

/// Fixed validation start states of a phase.
pub fn validation_states(ctx: &PhaseContext) -> Vec<Vec<f64>> {
    let mut rng = stream(derive_seed(ctx.seed, VALIDATION_STREAM), 0);
    (0..ctx.cfg.batch * ctx.cfg.validation_multiplier)
        .map(|_| initial_state(ctx.design, &ctx.cfg.noise, &mut rng).values)
        .collect()
}

fn refresh_buffer(theta: &PolicyParams, ctx: &PhaseContext, nets: &Nets, buffer: &mut StateBuffer, k: usize) -> Result<()> {
    let cfg = ctx.cfg;
    let mut rng = stream(derive_seed(ctx.seed, REFRESH_STREAM), k as u64);
    let n = cfg.batch / 2;
    let starts: Vec<Vec<f64>> = (0..n).map(|_| initial_state(ctx.design, &cfg.noise, &mut rng).values).collect();
    let zeros = HiddenState::zeros(ctx.design, &theta.arch);
    let mut tape = Tape::new();
    let p = theta.store.bind_frozen(&mut tape);
    let f = ctx.phi.store.bind_frozen(&mut tape);
    let refs: Vec<&[f64]> = starts.iter().map(Vec::as_slice).collect();
    let s = nets.model.state_blocks(&refs).map(|_, t| tape.constant(t.clone()));
    let h = nets.policy.hidden_constants(&mut tape, &vec![&zeros; n]);
    let out = nets.rollout(ctx).run(&mut tape, &p, &f, s, h, n, cfg.horizon / 2, None)?;
    tape.check_finite()?;
    let last_s = out.states.last().unwrap().map(|_, v| tape.value(*v).clone());
    let last_h = out.hidden.last().unwrap().map(|_, v| tape.value(*v).clone());
    let states = nets
        .model
        .flatten_blocks(&last_s.as_ref(), n, ModuleKind::Body.state_dim(), ModuleKind::state_dim);
    let hidden = HiddenState::from_blocks(&last_h.as_ref(), &nets.policy.layout, n);
    buffer.refresh(
        states.into_iter().zip(hidden).collect(),
        ctx.design,
        &theta.arch,
        &cfg.noise,
        &mut rng,
    );
    Ok(())
}

/// One policy-optimization phase of `cfg.updates` updates.
pub fn policy_phase(theta: &mut PolicyParams, adam: &mut Adam, buffer: &mut StateBuffer, ctx: &PhaseContext) -> Result<PhaseReport> {
    policy_phase_observed(theta, adam, buffer, ctx, &mut |_, _, _| {})
}

/// [`policy_phase`] calling `observe` with every event and the parameters
/// right after it.
pub fn policy_phase_observed(
    theta: &mut PolicyParams,
    adam: &mut Adam,
    buffer: &mut StateBuffer,
    ctx: &PhaseContext,
    observe: &mut dyn FnMut(&PhaseEvent, &PolicyParams, &Adam),
) -> Result<PhaseReport> {
    let cfg = ctx.cfg;
    let nets = Nets::new(ctx);
    let val_states = validation_states(ctx);
    let initial_reward = validation_reward(theta, ctx.phi, ctx.design, &val_states, cfg)?;
    let mut snapshot: (ParamStore, Adam) = (theta.store.clone(), adam.clone());
    let mut report = PhaseReport {
        loss_rl: 0.0,
        loss_il: 0.0,
        initial_reward,
        final_reward: initial_reward,
        step_size: adam.lr,
        reverts: 0,
        nan_restores: 0,
        events: Vec::new(),
    };
    let mut emit = |report: &mut PhaseReport, e: PhaseEvent, theta: &PolicyParams, adam: &Adam| {
        observe(&e, theta, adam);
        report.events.push(e);
    };
    emit(
        &mut report,
        PhaseEvent::Snapshot {
            update: 0,
            reward: initial_reward,
        },
        theta,
        adam,
    );

    let cut = |current: f64, snap: f64| (current.min(snap) * cfg.lr_cut).max(cfg.lr_floor);
    let mut consecutive_nan = 0;
    let (mut sum_rl, mut sum_il, mut counted) = (0.0, 0.0, 0usize);
    for k in 1..=cfg.updates {
        let mut tape = Tape::new();
        let step = build_loss(&mut tape, theta, ctx, &nets, buffer, k).and_then(|(loss, p, parts)| {
            tape.check_finite()?;
            let g = tape.backward(loss)?;
            Ok((p.collect(&g, &theta.store), parts))
        });
        match step {
            Ok((grads, parts)) if grads.is_finite() => {
                adam.step(&mut theta.store, &grads);
                consecutive_nan = 0;
                sum_rl += parts.rl;
                sum_il += parts.il;
                counted += 1;
            }
            Ok(_) | Err(Error::NonFinite { .. }) => {
                consecutive_nan += 1;
                if consecutive_nan >= 2 {
                    return Err(Error::PhaseAbort {
                        phase: "policy",
                        iteration: ctx.iteration,
                        reason: format!("non-finite loss at update {k} after restoring the snapshot"),
                    });
                }
                let lr = cut(adam.lr, snapshot.1.lr);
                theta.store = snapshot.0.clone();
                *adam = snapshot.1.clone();
                adam.lr = lr;
                report.nan_restores += 1;
                emit(&mut report, PhaseEvent::NanRestore { update: k, step_size: lr }, theta, adam);
                continue;
            }
            Err(e) => return Err(e),
        }
        if let Some(f) = ctx.fault.filter(|f| f.at_update == k) {
            adam.lr = f.step_size;
        }
        if k % cfg.buffer_update_rate == 0 {
            refresh_buffer(theta, ctx, &nets, buffer, k)?;
            emit(&mut report, PhaseEvent::Refresh { update: k }, theta, adam);
        }
        if k % cfg.validation_every == 0 {
            let reward = match validation_reward(theta, ctx.phi, ctx.design, &val_states, cfg) {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            if reward < initial_reward {
                let lr = cut(adam.lr, snapshot.1.lr);
                theta.store = snapshot.0.clone();
                *adam = snapshot.1.clone();
                adam.lr = lr;
                report.reverts += 1;
                emit(
                    &mut report,
                    PhaseEvent::Revert {
                        update: k,
                        reward,
                        step_size: lr,
                    },
                    theta,
                    adam,
                );
            } else {
                snapshot = (theta.store.clone(), adam.clone());
                report.final_reward = reward;
                emit(&mut report, PhaseEvent::Snapshot { update: k, reward }, theta, adam);
            }
        }
    }
    if counted > 0 {
        report.loss_rl = sum_rl / counted as f64;
        report.loss_il = sum_il / counted as f64;
    }
    report.step_size = adam.lr;
    report.final_reward = validation_reward(theta, ctx.phi, ctx.design, &val_states, cfg)?;
    Ok(report)
}
