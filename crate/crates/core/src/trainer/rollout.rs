//! Differentiable closed-loop rollouts of the policy through the learned
//! model, with observation, joint limits and reward mirrored from the
//! simulator.

use crate::autodiff::{reparam_sample, Axis, BoundParams, Tape, Tensor, Var};
use crate::design::ModuleKind;
use crate::error::Result;
use crate::nets::{ActBlocks, Blocks, ModelNet, Normalizer, PolicyNet};
use crate::sim::{body, leg, wheel, RewardWeights, V_MAX};

/// Noise-free observation blocks from state blocks.
pub fn observe_blocks(tape: &mut Tape, state: &Blocks<Var>) -> Blocks<Var> {
    state.map(|kind, s| {
        let runs: &[(usize, usize)] = match kind {
            ModuleKind::Body => &[(body::ROLL, 2), (body::W_ROLL, 3)],
            ModuleKind::Wheel => &[(wheel::STEER, 2), (wheel::DRIVE_RATE, 1)],
            _ => &[(0, ModuleKind::Leg.state_dim())],
        };
        let parts: Vec<Var> = runs.iter().map(|&(st, n)| tape.slice(*s, Axis::Cols, st, n)).collect();
        if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts, Axis::Cols)
        }
    })
}

/// Clamps joint positions to their limits, as the simulator does.
pub fn clamp_joints(tape: &mut Tape, state: &Blocks<Var>) -> Blocks<Var> {
    state.map(|kind, s| match kind {
        ModuleKind::Leg => {
            let mut parts: Vec<Var> = leg::LIMITS
                .iter()
                .enumerate()
                .map(|(j, (lo, hi))| {
                    let q = tape.slice(*s, Axis::Cols, j, 1);
                    tape.clamp(q, *lo, *hi)
                })
                .collect();
            parts.push(tape.slice(*s, Axis::Cols, 3, 3));
            tape.concat(&parts, Axis::Cols)
        }
        ModuleKind::Wheel => {
            let q = tape.slice(*s, Axis::Cols, wheel::STEER, 1);
            let q = tape.clamp(q, -wheel::STEER_LIMIT, wheel::STEER_LIMIT);
            let rest = tape.slice(*s, Axis::Cols, 1, 3);
            tape.concat(&[q, rest], Axis::Cols)
        }
        _ => *s,
    })
}

fn sum_sq_cols(tape: &mut Tape, x: Var, start: usize, len: usize) -> Var {
    let s = tape.slice(x, Axis::Cols, start, len);
    let sq = tape.square(s);
    tape.sum(sq, None)
}

/// Reward summed over the batch, matching [`crate::sim::reward`] per sample.
pub fn reward_sum(tape: &mut Tape, state: &Blocks<Var>, action: &ActBlocks, next: &Blocks<Var>, w: &RewardWeights) -> Var {
    let x0 = tape.slice(state.body, Axis::Cols, body::X, 1);
    let x1 = tape.slice(next.body, Axis::Cols, body::X, 1);
    let dx = tape.sub(x1, x0);
    let progress = tape.sum(dx, None);
    let attitude = sum_sq_cols(tape, next.body, body::YAW, 3);
    let lateral = sum_sq_cols(tape, next.body, body::Y, 1);
    let mut terms = vec![(w.forward, progress), (-w.attitude, attitude), (-w.lateral, lateral)];
    for (_, a) in action.iter() {
        let cols = tape.shape(a).1;
        terms.push((-w.effort, sum_sq_cols(tape, a, 0, cols)));
    }
    for (kind, s) in next.modules() {
        let pose = match kind {
            ModuleKind::Leg => sum_sq_cols(tape, *s, leg::Q1, 3),
            _ => sum_sq_cols(tape, *s, wheel::STEER, 1),
        };
        terms.push((-w.pose, pose));
    }
    let mut total = None;
    for (c, v) in terms {
        let t = tape.scale(v, c);
        total = Some(match total {
            None => t,
            Some(acc) => tape.add(acc, t),
        });
    }
    total.unwrap()
}

/// Recorded results of one rollout.
pub struct RolloutOut {
    /// Reward summed over batch and time.
    pub reward: Var,
    /// States after each step.
    pub states: Vec<Blocks<Var>>,
    /// Hidden states after each step.
    pub hidden: Vec<Blocks<Var>>,
}

/// Policy-through-model rollout for one design.
pub struct ModelRollout<'a> {
    pub policy: &'a PolicyNet,
    pub model: &'a ModelNet,
    pub norm: &'a Normalizer,
    pub weights: RewardWeights,
}

impl ModelRollout<'_> {
    /// Runs `steps` steps. With `noise` (one action-shaped block set per
    /// step) actions are reparameterized samples, otherwise the mean.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        tape: &mut Tape,
        theta: &BoundParams,
        phi: &BoundParams,
        start: Blocks<Var>,
        hidden: Blocks<Var>,
        batch: usize,
        steps: usize,
        noise: Option<&[ActBlocks<Tensor>]>,
    ) -> Result<RolloutOut> {
        let mut s = start;
        let mut h = hidden;
        let mut out = RolloutOut {
            reward: tape.scalar(0.0),
            states: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
        };
        for t in 0..steps {
            let obs = observe_blocks(tape, &s);
            let pol = self.policy.forward(tape, theta, &obs, &h, batch);
            let action = match noise {
                Some(eps) => {
                    let mut a = ActBlocks { leg: None, wheel: None };
                    for (kind, m) in pol.mean.iter() {
                        let e = tape.constant(eps[t].get_ref(kind).expect("noise for every kind").clone());
                        let v = reparam_sample(tape, m, pol.log_std.get(kind).unwrap(), e)?;
                        a.set(kind, v);
                    }
                    a
                }
                None => pol.mean,
            };
            let applied = action.map(|a| tape.clamp(*a, -V_MAX, V_MAX));
            let next = self.model.predict_next(tape, phi, self.norm, &s, &applied, batch);
            let next = clamp_joints(tape, &next);
            let r = reward_sum(tape, &s, &action, &next, &self.weights);
            out.reward = tape.add(out.reward, r);
            h = pol.hidden.to_blocks();
            s = next;
            out.states.push(s.clone());
            out.hidden.push(h.clone());
        }
        Ok(out)
    }
}
