//! Recurrent modular policy: message passing, then a GRU cell per node, then
//! a per-kind Gaussian action head reading the node's new hidden vector.

use std::sync::Arc;

use super::graph::{concat_rows, dense, trunk, GraphLayout};
use super::{init_store, pname, trunk_shapes, Blocks, NetArch};
use crate::autodiff::{Axis, BoundParams, ParamStore, Tape, Tensor, Var, LOG_STD_MAX, LOG_STD_MIN};
use crate::design::{DesignGraph, ModuleKind};
use crate::error::{Error, Result};
use crate::sim::{initial_state, observe, step, Controller, DistanceStats, NoiseModel, SimConfig, WorldState};

pub const PREFIX: &str = "policy";

/// Initial bias of the log-std half of every action head.
pub const INIT_LOG_STD: f64 = -1.0;

/// Policy parameters θ; independent of any particular design.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: NetArch,
    pub store: ParamStore,
}

impl PolicyParams {
    pub fn init(arch: NetArch, seed: u64) -> Self {
        let mut shapes = Vec::new();
        let h = arch.recurrent;
        for kind in ModuleKind::NETWORKED {
            shapes.extend(trunk_shapes(PREFIX, kind, kind.obs_dim(), &arch));
            for gate in ["gru_z", "gru_r", "gru_n"] {
                shapes.push((pname(PREFIX, kind, &format!("{gate}.w")), h + arch.hidden, h, true));
                shapes.push((pname(PREFIX, kind, &format!("{gate}.b")), 1, h, false));
            }
            if kind.action_dim() > 0 {
                shapes.push((pname(PREFIX, kind, "head.w"), h, 2 * kind.action_dim(), true));
                shapes.push((pname(PREFIX, kind, "head.b"), 1, 2 * kind.action_dim(), false));
            }
        }
        let mut store = init_store(&shapes, seed);
        for kind in [ModuleKind::Leg, ModuleKind::Wheel] {
            let a = kind.action_dim();
            let b = store.get_mut(&pname(PREFIX, kind, "head.b")).unwrap();
            b.data_mut()[a..].iter_mut().for_each(|v| *v = INIT_LOG_STD);
        }
        PolicyParams { arch, store }
    }

    pub fn count(&self) -> usize {
        self.store.count()
    }
}

/// One recurrent vector per node, in adjacency order.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub nodes: Vec<Vec<f64>>,
}

impl HiddenState {
    pub fn zeros(design: &DesignGraph, arch: &NetArch) -> Self {
        let n = 1 + design.modules().count();
        HiddenState {
            nodes: vec![vec![0.0; arch.recurrent]; n],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.nodes.iter().flatten().all(|v| *v == 0.0)
    }

    /// Stacks samples into row blocks.
    pub fn to_blocks(states: &[&HiddenState], layout: &GraphLayout) -> Blocks<Tensor> {
        let width = states[0].nodes[0].len();
        let gather = |ids: Vec<usize>| {
            let mut d = Vec::with_capacity(ids.len() * states.len() * width);
            for id in &ids {
                for s in states {
                    d.extend_from_slice(&s.nodes[*id]);
                }
            }
            Tensor::matrix(ids.len() * states.len(), width, d)
        };
        layout.blocks(gather(vec![0]), |k| {
            gather((0..layout.count(k)).map(|i| layout.node_id(k, i)).collect())
        })
    }

    /// Inverse of [`HiddenState::to_blocks`].
    pub fn from_blocks(blocks: &Blocks<&Tensor>, layout: &GraphLayout, batch: usize) -> Vec<HiddenState> {
        let width = blocks.body.cols();
        let mut out = vec![
            HiddenState {
                nodes: vec![Vec::new(); layout.num_nodes()]
            };
            batch
        ];
        for id in 0..layout.num_nodes() {
            let (kind, idx) = layout.node_block(id);
            let t = blocks.get(kind).unwrap();
            for (b, h) in out.iter_mut().enumerate() {
                let r = idx * batch + b;
                h.nodes[id] = t.data()[r * width..(r + 1) * width].to_vec();
            }
        }
        out
    }
}

/// Diagonal Gaussian over the flat action vector (slot order, then joint).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Tape outputs of one policy step. Action blocks exist for leg and wheel.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOut {
    pub mean: ActBlocks,
    pub log_std: ActBlocks,
    pub hidden: HiddenBlocks,
}

/// Per-kind action-shaped blocks (leg and wheel only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActBlocks<T = Var> {
    pub leg: Option<T>,
    pub wheel: Option<T>,
}

impl<T> ActBlocks<T> {
    pub fn get_ref(&self, kind: ModuleKind) -> Option<&T> {
        match kind {
            ModuleKind::Leg => self.leg.as_ref(),
            ModuleKind::Wheel => self.wheel.as_ref(),
            _ => None,
        }
    }

    pub fn set(&mut self, kind: ModuleKind, v: T) {
        match kind {
            ModuleKind::Leg => self.leg = Some(v),
            ModuleKind::Wheel => self.wheel = Some(v),
            _ => {}
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ActBlocks<U> {
        ActBlocks {
            leg: self.leg.as_ref().map(&mut f),
            wheel: self.wheel.as_ref().map(&mut f),
        }
    }
}

impl ActBlocks<Var> {
    pub fn get(&self, kind: ModuleKind) -> Option<Var> {
        match kind {
            ModuleKind::Leg => self.leg,
            ModuleKind::Wheel => self.wheel,
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModuleKind, Var)> {
        [(ModuleKind::Leg, self.leg), (ModuleKind::Wheel, self.wheel)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
    }

    pub fn zip_map(&self, other: &ActBlocks, mut f: impl FnMut(ModuleKind, Var, Var) -> Var) -> ActBlocks {
        ActBlocks {
            leg: self.leg.zip(other.leg).map(|(a, b)| f(ModuleKind::Leg, a, b)),
            wheel: self.wheel.zip(other.wheel).map(|(a, b)| f(ModuleKind::Wheel, a, b)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenBlocks {
    pub body: Var,
    pub leg: Option<Var>,
    pub wheel: Option<Var>,
}

impl HiddenBlocks {
    pub fn from_blocks(b: &Blocks<Var>) -> Self {
        HiddenBlocks {
            body: b.body,
            leg: b.leg,
            wheel: b.wheel,
        }
    }

    pub fn to_blocks(self) -> Blocks<Var> {
        Blocks {
            body: self.body,
            leg: self.leg,
            wheel: self.wheel,
        }
    }
}

/// The policy graph for one design.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub arch: NetArch,
    pub layout: GraphLayout,
    edge_order: Option<Vec<usize>>,
}

impl PolicyNet {
    pub fn new(arch: NetArch, design: &DesignGraph) -> Self {
        PolicyNet {
            arch,
            layout: GraphLayout::new(design),
            edge_order: None,
        }
    }

    /// Route messages in a custom edge order (a permutation of edge ids).
    pub fn with_edge_order(mut self, order: Vec<usize>) -> Self {
        self.edge_order = Some(order);
        self
    }

    pub fn design(&self) -> &DesignGraph {
        &self.layout.design
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, obs: &Blocks<Var>, hidden: &Blocks<Var>, batch: usize) -> PolicyOut {
        let feat = trunk(tape, p, PREFIX, &self.layout, obs, batch, &self.arch, self.edge_order.as_deref());
        let new_hidden = feat.map(|kind, x| {
            let h = *hidden.get(kind).unwrap();
            gru(tape, p, kind, h, *x)
        });
        let mut mean = ActBlocks { leg: None, wheel: None };
        let mut log_std = ActBlocks { leg: None, wheel: None };
        for (kind, h) in new_hidden.modules() {
            let a = kind.action_dim();
            let out = dense(tape, p, PREFIX, kind, "head", *h);
            let m = tape.slice(out, Axis::Cols, 0, a);
            let s = tape.slice(out, Axis::Cols, a, a);
            let s = tape.clamp(s, LOG_STD_MIN, LOG_STD_MAX);
            match kind {
                ModuleKind::Leg => {
                    mean.leg = Some(m);
                    log_std.leg = Some(s);
                }
                _ => {
                    mean.wheel = Some(m);
                    log_std.wheel = Some(s);
                }
            }
        }
        PolicyOut {
            mean,
            log_std,
            hidden: HiddenBlocks::from_blocks(&new_hidden),
        }
    }

    /// Splits a `[batch, obs_dim]` observation into row blocks on the tape.
    pub fn obs_blocks(&self, tape: &mut Tape, obs: Var, batch: usize) -> Blocks<Var> {
        let design = &self.layout.design;
        let off = design.obs_offsets();
        let _ = batch;
        let body = tape.slice(obs, Axis::Cols, 0, ModuleKind::Body.obs_dim());
        self.layout.blocks(body, |kind| {
            let parts: Vec<Var> = self
                .layout
                .slots(kind)
                .iter()
                .map(|&s| tape.slice(obs, Axis::Cols, off[s], kind.obs_dim()))
                .collect();
            concat_rows(tape, &parts)
        })
    }

    /// Reassembles action blocks into `[batch, action_dim]` in slot order.
    pub fn flat_actions(&self, tape: &mut Tape, blocks: &ActBlocks, batch: usize) -> Var {
        let parts: Vec<Var> = self
            .layout
            .design
            .modules()
            .map(|(slot, kind)| {
                let idx = self.layout.slots(kind).iter().position(|s| *s == slot).unwrap();
                tape.slice(blocks.get(kind).unwrap(), Axis::Rows, idx * batch, batch)
            })
            .collect();
        tape.concat(&parts, Axis::Cols)
    }

    /// Observation row blocks from flat observation vectors.
    pub fn obs_tensors(&self, obs: &[&[f64]]) -> Blocks<Tensor> {
        let d = &self.layout.design;
        gather_blocks(
            obs,
            &self.layout,
            0..ModuleKind::Body.obs_dim(),
            d.obs_offsets(),
            ModuleKind::obs_dim,
        )
    }

    /// Action row blocks from flat action vectors.
    pub fn action_tensors(&self, actions: &[&[f64]]) -> ActBlocks<Tensor> {
        let d = &self.layout.design;
        let b = gather_blocks(actions, &self.layout, 0..0, d.action_offsets(), ModuleKind::action_dim);
        ActBlocks {
            leg: b.leg,
            wheel: b.wheel,
        }
    }

    pub fn hidden_constants(&self, tape: &mut Tape, states: &[&HiddenState]) -> Blocks<Var> {
        HiddenState::to_blocks(states, &self.layout).map(|_, t| tape.constant(t.clone()))
    }
}

/// `h' = n + z * (h - n)` with update gate `z`, reset gate `r` and candidate
/// `n = tanh([r * h, x] W_n + b_n)`.
fn gru(tape: &mut Tape, p: &BoundParams, kind: ModuleKind, h: Var, x: Var) -> Var {
    let hx = tape.concat(&[h, x], Axis::Cols);
    let z = dense(tape, p, PREFIX, kind, "gru_z", hx);
    let z = tape.sigmoid(z);
    let r = dense(tape, p, PREFIX, kind, "gru_r", hx);
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h);
    let rhx = tape.concat(&[rh, x], Axis::Cols);
    let n = dense(tape, p, PREFIX, kind, "gru_n", rhx);
    let n = tape.tanh(n);
    let diff = tape.sub(h, n);
    let zd = tape.mul(z, diff);
    tape.add(n, zd)
}

/// Gathers per-sample flat vectors into kind blocks. `offsets` gives each
/// slot's start, `width` each kind's block width; the body block takes
/// columns `body_cols`.
pub(crate) fn gather_blocks(
    samples: &[&[f64]],
    layout: &GraphLayout,
    body_cols: std::ops::Range<usize>,
    offsets: [usize; 6],
    width: fn(ModuleKind) -> usize,
) -> Blocks<Tensor> {
    let b = samples.len();
    let mut body = Vec::with_capacity(b * body_cols.len());
    for s in samples {
        body.extend_from_slice(&s[body_cols.clone()]);
    }
    let body = Tensor::matrix(b, body_cols.len(), body);
    layout.blocks(body, |kind| {
        let w = width(kind);
        let slots = layout.slots(kind);
        let mut d = Vec::with_capacity(slots.len() * b * w);
        for &slot in slots {
            for s in samples {
                d.extend_from_slice(&s[offsets[slot]..offsets[slot] + w]);
            }
        }
        Tensor::matrix(slots.len() * b, w, d)
    })
}

/// Single-sample policy evaluation.
pub fn policy_forward(
    params: &PolicyParams,
    design: &DesignGraph,
    obs: &[f64],
    hidden: &HiddenState,
) -> Result<(ActionDistribution, HiddenState)> {
    let net = PolicyNet::new(params.arch, design);
    let mut out = policy_forward_batch(&net, params, &[obs], &[hidden])?;
    Ok(out.pop().unwrap())
}

/// Batched evaluation without gradients, one result per sample.
pub fn policy_forward_batch(
    net: &PolicyNet,
    params: &PolicyParams,
    obs: &[&[f64]],
    hidden: &[&HiddenState],
) -> Result<Vec<(ActionDistribution, HiddenState)>> {
    let design = net.design();
    let dims = design.dims();
    for o in obs {
        if o.len() != dims.obs {
            return Err(Error::DimMismatch {
                context: "policy observation",
                expected: dims.obs,
                got: o.len(),
            });
        }
    }
    let nodes = net.layout.num_nodes();
    for h in hidden {
        if h.nodes.len() != nodes || h.nodes.iter().any(|v| v.len() != params.arch.recurrent) {
            return Err(Error::DimMismatch {
                context: "policy hidden state",
                expected: nodes * params.arch.recurrent,
                got: h.nodes.iter().map(Vec::len).sum(),
            });
        }
    }
    let batch = obs.len();
    let mut tape = Tape::new();
    let p = params.store.bind_frozen(&mut tape);
    let ob = gather_blocks(
        obs,
        &net.layout,
        0..ModuleKind::Body.obs_dim(),
        design.obs_offsets(),
        ModuleKind::obs_dim,
    )
    .map(|_, t| tape.constant(t.clone()));
    let hb = net.hidden_constants(&mut tape, hidden);
    let out = net.forward(&mut tape, &p, &ob, &hb, batch);
    let mean = net.flat_actions(&mut tape, &out.mean, batch);
    let log_std = net.flat_actions(&mut tape, &out.log_std, batch);
    tape.check_finite()?;
    let hidden_t = out.hidden.to_blocks().map(|_, v| tape.value(*v).clone());
    let refs = hidden_t.as_ref();
    let new_hidden = HiddenState::from_blocks(&refs, &net.layout, batch);
    let (mv, sv) = (tape.value(mean), tape.value(log_std));
    Ok(new_hidden
        .into_iter()
        .enumerate()
        .map(|(b, h)| {
            (
                ActionDistribution {
                    mean: mv.row_slice(b).to_vec(),
                    log_std: sv.row_slice(b).to_vec(),
                },
                h,
            )
        })
        .collect())
}

/// Runs the distribution mean of a policy as a closed-loop controller.
#[derive(Debug, Clone)]
pub struct NeuralController {
    params: Arc<PolicyParams>,
    net: PolicyNet,
    hidden: HiddenState,
}

impl NeuralController {
    pub fn new(params: Arc<PolicyParams>, design: &DesignGraph) -> Self {
        NeuralController {
            net: PolicyNet::new(params.arch, design),
            hidden: HiddenState::zeros(design, &params.arch),
            params,
        }
    }

    pub fn hidden(&self) -> &HiddenState {
        &self.hidden
    }
}

impl Controller for NeuralController {
    fn reset(&mut self) {
        self.hidden = HiddenState::zeros(self.net.design(), &self.params.arch);
    }

    fn act(&mut self, _state: &WorldState, obs: &[f64]) -> Result<Vec<f64>> {
        let (dist, h) = policy_forward_batch(&self.net, &self.params, &[obs], &[&self.hidden])?
            .pop()
            .unwrap();
        self.hidden = h;
        Ok(dist.mean)
    }
}

/// Mean-action evaluation over `n_starts` starts run in lockstep as one
/// batch. Start `i` uses the same random stream as [`crate::sim::eval_distance`].
pub fn eval_policy_distance(
    params: &PolicyParams,
    design: &DesignGraph,
    n_starts: usize,
    steps: usize,
    noise: &NoiseModel,
    cfg: &SimConfig,
    seed: u64,
) -> Result<DistanceStats> {
    let net = PolicyNet::new(params.arch, design);
    let mut rngs: Vec<_> = (0..n_starts).map(|i| crate::rng::stream(seed, i as u64)).collect();
    let mut states: Vec<WorldState> = rngs.iter_mut().map(|r| initial_state(design, noise, r)).collect();
    let x0: Vec<f64> = states.iter().map(WorldState::x).collect();
    let mut hidden = vec![HiddenState::zeros(design, &params.arch); n_starts];
    for _ in 0..steps {
        let obs: Vec<Vec<f64>> = states.iter().zip(&mut rngs).map(|(s, r)| observe(s, design, noise, r)).collect();
        let obs_refs: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
        let h_refs: Vec<&HiddenState> = hidden.iter().collect();
        let out = policy_forward_batch(&net, params, &obs_refs, &h_refs)?;
        hidden = Vec::with_capacity(n_starts);
        for (s, (dist, h)) in states.iter_mut().zip(out) {
            *s = step(s, design, &dist.mean, cfg)?;
            hidden.push(h);
        }
    }
    let finals: Vec<f64> = states.iter().zip(&x0).map(|(s, x)| s.x() - x).collect();
    Ok(DistanceStats::from_samples(&finals))
}
