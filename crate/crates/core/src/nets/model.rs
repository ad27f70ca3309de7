//! One-step modular dynamics model. Same trunk as the policy, no recurrence;
//! each node predicts the change of its own state slice.
//!
//! Inputs leave out channels the dynamics cannot depend on: world position
//! for the body and the unbounded drive angle for wheels.

use serde::{Deserialize, Serialize};

use super::graph::{dense, pick_cols, trunk, GraphLayout};
use super::policy::{gather_blocks, ActBlocks};
use super::{init_store, pname, trunk_shapes, Blocks, NetArch};
use crate::autodiff::{Axis, BoundParams, ParamStore, Tape, Tensor, Var};
use crate::design::{DesignGraph, ModuleKind};
use crate::error::{Error, Result};

pub const PREFIX: &str = "model";

const STD_FLOOR: f64 = 1e-6;

/// State columns fed to the model, as `(start, len)` runs of a node's state.
fn state_runs(kind: ModuleKind) -> &'static [(usize, usize)] {
    match kind {
        ModuleKind::Body => &[(2, 8)],
        ModuleKind::Leg => &[(0, 6)],
        ModuleKind::Wheel => &[(0, 2), (3, 1)],
        ModuleKind::None => &[],
    }
}

pub fn input_dim(kind: ModuleKind) -> usize {
    state_runs(kind).iter().map(|r| r.1).sum::<usize>() + kind.action_dim()
}

/// Model input of one node from its state and action slices.
pub fn node_input(kind: ModuleKind, state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = state_runs(kind)
        .iter()
        .flat_map(|&(s, n)| state[s..s + n].iter().copied())
        .collect();
    v.extend_from_slice(action);
    v
}

/// Per-channel affine statistics for one module kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl KindStats {
    pub fn identity(kind: ModuleKind) -> Self {
        let (i, o) = (input_dim(kind), kind.state_dim());
        KindStats {
            in_mean: vec![0.0; i],
            in_std: vec![1.0; i],
            out_mean: vec![0.0; o],
            out_std: vec![1.0; o],
        }
    }

    fn from_samples(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Self {
        let (in_mean, in_std) = moments(inputs);
        let (out_mean, out_std) = moments(outputs);
        KindStats {
            in_mean,
            in_std,
            out_mean,
            out_std,
        }
    }

    pub fn normalize_out(&self, delta: &[f64]) -> Vec<f64> {
        delta
            .iter()
            .zip(&self.out_mean)
            .zip(&self.out_std)
            .map(|((d, m), s)| (d - m) / s)
            .collect()
    }

    pub fn denormalize_out(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.out_mean)
            .zip(&self.out_std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }
}

fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect())
}

/// Dataset statistics, pooled over every instance of a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub body: KindStats,
    pub leg: KindStats,
    pub wheel: KindStats,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            body: KindStats::identity(ModuleKind::Body),
            leg: KindStats::identity(ModuleKind::Leg),
            wheel: KindStats::identity(ModuleKind::Wheel),
        }
    }
}

impl Normalizer {
    pub fn get(&self, kind: ModuleKind) -> &KindStats {
        match kind {
            ModuleKind::Leg => &self.leg,
            ModuleKind::Wheel => &self.wheel,
            _ => &self.body,
        }
    }

    /// Fits statistics to `(state, action, next_state)` transitions. Kinds
    /// absent from `design` keep identity statistics.
    pub fn fit<'a>(design: &DesignGraph, transitions: impl IntoIterator<Item = (&'a [f64], &'a [f64], &'a [f64])>) -> Result<Self> {
        let so = design.state_offsets();
        let ao = design.action_offsets();
        let mut inputs: [Vec<Vec<f64>>; 3] = Default::default();
        let mut outputs: [Vec<Vec<f64>>; 3] = Default::default();
        let mut push = |k: usize, kind: ModuleKind, s: &[f64], a: &[f64], n: &[f64]| {
            inputs[k].push(node_input(kind, s, a));
            outputs[k].push(n.iter().zip(s).map(|(n, s)| n - s).collect());
        };
        for (s, a, n) in transitions {
            let bd = ModuleKind::Body.state_dim();
            push(0, ModuleKind::Body, &s[..bd], &[], &n[..bd]);
            for (slot, kind) in design.modules() {
                let (o, d) = (so[slot], kind.state_dim());
                let act = &a[ao[slot]..ao[slot] + kind.action_dim()];
                let k = if kind == ModuleKind::Leg { 1 } else { 2 };
                push(k, kind, &s[o..o + d], act, &n[o..o + d]);
            }
        }
        if inputs[0].is_empty() {
            return Err(Error::EmptyDataset("no transitions to fit normalization"));
        }
        let mut norm = Normalizer::default();
        for (k, slot) in [&mut norm.body, &mut norm.leg, &mut norm.wheel].into_iter().enumerate() {
            if !inputs[k].is_empty() {
                *slot = KindStats::from_samples(&inputs[k], &outputs[k]);
            }
        }
        Ok(norm)
    }
}

/// Model parameters φ together with the normalization they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: NetArch,
    pub store: ParamStore,
    pub norm: Normalizer,
}

impl ModelParams {
    pub fn init(arch: NetArch, seed: u64) -> Self {
        let mut shapes = Vec::new();
        for kind in ModuleKind::NETWORKED {
            shapes.extend(trunk_shapes(PREFIX, kind, input_dim(kind), &arch));
            shapes.push((pname(PREFIX, kind, "head.w"), arch.hidden, kind.state_dim(), true));
            shapes.push((pname(PREFIX, kind, "head.b"), 1, kind.state_dim(), false));
        }
        ModelParams {
            arch,
            store: init_store(&shapes, seed),
            norm: Normalizer::default(),
        }
    }

    pub fn count(&self) -> usize {
        self.store.count()
    }
}

/// The model graph for one design.
#[derive(Debug, Clone)]
pub struct ModelNet {
    pub arch: NetArch,
    pub layout: GraphLayout,
}

impl ModelNet {
    pub fn new(arch: NetArch, design: &DesignGraph) -> Self {
        ModelNet {
            arch,
            layout: GraphLayout::new(design),
        }
    }

    /// Normalized Δstate per block, from raw state and action blocks.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        norm: &Normalizer,
        state: &Blocks<Var>,
        action: &ActBlocks,
        batch: usize,
    ) -> Blocks<Var> {
        let inputs = state.map(|kind, s| {
            let x = pick_cols(tape, *s, state_runs(kind));
            let x = match action.get(kind) {
                Some(a) => tape.concat(&[x, a], Axis::Cols),
                None => x,
            };
            let st = norm.get(kind);
            let shift = tape.constant(Tensor::row(st.in_mean.iter().map(|m| -m).collect()));
            let scale = tape.constant(Tensor::row(st.in_std.iter().map(|s| 1.0 / s).collect()));
            let x = tape.add(x, shift);
            tape.mul(x, scale)
        });
        let feat = trunk(tape, p, PREFIX, &self.layout, &inputs, batch, &self.arch, None);
        feat.map(|kind, f| dense(tape, p, PREFIX, kind, "head", *f))
    }

    /// Raw Δstate from a normalized prediction.
    pub fn denormalize(&self, tape: &mut Tape, norm: &Normalizer, delta: &Blocks<Var>) -> Blocks<Var> {
        delta.map(|kind, z| {
            let st = norm.get(kind);
            let scale = tape.constant(Tensor::row(st.out_std.clone()));
            let shift = tape.constant(Tensor::row(st.out_mean.clone()));
            let d = tape.mul(*z, scale);
            tape.add(d, shift)
        })
    }

    /// `s + denormalize(f(s, a))`.
    pub fn predict_next(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        norm: &Normalizer,
        state: &Blocks<Var>,
        action: &ActBlocks,
        batch: usize,
    ) -> Blocks<Var> {
        let z = self.forward(tape, p, norm, state, action, batch);
        let d = self.denormalize(tape, norm, &z);
        state.map(|kind, s| tape.add(*s, *d.get(kind).unwrap()))
    }

    /// Raw state blocks from flat state vectors.
    pub fn state_blocks(&self, states: &[&[f64]]) -> Blocks<Tensor> {
        let d = &self.layout.design;
        gather_blocks(
            states,
            &self.layout,
            0..ModuleKind::Body.state_dim(),
            d.state_offsets(),
            ModuleKind::state_dim,
        )
    }

    /// Action blocks from flat action vectors.
    pub fn action_blocks(&self, actions: &[&[f64]]) -> ActBlocks<Tensor> {
        let d = &self.layout.design;
        let b = gather_blocks(actions, &self.layout, 0..0, d.action_offsets(), ModuleKind::action_dim);
        ActBlocks {
            leg: b.leg,
            wheel: b.wheel,
        }
    }

    /// Flat vectors (slot order) from per-kind row blocks.
    pub fn flatten_blocks(
        &self,
        blocks: &Blocks<&Tensor>,
        batch: usize,
        body_width: usize,
        width: fn(ModuleKind) -> usize,
    ) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = (0..batch)
            .map(|b| blocks.body.data()[b * body_width..(b + 1) * body_width].to_vec())
            .collect();
        for (slot, kind) in self.layout.design.modules() {
            let idx = self.layout.slots(kind).iter().position(|s| *s == slot).unwrap();
            let w = width(kind);
            let t = blocks.get(kind).unwrap();
            for (b, row) in out.iter_mut().enumerate() {
                let r = idx * batch + b;
                row.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        out
    }
}

/// Denormalized Δstate for one state-action pair, laid out like the state.
pub fn model_forward(phi: &ModelParams, design: &DesignGraph, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
    let dims = design.dims();
    if state.len() != dims.state {
        return Err(Error::DimMismatch {
            context: "model state",
            expected: dims.state,
            got: state.len(),
        });
    }
    if action.len() != dims.action {
        return Err(Error::DimMismatch {
            context: "model action",
            expected: dims.action,
            got: action.len(),
        });
    }
    let net = ModelNet::new(phi.arch, design);
    let mut tape = Tape::new();
    let p = phi.store.bind_frozen(&mut tape);
    let s = net.state_blocks(&[state]).map(|_, t| tape.constant(t.clone()));
    let a = net.action_blocks(&[action]).map(|t| tape.constant(t.clone()));
    let z = net.forward(&mut tape, &p, &phi.norm, &s, &a, 1);
    let d = net.denormalize(&mut tape, &phi.norm, &z);
    tape.check_finite()?;
    let vals = d.map(|_, v| tape.value(*v).clone());
    let refs = vals.as_ref();
    Ok(net
        .flatten_blocks(&refs, 1, ModuleKind::Body.state_dim(), ModuleKind::state_dim)
        .pop()
        .unwrap())
}
