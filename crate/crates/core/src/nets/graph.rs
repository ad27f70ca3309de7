use super::{pname, Blocks, NetArch};
use crate::autodiff::{Axis, BoundParams, Tape, Tensor, Var};
use crate::design::{adjacency, Adjacency, DesignGraph, ModuleKind, PortSlot, EDGE_FEATURE_DIM};

/// Node grouping of a design used to lay out row blocks.
#[derive(Debug, Clone)]
pub struct GraphLayout {
    pub design: DesignGraph,
    pub adjacency: Adjacency,
    pub leg_slots: Vec<usize>,
    pub wheel_slots: Vec<usize>,
    /// Per node id: kind and position within that kind's block.
    node_block: Vec<(ModuleKind, usize)>,
}

impl GraphLayout {
    pub fn new(design: &DesignGraph) -> Self {
        let adjacency = adjacency(design);
        let mut leg_slots = Vec::new();
        let mut wheel_slots = Vec::new();
        let node_block = adjacency
            .nodes
            .iter()
            .map(|n| match (n.kind, n.slot) {
                (ModuleKind::Leg, Some(s)) => {
                    leg_slots.push(s);
                    (ModuleKind::Leg, leg_slots.len() - 1)
                }
                (ModuleKind::Wheel, Some(s)) => {
                    wheel_slots.push(s);
                    (ModuleKind::Wheel, wheel_slots.len() - 1)
                }
                (kind, _) => (kind, 0),
            })
            .collect();
        GraphLayout {
            design: design.clone(),
            adjacency,
            leg_slots,
            wheel_slots,
            node_block,
        }
    }

    pub fn slots(&self, kind: ModuleKind) -> &[usize] {
        match kind {
            ModuleKind::Leg => &self.leg_slots,
            ModuleKind::Wheel => &self.wheel_slots,
            _ => &[],
        }
    }

    pub fn count(&self, kind: ModuleKind) -> usize {
        match kind {
            ModuleKind::Body => 1,
            k => self.slots(k).len(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nodes.len()
    }

    pub fn num_modules(&self) -> usize {
        self.num_nodes() - 1
    }

    /// Kind and block position of node `id`.
    pub fn node_block(&self, id: usize) -> (ModuleKind, usize) {
        self.node_block[id]
    }

    /// Node id of the `index`-th node of `kind`.
    pub fn node_id(&self, kind: ModuleKind, index: usize) -> usize {
        self.node_block
            .iter()
            .position(|&(k, i)| k == kind && i == index)
            .expect("node exists")
    }

    /// `Some(f(kind))` for each module kind present.
    pub fn blocks<T>(&self, body: T, mut f: impl FnMut(ModuleKind) -> T) -> Blocks<T> {
        Blocks {
            body,
            leg: (!self.leg_slots.is_empty()).then(|| f(ModuleKind::Leg)),
            wheel: (!self.wheel_slots.is_empty()).then(|| f(ModuleKind::Wheel)),
        }
    }
}

/// Edge features of `slots`, each repeated `batch` times (node-major).
pub fn edge_feature_block(slots: &[usize], batch: usize) -> Tensor {
    let mut d = Vec::with_capacity(slots.len() * batch * EDGE_FEATURE_DIM);
    for &s in slots {
        let f = PortSlot::new(s).edge_feature();
        for _ in 0..batch {
            d.extend_from_slice(&f);
        }
    }
    Tensor::matrix(slots.len() * batch, EDGE_FEATURE_DIM, d)
}

pub(crate) fn concat_rows(tape: &mut Tape, parts: &[Var]) -> Var {
    if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(parts, Axis::Rows)
    }
}

pub(crate) fn dense(tape: &mut Tape, p: &BoundParams, prefix: &str, kind: ModuleKind, part: &str, x: Var) -> Var {
    let w = p.var(&pname(prefix, kind, &format!("{part}.w")));
    let b = p.var(&pname(prefix, kind, &format!("{part}.b")));
    tape.affine(x, w, b)
}

pub(crate) fn dense_tanh(tape: &mut Tape, p: &BoundParams, prefix: &str, kind: ModuleKind, part: &str, x: Var) -> Var {
    let h = dense(tape, p, prefix, kind, part, x);
    tape.tanh(h)
}

/// Encoder followed by `arch.rounds` rounds of message passing. Messages are
/// computed per sender kind, routed edge by edge in `edge_order` (default:
/// adjacency order) and summed per receiver in ascending sender id, so the
/// result does not depend on the routing order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn trunk(
    tape: &mut Tape,
    p: &BoundParams,
    prefix: &str,
    layout: &GraphLayout,
    inputs: &Blocks<Var>,
    batch: usize,
    arch: &NetArch,
    edge_order: Option<&[usize]>,
) -> Blocks<Var> {
    let mut feat = inputs.map(|kind, x| dense_tanh(tape, p, prefix, kind, "enc", *x));

    let module_slots: Vec<usize> = layout.adjacency.nodes[1..].iter().map(|n| n.slot.unwrap()).collect();
    let edge_consts = layout.blocks(tape.constant(edge_feature_block(&module_slots, batch)), |k| {
        tape.constant(edge_feature_block(layout.slots(k), batch))
    });
    let default_order: Vec<usize> = (0..layout.adjacency.edges.len()).collect();
    let order = edge_order.unwrap_or(&default_order);
    let n = layout.num_nodes();

    for _ in 0..arch.rounds {
        // Module → body messages, one batch per sender kind.
        let from_modules = feat.map(|kind, f| {
            if kind == ModuleKind::Body {
                return None;
            }
            let e = *edge_consts.get(kind).unwrap();
            let x = tape.concat(&[*f, e], Axis::Cols);
            Some(dense_tanh(tape, p, prefix, kind, "msg", x))
        });
        // Body → module messages; the body's feature is paired with each
        // receiving module's port feature.
        let reps = vec![feat.body; layout.num_modules()];
        let rep = concat_rows(tape, &reps);
        let x = tape.concat(&[rep, edge_consts.body], Axis::Cols);
        let from_body = dense_tanh(tape, p, prefix, ModuleKind::Body, "msg", x);

        let mut incoming: Vec<Vec<Option<Var>>> = vec![vec![None; n]; n];
        for &ei in order {
            let e = layout.adjacency.edges[ei];
            let msg = if e.from == 0 {
                tape.slice(from_body, Axis::Rows, (e.to - 1) * batch, batch)
            } else {
                let (kind, idx) = layout.node_block(e.from);
                let block = from_modules.get(kind).unwrap().unwrap();
                tape.slice(block, Axis::Rows, idx * batch, batch)
            };
            incoming[e.to][e.from] = Some(msg);
        }
        let agg: Vec<Var> = incoming
            .iter()
            .map(|msgs| {
                let mut it = msgs.iter().flatten();
                let first = *it.next().expect("every node has a neighbour");
                it.fold(first, |acc, m| tape.add(acc, *m))
            })
            .collect();

        let agg_blocks = layout.blocks(agg[0], |kind| {
            let parts: Vec<Var> = (0..layout.count(kind)).map(|i| agg[layout.node_id(kind, i)]).collect();
            concat_rows(tape, &parts)
        });
        feat = feat.map(|kind, f| {
            let a = *agg_blocks.get(kind).unwrap();
            let x = tape.concat(&[*f, a], Axis::Cols);
            dense_tanh(tape, p, prefix, kind, "upd", x)
        });
    }
    feat
}

/// Columns of `x` given as `(start, len)` runs, concatenated in order.
pub(crate) fn pick_cols(tape: &mut Tape, x: Var, runs: &[(usize, usize)]) -> Var {
    let parts: Vec<Var> = runs.iter().map(|&(s, n)| tape.slice(x, Axis::Cols, s, n)).collect();
    if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(&parts, Axis::Cols)
    }
}
