//! Message-passing graph networks with one network set per module kind.
//!
//! A design's nodes are grouped by kind into row blocks: the body block has
//! `B` rows, the leg block `n_legs * B` rows (node-major, slots ascending),
//! likewise for wheels. Each kind's networks run once per block, so every
//! leg of every design shares the same tensors.

mod graph;
mod model;
mod policy;

pub use graph::{edge_feature_block, GraphLayout};
pub use model::{input_dim as model_input_dim, model_forward, node_input, KindStats, ModelNet, ModelParams, Normalizer};
pub use policy::{
    eval_policy_distance, policy_forward, policy_forward_batch, ActBlocks, ActionDistribution, HiddenBlocks, HiddenState, NeuralController,
    PolicyNet, PolicyOut, PolicyParams,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::design::ModuleKind;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetArch {
    pub hidden: usize,
    pub message: usize,
    pub rounds: usize,
    pub recurrent: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch {
            hidden: 64,
            message: 32,
            rounds: 2,
            recurrent: 32,
        }
    }
}

impl NetArch {
    pub fn validate(&self) -> crate::Result<()> {
        if self.hidden == 0 || self.message == 0 || self.rounds == 0 || self.recurrent == 0 {
            return Err(crate::Error::Config(format!("all architecture sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// One value per networked module kind; absent kinds are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks<T> {
    pub body: T,
    pub leg: Option<T>,
    pub wheel: Option<T>,
}

impl<T> Blocks<T> {
    pub fn get(&self, kind: ModuleKind) -> Option<&T> {
        match kind {
            ModuleKind::Body => Some(&self.body),
            ModuleKind::Leg => self.leg.as_ref(),
            ModuleKind::Wheel => self.wheel.as_ref(),
            ModuleKind::None => None,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(ModuleKind, &T) -> U) -> Blocks<U> {
        Blocks {
            body: f(ModuleKind::Body, &self.body),
            leg: self.leg.as_ref().map(|v| f(ModuleKind::Leg, v)),
            wheel: self.wheel.as_ref().map(|v| f(ModuleKind::Wheel, v)),
        }
    }

    /// Module kinds only (leg, wheel), skipping absent ones.
    pub fn modules(&self) -> impl Iterator<Item = (ModuleKind, &T)> {
        [(ModuleKind::Leg, self.leg.as_ref()), (ModuleKind::Wheel, self.wheel.as_ref())]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
    }
}

pub(crate) fn pname(prefix: &str, kind: ModuleKind, part: &str) -> String {
    format!("{prefix}.{}.{part}", kind.name())
}

/// Glorot-uniform weights, zero biases. Each tensor draws from its own
/// stream keyed by its position in sorted name order.
pub(crate) fn init_store(shapes: &[(String, usize, usize, bool)], seed: u64) -> ParamStore {
    let mut sorted: Vec<_> = shapes.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut store = ParamStore::new();
    for (i, (name, rows, cols, is_weight)) in sorted.into_iter().enumerate() {
        let t = if is_weight {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = stream(derive_seed(seed, 0x1417), i as u64);
            Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
        } else {
            Tensor::zeros(&[rows, cols])
        };
        store.insert(name, t);
    }
    store
}

/// Shapes of encoder, message and update layers for one kind.
pub(crate) fn trunk_shapes(prefix: &str, kind: ModuleKind, input: usize, arch: &NetArch) -> Vec<(String, usize, usize, bool)> {
    let w = arch.hidden;
    let m = arch.message;
    let e = crate::design::EDGE_FEATURE_DIM;
    let mut v = Vec::new();
    for (part, i, o) in [("enc", input, w), ("msg", w + e, m), ("upd", w + m, w)] {
        v.push((pname(prefix, kind, &format!("{part}.w")), i, o, true));
        v.push((pname(prefix, kind, &format!("{part}.b")), 1, o, false));
    }
    v
}

impl<T> Blocks<T> {
    pub fn as_ref(&self) -> Blocks<&T> {
        Blocks {
            body: &self.body,
            leg: self.leg.as_ref(),
            wheel: self.wheel.as_ref(),
        }
    }
}
