use rand::seq::index::sample;

use crate::design::DesignGraph;
use crate::error::{Error, Result};
use crate::nets::{HiddenState, NetArch, Normalizer};
use crate::rng::Rng;
use crate::sim::{initial_state, NoiseModel, V_MAX};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// The command as applied, i.e. clamped to the actuator range.
    pub action: Vec<f64>,
    pub next: Vec<f64>,
}

/// Simulator transitions of one design plus their normalization statistics.
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    design: DesignGraph,
    transitions: Vec<Transition>,
    norm: Normalizer,
}

impl TransitionDataset {
    pub fn new(design: &DesignGraph) -> Self {
        TransitionDataset {
            design: design.clone(),
            transitions: Vec::new(),
            norm: Normalizer::default(),
        }
    }

    pub fn design(&self) -> &DesignGraph {
        &self.design
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    /// Appends one trajectory (`states.len() == actions.len() + 1`) and
    /// refreshes the statistics.
    pub fn push_trajectory(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<()> {
        self.extend(states, actions)?;
        self.refresh()
    }

    /// Appends several trajectories, refreshing statistics once.
    pub fn push_trajectories<'a>(&mut self, trajs: impl IntoIterator<Item = (&'a [Vec<f64>], &'a [Vec<f64>])>) -> Result<()> {
        for (s, a) in trajs {
            self.extend(s, a)?;
        }
        self.refresh()
    }

    fn extend(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<()> {
        let dims = self.design.dims();
        if states.len() != actions.len() + 1 {
            return Err(Error::DimMismatch {
                context: "trajectory states",
                expected: actions.len() + 1,
                got: states.len(),
            });
        }
        for (w, a) in states.windows(2).zip(actions) {
            if w[0].len() != dims.state || a.len() != dims.action {
                return Err(Error::DimMismatch {
                    context: "transition",
                    expected: dims.state + dims.action,
                    got: w[0].len() + a.len(),
                });
            }
            self.transitions.push(Transition {
                state: w[0].clone(),
                action: a.iter().map(|v| v.clamp(-V_MAX, V_MAX)).collect(),
                next: w[1].clone(),
            });
        }
        Ok(())
    }

    fn refresh(&mut self) -> Result<()> {
        if self.transitions.is_empty() {
            return Ok(());
        }
        self.norm = Normalizer::fit(
            &self.design,
            self.transitions.iter().map(|t| (&t.state[..], &t.action[..], &t.next[..])),
        )?;
        Ok(())
    }

    /// True when every recorded state is identical.
    pub fn is_degenerate(&self) -> bool {
        let first = &self.transitions[0].state;
        self.transitions.iter().all(|t| &t.state == first && &t.next == first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Sim,
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub state: Vec<f64>,
    pub hidden: HiddenState,
    pub origin: Origin,
}

/// Start states for policy rollouts. The first half always holds simulator
/// initial states; the second half receives model-predicted states.
#[derive(Debug, Clone)]
pub struct StateBuffer {
    entries: Vec<BufferEntry>,
}

impl StateBuffer {
    pub fn new(design: &DesignGraph, arch: &NetArch, noise: &NoiseModel, size: usize, rng: &mut Rng) -> Self {
        let entries = (0..size)
            .map(|_| BufferEntry {
                state: initial_state(design, noise, rng).values,
                hidden: HiddenState::zeros(design, arch),
                origin: Origin::Sim,
            })
            .collect();
        StateBuffer { entries }
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.entries.iter().filter(|e| e.origin == origin).count()
    }

    /// `n` distinct entries: half from simulator origin and half from model
    /// origin when model states exist, otherwise all from simulator origin.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&BufferEntry> {
        let sim: Vec<&BufferEntry> = self.entries.iter().filter(|e| e.origin == Origin::Sim).collect();
        let model: Vec<&BufferEntry> = self.entries.iter().filter(|e| e.origin == Origin::Model).collect();
        let n_model = if model.is_empty() { 0 } else { (n / 2).min(model.len()) };
        let n_sim = (n - n_model).min(sim.len());
        let mut out: Vec<&BufferEntry> = sample(rng, sim.len(), n_sim).into_iter().map(|i| sim[i]).collect();
        out.extend(sample(rng, model.len(), n_model).into_iter().map(|i| model[i]));
        out
    }

    /// Rewrites the second half: `model_states` first, the remaining slots
    /// with fresh simulator initial states.
    pub fn refresh(
        &mut self,
        model_states: Vec<(Vec<f64>, HiddenState)>,
        design: &DesignGraph,
        arch: &NetArch,
        noise: &NoiseModel,
        rng: &mut Rng,
    ) {
        let half = self.entries.len() / 2;
        let slots = self.entries.len() - half;
        let mut fresh = model_states.into_iter().take(slots).map(|(state, hidden)| BufferEntry {
            state,
            hidden,
            origin: Origin::Model,
        });
        for e in &mut self.entries[half..] {
            *e = fresh.next().unwrap_or_else(|| BufferEntry {
                state: initial_state(design, noise, rng).values,
                hidden: HiddenState::zeros(design, arch),
                origin: Origin::Sim,
            });
        }
    }
}
