use rand::Rng as _;

use super::TrainConfig;
use crate::autodiff::{gaussian_entropy, gaussian_log_prob, Adam, BoundParams, Tape, Var};
use crate::design::DesignGraph;
use crate::error::{Error, Result};
use crate::nets::{Blocks, HiddenState, PolicyNet, PolicyParams};
use crate::rng::{derive_seed, stream, Rng};
use crate::sim::DemoDataset;

type ObsActions = (Vec<Vec<f64>>, Vec<Vec<f64>>);

struct DesignDemos {
    net: PolicyNet,
    /// Per trajectory: observations and actions.
    trajs: Vec<ObsActions>,
}

/// Demonstrations grouped by design, ready for replay.
pub struct DemoSet {
    groups: Vec<DesignDemos>,
}

/// One replay window: trajectory index and first step.
type Window = (usize, usize);

impl DemoSet {
    /// Designs without any non-empty trajectory are skipped.
    pub fn new(demos: &[DemoDataset], policy: &PolicyParams) -> Result<Self> {
        let mut groups: Vec<DesignDemos> = Vec::new();
        for d in demos {
            d.validate()?;
            let design = d.design_graph()?;
            let trajs: Vec<_> = d
                .trajectories
                .iter()
                .filter(|t| !t.is_empty())
                .map(|t| (t.obs.clone(), t.act.clone()))
                .collect();
            if trajs.is_empty() {
                continue;
            }
            match groups.iter_mut().find(|g| g.net.design() == &design) {
                Some(g) => g.trajs.extend(trajs),
                None => groups.push(DesignDemos {
                    net: PolicyNet::new(policy.arch, &design),
                    trajs,
                }),
            }
        }
        Ok(DemoSet { groups })
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn designs(&self) -> Vec<&DesignGraph> {
        self.groups.iter().map(|g| g.net.design()).collect()
    }

    pub fn num_steps(&self) -> usize {
        self.groups.iter().flat_map(|g| &g.trajs).map(|t| t.1.len()).sum()
    }
}

fn window_len(g: &DesignDemos, horizon: usize) -> usize {
    g.trajs.iter().map(|t| t.1.len()).min().unwrap().min(horizon)
}

fn sample_windows(g: &DesignDemos, len: usize, n: usize, rng: &mut Rng) -> Vec<Window> {
    (0..n)
        .map(|_| {
            let ti = rng.random_range(0..g.trajs.len());
            let start = rng.random_range(0..=g.trajs[ti].1.len() - len);
            (ti, start)
        })
        .collect()
}

fn all_windows(g: &DesignDemos, len: usize) -> Vec<Window> {
    g.trajs
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.1.len() / len).map(move |k| (ti, k * len)))
        .collect()
}

/// Summed per-design terms of one imitation mini-batch.
pub struct IlTerms {
    /// Mean negative log-likelihood per demo step, summed over designs.
    pub nll: Var,
    /// Mean policy entropy per demo step, summed over designs.
    pub entropy: Var,
    /// Mean squared action error (per action channel), for reporting only.
    pub mse: f64,
}

/// Replays `windows` with hidden state reset at each window start.
fn replay(tape: &mut Tape, p: &BoundParams, g: &DesignDemos, windows: &[Window], len: usize) -> Result<(Var, Var, f64)> {
    let net = &g.net;
    let design = net.design();
    let b = windows.len();
    let zeros = HiddenState::zeros(design, &net.arch);
    let mut h: Blocks<Var> = net.hidden_constants(tape, &vec![&zeros; b]);
    let (mut logp, mut ent) = (Vec::new(), Vec::new());
    let (mut se, mut count) = (0.0, 0usize);
    for t in 0..len {
        let obs: Vec<&[f64]> = windows.iter().map(|&(ti, s)| &g.trajs[ti].0[s + t][..]).collect();
        let act: Vec<&[f64]> = windows.iter().map(|&(ti, s)| &g.trajs[ti].1[s + t][..]).collect();
        let ob = net.obs_tensors(&obs).map(|_, x| tape.constant(x.clone()));
        let ab = net.action_tensors(&act);
        let out = net.forward(tape, p, &ob, &h, b);
        for (kind, m) in out.mean.iter() {
            let target = ab.get_ref(kind).unwrap();
            let ls = out.log_std.get(kind).unwrap();
            let y = tape.constant(target.clone());
            let lp = gaussian_log_prob(tape, m, ls, y)?;
            logp.push(tape.sum(lp, None));
            let e = gaussian_entropy(tape, ls);
            ent.push(tape.sum(e, None));
            se += tape
                .value(m)
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            count += target.len();
        }
        h = out.hidden.to_blocks();
    }
    let n = (b * len) as f64;
    let lp = sum_all(tape, &logp);
    let nll = tape.scale(lp, -1.0 / n);
    let en = sum_all(tape, &ent);
    let entropy = tape.scale(en, 1.0 / n);
    Ok((nll, entropy, se / count.max(1) as f64))
}

fn sum_all(tape: &mut Tape, vs: &[Var]) -> Var {
    let first = vs[0];
    vs[1..].iter().fold(first, |acc, v| tape.add(acc, *v))
}

/// Imitation terms on a fresh mini-batch of `cfg.demo_batch` windows per
/// design.
pub fn il_loss(tape: &mut Tape, p: &BoundParams, demos: &DemoSet, cfg: &TrainConfig, rng: &mut Rng) -> Result<IlTerms> {
    if demos.is_empty() {
        return Err(Error::EmptyDataset("no demonstrations"));
    }
    let (mut nll, mut ent, mut mse) = (Vec::new(), Vec::new(), 0.0);
    for g in &demos.groups {
        let len = window_len(g, cfg.horizon);
        let w = sample_windows(g, len, cfg.demo_batch, rng);
        let (n, e, m) = replay(tape, p, g, &w, len)?;
        nll.push(n);
        ent.push(e);
        mse += m;
    }
    Ok(IlTerms {
        nll: sum_all(tape, &nll),
        entropy: sum_all(tape, &ent),
        mse: mse / demos.groups.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    /// Full-data negative log-likelihood before the first update.
    pub initial_nll: f64,
    /// Mini-batch negative log-likelihood before each update.
    pub nll_history: Vec<f64>,
    pub final_nll: f64,
}

/// Behavioral-cloning pretraining: maximizes the joint log-likelihood of
/// demo actions over `cfg.bc_updates` mini-batches.
pub fn pretrain_policy_bc(theta: &mut PolicyParams, demos: &DemoSet, cfg: &TrainConfig, seed: u64) -> Result<BcReport> {
    pretrain_policy_bc_observed(theta, demos, cfg, seed, &mut |_, _| Ok(()))
}

/// As [`pretrain_policy_bc`], calling `observe` with the update count and
/// parameters after every update.
pub fn pretrain_policy_bc_observed(
    theta: &mut PolicyParams,
    demos: &DemoSet,
    cfg: &TrainConfig,
    seed: u64,
    observe: &mut dyn FnMut(usize, &PolicyParams) -> Result<()>,
) -> Result<BcReport> {
    if demos.is_empty() {
        return Err(Error::EmptyDataset("no demonstrations"));
    }
    let initial_nll = demo_fit(theta, demos, cfg.horizon)?.nll;
    let mut rng = stream(derive_seed(seed, 0xbc), 0);
    let mut adam = Adam::new(&theta.store, cfg.bc_lr);
    let mut history = Vec::with_capacity(cfg.bc_updates);
    for u in 0..cfg.bc_updates {
        let mut tape = Tape::new();
        let p = theta.store.bind(&mut tape);
        let terms = il_loss(&mut tape, &p, demos, cfg, &mut rng)?;
        history.push(tape.value(terms.nll).item());
        let g = tape.backward(terms.nll)?;
        let grads = p.collect(&g, &theta.store);
        adam.step(&mut theta.store, &grads);
        observe(u + 1, theta)?;
    }
    let final_nll = demo_fit(theta, demos, cfg.horizon)?.nll;
    Ok(BcReport {
        initial_nll,
        nll_history: history,
        final_nll,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoFit {
    /// Mean squared error between policy mean and demo action, per channel.
    pub mse: f64,
    /// Mean negative log-likelihood per demo step, summed over designs.
    pub nll: f64,
}

/// Fit of `theta` to every non-overlapping window of length `horizon`.
pub fn demo_fit(theta: &PolicyParams, demos: &DemoSet, horizon: usize) -> Result<DemoFit> {
    let mut tape = Tape::new();
    let p = theta.store.bind_frozen(&mut tape);
    let (mut nll, mut mse) = (0.0, 0.0);
    for g in &demos.groups {
        let len = window_len(g, horizon);
        let w = all_windows(g, len);
        let (n, _, m) = replay(&mut tape, &p, g, &w, len)?;
        nll += tape.value(n).item();
        mse += m;
    }
    tape.check_finite()?;
    Ok(DemoFit {
        mse: mse / demos.groups.len().max(1) as f64,
        nll,
    })
}
