use rand::seq::SliceRandom;

use super::data::{Transition, TransitionDataset};
use super::TrainConfig;
use crate::autodiff::{Adam, BoundParams, Tape, Tensor, Var};
use crate::design::ModuleKind;
use crate::error::{Error, Result};
use crate::nets::{Blocks, ModelNet, ModelParams};
use crate::rng::{derive_seed, stream};

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    /// Held-out loss of the incoming parameters under the new statistics.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Normalized Δstate targets laid out as row blocks.
fn targets(net: &ModelNet, phi: &ModelParams, batch: &[&Transition]) -> Blocks<Tensor> {
    let deltas: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| t.next.iter().zip(&t.state).map(|(n, s)| n - s).collect())
        .collect();
    let refs: Vec<&[f64]> = deltas.iter().map(Vec::as_slice).collect();
    net.state_blocks(&refs).map(|kind, t| {
        let st = phi.norm.get(kind);
        let d = kind.state_dim();
        let data: Vec<f64> = t.data().chunks(d).flat_map(|row| st.normalize_out(row)).collect();
        Tensor::matrix(t.rows(), d, data)
    })
}

/// Mean squared error over every predicted channel.
fn batch_loss(tape: &mut Tape, net: &ModelNet, phi: &ModelParams, p: &BoundParams, batch: &[&Transition]) -> Var {
    let states: Vec<&[f64]> = batch.iter().map(|t| &t.state[..]).collect();
    let actions: Vec<&[f64]> = batch.iter().map(|t| &t.action[..]).collect();
    let s = net.state_blocks(&states).map(|_, t| tape.constant(t.clone()));
    let a = net.action_blocks(&actions).map(|t| tape.constant(t.clone()));
    let z = net.forward(tape, p, &phi.norm, &s, &a, batch.len());
    let y = targets(net, phi, batch);
    let mut total = None;
    for kind in ModuleKind::NETWORKED {
        if let (Some(z), Some(y)) = (z.get(kind), y.get(kind)) {
            let y = tape.constant(y.clone());
            let e = tape.sub(*z, y);
            let sq = tape.square(e);
            let s = tape.sum(sq, None);
            total = Some(match total {
                None => s,
                Some(acc) => tape.add(acc, s),
            });
        }
    }
    let n = (batch.len() * net.layout.design.dims().state) as f64;
    tape.scale(total.unwrap(), 1.0 / n)
}

/// Mean normalized one-step error of `phi` on `data`.
pub fn heldout_loss(phi: &ModelParams, net: &ModelNet, data: &[&Transition]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("no held-out transitions"));
    }
    let mut sum = 0.0;
    for chunk in data.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let p = phi.store.bind_frozen(&mut tape);
        let l = batch_loss(&mut tape, net, phi, &p, chunk);
        tape.check_finite()?;
        sum += tape.value(l).item() * chunk.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

/// Fits (or fine-tunes) `phi` to `data`, keeping the parameters with the
/// best held-out loss. The statistics of `data` replace those in `phi`.
pub fn train_model(phi: &mut ModelParams, data: &TransitionDataset, cfg: &TrainConfig, seed: u64) -> Result<ModelReport> {
    if data.len() < 2 {
        return Err(Error::EmptyDataset("model training needs at least two transitions"));
    }
    if data.is_degenerate() {
        return Err(Error::DegenerateDataset("all states identical"));
    }
    phi.norm = data.normalizer().clone();
    let net = ModelNet::new(phi.arch, data.design());
    let mut rng = stream(derive_seed(seed, 0x30de1), 0);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let n_hold = ((data.len() as f64 * cfg.holdout_fraction).ceil() as usize).clamp(1, data.len() - 1);
    let all = data.transitions();
    let hold: Vec<&Transition> = idx[..n_hold].iter().map(|&i| &all[i]).collect();
    let mut train: Vec<&Transition> = idx[n_hold..].iter().map(|&i| &all[i]).collect();

    let initial_loss = heldout_loss(phi, &net, &hold)?;
    let mut best = (initial_loss, phi.store.clone());
    let mut adam = Adam::new(&phi.store, cfg.model_lr);
    let mut stale = 0;
    let mut epochs = 0;
    for _ in 0..cfg.model_epochs {
        epochs += 1;
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.model_batch) {
            let mut tape = Tape::new();
            let p = phi.store.bind(&mut tape);
            let l = batch_loss(&mut tape, &net, phi, &p, batch);
            let g = tape.backward(l)?;
            let grads = p.collect(&g, &phi.store);
            adam.step(&mut phi.store, &grads);
        }
        let loss = heldout_loss(phi, &net, &hold)?;
        if loss < best.0 {
            best = (loss, phi.store.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    phi.store = best.1;
    Ok(ModelReport {
        initial_loss,
        final_loss: best.0,
        epochs,
    })
}
