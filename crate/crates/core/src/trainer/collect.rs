use super::data::TransitionDataset;
use super::TrainConfig;
use crate::design::DesignGraph;
use crate::error::Result;
use crate::nets::{policy_forward_batch, HiddenState, PolicyNet, PolicyParams};
use crate::rng::{derive_seed, stream};
use crate::sim::{initial_state, observe, random_spline_actions, step, WorldState};

const RANDOM_STREAM: u64 = 0x4a9d;
const COLLECT_STREAM: u64 = 0xc011;
const SPLINE_STREAM: u64 = 0x5b1e;

/// Open-loop random-spline exploration from perturbed starts.
pub fn collect_random_data(design: &DesignGraph, cfg: &TrainConfig, seed: u64) -> Result<TransitionDataset> {
    let mut data = TransitionDataset::new(design);
    let mut trajs = Vec::with_capacity(cfg.random_trajectories);
    for i in 0..cfg.random_trajectories {
        let mut rng = stream(derive_seed(seed, RANDOM_STREAM), i as u64);
        let mut s = initial_state(design, &cfg.noise, &mut rng);
        let actions = random_spline_actions(design, &mut rng, cfg.spline_knots, cfg.trajectory_steps, cfg.noise.explore_sigma)?;
        let mut states = vec![s.values.clone()];
        for a in &actions {
            s = step(&s, design, a, &cfg.sim)?;
            states.push(s.values.clone());
        }
        trajs.push((states, actions));
    }
    data.push_trajectories(trajs.iter().map(|(s, a)| (&s[..], &a[..])))?;
    Ok(data)
}

/// Simulator rollouts of the policy mean: `collect_noiseless` without and
/// `collect_noisy` with added spline noise. Returns the number of
/// transitions appended to `data`.
pub fn collect_policy_data(
    theta: &PolicyParams,
    design: &DesignGraph,
    cfg: &TrainConfig,
    seed: u64,
    data: &mut TransitionDataset,
) -> Result<usize> {
    let n = cfg.collect_noiseless + cfg.collect_noisy;
    if n == 0 {
        return Ok(0);
    }
    let steps = cfg.trajectory_steps;
    let net = PolicyNet::new(theta.arch, design);
    let mut rngs: Vec<_> = (0..n).map(|i| stream(derive_seed(seed, COLLECT_STREAM), i as u64)).collect();
    let noise: Vec<Option<Vec<Vec<f64>>>> = (0..n)
        .map(|i| {
            if i < cfg.collect_noiseless {
                return Ok(None);
            }
            let mut r = stream(derive_seed(seed, SPLINE_STREAM), i as u64);
            random_spline_actions(design, &mut r, cfg.spline_knots, steps, cfg.noise.finetune_sigma).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut states: Vec<WorldState> = rngs.iter_mut().map(|r| initial_state(design, &cfg.noise, r)).collect();
    let mut hidden = vec![HiddenState::zeros(design, &theta.arch); n];
    let mut traj_states: Vec<Vec<Vec<f64>>> = states.iter().map(|s| vec![s.values.clone()]).collect();
    let mut traj_actions: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); n];
    for t in 0..steps {
        let obs: Vec<Vec<f64>> = states
            .iter()
            .zip(&mut rngs)
            .map(|(s, r)| observe(s, design, &cfg.noise, r))
            .collect();
        let obs_refs: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
        let out = policy_forward_batch(&net, theta, &obs_refs, &hidden.iter().collect::<Vec<_>>())?;
        for (i, (dist, h)) in out.into_iter().enumerate() {
            let mut a = dist.mean;
            if let Some(nz) = &noise[i] {
                a.iter_mut().zip(&nz[t]).for_each(|(a, e)| *a += e);
            }
            states[i] = step(&states[i], design, &a, &cfg.sim)?;
            traj_states[i].push(states[i].values.clone());
            traj_actions[i].push(a);
            hidden[i] = h;
        }
    }
    let before = data.len();
    data.push_trajectories(traj_states.iter().zip(&traj_actions).map(|(s, a)| (&s[..], &a[..])))?;
    Ok(data.len() - before)
}
