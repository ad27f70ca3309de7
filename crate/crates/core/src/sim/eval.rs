use serde::{Deserialize, Serialize};

use super::{initial_state, observe, reward, step, Controller, NoiseModel, RewardWeights, SimConfig, Trajectory, WorldState};
use crate::design::DesignGraph;
use crate::error::Result;
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl DistanceStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        DistanceStats {
            mean: xs.iter().sum::<f64>() / n,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Closed-loop simulation recording states (`steps + 1` of them), noisy
/// observations, actions and rewards.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    ctrl: &mut dyn Controller,
    design: &DesignGraph,
    start: WorldState,
    steps: usize,
    noise: &NoiseModel,
    cfg: &SimConfig,
    weights: &RewardWeights,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let mut t = Trajectory {
        state: Some(vec![start.values.clone()]),
        reward: Some(Vec::with_capacity(steps)),
        ..Trajectory::default()
    };
    let mut s = start;
    for _ in 0..steps {
        let o = observe(&s, design, noise, rng);
        let a = ctrl.act(&s, &o)?;
        let next = step(&s, design, &a, cfg)?;
        t.reward.as_mut().unwrap().push(reward(&s, &a, &next, design, weights));
        t.state.as_mut().unwrap().push(next.values.clone());
        t.obs.push(o);
        t.act.push(a);
        s = next;
    }
    Ok(t)
}

/// Final forward displacement statistics over `n_starts` perturbed starts.
/// Start `i` draws from stream `(seed, i)`, so results do not depend on the
/// order starts are evaluated in.
pub fn eval_distance(
    ctrl: &mut dyn Controller,
    design: &DesignGraph,
    n_starts: usize,
    steps: usize,
    noise: &NoiseModel,
    cfg: &SimConfig,
    seed: u64,
) -> Result<DistanceStats> {
    let finals = (0..n_starts)
        .map(|i| final_x(ctrl, design, i as u64, steps, noise, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceStats::from_samples(&finals))
}

pub(crate) fn final_x(
    ctrl: &mut dyn Controller,
    design: &DesignGraph,
    index: u64,
    steps: usize,
    noise: &NoiseModel,
    cfg: &SimConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream(seed, index);
    ctrl.reset();
    let mut s = initial_state(design, noise, &mut rng);
    let x0 = s.x();
    for _ in 0..steps {
        let o = observe(&s, design, noise, &mut rng);
        let a = ctrl.act(&s, &o)?;
        s = step(&s, design, &a, cfg)?;
    }
    Ok(s.x() - x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::parse_design;
    use crate::sim::SkidSteer;

    struct Zero(usize);
    impl Controller for Zero {
        fn reset(&mut self) {}
        fn act(&mut self, _: &WorldState, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.0])
        }
    }

    #[test]
    fn zero_policy_goes_nowhere() {
        let d = parse_design("hex6l").unwrap();
        let st = eval_distance(&mut Zero(18), &d, 4, 200, &NoiseModel::default(), &SimConfig::default(), 0).unwrap();
        assert!(st.mean.abs() < 0.01);
    }

    #[test]
    fn skid_controller_drives() {
        let car = parse_design("car4w").unwrap();
        let cfg = SimConfig::default();
        let mut c = SkidSteer::new(&car, &cfg).unwrap();
        let st = eval_distance(&mut c, &car, 16, 200, &NoiseModel::default(), &cfg, 0).unwrap();
        assert!(st.mean > 0.0 && st.min <= st.mean && st.mean <= st.max);
    }

    #[test]
    fn starts_are_order_independent() {
        let car = parse_design("car4w").unwrap();
        let cfg = SimConfig::default();
        let noise = NoiseModel::default();
        let mut c = SkidSteer::new(&car, &cfg).unwrap();
        let forward: Vec<f64> = (0..4).map(|i| final_x(&mut c, &car, i, 50, &noise, &cfg, 3).unwrap()).collect();
        let mut backward: Vec<f64> = (0..4)
            .rev()
            .map(|i| final_x(&mut c, &car, i, 50, &noise, &cfg, 3).unwrap())
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }
}
