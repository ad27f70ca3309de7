use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{body, leg, wheel, NoiseModel, RewardWeights, WorldState};
use crate::design::{DesignGraph, ModuleKind};
use crate::rng::Rng;

/// Robot at rest in its nominal stance at the origin.
pub fn nominal_state(design: &DesignGraph) -> WorldState {
    WorldState::zeros(design)
}

/// Projection onto the sensed channels plus Gaussian sensor noise. Position,
/// heading and linear velocity are dropped, as is the unbounded drive angle.
pub fn observe(state: &WorldState, design: &DesignGraph, noise: &NoiseModel, rng: &mut Rng) -> Vec<f64> {
    let mut o = Vec::with_capacity(design.dims().obs);
    o.extend_from_slice(&[
        state.body(body::ROLL),
        state.body(body::PITCH),
        state.body(body::W_ROLL),
        state.body(body::W_PITCH),
        state.body(body::W_YAW),
    ]);
    for (slot, kind) in design.modules() {
        let m = state.module(design, slot);
        match kind {
            ModuleKind::Leg => o.extend_from_slice(m),
            ModuleKind::Wheel => o.extend_from_slice(&[m[wheel::STEER], m[wheel::STEER_RATE], m[wheel::DRIVE_RATE]]),
            _ => {}
        }
    }
    if noise.obs_sigma > 0.0 {
        let n = Normal::new(0.0, noise.obs_sigma).expect("finite sigma");
        for v in &mut o {
            *v += n.sample(rng);
        }
    }
    o
}

/// Squared distance of the posed joints from the nominal stance.
pub(crate) fn pose_error(state: &WorldState, design: &DesignGraph) -> f64 {
    design
        .modules()
        .map(|(slot, kind)| {
            let m = state.module(design, slot);
            match kind {
                ModuleKind::Leg => m[leg::Q1].powi(2) + m[leg::Q2].powi(2) + m[leg::Q3].powi(2),
                ModuleKind::Wheel => m[wheel::STEER].powi(2),
                _ => 0.0,
            }
        })
        .sum()
}

pub fn reward(state: &WorldState, action: &[f64], next: &WorldState, design: &DesignGraph, w: &RewardWeights) -> f64 {
    let progress = next.body(body::X) - state.body(body::X);
    let attitude = next.body(body::ROLL).powi(2) + next.body(body::PITCH).powi(2) + next.body(body::YAW).powi(2);
    let lateral = next.body(body::Y).powi(2);
    let effort: f64 = action.iter().map(|a| a * a).sum();
    w.forward * progress - w.attitude * attitude - w.lateral * lateral - w.effort * effort - w.pose * pose_error(next, design)
}

/// Sample from the initial state distribution.
pub fn initial_state(design: &DesignGraph, noise: &NoiseModel, rng: &mut Rng) -> WorldState {
    let mut s = nominal_state(design);
    let uniform = |r: f64, rng: &mut Rng| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    s.values[body::YAW] = uniform(noise.yaw_spread, rng);
    s.values[body::ROLL] = uniform(noise.tilt_spread, rng);
    s.values[body::PITCH] = uniform(noise.tilt_spread, rng);
    for (slot, kind) in design.modules() {
        match kind {
            ModuleKind::Leg => {
                for (j, (lo, hi)) in leg::LIMITS.iter().enumerate() {
                    let q = uniform(noise.joint_spread, rng).clamp(*lo, *hi);
                    s.module_mut(design, slot)[j] = q;
                }
            }
            ModuleKind::Wheel => {
                let lim = wheel::STEER_LIMIT;
                let q = uniform(noise.joint_spread, rng).clamp(-lim, lim);
                s.module_mut(design, slot)[wheel::STEER] = q;
            }
            _ => {}
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::parse_design;
    use crate::rng::stream;

    #[test]
    fn observation_layout() {
        let hex = parse_design("hex6l").unwrap();
        let o = observe(&nominal_state(&hex), &hex, &NoiseModel::noiseless(), &mut stream(0, 0));
        assert_eq!(o.len(), 41);
        assert!(o[..5].iter().all(|v| *v == 0.0));
        let car = parse_design("car4w").unwrap();
        let o = observe(&nominal_state(&car), &car, &NoiseModel::default(), &mut stream(0, 0));
        assert_eq!(o.len(), 17);
    }

    #[test]
    fn hidden_channels_never_observed() {
        let d = parse_design("llw").unwrap();
        let mut rng = stream(3, 0);
        let base = initial_state(&d, &NoiseModel::default(), &mut rng);
        let mut moved = base.clone();
        moved.values[body::X] += 1.3;
        moved.values[body::Y] -= 0.4;
        moved.values[body::YAW] += 0.2;
        moved.values[body::VX] = 0.5;
        moved.values[body::VY] = -0.5;
        let off = d.state_offsets()[2];
        moved.values[off + wheel::DRIVE] += 10.0;
        let n = NoiseModel::noiseless();
        let a = observe(&base, &d, &n, &mut stream(0, 0));
        let b = observe(&moved, &d, &n, &mut stream(0, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn reward_examples() {
        let d = parse_design("hex6l").unwrap();
        let w = RewardWeights::default();
        let s = nominal_state(&d);
        let mut n = s.clone();
        n.values[body::X] = 0.1;
        let a = vec![0.0; 18];
        assert!((reward(&s, &a, &n, &d, &w) - 0.1).abs() < 1e-15);
        n.values[body::ROLL] = 0.2;
        assert!((reward(&s, &a, &n, &d, &w) - 0.096).abs() < 1e-15);
        let mut further = n.clone();
        further.values[body::X] = 0.2;
        assert!(reward(&s, &a, &further, &d, &w) > reward(&s, &a, &n, &d, &w));
    }

    #[test]
    fn reward_weights_dominance() {
        let w = RewardWeights::default();
        assert!(w.forward > w.attitude + w.lateral + w.effort + w.pose);
    }

    #[test]
    fn initial_state_properties() {
        let d = parse_design("lnw").unwrap();
        let noise = NoiseModel::default();
        assert_eq!(
            initial_state(&d, &noise, &mut stream(5, 0)),
            initial_state(&d, &noise, &mut stream(5, 0))
        );
        let mut rng = stream(11, 0);
        let mut sum = 0.0;
        for i in 0..10_000 {
            let s = initial_state(&d, &noise, &mut rng);
            let yaw = s.yaw();
            if i < 1000 {
                assert!((-0.5..=0.5).contains(&yaw));
                assert_eq!((s.x(), s.body(body::Y)), (0.0, 0.0));
                assert!(s.within_limits(&d));
            }
            sum += yaw;
        }
        assert!((sum / 10_000.0).abs() < 0.02);
    }
}
