use super::{body, leg, wheel, SimConfig, WorldState, V_MAX};
use crate::design::{DesignGraph, ModuleKind, PortSlot, NUM_PORTS};
use crate::error::{Error, Result};

/// Contact flag per slot; unpopulated slots are never in contact.
pub fn contacts(state: &WorldState, design: &DesignGraph, cfg: &SimConfig) -> [bool; NUM_PORTS] {
    let mut out = [false; NUM_PORTS];
    for (slot, kind) in design.modules() {
        out[slot] = match kind {
            ModuleKind::Leg => state.module(design, slot)[leg::Q2] <= cfg.contact_lift,
            ModuleKind::Wheel => true,
            _ => false,
        };
    }
    out
}

fn track(q: &mut f64, qd: &mut f64, cmd: f64, limits: Option<(f64, f64)>, cfg: &SimConfig) {
    *qd = (1.0 - cfg.joint_blend) * *qd + cfg.joint_blend * cmd.clamp(-V_MAX, V_MAX);
    *q += *qd * cfg.dt;
    if let Some((lo, hi)) = limits {
        if *q < lo || *q > hi {
            *q = q.clamp(lo, hi);
            *qd = 0.0;
        }
    }
}

/// Advances one control step (`cfg.substeps` substeps). Actions are
/// commanded joint velocities.
pub fn step(state: &WorldState, design: &DesignGraph, action: &[f64], cfg: &SimConfig) -> Result<WorldState> {
    let dims = design.dims();
    if action.len() != dims.action {
        return Err(Error::DimMismatch {
            context: "step action",
            expected: dims.action,
            got: action.len(),
        });
    }
    if state.values.len() != dims.state {
        return Err(Error::DimMismatch {
            context: "step state",
            expected: dims.state,
            got: state.values.len(),
        });
    }
    let mut s = state.clone();
    let a_off = design.action_offsets();
    let s_off = design.state_offsets();
    let ports: Vec<PortSlot> = (0..NUM_PORTS).map(PortSlot::new).collect();
    let dt = cfg.dt;

    for _ in 0..cfg.substeps {
        // joints
        for (slot, kind) in design.modules() {
            let a = &action[a_off[slot]..a_off[slot] + kind.action_dim()];
            let m = &mut s.values[s_off[slot]..s_off[slot] + kind.state_dim()];
            match kind {
                ModuleKind::Leg =>
                {
                    #[allow(clippy::needless_range_loop)]
                    for j in 0..3 {
                        let (q, qd) = split_pair(m, j, 3 + j);
                        track(q, qd, a[j], Some(leg::LIMITS[j]), cfg);
                    }
                }
                ModuleKind::Wheel => {
                    let lim = (-wheel::STEER_LIMIT, wheel::STEER_LIMIT);
                    let (q, qd) = split_pair(m, wheel::STEER, wheel::STEER_RATE);
                    track(q, qd, a[0], Some(lim), cfg);
                    let (q, qd) = split_pair(m, wheel::DRIVE, wheel::DRIVE_RATE);
                    track(q, qd, a[1], None, cfg);
                }
                _ => {}
            }
        }

        // contacts and body-frame contributions, summed per side so that
        // mirrored designs accumulate in mirrored order
        let touching = contacts(&s, design, cfg);
        let mut side_cx = [0.0; 2];
        let mut side_cy = [0.0; 2];
        let mut side_tq = [0.0; 2];
        let mut side_touch = [0usize; 2];
        let mut side_count = [0usize; 2];
        let (mut front, mut front_n, mut rear, mut rear_n) = (0usize, 0usize, 0usize, 0usize);
        for (slot, kind) in design.modules() {
            let side = usize::from(slot >= 3);
            let p = &ports[slot];
            side_count[side] += 1;
            if p.x > 0.0 {
                front_n += 1;
                front += usize::from(touching[slot]);
            } else if p.x < 0.0 {
                rear_n += 1;
                rear += usize::from(touching[slot]);
            }
            if !touching[slot] {
                continue;
            }
            let m = s.module(design, slot);
            let (cx, cy) = match kind {
                ModuleKind::Leg => (-cfg.leg_link * m[leg::Q1].cos() * m[3 + leg::Q1], 0.0),
                ModuleKind::Wheel => {
                    let v = cfg.wheel_radius * m[wheel::DRIVE_RATE];
                    (v * m[wheel::STEER].cos(), v * m[wheel::STEER].sin())
                }
                _ => (0.0, 0.0),
            };
            side_cx[side] += cx;
            side_cy[side] += cy;
            side_tq[side] += p.x * cy - p.y * cx;
            side_touch[side] += 1;
        }

        let n_touch = side_touch[0] + side_touch[1];
        if n_touch > 0 {
            let n = n_touch as f64;
            s.values[body::VX] = (side_cx[0] + side_cx[1]) / n;
            s.values[body::VY] = (side_cy[0] + side_cy[1]) / n;
            s.values[body::W_YAW] = cfg.yaw_gain * ((side_tq[0] + side_tq[1]) / n);
        } else {
            s.values[body::VX] *= cfg.velocity_decay;
            s.values[body::VY] *= cfg.velocity_decay;
            s.values[body::W_YAW] *= cfg.velocity_decay;
        }

        // pose in world frame
        let (vx, vy, yaw) = (s.values[body::VX], s.values[body::VY], s.values[body::YAW]);
        let (sin, cos) = (yaw.sin(), yaw.cos());
        s.values[body::X] += (vx * cos - vy * sin) * dt;
        s.values[body::Y] += (vx * sin + vy * cos) * dt;
        s.values[body::YAW] += s.values[body::W_YAW] * dt;

        // attitude springs
        let frac = |touch: usize, count: usize| if count == 0 { 0.0 } else { touch as f64 / count as f64 };
        let roll_target = cfg.imbalance_gain * (frac(side_touch[1], side_count[1]) - frac(side_touch[0], side_count[0]));
        let pitch_target = cfg.imbalance_gain * (frac(front, front_n) - frac(rear, rear_n));
        for (u, w, target) in [(body::ROLL, body::W_ROLL, roll_target), (body::PITCH, body::W_PITCH, pitch_target)] {
            let acc = cfg.attitude_spring * (target - s.values[u]) - cfg.attitude_damping * s.values[w];
            s.values[w] += acc * dt;
            s.values[u] += s.values[w] * dt;
        }
    }
    Ok(s)
}

fn split_pair(m: &mut [f64], i: usize, j: usize) -> (&mut f64, &mut f64) {
    debug_assert!(i < j);
    let (a, b) = m.split_at_mut(j);
    (&mut a[i], &mut b[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::parse_design;
    use crate::sim::nominal_state;

    #[test]
    fn car_symmetric_drive_goes_straight() {
        let car = parse_design("car4w").unwrap();
        let cfg = SimConfig::default();
        let mut s = nominal_state(&car);
        let action: Vec<f64> = (0..4).flat_map(|_| [0.0, 2.0]).collect();
        for _ in 0..12 {
            s = step(&s, &car, &action, &cfg).unwrap();
        }
        assert_eq!(s.values[body::Y], 0.0);
        assert_eq!(s.values[body::YAW], 0.0);
        assert!(s.x() > 0.0);
    }

    #[test]
    fn zero_action_from_rest_stays_put() {
        let cfg = SimConfig::default();
        for name in ["hex6l", "car4w", "llw", "lnw", "LNN|NNN"] {
            let d = parse_design(name).unwrap();
            let mut s = nominal_state(&d);
            let zero = vec![0.0; d.dims().action];
            for _ in 0..50 {
                s = step(&s, &d, &zero, &cfg).unwrap();
            }
            assert_eq!(s.values[body::X], 0.0, "{name}");
            assert_eq!(s.values[body::Y], 0.0, "{name}");
            assert_eq!(s.values[body::YAW], 0.0, "{name}");
        }
    }

    #[test]
    fn airborne_body_decays() {
        let hex = parse_design("hex6l").unwrap();
        let cfg = SimConfig::default();
        let mut s = nominal_state(&hex);
        for slot in 0..6 {
            s.module_mut(&hex, slot)[leg::Q2] = 1.0;
        }
        s.values[body::VX] = 1.0;
        let next = step(&s, &hex, &[0.0; 18], &cfg).unwrap();
        // Oracle: five applications of the decay factor.
        let mut expect = 1.0;
        for _ in 0..5 {
            expect *= 0.7;
        }
        assert!((next.values[body::VX] - expect).abs() < 1e-15);
        assert!((expect - 0.16807).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_action_length() {
        let hex = parse_design("hex6l").unwrap();
        let err = step(&nominal_state(&hex), &hex, &[0.0; 17], &SimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { expected: 18, got: 17, .. }));
    }

    #[test]
    fn joint_limit_zeroes_velocity() {
        let d = parse_design("LNN|NNN").unwrap();
        let cfg = SimConfig::default();
        let mut s = nominal_state(&d);
        for _ in 0..30 {
            s = step(&s, &d, &[4.0, 4.0, -4.0], &cfg).unwrap();
        }
        let m = s.module(&d, 0);
        assert_eq!(m[leg::Q1], 1.2);
        assert_eq!(m[leg::Q2], 1.2);
        assert_eq!(m[leg::Q3], -1.5);
        assert!(s.within_limits(&d));
    }

    #[test]
    fn stance_sweep_backward_moves_forward() {
        let d = parse_design("hex6l").unwrap();
        let cfg = SimConfig::default();
        let s = nominal_state(&d);
        let a: Vec<f64> = (0..6).flat_map(|_| [-1.0, 0.0, 0.0]).collect();
        let next = step(&s, &d, &a, &cfg).unwrap();
        assert!(next.x() > 0.0);
    }
}
