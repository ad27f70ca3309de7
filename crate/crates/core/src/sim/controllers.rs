use std::f64::consts::PI;

use super::{body, leg, wheel, SimConfig, WorldState, V_MAX};
use crate::design::{DesignGraph, ModuleKind};
use crate::error::{Error, Result};

/// Anything that turns the current state (and its noisy observation) into a
/// command. Controllers may keep internal state between calls.
pub trait Controller {
    fn reset(&mut self);
    fn act(&mut self, state: &WorldState, obs: &[f64]) -> Result<Vec<f64>>;
}

/// Slots of the first tripod; the rest form the second.
const TRIPOD_A: [usize; 3] = [0, 4, 2];

/// Alternating tripod walker that steers by modulating step length per side.
#[derive(Debug, Clone)]
pub struct TripodGait {
    design: DesignGraph,
    cfg: SimConfig,
    pub phase: f64,
    pub amplitude: f64,
    pub yaw_gain: f64,
    pub tracking_gain: f64,
    pub lift: f64,
    pub steps_per_cycle: usize,
}

impl TripodGait {
    pub fn new(design: &DesignGraph, cfg: &SimConfig) -> Result<Self> {
        if let Some((slot, kind)) = design.modules().find(|(_, k)| *k != ModuleKind::Leg) {
            return Err(Error::ControllerMismatch {
                controller: "tripod",
                design: design.display_name(),
                reason: format!("slot {slot} holds a {}", kind.name()),
            });
        }
        Ok(TripodGait {
            design: design.clone(),
            cfg: *cfg,
            phase: 0.0,
            amplitude: 0.4,
            yaw_gain: 1.5,
            tracking_gain: 0.8,
            lift: 0.6,
            steps_per_cycle: 20,
        })
    }

    /// Hip sweep amplitude of one side (`left` true for ports 0..3).
    pub fn side_amplitude(&self, yaw: f64, left: bool) -> f64 {
        // Positive yaw is corrected by longer strides on the left.
        let s = if left { 1.0 } else { -1.0 };
        self.amplitude * (1.0 + s * self.yaw_gain * yaw).clamp(0.0, 2.0)
    }

    fn command(&self, state: &WorldState) -> Vec<f64> {
        let dt = self.cfg.control_dt();
        let yaw = state.body(body::YAW);
        let mut out = Vec::with_capacity(self.design.dims().action);
        for (slot, _) in self.design.modules() {
            let offset = if TRIPOD_A.contains(&slot) { 0.0 } else { PI };
            let phi = self.phase + offset;
            let stance = phi.sin() <= 0.0;
            let amp = self.side_amplitude(yaw, slot < 3);
            // Stance sweeps the hip backward, dragging the body forward.
            let q_ref = [-amp * phi.cos(), if stance { 0.0 } else { self.lift }, 0.0];
            let q = state.module(&self.design, slot);
            for j in 0..3 {
                out.push((self.tracking_gain * (q_ref[j] - q[leg::Q1 + j]) / dt).clamp(-V_MAX, V_MAX));
            }
        }
        out
    }
}

impl Controller for TripodGait {
    fn reset(&mut self) {
        self.phase = 0.0;
    }

    fn act(&mut self, state: &WorldState, _obs: &[f64]) -> Result<Vec<f64>> {
        let a = self.command(state);
        self.phase = (self.phase + 2.0 * PI / self.steps_per_cycle as f64) % (2.0 * PI);
        Ok(a)
    }
}

/// Differential-drive wheel controller that regulates heading to zero.
#[derive(Debug, Clone)]
pub struct SkidSteer {
    design: DesignGraph,
    cfg: SimConfig,
    pub speed: f64,
    pub yaw_gain: f64,
    pub steer_gain: f64,
}

impl SkidSteer {
    pub fn new(design: &DesignGraph, cfg: &SimConfig) -> Result<Self> {
        if let Some((slot, kind)) = design.modules().find(|(_, k)| *k != ModuleKind::Wheel) {
            return Err(Error::ControllerMismatch {
                controller: "skid",
                design: design.display_name(),
                reason: format!("slot {slot} holds a {}", kind.name()),
            });
        }
        Ok(SkidSteer {
            design: design.clone(),
            cfg: *cfg,
            speed: 2.0,
            yaw_gain: 2.0,
            steer_gain: 0.8,
        })
    }

    /// Drive command for one side.
    pub fn side_speed(&self, yaw: f64, left: bool) -> f64 {
        // Faster left wheels turn the body clockwise, reducing positive yaw.
        let s = if left { 1.0 } else { -1.0 };
        (self.speed + s * self.yaw_gain * yaw).clamp(-V_MAX, V_MAX)
    }
}

impl Controller for SkidSteer {
    fn reset(&mut self) {}

    fn act(&mut self, state: &WorldState, _obs: &[f64]) -> Result<Vec<f64>> {
        let dt = self.cfg.control_dt();
        let yaw = state.body(body::YAW);
        let mut out = Vec::with_capacity(self.design.dims().action);
        for (slot, _) in self.design.modules() {
            let steer = state.module(&self.design, slot)[wheel::STEER];
            out.push((-self.steer_gain * steer / dt).clamp(-V_MAX, V_MAX));
            out.push(self.side_speed(yaw, slot < 3));
        }
        Ok(out)
    }
}
