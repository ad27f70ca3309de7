//! Deterministic desk-scale locomotion environment for modular robots.
//!
//! Stance legs drag the body by sweeping their hip joint, wheels roll it.
//! The body velocity is the mean of the contributions of every module in
//! contact, roll and pitch follow a damped spring toward a tilt set by how
//! unevenly the modules are loaded. Everything is a pure function of its
//! inputs.

mod controllers;
mod demos;
mod dynamics;
mod eval;
mod observe;
mod spline;

pub use controllers::{Controller, SkidSteer, TripodGait};
pub use demos::{generate_demo_dataset, DemoDataset, Step, Trajectory};
pub use dynamics::{contacts, step};
pub use eval::{eval_distance, rollout, DistanceStats};
pub use observe::{initial_state, nominal_state, observe, reward};
pub use spline::{clamped_cubic, random_spline_actions};

use serde::{Deserialize, Serialize};

use crate::design::{DesignGraph, ModuleKind};
use crate::error::{Error, Result};

/// Body state channel indices.
pub mod body {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const YAW: usize = 2;
    pub const ROLL: usize = 3;
    pub const PITCH: usize = 4;
    pub const VX: usize = 5;
    pub const VY: usize = 6;
    pub const W_ROLL: usize = 7;
    pub const W_PITCH: usize = 8;
    pub const W_YAW: usize = 9;
}

/// Leg: hip swing, lift, knee angles followed by their rates.
pub mod leg {
    pub const Q1: usize = 0;
    pub const Q2: usize = 1;
    pub const Q3: usize = 2;
    pub const LIMITS: [(f64, f64); 3] = [(-1.2, 1.2), (-0.3, 1.2), (-1.5, 1.5)];
}

/// Wheel: steer angle, steer rate, drive angle, drive rate.
pub mod wheel {
    pub const STEER: usize = 0;
    pub const STEER_RATE: usize = 1;
    pub const DRIVE: usize = 2;
    pub const DRIVE_RATE: usize = 3;
    pub const STEER_LIMIT: f64 = 0.6;
}

/// Joint speed bound, also the action bound.
pub const V_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub substeps: usize,
    pub leg_link: f64,
    pub wheel_radius: f64,
    pub joint_blend: f64,
    pub contact_lift: f64,
    pub velocity_decay: f64,
    pub yaw_gain: f64,
    pub attitude_spring: f64,
    pub attitude_damping: f64,
    pub imbalance_gain: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0 / 60.0,
            substeps: 5,
            leg_link: 0.15,
            wheel_radius: 0.06,
            joint_blend: 0.5,
            contact_lift: 0.15,
            velocity_decay: 0.7,
            yaw_gain: 2.0,
            attitude_spring: 20.0,
            attitude_damping: 6.0,
            imbalance_gain: 0.08,
        }
    }
}

impl SimConfig {
    /// Duration of one control step.
    pub fn control_dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub forward: f64,
    pub attitude: f64,
    pub lateral: f64,
    pub effort: f64,
    pub pose: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            forward: 1.0,
            attitude: 0.1,
            lateral: 0.1,
            effort: 1e-4,
            pose: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub obs_sigma: f64,
    pub joint_spread: f64,
    pub yaw_spread: f64,
    pub tilt_spread: f64,
    pub explore_sigma: f64,
    pub finetune_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            obs_sigma: 0.01,
            joint_spread: 0.3,
            yaw_spread: 0.5,
            tilt_spread: 0.1,
            explore_sigma: 1.0,
            finetune_sigma: 0.5,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            obs_sigma: 0.0,
            ..NoiseModel::default()
        }
    }
}

/// Ground-truth simulator state laid out as body block then slot blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub values: Vec<f64>,
}

impl WorldState {
    pub fn zeros(design: &DesignGraph) -> Self {
        WorldState {
            values: vec![0.0; design.dims().state],
        }
    }

    pub fn from_vec(design: &DesignGraph, values: Vec<f64>) -> Result<Self> {
        let expected = design.dims().state;
        if values.len() != expected {
            return Err(Error::DimMismatch {
                context: "world state",
                expected,
                got: values.len(),
            });
        }
        Ok(WorldState { values })
    }

    pub fn body(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn body_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }

    pub fn x(&self) -> f64 {
        self.values[body::X]
    }

    pub fn yaw(&self) -> f64 {
        self.values[body::YAW]
    }

    /// The state block of slot `slot` (empty for unpopulated slots).
    pub fn module<'a>(&'a self, design: &DesignGraph, slot: usize) -> &'a [f64] {
        let off = design.state_offsets()[slot];
        &self.values[off..off + design.slot(slot).state_dim()]
    }

    pub fn module_mut<'a>(&'a mut self, design: &DesignGraph, slot: usize) -> &'a mut [f64] {
        let off = design.state_offsets()[slot];
        &mut self.values[off..off + design.slot(slot).state_dim()]
    }

    /// Every joint angle and rate within its limits.
    pub fn within_limits(&self, design: &DesignGraph) -> bool {
        let eps = 1e-12;
        design.modules().all(|(slot, kind)| {
            let m = self.module(design, slot);
            match kind {
                ModuleKind::Leg => (0..3).all(|j| {
                    let (lo, hi) = leg::LIMITS[j];
                    m[j] >= lo - eps && m[j] <= hi + eps && m[3 + j].abs() <= V_MAX + eps
                }),
                ModuleKind::Wheel => {
                    m[wheel::STEER].abs() <= wheel::STEER_LIMIT + eps
                        && m[wheel::STEER_RATE].abs() <= V_MAX + eps
                        && m[wheel::DRIVE_RATE].abs() <= V_MAX + eps
                }
                _ => true,
            }
        })
    }
}
