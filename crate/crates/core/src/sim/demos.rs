use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{initial_state, observe, step, Controller, NoiseModel, SimConfig};
use crate::design::{parse_design, DesignGraph};
use crate::error::{Error, Result};
use crate::rng::stream;

/// One control step of a recorded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<'a> {
    pub obs: &'a [f64],
    pub act: &'a [f64],
}

/// Observation/action sequence, optionally with simulator states (one more
/// than actions) and per-step rewards.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub obs: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.act.len()
    }

    pub fn is_empty(&self) -> bool {
        self.act.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = Step<'_>> {
        self.obs.iter().zip(&self.act).map(|(o, a)| Step { obs: o, act: a })
    }
}

/// Trajectories of a single design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoDataset {
    pub design: String,
    pub dt_ctrl: f64,
    pub trajectories: Vec<Trajectory>,
}

impl DemoDataset {
    pub fn design_graph(&self) -> Result<DesignGraph> {
        parse_design(&self.design)
    }

    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Structural check of every vector against the design's dimensions.
    pub fn validate(&self) -> Result<()> {
        let dims = self.design_graph()?.dims();
        for t in &self.trajectories {
            if t.obs.len() != t.act.len() {
                return Err(Error::DimMismatch {
                    context: "trajectory obs/act count",
                    expected: t.act.len(),
                    got: t.obs.len(),
                });
            }
            for o in &t.obs {
                check_len("demo observation", dims.obs, o.len())?;
            }
            for a in &t.act {
                check_len("demo action", dims.action, a.len())?;
            }
            for s in t.state.iter().flatten() {
                check_len("trajectory state", dims.state, s.len())?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: DemoDataset = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DemoDataset::from_json(&text)
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { context, expected, got });
    }
    Ok(())
}

/// Runs `controller` from `n_traj` perturbed starts, logging noisy
/// observations and commands. Trajectory `i` uses random stream `(seed, i)`.
pub fn generate_demo_dataset(
    design: &DesignGraph,
    controller: &mut dyn Controller,
    n_traj: usize,
    horizon: usize,
    noise: &NoiseModel,
    cfg: &SimConfig,
    seed: u64,
) -> Result<DemoDataset> {
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let mut rng = stream(seed, i as u64);
        controller.reset();
        let mut s = initial_state(design, noise, &mut rng);
        let mut t = Trajectory::default();
        for _ in 0..horizon {
            let o = observe(&s, design, noise, &mut rng);
            let a = controller.act(&s, &o)?;
            s = step(&s, design, &a, cfg)?;
            t.obs.push(o);
            t.act.push(a);
        }
        trajectories.push(t);
    }
    Ok(DemoDataset {
        design: design.pattern(),
        dt_ctrl: cfg.control_dt(),
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{SkidSteer, TripodGait, V_MAX};

    #[test]
    fn tripod_dataset_shape_and_bounds() {
        let hex = parse_design("hex6l").unwrap();
        let cfg = SimConfig::default();
        let mut c = TripodGait::new(&hex, &cfg).unwrap();
        let d = generate_demo_dataset(&hex, &mut c, 50, 100, &NoiseModel::default(), &cfg, 0).unwrap();
        assert_eq!(d.trajectories.len(), 50);
        assert!(d
            .trajectories
            .iter()
            .all(|t| t.len() == 100 && t.state.is_none() && t.reward.is_none()));
        assert!(d.trajectories.iter().flat_map(|t| t.act.iter().flatten()).all(|a| a.abs() <= V_MAX));
        d.validate().unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let car = parse_design("car4w").unwrap();
        let cfg = SimConfig::default();
        let mut c = SkidSteer::new(&car, &cfg).unwrap();
        let a = generate_demo_dataset(&car, &mut c, 5, 20, &NoiseModel::default(), &cfg, 4).unwrap();
        let b = generate_demo_dataset(&car, &mut c, 5, 20, &NoiseModel::default(), &cfg, 4).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let back = DemoDataset::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn file_schema() {
        let text = r#"{"design":"LNN|NNN","dt_ctrl":0.0833,"trajectories":[{"obs":[[0,0,0,0,0,0,0,0,0,0,0]],"act":[[1,2,3]]}]}"#;
        let d = DemoDataset::from_json(text).unwrap();
        assert_eq!(d.num_steps(), 1);
        let bad = r#"{"design":"LNN|NNN","dt_ctrl":0.0833,"trajectories":[{"obs":[[0]],"act":[[1,2,3]]}]}"#;
        assert!(DemoDataset::from_json(bad).is_err());
    }
}
