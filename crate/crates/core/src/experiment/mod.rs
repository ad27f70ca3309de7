//! Experiment harness behind the command line: training runs with metrics,
//! checkpoints and a manifest, demo generation, plotting and the smoke run.

mod metrics;
mod plot;

pub use metrics::{metrics_to_csv, read_metrics, write_metrics, MetricsRow, METRICS_HEADER};
pub use plot::{aggregate, render_svg, ArmSeries};

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{parse_design, DesignGraph};
use crate::error::{Error, Result};
use crate::nets::{ModelParams, PolicyParams};
use crate::rng::{derive_seed, stream};
use crate::sim::{
    eval_distance, generate_demo_dataset, initial_state, step, Controller, DemoDataset, NoiseModel, SimConfig, SkidSteer, TripodGait,
    WorldState,
};
use crate::trainer::{evaluate, initial_policy, run_experiment, IterationMetrics, TrainConfig, EVAL_STREAM};

/// Version string recorded in manifests.
pub const VERSION: &str = env!("MBIL_VERSION");

/// Training arm: with the imitation term, or pure RL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "rl+il")]
    RlIl,
    #[serde(rename = "rl")]
    Rl,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::RlIl => "rl+il",
            Arm::Rl => "rl",
        }
    }

    /// Output subdirectory name.
    pub fn dir(self) -> &'static str {
        match self {
            Arm::RlIl => "rl_il",
            Arm::Rl => "rl",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One training experiment: a design, its demo files, seeds and arms.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub design: String,
    pub demos: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    pub config: TrainConfig,
    /// Config file the overrides came from, hashed into the manifest.
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
    /// Concurrent jobs; 0 uses every available core.
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn new(design: impl Into<String>, out: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            design: design.into(),
            demos: Vec::new(),
            seeds: vec![0, 1, 2],
            arms: vec![Arm::RlIl],
            config: TrainConfig::default(),
            config_path: None,
            out: out.into(),
            jobs: 0,
        }
    }

    pub fn validate(&self) -> Result<DesignGraph> {
        let design = parse_design(&self.design)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds must be distinct, got {:?}", self.seeds)));
        }
        if self.arms.is_empty() || self.arms.iter().collect::<BTreeSet<_>>().len() != self.arms.len() {
            return Err(Error::Config("arms must be non-empty and distinct".into()));
        }
        if self.arms.contains(&Arm::RlIl) && self.demos.is_empty() {
            return Err(Error::Config("the rl+il arm needs demo files (or train with --no-il)".into()));
        }
        self.config.validate()?;
        Ok(design)
    }

    fn uses_demos(&self) -> bool {
        self.arms.contains(&Arm::RlIl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Outcome of one (arm, seed) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: Arm,
    pub seed: u64,
    pub iterations_completed: usize,
    pub lambda: Vec<f64>,
    pub abort: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub design: String,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub inputs: Vec<InputFile>,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub manifest: Manifest,
    pub metrics_path: PathBuf,
    pub manifest_path: PathBuf,
}

impl TrainOutcome {
    pub fn aborted(&self) -> impl Iterator<Item = &RunRecord> {
        self.manifest.runs.iter().filter(|r| r.abort.is_some())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Directory holding the checkpoints of one job.
pub fn run_dir(out: &Path, arm: Arm, seed: u64) -> PathBuf {
    out.join(arm.dir()).join(format!("seed{seed}"))
}

struct Shared {
    rows: Vec<(usize, usize, MetricsRow)>,
    runs: Vec<Option<RunRecord>>,
    error: Option<Error>,
}

/// Runs every (arm, seed) job of `spec`, writing `metrics.csv` as rows
/// arrive, per-iteration checkpoints and `manifest.json`. A phase abort
/// ends only its own job and is recorded in the manifest. The rl arm never
/// opens the demo files. `progress` sees each row as it is produced.
pub fn run_train(spec: &ExperimentSpec, progress: &(dyn Fn(&MetricsRow) + Sync)) -> Result<TrainOutcome> {
    let design = spec.validate()?;
    create_dir(&spec.out)?;
    let metrics_path = spec.out.join("metrics.csv");
    let manifest_path = spec.out.join("manifest.json");
    write_metrics(&metrics_path, &[])?;

    let mut inputs = Vec::new();
    let mut demos = Vec::new();
    if spec.uses_demos() {
        for p in &spec.demos {
            inputs.push(InputFile {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            });
            demos.push(DemoDataset::load(p)?);
        }
    }
    if let Some(p) = &spec.config_path {
        inputs.push(InputFile {
            path: p.display().to_string(),
            sha256: sha256_file(p)?,
        });
    }

    let jobs: Vec<(usize, usize)> = (0..spec.arms.len())
        .flat_map(|a| (0..spec.seeds.len()).map(move |s| (a, s)))
        .collect();
    let shared = Mutex::new(Shared {
        rows: Vec::new(),
        runs: vec![None; jobs.len()],
        error: None,
    });
    let next = AtomicUsize::new(0);
    let workers = match spec.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());

    let worker = || loop {
        let j = next.fetch_add(1, Ordering::SeqCst);
        if j >= jobs.len() {
            break;
        }
        let (ai, si) = jobs[j];
        let (arm, seed) = (spec.arms[ai], spec.seeds[si]);
        let result = run_job(spec, &design, arm, seed, &demos, &metrics_path, &shared, (ai, si), progress);
        let mut sh = shared.lock().unwrap();
        match result {
            Ok(rec) => sh.runs[j] = Some(rec),
            Err(e) => {
                sh.error.get_or_insert(e);
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(worker);
        }
    });

    let sh = shared.into_inner().unwrap();
    if let Some(e) = sh.error {
        return Err(e);
    }
    let rows = sorted_rows(&sh.rows);
    write_metrics(&metrics_path, &rows)?;
    let manifest = Manifest {
        version: VERSION.to_string(),
        design: design.pattern(),
        arms: spec.arms.clone(),
        seeds: spec.seeds.clone(),
        config: spec.config.clone(),
        inputs,
        runs: sh.runs.into_iter().map(Option::unwrap).collect(),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(TrainOutcome {
        rows,
        manifest,
        metrics_path,
        manifest_path,
    })
}

fn sorted_rows(rows: &[(usize, usize, MetricsRow)]) -> Vec<MetricsRow> {
    let mut v: Vec<_> = rows.iter().collect();
    v.sort_by_key(|(a, s, r)| (*a, *s, r.iteration));
    v.into_iter().map(|(_, _, r)| r.clone()).collect()
}

#[allow(clippy::too_many_arguments)]
fn run_job(
    spec: &ExperimentSpec,
    design: &DesignGraph,
    arm: Arm,
    seed: u64,
    demos: &[DemoDataset],
    metrics_path: &Path,
    shared: &Mutex<Shared>,
    key: (usize, usize),
    progress: &(dyn Fn(&MetricsRow) + Sync),
) -> Result<RunRecord> {
    let dir = run_dir(&spec.out, arm, seed);
    create_dir(&dir)?;
    let demos = match arm {
        Arm::RlIl => demos,
        Arm::Rl => &[],
    };
    let mut lambda = Vec::new();
    let mut hook = |m: &IterationMetrics, theta: &PolicyParams, phi: &ModelParams| -> Result<()> {
        let i = m.iteration;
        theta.store.save(&dir.join(format!("theta_iter{i}.ggp")))?;
        phi.store.save(&dir.join(format!("phi_iter{i}.ggp")))?;
        write_json(&dir.join(format!("phi_norm_iter{i}.json")), &phi.norm)?;
        lambda.push(m.lambda);
        let row = MetricsRow::new(arm.label(), seed, m);
        progress(&row);
        let mut sh = shared.lock().unwrap();
        sh.rows.push((key.0, key.1, row));
        write_metrics(metrics_path, &sorted_rows(&sh.rows))
    };
    let result = run_experiment(design, demos, &spec.config, seed, Some(&mut hook));
    let abort = match result {
        Ok(_) => None,
        Err(e @ Error::PhaseAbort { .. }) => Some(e.to_string()),
        Err(e) => return Err(e),
    };
    Ok(RunRecord {
        arm,
        seed,
        iterations_completed: lambda.len(),
        lambda,
        abort,
    })
}

/// Scripted demonstrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoController {
    Tripod,
    Skid,
}

impl FromStr for DemoController {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tripod" => Ok(DemoController::Tripod),
            "skid" => Ok(DemoController::Skid),
            _ => Err(Error::Config(format!("unknown controller `{s}` (expected tripod or skid)"))),
        }
    }
}

impl DemoController {
    pub fn build(self, design: &DesignGraph, cfg: &SimConfig) -> Result<Box<dyn Controller>> {
        Ok(match self {
            DemoController::Tripod => Box::new(TripodGait::new(design, cfg)?),
            DemoController::Skid => Box::new(SkidSteer::new(design, cfg)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemoSummary {
    pub trajectories: usize,
    pub steps: usize,
    /// Mean forward displacement at the end of a trajectory.
    pub mean_final_x: f64,
    pub mean_abs_yaw_start: f64,
    pub mean_abs_yaw_end: f64,
}

impl DemoSummary {
    pub fn yaw_reduction(&self) -> f64 {
        self.mean_abs_yaw_start - self.mean_abs_yaw_end
    }
}

impl fmt::Display for DemoSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} trajectories x {} steps, mean final x {:.3} m, mean |yaw| {:.4} -> {:.4} rad (reduction {:.4})",
            self.trajectories,
            self.steps,
            self.mean_final_x,
            self.mean_abs_yaw_start,
            self.mean_abs_yaw_end,
            self.yaw_reduction()
        )
    }
}

/// Summary statistics of a demo file, replaying each trajectory from the
/// start state drawn by `generate_demo_dataset` with the same seed.
pub fn summarize_demos(d: &DemoDataset, noise: &NoiseModel, cfg: &SimConfig, seed: u64) -> Result<DemoSummary> {
    let design = d.design_graph()?;
    let n = d.trajectories.len();
    if n == 0 {
        return Err(Error::EmptyDataset("demo file has no trajectories"));
    }
    let (mut x, mut y0, mut y1) = (0.0, 0.0, 0.0);
    for (i, t) in d.trajectories.iter().enumerate() {
        let start: WorldState = initial_state(&design, noise, &mut stream(seed, i as u64));
        let mut s = start.clone();
        for a in &t.act {
            s = step(&s, &design, a, cfg)?;
        }
        x += s.x() - start.x();
        y0 += start.yaw().abs();
        y1 += s.yaw().abs();
    }
    let n_f = n as f64;
    Ok(DemoSummary {
        trajectories: n,
        steps: d.trajectories[0].len(),
        mean_final_x: x / n_f,
        mean_abs_yaw_start: y0 / n_f,
        mean_abs_yaw_end: y1 / n_f,
    })
}

/// Demonstrations of `controller` on `design` with their summary.
pub fn gen_demos(
    design: &DesignGraph,
    controller: DemoController,
    n_traj: usize,
    steps: usize,
    noise: &NoiseModel,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(DemoDataset, DemoSummary)> {
    let mut c = controller.build(design, cfg)?;
    let d = generate_demo_dataset(design, c.as_mut(), n_traj, steps, noise, cfg, seed)?;
    let summary = summarize_demos(&d, noise, cfg, seed)?;
    Ok((d, summary))
}

#[derive(Debug, Clone)]
pub struct PlotOutput {
    pub svg: String,
    pub series: Vec<ArmSeries>,
    /// Runs had differing iteration counts and were cut to the shortest.
    pub truncated: bool,
}

/// Reads `metrics.csv` from each path (a run directory or the file itself)
/// and renders the comparison chart.
pub fn plot_runs(paths: &[PathBuf], title: &str) -> Result<PlotOutput> {
    let mut rows = Vec::new();
    for p in paths {
        let file = if p.is_dir() { p.join("metrics.csv") } else { p.clone() };
        rows.extend(read_metrics(&file)?);
    }
    let (series, truncated) = aggregate(&rows)?;
    Ok(PlotOutput {
        svg: render_svg(&series, title),
        series,
        truncated,
    })
}

/// Miniature end-to-end run settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmokeOptions {
    /// Policy updates per iteration (also used for BC pretraining).
    pub updates: usize,
    pub seed: u64,
}

impl Default for SmokeOptions {
    fn default() -> Self {
        SmokeOptions { updates: 200, seed: 0 }
    }
}

pub const SMOKE_DESIGN: &str = "car4w";
pub const SMOKE_DEMOS: usize = 5;

pub fn smoke_config(opts: &SmokeOptions) -> TrainConfig {
    TrainConfig {
        iterations: 2,
        updates: opts.updates,
        bc_updates: opts.updates,
        horizon: 16,
        batch: 16,
        buffer_size: 128,
        validation_every: 50,
        validation_multiplier: 4,
        random_trajectories: 20,
        collect_noiseless: 4,
        collect_noisy: 8,
        model_epochs: 40,
        timing: true,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeCheck {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SmokeReport {
    pub checks: Vec<SmokeCheck>,
    pub timings: Vec<(String, f64)>,
    pub metrics: Vec<IterationMetrics>,
    pub total_s: f64,
}

impl SmokeReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (name, t) in &self.timings {
            s += &format!("phase {name:<12} {t:8.2} s\n");
        }
        s += &format!("total {:.2} s\n", self.total_s);
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            s += &format!("{verdict} {}: {:.6} (needs {:.6})\n", c.name, c.value, c.threshold);
        }
        s
    }
}

struct Zero(usize);

impl Controller for Zero {
    fn reset(&mut self) {}
    fn act(&mut self, _: &WorldState, _: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

/// car4w, one seed, two iterations with skid-steer demos. Checks that the
/// model loss fell, the BC loss fell, and that the iteration-2 policy drives
/// further than both a zero-action policy and the untrained network.
pub fn run_smoke(opts: &SmokeOptions) -> Result<SmokeReport> {
    let start = Instant::now();
    let cfg = smoke_config(opts);
    let design = parse_design(SMOKE_DESIGN)?;
    let t = Instant::now();
    let (demos, _) = gen_demos(
        &design,
        DemoController::Skid,
        SMOKE_DEMOS,
        cfg.trajectory_steps,
        &cfg.noise,
        &cfg.sim,
        opts.seed,
    )?;
    let mut timings = vec![("demos".to_string(), t.elapsed().as_secs_f64())];
    let res = run_experiment(&design, &[demos], &cfg, opts.seed, None)?;
    timings.extend(res.timings.iter().cloned());

    let zero = eval_distance(
        &mut Zero(design.dims().action),
        &design,
        cfg.eval_starts,
        cfg.eval_steps,
        &cfg.noise,
        &cfg.sim,
        derive_seed(opts.seed, EVAL_STREAM),
    )?;
    let untrained = evaluate(&initial_policy(&cfg, opts.seed), &design, &cfg, opts.seed)?;
    let m1 = &res.metrics[0];
    let last = res.metrics.last().unwrap();
    let bc = res.bc.as_ref().map_or((f64::NAN, f64::NAN), |b| (b.final_nll, b.initial_nll));
    let baseline = zero.mean.max(untrained.mean);
    let checks = vec![
        SmokeCheck {
            name: "model held-out loss",
            value: m1.model_loss,
            threshold: m1.model_loss_initial,
            passed: m1.model_loss < m1.model_loss_initial,
        },
        SmokeCheck {
            name: "bc demo nll",
            value: bc.0,
            threshold: bc.1,
            passed: bc.0 < bc.1,
        },
        SmokeCheck {
            name: "iteration 2 distance",
            value: last.dist.mean,
            threshold: baseline,
            passed: last.dist.mean > baseline,
        },
    ];
    Ok(SmokeReport {
        checks,
        timings,
        metrics: res.metrics,
        total_s: start.elapsed().as_secs_f64(),
    })
}
