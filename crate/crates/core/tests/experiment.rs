use std::path::{Path, PathBuf};

use mbil::design::parse_design;
use mbil::experiment::*;
use mbil::nets::NetArch;
use mbil::sim::{NoiseModel, SimConfig};
use mbil::trainer::TrainConfig;
use mbil::Error;

fn tiny() -> TrainConfig {
    TrainConfig {
        horizon: 4,
        updates: 4,
        batch: 4,
        buffer_size: 8,
        buffer_update_rate: 2,
        iterations: 2,
        validation_every: 2,
        validation_multiplier: 2,
        model_epochs: 2,
        random_trajectories: 2,
        trajectory_steps: 10,
        collect_noiseless: 1,
        collect_noisy: 1,
        bc_updates: 3,
        demo_batch: 2,
        eval_starts: 2,
        eval_steps: 8,
        timing: false,
        arch: NetArch {
            hidden: 8,
            message: 4,
            rounds: 1,
            recurrent: 4,
        },
        ..TrainConfig::default()
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mbil-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_demos(dir: &Path, design: &str, controller: DemoController) -> PathBuf {
    let d = parse_design(design).unwrap();
    let (demos, _) = gen_demos(&d, controller, 3, 12, &NoiseModel::default(), &SimConfig::default(), 0).unwrap();
    let path = dir.join(format!("{design}.json"));
    demos.save(&path).unwrap();
    path
}

fn quiet(_: &MetricsRow) {}

fn row(arm: &str, seed: u64, iteration: usize, dist: f64) -> MetricsRow {
    MetricsRow {
        arm: arm.into(),
        seed,
        iteration,
        dist_mean: dist,
        dist_min: dist - 0.1,
        dist_max: dist + 0.1,
        loss_rl: 0.0,
        loss_il: 0.0,
        val_reward: 0.0,
        lambda: 0.0,
        step_size: 3e-4,
        wall_s: 0.0,
    }
}

#[test]
fn metrics_csv_has_exact_header_and_round_trips() {
    let rows = vec![row("rl+il", 0, 1, 0.5), row("rl", 2, 1, 1.0 / 3.0)];
    let text = metrics_to_csv(&rows).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "arm,seed,iteration,dist_mean,dist_min,dist_max,loss_rl,loss_il,val_reward,lambda,step_size,wall_s"
    );
    assert_eq!(metrics_to_csv(&[]).unwrap().trim_end(), METRICS_HEADER);
    let dir = scratch("csv");
    let p = dir.join("metrics.csv");
    write_metrics(&p, &rows).unwrap();
    assert_eq!(read_metrics(&p).unwrap(), rows);
    std::fs::write(&p, "a,b\n1,2\n").unwrap();
    assert!(read_metrics(&p).is_err());
}

#[test]
fn plot_structure_and_determinism() {
    let mut rows = Vec::new();
    for (arm, base) in [("rl+il", 1.0), ("rl", 0.5)] {
        for seed in 0..3 {
            for it in 1..=5 {
                rows.push(row(arm, seed, it, base + 0.1 * it as f64 + 0.01 * seed as f64));
            }
        }
    }
    let (series, truncated) = aggregate(&rows).unwrap();
    assert!(!truncated);
    assert_eq!(series.len(), 2);
    let svg = render_svg(&series, "hex6l");
    assert_eq!(svg.matches(r#"class="mean""#).count(), 2);
    assert_eq!(svg.matches(r#"class="band""#).count(), 2);
    assert!(svg.contains("RL+IL") && svg.contains(">RL<"));
    assert_eq!(svg, render_svg(&aggregate(&rows).unwrap().0, "hex6l"));
    let il = series.iter().find(|s| s.arm == "rl+il").unwrap();
    assert!((il.mean[0] - 1.11).abs() < 1e-12);
    assert!((il.min[0] - 1.1).abs() < 1e-12 && (il.max[0] - 1.12).abs() < 1e-12);
}

#[test]
fn single_seed_band_collapses() {
    let rows: Vec<_> = (1..=3).map(|i| row("rl", 0, i, i as f64)).collect();
    let (series, _) = aggregate(&rows).unwrap();
    assert_eq!(series[0].mean, series[0].min);
    assert_eq!(series[0].mean, series[0].max);
}

#[test]
fn mismatched_lengths_plot_to_shortest() {
    let mut rows: Vec<_> = (1..=5).map(|i| row("rl", 0, i, 1.0)).collect();
    rows.extend((1..=3).map(|i| row("rl+il", 0, i, 2.0)));
    let (series, truncated) = aggregate(&rows).unwrap();
    assert!(truncated);
    assert!(series.iter().all(|s| s.mean.len() == 3));
}

#[test]
fn empty_metrics_refuse_to_plot() {
    assert!(matches!(aggregate(&[]), Err(Error::EmptyDataset(_))));
    let dir = scratch("empty-plot");
    write_metrics(&dir.join("metrics.csv"), &[]).unwrap();
    assert!(plot_runs(&[dir], "x").is_err());
}

#[test]
fn spec_validation() {
    let base = ExperimentSpec {
        config: tiny(),
        arms: vec![Arm::Rl],
        ..ExperimentSpec::new("car4w", scratch("spec"))
    };
    base.validate().unwrap();
    for bad in [
        ExperimentSpec {
            seeds: vec![],
            ..base.clone()
        },
        ExperimentSpec {
            seeds: vec![1, 1],
            ..base.clone()
        },
        ExperimentSpec {
            arms: vec![Arm::RlIl],
            ..base.clone()
        },
        ExperimentSpec {
            design: "XXX|LLL".into(),
            ..base.clone()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn train_writes_rows_checkpoints_and_manifest() {
    let dir = scratch("train");
    let demo = write_demos(&dir, "hex6l", DemoController::Tripod);
    let spec = ExperimentSpec {
        demos: vec![demo.clone()],
        seeds: vec![0, 4],
        arms: vec![Arm::RlIl, Arm::Rl],
        config: tiny(),
        ..ExperimentSpec::new("llw", dir.join("out"))
    };
    let out = run_train(&spec, &quiet).unwrap();
    assert_eq!(out.rows.len(), 2 * 2 * 2);
    assert_eq!(read_metrics(&out.metrics_path).unwrap(), out.rows);
    let keys: Vec<_> = out.rows.iter().map(|r| (r.arm.as_str(), r.seed, r.iteration)).collect();
    assert_eq!(keys[..4], [("rl+il", 0, 1), ("rl+il", 0, 2), ("rl+il", 4, 1), ("rl+il", 4, 2)]);
    for arm in [Arm::RlIl, Arm::Rl] {
        for seed in [0, 4] {
            let d = run_dir(&spec.out, arm, seed);
            for i in 1..=2 {
                assert!(d.join(format!("theta_iter{i}.ggp")).is_file());
                assert!(d.join(format!("phi_iter{i}.ggp")).is_file());
                assert!(d.join(format!("phi_norm_iter{i}.json")).is_file());
            }
        }
    }
    let theta = mbil::autodiff::ParamStore::load(&run_dir(&spec.out, Arm::Rl, 4).join("theta_iter2.ggp")).unwrap();
    assert!(theta.count() > 0);
    let m = Manifest::load(&out.manifest_path).unwrap();
    assert_eq!(m, out.manifest);
    assert_eq!(m.version, VERSION);
    assert_eq!(m.design, "LLW|LLW");
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.inputs[0].sha256, sha256_file(&demo).unwrap());
    assert_eq!(m.inputs[0].sha256.len(), 64);
    let il = m.runs.iter().find(|r| r.arm == Arm::RlIl).unwrap();
    assert_eq!(il.lambda, vec![1.0, 0.5]);
    let rl = m.runs.iter().find(|r| r.arm == Arm::Rl).unwrap();
    assert_eq!(rl.lambda, vec![0.0, 0.0]);
    assert!(m.runs.iter().all(|r| r.abort.is_none() && r.iterations_completed == 2));
}

#[test]
fn identical_specs_give_identical_metrics_bytes() {
    let dir = scratch("determinism");
    let demo = write_demos(&dir, "car4w", DemoController::Skid);
    let run = |out: &str, jobs: usize| {
        let spec = ExperimentSpec {
            demos: vec![demo.clone()],
            seeds: vec![3, 1],
            arms: vec![Arm::RlIl, Arm::Rl],
            config: tiny(),
            jobs,
            ..ExperimentSpec::new("car4w", dir.join(out))
        };
        run_train(&spec, &quiet).unwrap();
        std::fs::read(dir.join(out).join("metrics.csv")).unwrap()
    };
    let a = run("a", 1);
    let b = run("b", 3);
    assert_eq!(a, b);
}

#[test]
fn rl_arm_never_opens_demo_files() {
    let dir = scratch("no-demos");
    let missing = dir.join("does-not-exist.json");
    let spec = ExperimentSpec {
        demos: vec![missing.clone()],
        seeds: vec![2],
        arms: vec![Arm::Rl],
        config: tiny(),
        ..ExperimentSpec::new("car4w", dir.join("rl"))
    };
    let with_path = run_train(&spec, &quiet).unwrap();
    assert!(with_path.manifest.inputs.is_empty());
    let without = run_train(
        &ExperimentSpec {
            demos: vec![],
            out: dir.join("rl2"),
            ..spec.clone()
        },
        &quiet,
    )
    .unwrap();
    assert_eq!(with_path.rows, without.rows);

    let il = ExperimentSpec {
        arms: vec![Arm::RlIl],
        out: dir.join("il"),
        ..spec
    };
    assert!(matches!(run_train(&il, &quiet), Err(Error::Io { .. })));
}

#[test]
fn phase_abort_is_recorded_with_partial_results() {
    let dir = scratch("abort");
    let demo = write_demos(&dir, "car4w", DemoController::Skid);
    let mut cfg = tiny();
    cfg.bc_lr = 1e300;
    cfg.bc_updates = 5;
    let spec = ExperimentSpec {
        demos: vec![demo],
        seeds: vec![0],
        arms: vec![Arm::RlIl, Arm::Rl],
        config: cfg,
        ..ExperimentSpec::new("car4w", dir.join("out"))
    };
    let out = run_train(&spec, &quiet).unwrap();
    let rl = out.manifest.runs.iter().find(|r| r.arm == Arm::Rl).unwrap();
    assert!(rl.abort.is_none());
    assert_eq!(out.rows.iter().filter(|r| r.arm == "rl").count(), 2);
    let il = out.manifest.runs.iter().find(|r| r.arm == Arm::RlIl).unwrap();
    let reason = il.abort.as_ref().expect("diverged bc must abort");
    assert!(reason.contains("`bc` aborted"), "{reason}");
    assert_eq!(out.rows.iter().filter(|r| r.arm == "rl+il").count(), il.iterations_completed);
}

#[test]
fn demo_generation_guard_summary_and_hash() {
    let car = parse_design("car4w").unwrap();
    let cfg = SimConfig::default();
    let noise = NoiseModel::default();
    assert!(matches!(
        gen_demos(&car, DemoController::Tripod, 2, 5, &noise, &cfg, 0),
        Err(Error::ControllerMismatch { .. })
    ));
    let hex = parse_design("hex6l").unwrap();
    let (d, s) = gen_demos(&hex, DemoController::Tripod, 50, 100, &noise, &cfg, 0).unwrap();
    assert_eq!((s.trajectories, s.steps), (50, 100));
    assert!(s.mean_final_x > 0.0 && s.yaw_reduction() > 0.0);
    let dir = scratch("demos");
    d.save(&dir.join("a.json")).unwrap();
    gen_demos(&hex, DemoController::Tripod, 50, 100, &noise, &cfg, 0)
        .unwrap()
        .0
        .save(&dir.join("b.json"))
        .unwrap();
    assert_eq!(sha256_file(&dir.join("a.json")).unwrap(), sha256_file(&dir.join("b.json")).unwrap());
    assert!("wheelie".parse::<DemoController>().is_err());
}

#[test]
fn smoke_without_updates_fails_distance_check() {
    let r = run_smoke(&SmokeOptions { updates: 0, seed: 0 }).unwrap();
    assert!(!r.passed());
    let dist = r.checks.iter().find(|c| c.name.contains("distance")).unwrap();
    assert!(!dist.passed);
    assert!(r.render().contains("phase policy_1"));
}
