//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Run a subset by passing criterion numbers:
//! `cargo test -p mbil-core --test acceptance -- 4 5`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mbil::autodiff::{Adam, Corruption};
use mbil::design::{parse_design, DesignGraph, ModuleKind, PortSlot};
use mbil::experiment::{gen_demos, run_smoke, run_train, Arm, DemoController, ExperimentSpec, MetricsRow, SmokeOptions};
use mbil::gradcheck::run_gradcheck;
use mbil::nets::{ModelParams, NetArch, PolicyParams};
use mbil::rng::stream;
use mbil::sim::{
    body, eval_distance, initial_state, nominal_state, step, wheel, DemoDataset, NoiseModel, SimConfig, SkidSteer, WorldState,
};
use mbil::trainer::*;
use rand::Rng as _;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&Path) -> mbil::Result<Verdict>;

const CRITERIA: [(&str, Check); 9] = [
    ("gradient correctness", gradients),
    ("model learning", model_learning),
    ("bc pretraining", bc_pretraining),
    ("car fast convergence", car_convergence),
    ("same-design transfer", same_design_transfer),
    ("cross-design transfer", cross_design_transfer),
    ("algorithm invariants", invariants),
    ("simulator properties", simulator),
    ("determinism and runtime", determinism_and_runtime),
];

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let scratch = std::env::temp_dir().join(format!("mbil-acceptance-{}", std::process::id()));
    let mut failed = 0;
    let mut lines = Vec::new();
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !picked.is_empty() && !picked.contains(&n) {
            continue;
        }
        let dir = scratch.join(format!("c{n}"));
        std::fs::create_dir_all(&dir).expect("scratch dir");
        let t = Instant::now();
        let v = check(&dir).unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let line = format!(
            "criterion {n} {name}: {} ({}; {:.0} s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        failed += usize::from(!v.pass);
        lines.push(line);
    }
    let _ = std::fs::remove_dir_all(&scratch);
    println!("\nacceptance summary");
    for l in &lines {
        println!("  {l}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

/// Desk-scale training configuration used by the convergence criteria.
fn desk_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        updates: 300,
        batch: 16,
        horizon: 16,
        buffer_size: 128,
        validation_every: 50,
        validation_multiplier: 4,
        model_epochs: 60,
        random_trajectories: 30,
        collect_noiseless: 5,
        collect_noisy: 10,
        timing: false,
        ..TrainConfig::default()
    }
}

fn write_demos(dir: &Path, design: &str, controller: DemoController) -> mbil::Result<PathBuf> {
    let d = parse_design(design)?;
    let cfg = TrainConfig::default();
    let (demos, _) = gen_demos(&d, controller, 50, 100, &cfg.noise, &cfg.sim, 0)?;
    let path = dir.join(format!("{design}.json"));
    demos.save(&path)?;
    Ok(path)
}

fn train(dir: &Path, design: &str, demos: Vec<PathBuf>, arms: Vec<Arm>, cfg: TrainConfig) -> mbil::Result<Vec<MetricsRow>> {
    let spec = ExperimentSpec {
        demos,
        arms,
        config: cfg,
        ..ExperimentSpec::new(design, dir.join(format!("{design}_runs")))
    };
    let out = run_train(&spec, &|r| {
        eprintln!(
            "  {design} {:<5} seed {} iter {} dist {:.3}",
            r.arm, r.seed, r.iteration, r.dist_mean
        )
    })?;
    if out.aborted().next().is_some() {
        return Err(mbil::Error::Config(format!("{design}: a run aborted")));
    }
    Ok(out.rows)
}

/// Per-seed mean distances of one arm at one iteration.
fn seed_means(rows: &[MetricsRow], arm: &str, iteration: usize) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.arm == arm && r.iteration == iteration)
        .map(|r| r.dist_mean)
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn spread(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn gradients(_: &Path) -> mbil::Result<Verdict> {
    let t = Instant::now();
    let r = run_gradcheck(100, 0, Corruption::default())?;
    let secs = t.elapsed().as_secs_f64();
    let worst = r.primitives.iter().map(|c| c.worst_rel_err).fold(0.0, f64::max);
    Ok(Verdict::new(
        r.passed() && secs < 120.0,
        format!(
            "{} primitives worst {worst:.2e} <= 1e-4, rollout {:.2e} <= 1e-3, {secs:.1} s < 120 s",
            r.primitives.len(),
            r.rollout.worst_rel_err
        ),
    ))
}

fn model_learning(_: &Path) -> mbil::Result<Verdict> {
    let t = Instant::now();
    let cfg = TrainConfig::default();
    let car = parse_design("car4w")?;
    let data = collect_random_data(&car, &cfg, 1)?;
    let mut phi = ModelParams::init(cfg.arch, 2);
    let r = train_model(&mut phi, &data, &cfg, 3)?;
    let ratio = r.final_loss / r.initial_loss;
    let secs = t.elapsed().as_secs_f64();
    Ok(Verdict::new(
        ratio <= 0.5 && secs < 300.0,
        format!(
            "{} spline trajectories, held-out mse {:.4} -> {:.4} (ratio {ratio:.3} <= 0.5), {secs:.0} s < 300 s",
            cfg.random_trajectories, r.initial_loss, r.final_loss
        ),
    ))
}

/// Config used for behavioral cloning in the acceptance run.
fn bc_config() -> TrainConfig {
    TrainConfig::default()
}

fn bc_pretraining(_: &Path) -> mbil::Result<Verdict> {
    let cfg = bc_config();
    let hex = parse_design("hex6l")?;
    let (mut demos, _) = gen_demos(&hex, DemoController::Tripod, 50, 100, &cfg.noise, &cfg.sim, 0)?;
    let mut held = demos.clone();
    held.trajectories = demos.trajectories.split_off(40);
    let mut theta = initial_policy(&cfg, 7);
    let train = DemoSet::new(&[demos], &theta)?;
    let test = DemoSet::new(&[held], &theta)?;
    let before = demo_fit(&theta, &test, cfg.horizon)?;
    let mut ll = vec![-demo_fit(&theta, &train, cfg.horizon)?.nll];
    pretrain_policy_bc_observed(&mut theta, &train, &cfg, 9, &mut |u, th| {
        if u <= 100 {
            ll.push(-demo_fit(th, &train, cfg.horizon)?.nll);
        }
        Ok(())
    })?;
    let after = demo_fit(&theta, &test, cfg.horizon)?;
    let drop = 1.0 - after.mse / before.mse;
    let dips = ll.windows(2).filter(|w| w[1] <= w[0]).count();
    Ok(Verdict::new(
        drop >= 0.8 && dips == 0,
        format!(
            "held-out action mse {:.3} -> {:.3} (drop {:.0}% >= 80%), log-likelihood {:.2} -> {:.2} over 100 updates with {dips} non-increasing steps",
            before.mse,
            after.mse,
            100.0 * drop,
            ll[0],
            ll[ll.len() - 1]
        ),
    ))
}

fn car_convergence(dir: &Path) -> mbil::Result<Verdict> {
    let cfg = desk_config(2);
    let car = parse_design("car4w")?;
    let mut skid = SkidSteer::new(&car, &cfg.sim)?;
    let d_car = eval_distance(&mut skid, &car, cfg.eval_starts, cfg.eval_steps, &cfg.noise, &cfg.sim, 0)?.mean;
    let rows = train(dir, "car4w", vec![], vec![Arm::Rl], cfg)?;
    let finals = seed_means(&rows, "rl", 2);
    let good = finals.iter().filter(|d| **d >= 0.8 * d_car).count();
    Ok(Verdict::new(
        finals.len() == 3 && good >= 2,
        format!(
            "D_car {d_car:.3}, iteration-2 distances {finals:.3?}, {good}/3 seeds >= {:.3}",
            0.8 * d_car
        ),
    ))
}

fn same_design_transfer(dir: &Path) -> mbil::Result<Verdict> {
    let demos = write_demos(dir, "hex6l", DemoController::Tripod)?;
    let rows = train(dir, "hex6l", vec![demos], vec![Arm::RlIl, Arm::Rl], desk_config(2))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for it in [1, 2] {
        let (il, rl) = (seed_means(&rows, "rl+il", it), seed_means(&rows, "rl", it));
        ok &= il.len() == 3 && rl.len() == 3 && mean(&il) >= mean(&rl);
        parts.push(format!("iter {it} mean rl+il {:.3} vs rl {:.3}", mean(&il), mean(&rl)));
    }
    let (il, rl) = (seed_means(&rows, "rl+il", 2), seed_means(&rows, "rl", 2));
    let (bil, brl) = (spread(&il), spread(&rl));
    ok &= bil < brl;
    parts.push(format!("iter 2 band rl+il {bil:.3} vs rl {brl:.3}"));
    Ok(Verdict::new(ok, parts.join(", ")))
}

fn cross_design_transfer(dir: &Path) -> mbil::Result<Verdict> {
    let demos = vec![
        write_demos(dir, "hex6l", DemoController::Tripod)?,
        write_demos(dir, "car4w", DemoController::Skid)?,
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for design in ["llw", "lnw"] {
        let rows = train(dir, design, demos.clone(), vec![Arm::RlIl, Arm::Rl], desk_config(1))?;
        let (il, rl) = (seed_means(&rows, "rl+il", 1), seed_means(&rows, "rl", 1));
        ok &= il.len() == 3 && rl.len() == 3 && mean(&il) >= mean(&rl);
        parts.push(format!("{design} iter 1 mean rl+il {:.3} vs rl {:.3}", mean(&il), mean(&rl)));
    }
    Ok(Verdict::new(ok, parts.join(", ")))
}

fn tiny() -> TrainConfig {
    TrainConfig {
        horizon: 4,
        updates: 6,
        batch: 4,
        buffer_size: 8,
        buffer_update_rate: 3,
        iterations: 2,
        validation_every: 3,
        validation_multiplier: 2,
        model_epochs: 3,
        random_trajectories: 3,
        trajectory_steps: 12,
        collect_noiseless: 1,
        collect_noisy: 2,
        bc_updates: 4,
        demo_batch: 2,
        eval_starts: 2,
        eval_steps: 10,
        timing: false,
        arch: NetArch {
            hidden: 8,
            message: 4,
            rounds: 2,
            recurrent: 6,
        },
        ..TrainConfig::default()
    }
}

fn small_demos(design: &str, n: usize) -> mbil::Result<DemoDataset> {
    let d = parse_design(design)?;
    let c = if d.has_kind(ModuleKind::Wheel) {
        DemoController::Skid
    } else {
        DemoController::Tripod
    };
    Ok(gen_demos(&d, c, n, 10, &NoiseModel::default(), &SimConfig::default(), 7)?.0)
}

fn ctx<'a>(d: &'a DesignGraph, phi: &'a ModelParams, demos: Option<&'a DemoSet>, cfg: &'a TrainConfig, lambda: f64) -> PhaseContext<'a> {
    PhaseContext {
        design: d,
        phi,
        demos,
        cfg,
        lambda,
        seed: 77,
        iteration: 1,
        fault: None,
    }
}

fn invariants(_: &Path) -> mbil::Result<Verdict> {
    let cfg = tiny();
    let mut failures = Vec::new();
    let d = parse_design("hex6l")?;
    let mut phi = ModelParams::init(cfg.arch, 12);
    train_model(&mut phi, &collect_random_data(&d, &cfg, 11)?, &cfg, 13)?;
    let theta = PolicyParams::init(cfg.arch, 31);
    let buffer = StateBuffer::new(&d, &cfg.arch, &cfg.noise, cfg.buffer_size, &mut stream(32, 0));
    let set = DemoSet::new(&[small_demos("hex6l", 3)?, small_demos("car4w", 2)?], &theta)?;

    let mut worst: f64 = 0.0;
    for lambda in [0.0, 0.3, 1.0] {
        for k in 1..4 {
            let p = phase_loss(&theta, &ctx(&d, &phi, Some(&set), &cfg, lambda), &buffer, k)?;
            worst = worst.max((p.total - lambda * p.il - cfg.entropy_weight * p.entropy - p.rl).abs());
        }
    }
    if worst > 1e-12 {
        failures.push(format!("decomposition residual {worst:.1e}"));
    }

    let run = |demos: Option<&DemoSet>| -> mbil::Result<_> {
        let (mut t, mut b) = (theta.clone(), buffer.clone());
        let mut adam = Adam::new(&t.store, cfg.policy_lr);
        let r = policy_phase(&mut t, &mut adam, &mut b, &ctx(&d, &phi, demos, &cfg, 0.0))?;
        Ok((t.store.to_bytes(), r, b.entries().to_vec()))
    };
    if run(Some(&set))? != run(None)? {
        failures.push("lambda = 0 run depends on demos".into());
    }

    let lambdas: Vec<f64> = (0..5).map(|i| TrainConfig::default().lambda_at(i)).collect();
    if lambdas != [1.0, 0.5, 0.25, 0.125, 0.0625] {
        failures.push(format!("lambda schedule {lambdas:?}"));
    }

    let (mut t, mut b) = (theta.clone(), buffer.clone());
    let mut adam = Adam::new(&t.store, cfg.policy_lr);
    policy_phase(&mut t, &mut adam, &mut b, &ctx(&d, &phi, None, &cfg, 0.0))?;
    let half = b.len() / 2;
    let sim_half = b.entries()[..half].iter().all(|e| e.origin == Origin::Sim && e.hidden.is_zero());
    let model_ok = b
        .entries()
        .iter()
        .filter(|e| e.origin == Origin::Model)
        .all(|e| !e.hidden.is_zero());
    if !sim_half || !model_ok || b.count(Origin::Model) != cfg.batch / 2 {
        failures.push("buffer provenance".into());
    }

    let car = parse_design("car4w")?;
    let fcfg = TrainConfig {
        updates: 200,
        validation_every: 100,
        buffer_update_rate: 50,
        ..tiny()
    };
    let mut cphi = ModelParams::init(fcfg.arch, 12);
    train_model(&mut cphi, &collect_random_data(&car, &fcfg, 11)?, &fcfg, 13)?;
    let mut ct = PolicyParams::init(fcfg.arch, 31);
    let mut cb = StateBuffer::new(&car, &fcfg.arch, &fcfg.noise, fcfg.buffer_size, &mut stream(32, 0));
    let mut adam = Adam::new(&ct.store, fcfg.policy_lr);
    let c = PhaseContext {
        fault: Some(FaultInjection {
            at_update: 150,
            step_size: 1e3,
        }),
        ..ctx(&car, &cphi, None, &fcfg, 0.0)
    };
    let mut snapshot = None;
    let mut revert = None;
    let mut lrs = vec![adam.lr];
    policy_phase_observed(&mut ct, &mut adam, &mut cb, &c, &mut |e, t, a| {
        match e {
            PhaseEvent::Snapshot { .. } => snapshot = Some((t.store.to_bytes(), a.lr)),
            PhaseEvent::Revert { .. } if revert.is_none() => revert = Some((t.store.to_bytes(), a.lr, snapshot.clone())),
            _ => {}
        }
        if a.lr < 1.0 {
            lrs.push(a.lr);
        }
    })?;
    match revert {
        Some((bytes, lr, Some((snap, snap_lr)))) if bytes == snap && lr == 0.5 * snap_lr => {}
        _ => failures.push("fault injection did not revert to the snapshot".into()),
    }
    if !lrs.windows(2).all(|w| w[1] <= w[0]) {
        failures.push("step size increased".into());
    }

    Ok(Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("decomposition residual {worst:.1e}, isolation, schedule, buffer provenance, revert all hold")
        } else {
            failures.join("; ")
        },
    ))
}

fn mirror_state(s: &WorldState, d: &DesignGraph, m: &DesignGraph) -> WorldState {
    let mut out = WorldState::zeros(m);
    for i in 0..10 {
        let flip = matches!(i, body::Y | body::YAW | body::ROLL | body::VY | body::W_ROLL | body::W_YAW);
        *out.body_mut(i) = if flip { -s.body(i) } else { s.body(i) };
    }
    for (slot, kind) in d.modules() {
        let src = s.module(d, slot).to_vec();
        let dst = out.module_mut(m, PortSlot::mirror_index(slot));
        dst.copy_from_slice(&src);
        if kind == ModuleKind::Wheel {
            dst[wheel::STEER] = -dst[wheel::STEER];
            dst[wheel::STEER_RATE] = -dst[wheel::STEER_RATE];
        }
    }
    out
}

fn mirror_action(a: &[f64], d: &DesignGraph, m: &DesignGraph) -> Vec<f64> {
    let (from, to) = (d.action_offsets(), m.action_offsets());
    let mut out = vec![0.0; a.len()];
    for (slot, kind) in d.modules() {
        let n = kind.action_dim();
        let dst = &mut out[to[PortSlot::mirror_index(slot)]..][..n];
        dst.copy_from_slice(&a[from[slot]..from[slot] + n]);
        if kind == ModuleKind::Wheel {
            dst[0] = -dst[0];
        }
    }
    out
}

fn simulator(_: &Path) -> mbil::Result<Verdict> {
    let cfg = SimConfig::default();
    let noise = NoiseModel::default();
    let mut failures = Vec::new();
    let mut rng = stream(2024, 0);

    let mut mirrored = 0;
    while mirrored < 500 {
        let pattern: String = (0..6)
            .map(|i| {
                let c = ['L', 'W', 'N'][rng.random_range(0..3)];
                if i == 3 {
                    format!("|{c}")
                } else {
                    c.to_string()
                }
            })
            .collect();
        let Ok(d) = parse_design(&pattern) else { continue };
        let m = d.mirrored();
        let mut s = initial_state(&d, &noise, &mut rng);
        for _ in 0..5 {
            let a: Vec<f64> = (0..d.dims().action).map(|_| rng.random_range(-6.0..6.0)).collect();
            let next = step(&s, &d, &a, &cfg)?;
            let twin = step(&mirror_state(&s, &d, &m), &m, &mirror_action(&a, &d, &m), &cfg)?;
            if mirror_state(&next, &d, &m).values != twin.values {
                failures.push(format!("{pattern} breaks mirror symmetry"));
                break;
            }
            s = next;
        }
        mirrored += 1;
    }

    let designs: Vec<DesignGraph> = ["hex6l", "car4w", "llw", "lnw", "LWL|WLW"]
        .iter()
        .map(|p| parse_design(p))
        .collect::<Result<_, _>>()?;
    let mut fuzzed = 0;
    'fuzz: for (i, d) in designs.iter().cycle().enumerate() {
        let mut s = initial_state(d, &noise, &mut stream(i as u64, 1));
        for _ in 0..50 {
            let scale = [1.0, 4.0, 50.0][rng.random_range(0..3)];
            let a: Vec<f64> = (0..d.dims().action).map(|_| rng.random_range(-scale..scale)).collect();
            s = step(&s, d, &a, &cfg)?;
            if !s.within_limits(d) {
                failures.push(format!("{} left its joint limits", d.pattern()));
                break 'fuzz;
            }
            fuzzed += 1;
            if fuzzed == 10_000 {
                break 'fuzz;
            }
        }
    }

    let mut yaw = Vec::new();
    for (name, c) in [("hex6l", DemoController::Tripod), ("car4w", DemoController::Skid)] {
        let (_, summary) = gen_demos(&parse_design(name)?, c, 50, 100, &noise, &cfg, 0)?;
        if summary.yaw_reduction() <= 0.0 {
            failures.push(format!("{name} demos do not reduce |yaw|"));
        }
        yaw.push(format!(
            "{name} |yaw| {:.3} -> {:.3}",
            summary.mean_abs_yaw_start, summary.mean_abs_yaw_end
        ));
    }

    let car = parse_design("car4w")?;
    let mut s = nominal_state(&car);
    let a: Vec<f64> = (0..4).flat_map(|_| [0.0, 2.0]).collect();
    for _ in 0..50 {
        s = step(&s, &car, &a, &cfg)?;
    }
    if s.body(body::Y) != 0.0 || s.yaw() != 0.0 || s.x() <= 0.0 {
        failures.push("symmetric drive is not straight".into());
    }

    Ok(Verdict::new(
        failures.is_empty() && fuzzed == 10_000,
        if failures.is_empty() {
            format!(
                "{mirrored} designs mirror exactly, {fuzzed} fuzzed steps in limits, {}, straight drive exact",
                yaw.join(", ")
            )
        } else {
            failures.join("; ")
        },
    ))
}

/// Estimated single-core seconds of one full-scale hexapod run per arm,
/// from timed slices of each phase.
fn full_scale_run_seconds(dir: &Path) -> mbil::Result<(f64, f64)> {
    let cfg = TrainConfig::default();
    let hex = parse_design("hex6l")?;
    let demos = gen_demos(&hex, DemoController::Tripod, 50, 100, &cfg.noise, &cfg.sim, 0)?.0;
    let theta0 = initial_policy(&cfg, 0);
    let set = DemoSet::new(&[demos], &theta0)?;

    let slice = 50;
    let t = Instant::now();
    let mut theta = theta0.clone();
    pretrain_policy_bc(
        &mut theta,
        &set,
        &TrainConfig {
            bc_updates: slice,
            ..cfg.clone()
        },
        0,
    )?;
    let bc = t.elapsed().as_secs_f64() / slice as f64 * cfg.bc_updates as f64;

    let t = Instant::now();
    let mut data = collect_random_data(&hex, &cfg, 0)?;
    let random = t.elapsed().as_secs_f64();

    let t = Instant::now();
    collect_policy_data(&theta, &hex, &cfg, 1, &mut data)?;
    let collect = t.elapsed().as_secs_f64();

    let epochs = 2;
    let t = Instant::now();
    let mut phi = ModelParams::init(cfg.arch, 0);
    train_model(
        &mut phi,
        &data,
        &TrainConfig {
            model_epochs: epochs,
            ..cfg.clone()
        },
        0,
    )?;
    // Cost per epoch per transition; later iterations train on more data.
    let per_epoch_item = t.elapsed().as_secs_f64() / (epochs as f64 * data.len() as f64);

    let t = Instant::now();
    evaluate(&theta, &hex, &cfg, 0)?;
    let eval = t.elapsed().as_secs_f64();

    // One validation window's worth of updates, rl+il and rl.
    let mut phase_cost = [0.0; 2];
    for (k, lambda) in [1.0, 0.0].into_iter().enumerate() {
        let pcfg = TrainConfig {
            updates: cfg.validation_every,
            ..cfg.clone()
        };
        let mut t_theta = theta.clone();
        let mut buffer = StateBuffer::new(&hex, &cfg.arch, &cfg.noise, cfg.buffer_size, &mut stream(1, 0));
        let mut adam = Adam::new(&t_theta.store, cfg.policy_lr);
        let demos = (lambda > 0.0).then_some(&set);
        let t = Instant::now();
        policy_phase(&mut t_theta, &mut adam, &mut buffer, &ctx(&hex, &phi, demos, &pcfg, lambda))?;
        phase_cost[k] = t.elapsed().as_secs_f64() / cfg.validation_every as f64 * cfg.updates as f64;
    }
    let _ = dir;

    let per_iter_data = (cfg.collect_noiseless + cfg.collect_noisy) * cfg.trajectory_steps;
    let base = cfg.random_trajectories * cfg.trajectory_steps;
    let run = |phase: f64| {
        let mut total = random;
        for i in 0..cfg.iterations {
            let n = base + i * per_iter_data;
            total += per_epoch_item * n as f64 * cfg.model_epochs as f64 + phase + collect + eval;
        }
        total
    };
    Ok((bc + run(phase_cost[0]), run(phase_cost[1])))
}

fn determinism_and_runtime(dir: &Path) -> mbil::Result<Verdict> {
    let mut parts = Vec::new();
    let mut ok = true;

    let demos = dir.join("car4w_small.json");
    small_demos("car4w", 4)?.save(&demos)?;
    let mut bytes = Vec::new();
    for (k, jobs) in [1, 2].into_iter().enumerate() {
        let spec = ExperimentSpec {
            demos: vec![demos.clone()],
            arms: vec![Arm::RlIl, Arm::Rl],
            seeds: vec![0, 1],
            config: tiny(),
            jobs,
            ..ExperimentSpec::new("car4w", dir.join(format!("det{k}")))
        };
        let out = run_train(&spec, &|_| {})?;
        bytes.push(std::fs::read(out.metrics_path).map_err(|e| mbil::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?);
    }
    let same = bytes[0] == bytes[1];
    ok &= same;
    parts.push(format!("metrics.csv byte-identical: {same}"));

    let smoke = run_smoke(&SmokeOptions::default())?;
    ok &= smoke.passed() && smoke.total_s < 600.0;
    parts.push(format!(
        "smoke {} in {:.0} s < 600 s",
        if smoke.passed() { "passed" } else { "failed" },
        smoke.total_s
    ));

    let (il, rl) = full_scale_run_seconds(dir)?;
    let serial = 3.0 * (il + rl);
    let cores = 6.0;
    let parallel = il.max(rl);
    ok &= parallel <= 4.0 * 3600.0;
    parts.push(format!(
        "full-scale hexapod estimate: run {:.2} h (rl+il) / {:.2} h (rl), {:.1} h serial, {:.2} h with {cores} jobs <= 4 h",
        il / 3600.0,
        rl / 3600.0,
        serial / 3600.0,
        parallel / 3600.0
    ));
    Ok(Verdict::new(ok, parts.join(", ")))
}
