use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mbil::autodiff::{Corruption, PRIMITIVE_OPS};
use mbil::design::parse_design;
use mbil::experiment::{gen_demos, plot_runs, run_smoke, run_train, Arm, DemoController, ExperimentSpec, MetricsRow, SmokeOptions};
use mbil::gradcheck::run_gradcheck;
use mbil::trainer::TrainConfig;

/// Modular robot policies trained with model-based RL and cross-design imitation.
#[derive(Parser)]
#[command(name = "mbil", version = mbil::experiment::VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted demonstrations to a JSON file.
    GenDemos(GenDemosArgs),
    /// Train one design over several seeds and write metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Plot mean distance per iteration with a min/max band for each arm.
    Plot(PlotArgs),
    /// Check every backward rule and a policy-through-model rollout against finite differences.
    Gradcheck(GradcheckArgs),
    /// Miniature end-to-end run on the car.
    Smoke(SmokeArgs),
}

#[derive(Args)]
struct GenDemosArgs {
    /// Design alias (hex6l, car4w, llw, lnw) or slot pattern such as `LLL|LLL`.
    #[arg(long)]
    design: String,
    /// tripod or skid.
    #[arg(long)]
    controller: DemoController,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trajectories: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    design: String,
    /// Demo files, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    demos: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Overrides the configured iteration count.
    #[arg(long)]
    iters: Option<usize>,
    /// Train without the imitation term; demo files are never opened.
    #[arg(long, conflicts_with = "compare")]
    no_il: bool,
    /// Run both the rl+il and the rl arm.
    #[arg(long)]
    compare: bool,
    /// JSON file with TrainConfig fields; missing fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent jobs (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directories or metrics.csv files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "distance per iteration")]
    title: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale one op's backward rule to confirm the check catches it.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct SmokeArgs {
    /// Policy and BC updates per iteration.
    #[arg(long, default_value_t = 200)]
    updates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenDemos(a) => gen_demos_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Smoke(a) => smoke_cmd(a),
    }
}

fn gen_demos_cmd(a: GenDemosArgs) -> Result<ExitCode> {
    let design = parse_design(&a.design)?;
    let cfg = TrainConfig::default();
    let (demos, summary) = gen_demos(&design, a.controller, a.trajectories, a.steps, &cfg.noise, &cfg.sim, a.seed)?;
    demos.save(&a.out)?;
    println!("{}: {summary}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(n) = a.iters {
        config.iterations = n;
    }
    let arms = match (a.compare, a.no_il) {
        (true, _) => vec![Arm::RlIl, Arm::Rl],
        (false, true) => vec![Arm::Rl],
        (false, false) => vec![Arm::RlIl],
    };
    let spec = ExperimentSpec {
        demos: a.demos,
        seeds: a.seeds,
        arms,
        config,
        config_path: a.config,
        jobs: a.jobs,
        ..ExperimentSpec::new(a.design, a.out)
    };
    let progress = |r: &MetricsRow| {
        println!(
            "{:<6} seed {:<3} iter {:<2} dist {:.3} [{:.3}, {:.3}] loss_rl {:.4} loss_il {:.4} lambda {:.4} lr {:.2e}",
            r.arm, r.seed, r.iteration, r.dist_mean, r.dist_min, r.dist_max, r.loss_rl, r.loss_il, r.lambda, r.step_size
        );
    };
    let outcome = run_train(&spec, &progress)?;
    println!("wrote {} rows to {}", outcome.rows.len(), outcome.metrics_path.display());
    println!("manifest {}", outcome.manifest_path.display());
    let mut aborted = false;
    for r in outcome.aborted() {
        aborted = true;
        eprintln!("{} seed {} aborted: {}", r.arm, r.seed, r.abort.as_deref().unwrap_or_default());
    }
    Ok(if aborted { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn plot_cmd(a: PlotArgs) -> Result<ExitCode> {
    let plot = plot_runs(&a.runs, &a.title)?;
    if plot.truncated {
        eprintln!("warning: runs have different iteration counts; plotting the shortest");
    }
    std::fs::write(&a.out, &plot.svg).with_context(|| format!("writing {}", a.out.display()))?;
    for s in &plot.series {
        let means: Vec<String> = s.mean.iter().map(|m| format!("{m:.3}")).collect();
        println!("{:<6} {}", s.arm, means.join(" "));
    }
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<ExitCode> {
    let corruption = match a.corrupt.as_deref() {
        None => Corruption::default(),
        Some(name) => match PRIMITIVE_OPS.iter().find(|op| **op == name) {
            Some(op) => Corruption { op: Some(op) },
            None => bail!("unknown op `{name}`"),
        },
    };
    let report = run_gradcheck(a.cases, a.seed, corruption)?;
    print!("{}", report.render());
    if report.passed() {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck failed: {}", report.failures().join(", "));
        Ok(ExitCode::FAILURE)
    }
}

fn smoke_cmd(a: SmokeArgs) -> Result<ExitCode> {
    let report = run_smoke(&SmokeOptions {
        updates: a.updates,
        seed: a.seed,
    })?;
    print!("{}", report.render());
    if report.passed() {
        println!("smoke passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("smoke failed");
        Ok(ExitCode::FAILURE)
    }
}
