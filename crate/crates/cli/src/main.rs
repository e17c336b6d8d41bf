use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use glassflow::baseline::baseline_action;
use glassflow::config::RunConfig;
use glassflow::env::{write_trace_csv, FabEnv};
use glassflow::harness::{
    create_run_dir, evaluate, run_split_test, train_in_dir, unix_now, EvalSettings, Policy,
    RunManifest, TrainOptions,
};
use glassflow::ppo::load_checkpoint;
use glassflow::tact::{build_timetable, write_timetable_csv, write_timetable_svg};
use glassflow::world::{read_events_csv, write_events_csv};

#[derive(Parser)]
#[command(name = "glassflow", version, about = "Transfer-robot flow control: simulate, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a PPO policy into a new run directory, or resume one.
    Train(TrainArgs),
    /// Evaluate a checkpoint, the baseline dispatcher or a uniform random policy.
    Evaluate(EvaluateArgs),
    /// Run the baseline dispatcher and write its trace and event log.
    BaselineRun(BaselineArgs),
    /// Sweep one parameter over a list of values.
    SplitTest(SplitArgs),
    /// Build a timetable CSV and SVG from an event log.
    Gantt(GanttArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value, e.g. `--set ppo.gamma=0.5` or `--set transfer_speed=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = parse_overrides(&self.overrides)?;
        Ok(RunConfig::load_with_overrides(self.config.as_deref(), &overrides)?)
    }

    fn is_given(&self) -> bool {
        self.config.is_some() || !self.overrides.is_empty()
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Parent directory for the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Continue the run in this directory from its state sidecar.
    #[arg(long, conflicts_with_all = ["config", "overrides"])]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    checkpoint_every: u64,
    /// Stop after this many iterations in total.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, required_unless_present_any = ["baseline", "uniform"])]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["checkpoint", "uniform"])]
    baseline: bool,
    #[arg(long, conflicts_with = "checkpoint")]
    uniform: bool,
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    #[arg(long, default_value_t = 2048)]
    horizon: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the metrics as JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Macro-steps to run.
    #[arg(long, default_value_t = 5000)]
    steps: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Parameter key, dotted or bare.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// First seed; replicates use consecutive seeds.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    #[arg(long, default_value_t = 2048)]
    horizon: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct GanttArgs {
    /// Event log CSV.
    #[arg(long)]
    events: PathBuf,
    /// Output directory for timetable.csv and timetable.svg.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    tick_s: f64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Train(args) => train(args),
        Cmd::Evaluate(args) => evaluate_cmd(args),
        Cmd::BaselineRun(args) => baseline_run(args),
        Cmd::SplitTest(args) => split_test(args),
        Cmd::Gantt(args) => gantt(args),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let options = TrainOptions { checkpoint_every: args.checkpoint_every, stop_after: args.stop_after };
    let report = |m: &glassflow::ppo::IterationMetrics| {
        eprintln!(
            "iter {:>5}  steps {:>9}  reward/step {:>8.4}  ok {:>4}  drop {:>3}  break {:>3}  incomplete {:>3}  window {}:{}",
            m.iteration,
            m.env_steps,
            m.mean_reward,
            m.success_count,
            m.drop_count,
            m.break_count,
            m.incomplete_count,
            m.trailing_successes,
            m.trailing_failures
        );
    };
    let (dir, trainer) = match args.resume {
        Some(dir) => {
            let trainer = train_in_dir(&dir, None, options, report)?;
            if trainer.seed != args.seed {
                bail!("seed: run was started with {}, got {}", trainer.seed, args.seed);
            }
            (dir, trainer)
        }
        None => {
            let config = args.config.load()?;
            let dir = create_run_dir(&args.out, args.seed)?;
            let trainer = train_in_dir(&dir, Some((config, args.seed)), options, report)?;
            (dir, trainer)
        }
    };
    println!("{}", dir.display());
    if let Some((s, f)) = trainer.best_window {
        eprintln!("best trailing window {s}:{f}");
    }
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let (config, policy) = if let Some(path) = &args.checkpoint {
        let ckpt = load_checkpoint(path).with_context(|| format!("checkpoint {}", path.display()))?;
        let config = if args.config.is_given() { args.config.load()? } else { ckpt.config };
        (config, Policy::Greedy(ckpt.params))
    } else if args.uniform {
        (args.config.load()?, Policy::Uniform(args.seed))
    } else {
        (args.config.load()?, Policy::Baseline)
    };
    let metrics = evaluate(&policy, &config.env_config(), args.episodes, args.horizon, args.seed)?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "metrics": metrics,
        "failures": metrics.failures(),
        "success_ratio": ratio_text(metrics.success_ratio()),
    }))?;
    println!("{text}");
    if let Some(out) = args.out {
        fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn ratio_text(r: f64) -> String {
    if r.is_infinite() { "inf".into() } else { format!("{r:.3}") }
}

fn baseline_run(args: BaselineArgs) -> Result<()> {
    let config = args.config.load()?;
    let started = unix_now();
    let dir = create_run_dir(&args.out, args.seed)?;
    let mut env = FabEnv::new(config.env_config(), args.seed)?;
    env.set_record_events(true);
    env.set_record_trace(true);
    for _ in 0..args.steps {
        env.step(baseline_action(&env))?;
    }
    write_trace_csv(env.trace(), fs::File::create(dir.join("trace.csv"))?)?;
    write_events_csv(&env.world().event_log, fs::File::create(dir.join("events.csv"))?)?;
    fs::write(dir.join("config.toml"), config.to_toml_string())?;
    let mut manifest = RunManifest::new("baseline-run", &config, vec![args.seed], started);
    manifest.finish(&dir)?;
    let c = env.world().counters;
    eprintln!(
        "processed {}  incomplete {}  dropped {}  broken {}",
        c.unloaded_processed,
        c.incomplete(),
        c.dropped,
        c.broken
    );
    println!("{}", dir.display());
    Ok(())
}

fn split_test(args: SplitArgs) -> Result<()> {
    let config = args.config.load()?;
    let started = unix_now();
    let seeds: Vec<u64> = (0..args.replicates.max(1)).map(|i| args.seed + i).collect();
    let eval = EvalSettings { episodes: args.episodes, horizon: args.horizon };
    let report = run_split_test(&config, &args.param, &args.values, &seeds, eval)?;
    let dir = create_run_dir(&args.out, args.seed)?;
    report.write_csv(fs::File::create(dir.join("split_test.csv"))?)?;
    fs::write(dir.join("config.toml"), config.to_toml_string())?;
    let mut manifest = RunManifest::new("split-test", &config, seeds, started);
    manifest.finish(&dir)?;
    report.write_csv(std::io::stdout())?;
    eprintln!("{}", dir.display());
    Ok(())
}

fn gantt(args: GanttArgs) -> Result<()> {
    let events = read_events_csv(open(&args.events)?)?;
    let timetable = build_timetable(&events)?;
    fs::create_dir_all(&args.out)?;
    write_timetable_csv(&timetable, args.tick_s, fs::File::create(args.out.join("timetable.csv"))?)?;
    write_timetable_svg(&timetable, args.tick_s, fs::File::create(args.out.join("timetable.svg"))?)?;
    println!("{}", args.out.display());
    Ok(())
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("reading {}", path.display()))
}
