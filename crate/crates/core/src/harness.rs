//! Batch experiments: evaluation, split tests, training run directories and
//! their manifests.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::baseline_action;
use crate::config::{resolve_key, RunConfig};
use crate::env::{EnvConfig, EnvError, FabEnv, TraceRow};
use crate::error::ConfigError;
use crate::ppo::{
    greedy_action, policy_forward, save_checkpoint, write_metrics_csv, CheckpointError,
    IterationMetrics, PolicyParams, PpoError, TrainError, Trainer,
};
use crate::world::{Event, EventCsvError, EventKind};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{field}: checkpoint has {found}, configuration expects {expected}")]
    Dimension { field: &'static str, expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Events(#[from] EventCsvError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Who chooses the actions.
#[derive(Debug, Clone)]
pub enum Policy {
    Baseline,
    /// Argmax of the actor's distribution.
    Greedy(PolicyParams),
    /// Uniformly random actions from a seeded stream.
    Uniform(u64),
}

impl Policy {
    /// Checks a network against the environment it will act in.
    pub fn check_dims(&self, config: &EnvConfig) -> Result<(), HarnessError> {
        if let Policy::Greedy(params) = self {
            if params.obs_len() != config.observation_len() {
                return Err(HarnessError::Dimension {
                    field: "observation length",
                    expected: config.observation_len(),
                    found: params.obs_len(),
                });
            }
            if params.action_count() != config.action_count() {
                return Err(HarnessError::Dimension {
                    field: "action count",
                    expected: config.action_count(),
                    found: params.action_count(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub steps: u64,
    pub ticks: u64,
    pub successes: u64,
    pub drops: u64,
    pub breaks: u64,
    pub incompletes: u64,
    pub total_reward: f64,
    pub mean_reward_per_step: f64,
    /// Mean spawn-to-unload time of processed glasses, seconds.
    pub mean_tact_s: Option<f64>,
}

impl EvalMetrics {
    pub fn failures(&self) -> u64 {
        self.drops + self.breaks + self.incompletes
    }

    /// Successes per failure; infinite when nothing failed.
    pub fn success_ratio(&self) -> f64 {
        success_ratio(self.successes, self.failures())
    }

    /// Processed glasses per simulated hour.
    pub fn throughput_per_hour(&self, tick_duration_s: f64) -> f64 {
        if self.ticks == 0 {
            return 0.0;
        }
        self.successes as f64 * 3600.0 / (self.ticks as f64 * tick_duration_s)
    }
}

pub fn success_ratio(successes: u64, failures: u64) -> f64 {
    if failures == 0 {
        if successes == 0 { 0.0 } else { f64::INFINITY }
    } else {
        successes as f64 / failures as f64
    }
}

/// One evaluated episode with its full record.
#[derive(Debug, Clone)]
pub struct Episode {
    pub metrics: EvalMetrics,
    pub events: Vec<Event>,
    pub trace: Vec<TraceRow>,
}

/// Runs `policy` in a fresh environment for at most `horizon` macro-steps,
/// stopping early once `glass_limit` glasses have left the cell.
pub fn run_episode(
    policy: &Policy,
    config: &EnvConfig,
    seed: u64,
    horizon: u64,
    glass_limit: Option<u64>,
) -> Result<Episode, HarnessError> {
    policy.check_dims(config)?;
    let mut env = FabEnv::new(config.clone(), seed)?;
    env.set_record_events(true);
    env.set_record_trace(true);
    let mut rng = match policy {
        Policy::Uniform(s) => ChaCha8Rng::seed_from_u64(*s ^ seed),
        _ => ChaCha8Rng::seed_from_u64(seed),
    };
    let mut obs = env.observe();
    let mut metrics = EvalMetrics { episodes: 1, ..Default::default() };
    for _ in 0..horizon {
        let action = match policy {
            Policy::Baseline => baseline_action(&env),
            Policy::Greedy(params) => greedy_action(&policy_forward(params, &obs)?.0),
            Policy::Uniform(_) => rng.gen_range(0..env.action_count()),
        };
        let result = env.step(action)?;
        metrics.steps += 1;
        metrics.total_reward += result.reward;
        obs = result.observation;
        let counters = env.world().counters;
        if glass_limit.is_some_and(|limit| counters.unloaded + counters.dropped + counters.broken >= limit) {
            break;
        }
    }
    let world = env.world();
    let counters = world.counters;
    metrics.ticks = world.tick;
    metrics.successes = counters.unloaded_processed;
    metrics.drops = counters.dropped;
    metrics.breaks = counters.broken;
    metrics.incompletes = counters.incomplete();
    metrics.mean_reward_per_step = metrics.total_reward / metrics.steps.max(1) as f64;
    let tick_s = config.world.process.tick_duration_s;
    let mut spawned = HashMap::new();
    let mut tacts = Vec::new();
    for event in &world.event_log {
        match event.kind {
            EventKind::GlassSpawned { glass, .. } => {
                spawned.insert(glass, event.tick);
            }
            EventKind::GlassUnloaded { glass, processed: true, .. } => {
                tacts.push((event.tick - spawned[&glass]) as f64 * tick_s);
            }
            _ => {}
        }
    }
    if !tacts.is_empty() {
        metrics.mean_tact_s = Some(tacts.iter().sum::<f64>() / tacts.len() as f64);
    }
    Ok(Episode { metrics, events: world.event_log.clone(), trace: env.trace().to_vec() })
}

/// `episodes` episodes of `horizon` macro-steps each, seeded from `seed`.
pub fn evaluate(
    policy: &Policy,
    config: &EnvConfig,
    episodes: usize,
    horizon: u64,
    seed: u64,
) -> Result<EvalMetrics, HarnessError> {
    policy.check_dims(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = EvalMetrics::default();
    let mut tact_sum = 0.0;
    let mut tact_weight = 0u64;
    for _ in 0..episodes {
        let m = run_episode(policy, config, rng.gen(), horizon, None)?.metrics;
        total.episodes += 1;
        total.steps += m.steps;
        total.ticks += m.ticks;
        total.successes += m.successes;
        total.drops += m.drops;
        total.breaks += m.breaks;
        total.incompletes += m.incompletes;
        total.total_reward += m.total_reward;
        if let Some(t) = m.mean_tact_s {
            tact_sum += t * m.successes as f64;
            tact_weight += m.successes;
        }
    }
    total.mean_reward_per_step = total.total_reward / total.steps.max(1) as f64;
    if tact_weight > 0 {
        total.mean_tact_s = Some(tact_sum / tact_weight as f64);
    }
    Ok(total)
}

/// Evaluation protocol shared by split tests and training reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub episodes: usize,
    pub horizon: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { episodes: 3, horizon: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub value: String,
    pub seed: u64,
    pub metrics: EvalMetrics,
    pub throughput_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTestReport {
    pub parameter: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    /// Whether each cell trained a policy (PPO parameters) or ran the baseline.
    pub trained: bool,
    pub rows: Vec<SplitRow>,
}

pub const SPLIT_CSV_HEADER: [&str; 12] = [
    "parameter",
    "value",
    "seed",
    "successes",
    "drops",
    "breaks",
    "incompletes",
    "throughput_per_hour",
    "mean_reward_per_step",
    "total_reward",
    "steps",
    "mean_tact_s",
];

impl SplitTestReport {
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(SPLIT_CSV_HEADER)?;
        for row in &self.rows {
            let m = &row.metrics;
            out.write_record([
                self.parameter.clone(),
                row.value.clone(),
                row.seed.to_string(),
                m.successes.to_string(),
                m.drops.to_string(),
                m.breaks.to_string(),
                m.incompletes.to_string(),
                row.throughput_per_hour.to_string(),
                m.mean_reward_per_step.to_string(),
                m.total_reward.to_string(),
                m.steps.to_string(),
                m.mean_tact_s.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rows for one value, in seed order.
    pub fn rows_for<'a>(&'a self, value: &'a str) -> impl Iterator<Item = &'a SplitRow> {
        self.rows.iter().filter(move |r| r.value == value)
    }

    pub fn mean_total_reward(&self, value: &str) -> f64 {
        let rows: Vec<_> = self.rows_for(value).collect();
        rows.iter().map(|r| r.metrics.total_reward).sum::<f64>() / rows.len().max(1) as f64
    }
}

/// Sweeps `parameter` over `values`, one cell per (value, seed). PPO keys
/// train a policy per cell and evaluate it greedily; all other keys run the
/// baseline dispatcher. Cells run on scoped threads.
pub fn run_split_test(
    base: &RunConfig,
    parameter: &str,
    values: &[String],
    seeds: &[u64],
    eval: EvalSettings,
) -> Result<SplitTestReport, HarnessError> {
    let key = resolve_key(parameter)?;
    let trained = key.starts_with("ppo.");
    let mut cells = Vec::new();
    for value in values {
        let config = base.with_override(&key, value)?;
        for &seed in seeds {
            cells.push((value.clone(), seed, config.clone()));
        }
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut rows = Vec::with_capacity(cells.len());
    for chunk in cells.chunks(workers) {
        let results: Vec<Result<SplitRow, HarnessError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(value, seed, config)| {
                    scope.spawn(move || run_cell(value, *seed, config, trained, eval))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("split-test cell panicked")).collect()
        });
        for r in results {
            rows.push(r?);
        }
    }
    Ok(SplitTestReport {
        parameter: key,
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        trained,
        rows,
    })
}

fn run_cell(
    value: &str,
    seed: u64,
    config: &RunConfig,
    trained: bool,
    eval: EvalSettings,
) -> Result<SplitRow, HarnessError> {
    let policy = if trained {
        let mut trainer = Trainer::new(config.clone(), seed)?;
        trainer.run(|_, _| {})?;
        Policy::Greedy(trainer.params)
    } else {
        Policy::Baseline
    };
    let metrics = evaluate(&policy, &config.env_config(), eval.episodes, eval.horizon, seed)?;
    let throughput_per_hour = metrics.throughput_per_hour(config.process.tick_duration_s);
    Ok(SplitRow { value: value.to_string(), seed, metrics, throughput_per_hour })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    /// Entropy coefficient as listed with the hyperparameters, and the one
    /// applied in the loss.
    pub beta_listed: f64,
    pub beta_applied: f64,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, seeds: Vec<u64>, started_unix_s: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            started_unix_s,
            finished_unix_s: started_unix_s,
            beta_listed: config.ppo.beta,
            beta_applied: config.ppo.beta_eff,
            config: config.clone(),
            artifacts: Vec::new(),
        }
    }

    /// Digests every file under `dir` except the manifest and writes it.
    pub fn finish(&mut self, dir: &Path) -> Result<(), HarnessError> {
        self.finished_unix_s = unix_now();
        self.artifacts.clear();
        for path in list_files(dir)? {
            let rel = path.strip_prefix(dir).expect("listed under dir");
            let rel = rel.to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let bytes = fs::read(&path)?;
            self.artifacts.push(Artifact {
                path: rel,
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>, io::Error> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Checks every listed artifact against its digest and that no file in the
/// directory is unlisted.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest, HarnessError> {
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    for artifact in &manifest.artifacts {
        let bytes = fs::read(dir.join(&artifact.path))
            .map_err(|_| HarnessError::Manifest(format!("{} is missing", artifact.path)))?;
        if sha256_hex(&bytes) != artifact.sha256 {
            return Err(HarnessError::Manifest(format!("{} does not match its digest", artifact.path)));
        }
    }
    let listed = manifest.artifacts.len();
    let present = list_files(dir)?.len() - 1;
    if listed != present {
        return Err(HarnessError::Manifest(format!(
            "{present} files present but {listed} listed"
        )));
    }
    Ok(manifest)
}

/// Creates `<root>/<unix time>-seed<seed>`, adding a suffix if it exists.
pub fn create_run_dir(root: &Path, seed: u64) -> Result<PathBuf, io::Error> {
    fs::create_dir_all(root)?;
    let base = format!("{}-seed{seed}", unix_now());
    let mut dir = root.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{n}"));
        n += 1;
    }
    fs::create_dir(&dir)?;
    Ok(dir)
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const STATE_FILE: &str = "trainer_state.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.gfpc";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    /// Checkpoint and state sidecar every this many iterations; 0 for the end
    /// of the run only.
    pub checkpoint_every: u64,
    /// Stop after this many iterations in total, leaving the run resumable.
    pub stop_after: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { checkpoint_every: 10, stop_after: None }
    }
}

/// Trains in `dir`. A fresh run needs an empty directory; a directory holding
/// a state sidecar is resumed from it, discarding metrics rows written after
/// the sidecar.
pub fn train_in_dir(
    dir: &Path,
    fresh: Option<(RunConfig, u64)>,
    options: TrainOptions,
    mut progress: impl FnMut(&IterationMetrics),
) -> Result<Trainer, HarnessError> {
    let started = unix_now();
    let (mut trainer, mut rows) = match fresh {
        Some((config, seed)) => {
            let trainer = Trainer::new(config, seed)?;
            fs::create_dir_all(dir)?;
            fs::write(dir.join(CONFIG_FILE), trainer.config.to_toml_string())?;
            (trainer, Vec::new())
        }
        None => {
            let trainer = Trainer::from_json(&fs::read_to_string(dir.join(STATE_FILE))?)?;
            let rows = read_metrics(&dir.join(METRICS_FILE))?
                .into_iter()
                .take(trainer.iteration as usize)
                .collect();
            (trainer, rows)
        }
    };
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir)?;
    let save = |trainer: &Trainer, rows: &[IterationMetrics]| -> Result<(), HarnessError> {
        let mut csv = Vec::new();
        write_metrics_csv(rows, true, &mut csv)?;
        fs::write(dir.join(METRICS_FILE), csv)?;
        fs::write(dir.join(STATE_FILE), trainer.to_json()?)?;
        let name = format!("iter{:06}.gfpc", trainer.iteration);
        save_checkpoint(&trainer.checkpoint(), &ckpt_dir.join(name))?;
        Ok(())
    };
    while !trainer.is_done() && options.stop_after.map_or(true, |n| trainer.iteration < n) {
        let row = trainer.iterate()?;
        progress(&row);
        rows.push(row);
        if options.checkpoint_every > 0 && trainer.iteration % options.checkpoint_every == 0 {
            save(&trainer, &rows)?;
        }
    }
    save(&trainer, &rows)?;
    if trainer.is_done() {
        save_checkpoint(&trainer.checkpoint(), &dir.join(FINAL_CHECKPOINT))?;
    }
    let mut manifest = RunManifest::new("train", &trainer.config, vec![trainer.seed], started);
    manifest.finish(dir)?;
    Ok(trainer)
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let field = |i: usize| r.get(i).unwrap_or_default();
        let bad = |i: usize| HarnessError::Manifest(format!("bad metrics value `{}`", field(i)));
        macro_rules! num {
            ($i:expr) => {
                field($i).parse().map_err(|_| bad($i))?
            };
        }
        rows.push(IterationMetrics {
            iteration: num!(0),
            env_steps: num!(1),
            mean_reward: num!(2),
            success_count: num!(3),
            drop_count: num!(4),
            break_count: num!(5),
            loss: num!(6),
            entropy: num!(7),
            incomplete_count: num!(8),
            trailing_successes: num!(9),
            trailing_failures: num!(10),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_counts_every_failure_kind() {
        let m = EvalMetrics { successes: 40, drops: 0, breaks: 1, incompletes: 0, ..Default::default() };
        assert_eq!(m.success_ratio(), 40.0);
        let n = EvalMetrics { successes: 40, drops: 1, breaks: 1, incompletes: 2, ..Default::default() };
        assert_eq!(n.success_ratio(), 10.0);
        assert_eq!(success_ratio(3, 0), f64::INFINITY);
        assert_eq!(success_ratio(0, 0), 0.0);
    }

    #[test]
    fn baseline_episode_has_no_failures() {
        let config = EnvConfig::default();
        let ep = run_episode(&Policy::Baseline, &config, 3, 3000, None).unwrap();
        assert!(ep.metrics.successes > 10);
        assert_eq!(ep.metrics.failures(), 0);
        assert!(ep.metrics.mean_tact_s.is_some());
        assert_eq!(ep.trace.len() as u64, ep.metrics.steps);
    }

    #[test]
    fn wrong_network_shape_names_the_dimension() {
        let config = EnvConfig::default();
        let params = PolicyParams::zeros(3, config.action_count(), 4);
        let err = evaluate(&Policy::Greedy(params), &config, 1, 10, 0).unwrap_err();
        assert!(err.to_string().contains("observation length"), "{err}");
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let mut manifest = RunManifest::new("test", &RunConfig::default(), vec![1], 0);
        manifest.finish(dir.path()).unwrap();
        verify_manifest(dir.path()).unwrap();
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }
}
