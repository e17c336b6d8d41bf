//! The cell as a sequential decision problem.
//!
//! One step is one macro-action: the chosen robot command is issued and the
//! world is ticked until it finishes. Every reward produced by events during
//! those ticks is credited to the step, plus one time penalty. The task is
//! continuing; `done` only marks truncation at the rollout horizon.

mod observation;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;
use crate::world::{Command, Event, EventKind, WorldConfig, WorldState};

pub use observation::{
    observation_len, observe, observe_basic, observe_reduced, reduced_len, basic_len,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    Basic,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardTable {
    pub processed_arrival: f64,
    pub time_penalty: f64,
    pub glass_dropped: f64,
    pub glass_broken: f64,
    pub incomplete_arrival: f64,
}

impl Default for RewardTable {
    fn default() -> Self {
        Self {
            processed_arrival: 4.0,
            time_penalty: -0.01,
            glass_dropped: -1.0,
            glass_broken: -1.0,
            incomplete_arrival: -1.0,
        }
    }
}

impl RewardTable {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.processed_arrival > 0.0) {
            return Err(ConfigError::invalid("env.reward.processed_arrival", "must be > 0"));
        }
        for (field, value) in [
            ("env.reward.time_penalty", self.time_penalty),
            ("env.reward.glass_dropped", self.glass_dropped),
            ("env.reward.glass_broken", self.glass_broken),
            ("env.reward.incomplete_arrival", self.incomplete_arrival),
        ] {
            if !(value <= 0.0) {
                return Err(ConfigError::invalid(field, "must be <= 0"));
            }
        }
        Ok(())
    }

    pub fn reward_for(&self, event: &Event) -> f64 {
        match event.kind {
            EventKind::GlassUnloaded { processed: true, .. } => self.processed_arrival,
            EventKind::GlassUnloaded { processed: false, .. } => self.incomplete_arrival,
            EventKind::GlassDropped { .. } => self.glass_dropped,
            EventKind::GlassBroken { .. } => self.glass_broken,
            _ => 0.0,
        }
    }
}

/// Sum of event rewards, without the per-step time penalty.
pub fn reward_for_events(events: &[Event], table: &RewardTable) -> f64 {
    events.iter().map(|e| table.reward_for(e)).sum()
}

/// Environment settings; the world configuration travels alongside in
/// [`EnvConfig::world`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub observation_mode: ObservationMode,
    pub max_glasses_tracked: usize,
    pub rollout_horizon: u64,
    pub reward: RewardTable,
}

impl Default for EnvSettings {
    fn default() -> Self {
        Self {
            observation_mode: ObservationMode::Basic,
            max_glasses_tracked: 8,
            rollout_horizon: 2048,
            reward: RewardTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvConfig {
    pub world: WorldConfig,
    pub env: EnvSettings,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world.validate()?;
        self.env.reward.validate()?;
        if self.env.rollout_horizon < 1 {
            return Err(ConfigError::invalid("env.rollout_horizon", "must be >= 1"));
        }
        let min_slots = self.world.process.num_chambers() + self.world.process.num_arms;
        if self.env.max_glasses_tracked < min_slots {
            return Err(ConfigError::invalid(
                "env.max_glasses_tracked",
                format!("must be >= {min_slots} (chambers + arms)"),
            ));
        }
        Ok(())
    }

    pub fn num_chambers(&self) -> usize {
        self.world.process.num_chambers()
    }

    pub fn num_arms(&self) -> usize {
        self.world.process.num_arms
    }

    pub fn action_count(&self) -> usize {
        self.num_chambers() + 2 * self.num_arms() + 1
    }

    pub fn observation_len(&self) -> usize {
        observation_len(self)
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action {action} out of range (action count {count})")]
    InvalidAction { action: usize, count: usize },
    #[error("invalid layout: {0}")]
    InvalidCounts(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// `C + 2A + 1` actions ordered `[RotateTo(0..C), ArmLoad(0..A), ArmUnload(0..A), Wait]`.
pub fn action_count(num_chambers: usize, num_arms: usize) -> Result<usize, EnvError> {
    if num_chambers < 1 {
        return Err(EnvError::InvalidCounts("at least one chamber is required".into()));
    }
    if num_arms != 1 && num_arms != 2 {
        return Err(EnvError::InvalidCounts(format!("{num_arms} arms (expected 1 or 2)")));
    }
    Ok(num_chambers + 2 * num_arms + 1)
}

pub fn action_to_command(
    action: usize,
    num_chambers: usize,
    num_arms: usize,
) -> Result<Command, EnvError> {
    let count = action_count(num_chambers, num_arms)?;
    let (c, a) = (num_chambers, num_arms);
    Ok(match action {
        x if x < c => Command::RotateTo(x),
        x if x < c + a => Command::ArmLoad(x - c),
        x if x < c + 2 * a => Command::ArmUnload(x - c - a),
        x if x == c + 2 * a => Command::Wait,
        _ => return Err(EnvError::InvalidAction { action, count }),
    })
}

pub fn command_to_action(command: Command, num_chambers: usize, num_arms: usize) -> usize {
    match command {
        Command::RotateTo(c) => c,
        Command::ArmLoad(a) => num_chambers + a,
        Command::ArmUnload(a) => num_chambers + num_arms + a,
        Command::Wait => num_chambers + 2 * num_arms,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub ticks_elapsed: u64,
    pub events: Vec<Event>,
    /// Horizon truncation, never a terminal state.
    pub done: bool,
    /// The action was illegal in this state and ran as a one-tick no-op.
    pub illegal: bool,
}

/// One row of the per-step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub action: String,
    pub reward: f64,
    pub ticks: u64,
    pub cumulative_unloaded: u64,
    pub cumulative_failed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FabEnv {
    config: EnvConfig,
    world: WorldState,
    episode_steps: u64,
    total_steps: u64,
    record_trace: bool,
    trace: Vec<TraceRow>,
}

impl FabEnv {
    /// Builds the environment and its first world. Event logging in the world
    /// is off unless [`FabEnv::set_record_events`] turns it on.
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        action_count(config.num_chambers(), config.num_arms())?;
        let mut world = WorldState::build(config.world.clone(), seed)?;
        world.record_events = false;
        Ok(Self {
            config,
            world,
            episode_steps: 0,
            total_steps: 0,
            record_trace: false,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn action_count(&self) -> usize {
        self.config.action_count()
    }

    pub fn observation_len(&self) -> usize {
        self.config.observation_len()
    }

    pub fn episode_steps(&self) -> u64 {
        self.episode_steps
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn set_record_events(&mut self, on: bool) {
        self.world.record_events = on;
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Replaces the world with a fresh one and returns its observation.
    /// Trace and step totals are kept.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let record = self.world.record_events;
        self.world = WorldState::build(self.config.world.clone(), seed)
            .expect("configuration validated at construction");
        self.world.record_events = record;
        self.episode_steps = 0;
        self.observe()
    }

    pub fn observe(&self) -> Vec<f64> {
        observe(&self.world, &self.config)
    }

    /// Whether `command` would be rejected as illegal in the current state.
    pub fn is_illegal(&self, command: Command) -> bool {
        let world = &self.world;
        match command {
            Command::ArmLoad(arm) => {
                world.robot.arms[arm].held_glass.is_some()
                    || match world.facing_chamber() {
                        None => true,
                        Some(c) => world.chambers[c].occupant.is_none(),
                    }
            }
            Command::ArmUnload(arm) => {
                world.robot.arms[arm].held_glass.is_none() || world.facing_chamber().is_none()
            }
            Command::RotateTo(_) | Command::Wait => false,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let command =
            action_to_command(action, self.config.num_chambers(), self.config.num_arms())?;
        let illegal = self.is_illegal(command);
        let start = self.world.tick;
        let events = if illegal {
            self.world.tick()
        } else {
            self.world
                .execute(command)
                .expect("legal command on an idle robot is accepted")
        };
        let ticks_elapsed = self.world.tick - start;
        let table = &self.config.env.reward;
        let reward = reward_for_events(&events, table) + table.time_penalty;
        self.episode_steps += 1;
        self.total_steps += 1;
        if self.record_trace {
            let counters = self.world.counters;
            self.trace.push(TraceRow {
                step: self.total_steps - 1,
                action: command.to_string(),
                reward,
                ticks: ticks_elapsed,
                cumulative_unloaded: counters.unloaded_processed,
                cumulative_failed: counters.failures(),
            });
        }
        Ok(StepResult {
            observation: self.observe(),
            reward,
            ticks_elapsed,
            events,
            done: self.episode_steps >= self.config.env.rollout_horizon,
            illegal,
        })
    }
}

pub const TRACE_CSV_HEADER: [&str; 6] =
    ["step", "action", "reward", "ticks", "cumulative_unloaded", "cumulative_failed"];

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(TRACE_CSV_HEADER)?;
    for row in rows {
        out.write_record([
            row.step.to_string(),
            row.action.clone(),
            row.reward.to_string(),
            row.ticks.to_string(),
            row.cumulative_unloaded.to_string(),
            row.cumulative_failed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
