//! Tick-based model of a cluster-type FAB unit process: a loader, `K` process
//! chambers and an unloader arranged on a circle around a rotary transfer
//! robot with one or two stacked arms.
//!
//! One call to [`WorldState::tick`] advances the cell by one tick in a fixed
//! order: loader input, process timers, robot motion, failure rules, unloader
//! consumption. Robot commands are interlocked: at most one runs at a time.

mod event;
mod params;

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;

pub use event::{read_events_csv, write_events_csv, Event, EventCsvError, EventKind, EVENT_CSV_HEADER};
pub use params::{
    max_safe_rotation_per_tick, max_safe_rotation_speed, seconds_to_ticks, ChamberPlacement,
    GeometryParams, PhysicalParams, ProcessParams, WorldConfig,
};

pub type GlassId = u64;
pub type ChamberId = usize;
pub type ArmId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GlassState {
    Raw,
    Processing,
    Processed,
    Dropped,
    Broken,
    Unloaded,
}

impl GlassState {
    pub fn is_terminal(self) -> bool {
        matches!(self, GlassState::Dropped | GlassState::Broken | GlassState::Unloaded)
    }

    /// Position along Raw -> Processing -> Processed -> terminal.
    pub fn rank(self) -> u8 {
        match self {
            GlassState::Raw => 0,
            GlassState::Processing => 1,
            GlassState::Processed => 2,
            GlassState::Dropped | GlassState::Broken | GlassState::Unloaded => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlassLocation {
    InChamber(ChamberId),
    OnArm(ArmId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glass {
    pub id: GlassId,
    pub state: GlassState,
    /// Last known location; kept for terminal glass.
    pub location: GlassLocation,
    pub process_ticks_remaining: u32,
    placed_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChamberKind {
    Loader,
    Process,
    Unloader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chamber {
    pub id: ChamberId,
    pub kind: ChamberKind,
    pub angle: f64,
    pub occupant: Option<GlassId>,
    pub spawn_cooldown: u32,
    pub unload_count: u64,
    /// Tick of the last occupancy or glass-state change (signal age origin).
    pub changed_tick: u64,
}

/// Sensor reading of a chamber's slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChamberGlassState {
    Empty,
    Raw,
    Processing,
    Processed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub id: ArmId,
    pub extension: f64,
    pub height: f64,
    pub held_glass: Option<GlassId>,
    pub guide_pin_engaged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    RotateTo(ChamberId),
    ArmLoad(ArmId),
    ArmUnload(ArmId),
    Wait,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::RotateTo(c) => write!(f, "RotateTo({c})"),
            Command::ArmLoad(a) => write!(f, "ArmLoad({a})"),
            Command::ArmUnload(a) => write!(f, "ArmUnload({a})"),
            Command::Wait => f.write_str("Wait"),
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "Wait" {
            return Ok(Command::Wait);
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("bad command `{s}`"))?;
        let arg: usize = rest
            .strip_suffix(')')
            .and_then(|a| a.parse().ok())
            .ok_or_else(|| format!("bad command argument in `{s}`"))?;
        match name {
            "RotateTo" => Ok(Command::RotateTo(arg)),
            "ArmLoad" => Ok(Command::ArmLoad(arg)),
            "ArmUnload" => Ok(Command::ArmUnload(arg)),
            _ => Err(format!("unknown command `{name}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Motion {
    Rotate { from: f64, delta: f64, rate: f64 },
    Arm { arm: ArmId, chamber: ChamberId, unload: bool, high: bool },
    Wait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandInProgress {
    pub command: Command,
    pub started_tick: u64,
    pub elapsed_ticks: u32,
    pub total_ticks: u32,
    motion: Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub theta: f64,
    pub arms: Vec<Arm>,
    pub active_command: Option<CommandInProgress>,
    /// Angular speed (rad/tick) during the last processed tick.
    pub angular_speed: f64,
    /// Set when an arm reached full extension at carrying height this tick.
    sweep: Option<(ArmId, ChamberId)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub spawned: u64,
    pub unloaded: u64,
    pub unloaded_processed: u64,
    pub dropped: u64,
    pub broken: u64,
}

impl Counters {
    pub fn incomplete(&self) -> u64 {
        self.unloaded - self.unloaded_processed
    }

    pub fn failures(&self) -> u64 {
        self.dropped + self.broken + self.incomplete()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("robot is busy executing {0}")]
    Busy(Command),
    #[error("invalid target in {0}")]
    InvalidTarget(Command),
    #[error("robot is not aligned with a chamber")]
    NotAligned,
    #[error("invalid chamber id {0}")]
    InvalidChamber(ChamberId),
}

/// Complete simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub config: WorldConfig,
    pub tick: u64,
    pub chambers: Vec<Chamber>,
    pub robot: Robot,
    pub glasses: BTreeMap<GlassId, Glass>,
    pub counters: Counters,
    pub event_log: Vec<Event>,
    /// When false, `tick` still returns events but does not retain them.
    pub record_events: bool,
    next_glass_id: GlassId,
    rng: ChaCha8Rng,
    rotation_rate: f64,
    omega_max: f64,
}

impl WorldState {
    /// Builds an empty cell: chambers equally spaced on a circle in the order
    /// loader, process 1..K, unloader; robot facing the loader.
    pub fn build(config: WorldConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let n = config.process.num_chambers();
        let chambers = (0..n)
            .map(|id| Chamber {
                id,
                kind: if id == 0 {
                    ChamberKind::Loader
                } else if id == n - 1 {
                    ChamberKind::Unloader
                } else {
                    ChamberKind::Process
                },
                angle: TAU * id as f64 / n as f64,
                occupant: None,
                spawn_cooldown: 0,
                unload_count: 0,
                changed_tick: 0,
            })
            .collect();
        let arms = (0..config.process.num_arms)
            .map(|id| Arm {
                id,
                extension: 0.0,
                height: 0.0,
                held_glass: None,
                guide_pin_engaged: false,
            })
            .collect();
        let rotation_rate = config.rotation_rate_per_tick();
        let omega_max = config.omega_max_per_tick();
        Ok(Self {
            config,
            tick: 0,
            chambers,
            robot: Robot {
                theta: 0.0,
                arms,
                active_command: None,
                angular_speed: 0.0,
                sweep: None,
            },
            glasses: BTreeMap::new(),
            counters: Counters::default(),
            event_log: Vec::new(),
            record_events: true,
            next_glass_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            rotation_rate,
            omega_max,
        })
    }

    pub fn num_chambers(&self) -> usize {
        self.chambers.len()
    }

    pub fn num_arms(&self) -> usize {
        self.robot.arms.len()
    }

    pub fn loader(&self) -> ChamberId {
        0
    }

    pub fn unloader(&self) -> ChamberId {
        self.chambers.len() - 1
    }

    /// Rotation rate (rad/tick) at the configured transfer speed.
    pub fn rotation_rate(&self) -> f64 {
        self.rotation_rate
    }

    /// Retention limit (rad/tick) for carried glass.
    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn handling_ticks(&self) -> u32 {
        self.config.geometry.handling_ticks()
    }

    /// Chambers that run the process step: the process chambers, or the
    /// loader itself when the layout has none.
    pub fn is_process_station(&self, chamber: ChamberId) -> bool {
        match self.chambers[chamber].kind {
            ChamberKind::Process => true,
            ChamberKind::Loader => self.config.process.num_process_chambers == 0,
            ChamberKind::Unloader => false,
        }
    }

    fn station_ticks(&self, chamber: ChamberId) -> u32 {
        match self.chambers[chamber].kind {
            ChamberKind::Process => self.config.process.process_ticks(),
            _ => self.config.physical.process_time_ticks,
        }
    }

    /// Minimum angular gap between neighbouring chambers.
    pub fn chamber_gap(&self) -> f64 {
        TAU / self.chambers.len() as f64
    }

    /// Chamber the robot faces, if within a quarter of the chamber gap
    /// (a facing window half a gap wide).
    pub fn facing_chamber(&self) -> Option<ChamberId> {
        let tolerance = self.chamber_gap() / 4.0;
        self.chambers
            .iter()
            .map(|c| (c.id, angular_distance(self.robot.theta, c.angle)))
            .filter(|&(_, d)| d <= tolerance + 1e-12)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id)
    }

    pub fn glass(&self, id: GlassId) -> Option<&Glass> {
        self.glasses.get(&id)
    }

    pub fn chamber_glass_state(&self, chamber: ChamberId) -> Result<ChamberGlassState, WorldError> {
        let slot = self.chambers.get(chamber).ok_or(WorldError::InvalidChamber(chamber))?;
        Ok(match slot.occupant {
            None => ChamberGlassState::Empty,
            Some(id) => match self.glasses[&id].state {
                GlassState::Raw => ChamberGlassState::Raw,
                GlassState::Processing => ChamberGlassState::Processing,
                GlassState::Processed => ChamberGlassState::Processed,
                _ => ChamberGlassState::Empty,
            },
        })
    }

    pub fn is_busy(&self) -> bool {
        self.robot.active_command.is_some()
    }

    /// Glass currently in chambers or on arms.
    pub fn live_glass_count(&self) -> u64 {
        let in_chambers = self.chambers.iter().filter(|c| c.occupant.is_some()).count();
        let on_arms = self.robot.arms.iter().filter(|a| a.held_glass.is_some()).count();
        (in_chambers + on_arms) as u64
    }

    /// spawned = in chambers + on arms + unloaded + dropped + broken
    pub fn conservation_holds(&self) -> bool {
        let c = &self.counters;
        c.spawned == self.live_glass_count() + c.unloaded + c.dropped + c.broken
    }

    fn emit(&mut self, events: &mut Vec<Event>, kind: EventKind) {
        events.push(Event::new(self.tick, kind));
    }

    /// Installs `cmd` as the active command. A rejected command leaves the
    /// world untouched.
    pub fn issue_command(&mut self, cmd: Command) -> Result<Event, WorldError> {
        if let Some(active) = &self.robot.active_command {
            return Err(WorldError::Busy(active.command));
        }
        let geometry = &self.config.geometry;
        let (motion, total_ticks) = match cmd {
            Command::RotateTo(target) => {
                let angle = self
                    .chambers
                    .get(target)
                    .ok_or(WorldError::InvalidTarget(cmd))?
                    .angle;
                let delta = shortest_delta(self.robot.theta, angle);
                let ticks = if delta.abs() < 1e-12 {
                    1
                } else {
                    ((delta.abs() / self.rotation_rate).ceil() as u32).max(1)
                };
                (Motion::Rotate { from: self.robot.theta, delta, rate: self.rotation_rate }, ticks)
            }
            Command::ArmLoad(arm) | Command::ArmUnload(arm) => {
                let holding = self
                    .robot
                    .arms
                    .get(arm)
                    .ok_or(WorldError::InvalidTarget(cmd))?
                    .held_glass
                    .is_some();
                let chamber = self.facing_chamber().ok_or(WorldError::NotAligned)?;
                let unload = matches!(cmd, Command::ArmUnload(_));
                (
                    Motion::Arm { arm, chamber, unload, high: unload || holding },
                    geometry.handling_ticks(),
                )
            }
            Command::Wait => (Motion::Wait, 1),
        };
        self.robot.active_command = Some(CommandInProgress {
            command: cmd,
            started_tick: self.tick,
            elapsed_ticks: 0,
            total_ticks,
            motion,
        });
        let event = Event::new(self.tick, EventKind::CommandStarted { command: cmd });
        if self.record_events {
            self.event_log.push(event);
        }
        Ok(event)
    }

    /// Issues `cmd` and ticks until it finishes; returns every event emitted,
    /// starting with `CommandStarted`.
    pub fn execute(&mut self, cmd: Command) -> Result<Vec<Event>, WorldError> {
        let mut events = vec![self.issue_command(cmd)?];
        while self.is_busy() {
            events.extend(self.tick());
        }
        Ok(events)
    }

    /// Advances the world by one tick and returns the events it produced.
    pub fn tick(&mut self) -> Vec<Event> {
        let mut events = Vec::new();
        self.loader_step(&mut events);
        self.process_step(&mut events);
        self.motion_step(&mut events);
        let failures = self.apply_failure_rules();
        events.extend(failures);
        self.unloader_step(&mut events);
        if self.record_events {
            self.event_log.extend_from_slice(&events);
        }
        self.tick += 1;
        events
    }

    fn arm_inside(&self, chamber: ChamberId) -> bool {
        matches!(
            self.robot.active_command.as_ref().map(|c| c.motion),
            Some(Motion::Arm { chamber: c, .. }) if c == chamber
        )
    }

    fn loader_step(&mut self, events: &mut Vec<Event>) {
        let loader = self.loader();
        if self.chambers[loader].spawn_cooldown > 0 {
            self.chambers[loader].spawn_cooldown -= 1;
        }
        if self.chambers[loader].occupant.is_some()
            || self.chambers[loader].spawn_cooldown > 0
            || self.arm_inside(loader)
        {
            return;
        }
        let id = self.next_glass_id;
        self.next_glass_id += 1;
        self.counters.spawned += 1;
        let mut glass = Glass {
            id,
            state: GlassState::Raw,
            location: GlassLocation::InChamber(loader),
            process_ticks_remaining: 0,
            placed_tick: self.tick,
        };
        self.emit(events, EventKind::GlassSpawned { glass: id, chamber: loader });
        if self.is_process_station(loader) {
            glass.state = GlassState::Processing;
            glass.process_ticks_remaining = self.station_ticks(loader);
            self.emit(events, EventKind::ProcessStarted { glass: id, chamber: loader });
        }
        self.glasses.insert(id, glass);

        let jitter = self.config.process.jitter_ticks();
        let base = self.config.process.interval_ticks() as i64;
        let offset = if jitter > 0 {
            self.rng.gen_range(-(jitter as i64)..=jitter as i64)
        } else {
            0
        };
        let chamber = &mut self.chambers[loader];
        chamber.occupant = Some(id);
        chamber.changed_tick = self.tick;
        chamber.spawn_cooldown = (base + offset).max(1) as u32;
    }

    fn process_step(&mut self, events: &mut Vec<Event>) {
        for idx in 0..self.chambers.len() {
            let Some(id) = self.chambers[idx].occupant else { continue };
            if !self.is_process_station(idx) {
                continue;
            }
            let now = self.tick;
            let glass = self.glasses.get_mut(&id).expect("occupant exists");
            if glass.state != GlassState::Processing || glass.placed_tick == now {
                continue;
            }
            glass.process_ticks_remaining -= 1;
            if glass.process_ticks_remaining == 0 {
                glass.state = GlassState::Processed;
                self.chambers[idx].changed_tick = now;
                self.emit(events, EventKind::ProcessCompleted { glass: id, chamber: idx });
            }
        }
    }

    fn motion_step(&mut self, events: &mut Vec<Event>) {
        self.robot.sweep = None;
        self.robot.angular_speed = 0.0;
        let Some(mut active) = self.robot.active_command.take() else { return };
        active.elapsed_ticks += 1;
        let k = active.elapsed_ticks;
        let done = k >= active.total_ticks;
        let geometry = self.config.geometry.clone();
        match active.motion {
            Motion::Rotate { from, delta, rate } => {
                if delta != 0.0 {
                    self.robot.angular_speed = rate;
                    self.robot.theta = if done {
                        wrap_angle(from + delta)
                    } else {
                        wrap_angle(from + delta.signum() * rate * k as f64)
                    };
                }
            }
            Motion::Arm { arm, chamber, unload, high } => {
                let (e, l) = (geometry.extend_ticks, geometry.lift_ticks);
                let r = geometry.retract_ticks;
                let stroke = geometry.arm_stroke;
                let lift = geometry.lift_height;
                let state = &mut self.robot.arms[arm];
                if k <= e {
                    state.extension = stroke * k as f64 / e as f64;
                    state.height = if high { lift } else { 0.0 };
                    if k == e && high {
                        self.robot.sweep = Some((arm, chamber));
                    }
                } else if k <= e + l {
                    let frac = (k - e) as f64 / l as f64;
                    state.height = match (unload, high) {
                        (true, _) => lift * (1.0 - frac),
                        (false, true) => lift,
                        (false, false) => lift * frac,
                    };
                } else {
                    let frac = (k - e - l) as f64 / r as f64;
                    state.extension = stroke * (1.0 - frac).max(0.0);
                }
                if done {
                    self.robot.arms[arm].extension = 0.0;
                    if unload {
                        self.place(arm, chamber, events);
                    } else {
                        self.pick(arm, chamber, events);
                    }
                }
            }
            Motion::Wait => {}
        }
        if done {
            self.emit(events, EventKind::CommandFinished { command: active.command });
        } else {
            self.robot.active_command = Some(active);
        }
    }

    fn pick(&mut self, arm: ArmId, chamber: ChamberId, events: &mut Vec<Event>) {
        if self.robot.arms[arm].held_glass.is_some() {
            return;
        }
        let Some(id) = self.chambers[chamber].occupant.take() else { return };
        self.chambers[chamber].changed_tick = self.tick;
        let held = &mut self.robot.arms[arm];
        held.held_glass = Some(id);
        held.guide_pin_engaged = true;
        self.glasses.get_mut(&id).expect("occupant exists").location = GlassLocation::OnArm(arm);
        self.emit(events, EventKind::GlassPicked { glass: id, chamber, arm });
    }

    fn place(&mut self, arm: ArmId, chamber: ChamberId, events: &mut Vec<Event>) {
        self.robot.arms[arm].height = 0.0;
        if self.chambers[chamber].occupant.is_some() {
            return;
        }
        let Some(id) = self.robot.arms[arm].held_glass.take() else { return };
        self.robot.arms[arm].guide_pin_engaged = false;
        let now = self.tick;
        let station = self.is_process_station(chamber);
        let station_ticks = self.station_ticks(chamber);
        let slot = &mut self.chambers[chamber];
        slot.occupant = Some(id);
        slot.changed_tick = now;
        let glass = self.glasses.get_mut(&id).expect("held glass exists");
        glass.location = GlassLocation::InChamber(chamber);
        glass.placed_tick = now;
        let mut started = false;
        if station {
            match glass.state {
                GlassState::Raw => {
                    glass.state = GlassState::Processing;
                    glass.process_ticks_remaining = station_ticks;
                    started = true;
                }
                // resume an interrupted process
                GlassState::Processing => started = true,
                _ => {}
            }
        }
        self.emit(events, EventKind::GlassPlaced { glass: id, chamber, arm });
        if started {
            self.emit(events, EventKind::ProcessStarted { glass: id, chamber });
        }
    }

    /// Drop rule: carried glass slides off when the current rotation speed
    /// exceeds the retention limit. Break rule: an arm reaching full extension
    /// at carrying height into an occupied slot destroys the slot's glass and
    /// whatever the arm carries.
    pub fn apply_failure_rules(&mut self) -> Vec<Event> {
        let mut events = Vec::new();
        if self.robot.angular_speed > self.omega_max {
            for arm in 0..self.robot.arms.len() {
                if let Some(id) = self.robot.arms[arm].held_glass.take() {
                    self.robot.arms[arm].guide_pin_engaged = false;
                    self.terminate(id, GlassState::Dropped);
                    self.emit(&mut events, EventKind::GlassDropped { glass: id, arm });
                }
            }
        }
        if let Some((arm, chamber)) = self.robot.sweep.take() {
            if let Some(occupant) = self.chambers[chamber].occupant.take() {
                self.chambers[chamber].changed_tick = self.tick;
                self.terminate(occupant, GlassState::Broken);
                self.emit(
                    &mut events,
                    EventKind::GlassBroken { glass: occupant, chamber: Some(chamber), arm: None },
                );
                if let Some(carried) = self.robot.arms[arm].held_glass.take() {
                    self.robot.arms[arm].guide_pin_engaged = false;
                    self.terminate(carried, GlassState::Broken);
                    self.emit(
                        &mut events,
                        EventKind::GlassBroken { glass: carried, chamber: None, arm: Some(arm) },
                    );
                }
            }
        }
        events
    }

    fn terminate(&mut self, id: GlassId, state: GlassState) {
        let glass = self.glasses.get_mut(&id).expect("glass exists");
        glass.state = state;
        glass.process_ticks_remaining = 0;
        match state {
            GlassState::Dropped => self.counters.dropped += 1,
            GlassState::Broken => self.counters.broken += 1,
            GlassState::Unloaded => self.counters.unloaded += 1,
            _ => unreachable!("not a terminal state"),
        }
    }

    fn unloader_step(&mut self, events: &mut Vec<Event>) {
        let unloader = self.unloader();
        let Some(id) = self.chambers[unloader].occupant.take() else { return };
        let processed = self.glasses[&id].state == GlassState::Processed;
        self.terminate(id, GlassState::Unloaded);
        if processed {
            self.counters.unloaded_processed += 1;
        }
        let slot = &mut self.chambers[unloader];
        slot.unload_count += 1;
        slot.changed_tick = self.tick;
        self.emit(events, EventKind::GlassUnloaded { glass: id, chamber: unloader, processed });
    }
}

/// Smallest absolute angle between `a` and `b`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    shortest_delta(a, b).abs()
}

/// Signed rotation from `from` to `to` in (-pi, pi]; a half turn goes in the
/// positive (increasing chamber index) direction.
pub fn shortest_delta(from: f64, to: f64) -> f64 {
    let mut delta = (to - from).rem_euclid(TAU);
    if delta > PI {
        delta -= TAU;
    }
    delta
}

fn wrap_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU);
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

#[cfg(test)]
mod tests;
