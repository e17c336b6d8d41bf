//! Rule-based dispatcher driven by chamber in-out signals.
//!
//! Every chamber raises signals: an occupied source asks for its glass to be
//! taken out, an empty destination reports it can accept one. The dispatcher
//! enumerates the move chains those signals allow (deliver a held glass, or
//! fetch a glass and carry it on) and starts the one with the smallest
//! estimated duration. Ties go to the older signal, then the lower chamber id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::env::{command_to_action, FabEnv};
use crate::world::{angular_distance, ArmId, ChamberGlassState, ChamberId, ChamberKind, Command, GlassState, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalKind {
    OutRequest(ChamberGlassState),
    InReady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signal {
    pub chamber: ChamberId,
    pub kind: SignalKind,
    pub age_ticks: u64,
}

/// Loader: out-request for its raw glass (for an in-place loader station,
/// only once processed). Process chambers: out-request when processed,
/// in-ready when empty. Unloader: in-ready when empty.
pub fn collect_signals(world: &WorldState) -> Vec<Signal> {
    let mut out = Vec::new();
    for chamber in &world.chambers {
        let age_ticks = world.tick.saturating_sub(chamber.changed_tick);
        let state = world.chamber_glass_state(chamber.id).expect("chamber in range");
        let station = world.is_process_station(chamber.id);
        let kind = match (chamber.kind, state) {
            (ChamberKind::Loader, ChamberGlassState::Empty) => None,
            (ChamberKind::Loader, ChamberGlassState::Raw) if !station => {
                Some(SignalKind::OutRequest(ChamberGlassState::Raw))
            }
            (_, ChamberGlassState::Processed) => {
                Some(SignalKind::OutRequest(ChamberGlassState::Processed))
            }
            (ChamberKind::Process | ChamberKind::Unloader, ChamberGlassState::Empty) => {
                Some(SignalKind::InReady)
            }
            _ => None,
        };
        if let Some(kind) = kind {
            out.push(Signal { chamber: chamber.id, kind, age_ticks });
        }
    }
    out
}

/// Robot-side facts the dispatcher needs, snapshotted from a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchContext {
    pub chamber_angles: Vec<f64>,
    pub unloader: ChamberId,
    pub facing: Option<ChamberId>,
    pub theta: f64,
    /// Per arm: `None` when empty, else whether the held glass is processed.
    pub arms: Vec<Option<bool>>,
    pub rotation_rate: f64,
    pub handling_ticks: u64,
}

impl DispatchContext {
    pub fn from_world(world: &WorldState) -> Self {
        Self {
            chamber_angles: world.chambers.iter().map(|c| c.angle).collect(),
            unloader: world.unloader(),
            facing: world.facing_chamber(),
            theta: world.robot.theta,
            arms: world
                .robot
                .arms
                .iter()
                .map(|a| a.held_glass.map(|g| world.glasses[&g].state == GlassState::Processed))
                .collect(),
            rotation_rate: world.rotation_rate(),
            handling_ticks: world.handling_ticks() as u64,
        }
    }

    fn rotation_ticks(&self, from: f64, to: ChamberId) -> u64 {
        let d = angular_distance(from, self.chamber_angles[to]);
        if d < 1e-12 {
            0
        } else {
            (d / self.rotation_rate).ceil() as u64
        }
    }

    fn leg(&self, from: ChamberId, to: ChamberId) -> u64 {
        self.rotation_ticks(self.chamber_angles[from], to)
    }

    fn first_step(&self, chamber: ChamberId, handling: Command) -> Command {
        if self.facing == Some(chamber) {
            handling
        } else {
            Command::RotateTo(chamber)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Chain {
    cost: u64,
    age: u64,
    chamber: ChamberId,
    first: Command,
}

impl Chain {
    fn better_than(&self, other: &Chain) -> bool {
        let order = self
            .cost
            .cmp(&other.cost)
            .then(other.age.cmp(&self.age))
            .then(self.chamber.cmp(&other.chamber));
        order == Ordering::Less
    }
}

/// Chooses the next command from the current signals.
pub fn heuristic_command(signals: &[Signal], ctx: &DispatchContext) -> Command {
    let ready: Vec<&Signal> = signals.iter().filter(|s| s.kind == SignalKind::InReady).collect();
    let free_process = ready.iter().filter(|s| s.chamber != ctx.unloader).count();
    let unloader_ready = ready.iter().any(|s| s.chamber == ctx.unloader);
    let held_incomplete = ctx.arms.iter().filter(|a| **a == Some(false)).count();
    let empty_arms: Vec<ArmId> =
        (0..ctx.arms.len()).filter(|&a| ctx.arms[a].is_none()).collect();
    let processed_waiting = signals
        .iter()
        .any(|s| s.kind == SignalKind::OutRequest(ChamberGlassState::Processed));

    let mut best: Option<Chain> = None;
    let mut consider = |chain: Chain| {
        if best.map_or(true, |b| chain.better_than(&b)) {
            best = Some(chain);
        }
    };

    // deliver what the arms already hold
    for (arm, held) in ctx.arms.iter().enumerate() {
        let Some(processed) = *held else { continue };
        for signal in &ready {
            let to_unloader = signal.chamber == ctx.unloader;
            if processed != to_unloader {
                continue;
            }
            let cost = ctx.rotation_ticks(ctx.theta, signal.chamber) + ctx.handling_ticks;
            consider(Chain {
                cost,
                age: signal.age_ticks,
                chamber: signal.chamber,
                first: ctx.first_step(signal.chamber, Command::ArmUnload(arm)),
            });
        }
    }

    // fetch a glass and carry it to its next stop
    if let Some(&arm) = empty_arms.first() {
        for signal in signals {
            let SignalKind::OutRequest(state) = signal.kind else { continue };
            let get = ctx.rotation_ticks(ctx.theta, signal.chamber) + ctx.handling_ticks;
            let onward = match state {
                ChamberGlassState::Processed if unloader_ready => {
                    Some(ctx.leg(signal.chamber, ctx.unloader))
                }
                ChamberGlassState::Raw => {
                    let room = free_process > held_incomplete;
                    let exchange = processed_waiting && empty_arms.len() >= 2;
                    if room || exchange {
                        ready
                            .iter()
                            .filter(|s| s.chamber != ctx.unloader)
                            .map(|s| ctx.leg(signal.chamber, s.chamber))
                            .min()
                            .or(Some(0))
                    } else {
                        None
                    }
                }
                _ => None,
            };
            let Some(onward) = onward else { continue };
            consider(Chain {
                cost: get + onward + ctx.handling_ticks,
                age: signal.age_ticks,
                chamber: signal.chamber,
                first: ctx.first_step(signal.chamber, Command::ArmLoad(arm)),
            });
        }
    }

    best.map_or(Command::Wait, |c| c.first)
}

/// [`heuristic_command`] as an environment action id.
pub fn heuristic_decide(signals: &[Signal], ctx: &DispatchContext) -> usize {
    let command = heuristic_command(signals, ctx);
    command_to_action(command, ctx.chamber_angles.len(), ctx.arms.len())
}

/// Action the dispatcher takes in `env`'s current state.
pub fn baseline_action(env: &FabEnv) -> usize {
    let world = env.world();
    heuristic_decide(&collect_signals(world), &DispatchContext::from_world(world))
}
