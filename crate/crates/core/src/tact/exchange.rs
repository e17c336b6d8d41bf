//! Pickup-and-place exchanges recovered from an event log.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::world::{ArmId, ChamberId, Command, Event, EventKind, GlassId};

/// One arm takes a finished glass out of a chamber and another arm puts a
/// different glass into it, with no rotation in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub chamber: ChamberId,
    pub picked: GlassId,
    pub pick_arm: ArmId,
    pub pick_tick: u64,
    pub placed: GlassId,
    pub place_arm: ArmId,
    pub place_tick: u64,
}

/// Exchanges in `events`, in log order. A stop ends when a rotation toward a
/// different chamber starts.
pub fn find_exchanges(events: &[Event]) -> Vec<Exchange> {
    let mut finished: HashSet<GlassId> = HashSet::new();
    let mut out = Vec::new();
    let mut stop: Option<ChamberId> = None;
    let mut picks: Vec<(GlassId, ArmId, ChamberId, u64)> = Vec::new();
    for event in events {
        match event.kind {
            EventKind::ProcessCompleted { glass, .. } => {
                finished.insert(glass);
            }
            EventKind::CommandStarted { command: Command::RotateTo(target) } => {
                if stop != Some(target) {
                    picks.clear();
                }
                stop = Some(target);
            }
            EventKind::GlassPicked { glass, chamber, arm } if finished.contains(&glass) => {
                picks.push((glass, arm, chamber, event.tick));
            }
            EventKind::GlassPlaced { glass, chamber, arm } => {
                if let Some(&(picked, pick_arm, _, pick_tick)) = picks
                    .iter()
                    .find(|&&(g, a, c, _)| c == chamber && a != arm && g != glass)
                {
                    out.push(Exchange {
                        chamber,
                        picked,
                        pick_arm,
                        pick_tick,
                        placed: glass,
                        place_arm: arm,
                        place_tick: event.tick,
                    });
                    picks.retain(|&(g, ..)| g != picked);
                }
            }
            _ => {}
        }
    }
    out
}

/// Arms that picked or placed at least one glass, ascending.
pub fn arms_used(events: &[Event]) -> Vec<ArmId> {
    let mut arms: Vec<ArmId> = events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::GlassPicked { arm, .. } | EventKind::GlassPlaced { arm, .. } => Some(arm),
            _ => None,
        })
        .collect();
    arms.sort_unstable();
    arms.dedup();
    arms
}
