//! Process-tact arithmetic and per-glass tact measurement.
//!
//! Terms are held in integer ticks so that sums and the fixed/Δt split are
//! exact; seconds appear only through [`TactTerms::seconds`] and
//! [`measured_tact`].
//!
//! Two closed forms are provided. The single-chamber form sums, in order,
//! `R_a + get + R_b + put + P + w + get + R_c + put + U` (three rotation legs,
//! no loading term). The K-chamber form is
//! `L + ΣR + (K+1)(get + put) + ΣP + Σw + U` with one rotation leg per
//! chamber. The two are not mutually consistent for `K = 1` and both are kept
//! as written.

mod exchange;
mod timetable;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Command, Event, EventKind, GlassId};

pub use exchange::{arms_used, find_exchanges, Exchange};
pub use timetable::{
    build_timetable, write_timetable_csv, write_timetable_svg, Activity, Resource, Timetable,
    TimetableError, TimetableRow,
};

pub type Ticks = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TactError {
    #[error("term `{term}` has {actual} entries, expected {expected}")]
    Arity { term: &'static str, expected: usize, actual: usize },
    #[error("the K-chamber form needs K >= 1")]
    NoChambers,
    #[error("glass {0} never reached the unloader")]
    NotCompleted(GlassId),
    #[error("glass {0} does not appear in the event log")]
    UnknownGlass(GlassId),
}

/// Timing terms of one glass' trip, in ticks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TactTerms {
    pub load: Ticks,
    pub unload: Ticks,
    pub rotations: Vec<Ticks>,
    pub get: Ticks,
    pub put: Ticks,
    pub process: Vec<Ticks>,
    pub waits: Vec<Ticks>,
}

/// Fixed process-parameter part and robot-dependent Δt part of a tact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TactSplit {
    pub fixed: Ticks,
    pub delta: Ticks,
}

impl TactSplit {
    pub fn total(&self) -> Ticks {
        self.fixed + self.delta
    }
}

impl TactTerms {
    /// Converts ticks to seconds.
    pub fn seconds(ticks: Ticks, tick_duration_s: f64) -> f64 {
        ticks as f64 * tick_duration_s
    }

    fn check_arity(&self, k: usize) -> Result<(), TactError> {
        for (term, list) in [("t_R", &self.rotations), ("t_P", &self.process), ("t_w", &self.waits)] {
            if list.len() != k {
                return Err(TactError::Arity { term, expected: k, actual: list.len() });
            }
        }
        Ok(())
    }
}

/// Single-process-chamber tact, summed term by term as written (three
/// rotation legs, one process and one wait, no loading term).
pub fn process_tact_single(terms: &TactTerms) -> Result<Ticks, TactError> {
    if terms.rotations.len() != 3 {
        return Err(TactError::Arity { term: "t_R", expected: 3, actual: terms.rotations.len() });
    }
    for (term, list) in [("t_P", &terms.process), ("t_w", &terms.waits)] {
        if list.len() != 1 {
            return Err(TactError::Arity { term, expected: 1, actual: list.len() });
        }
    }
    let r = &terms.rotations;
    Ok(r[0]
        + terms.get
        + r[1]
        + terms.put
        + terms.process[0]
        + terms.waits[0]
        + terms.get
        + r[2]
        + terms.put
        + terms.unload)
}

/// Tact for a trip through `k` process chambers.
pub fn process_tact_general(terms: &TactTerms, k: usize) -> Result<Ticks, TactError> {
    decompose_tact(terms, k).map(|split| split.total())
}

/// Splits the K-chamber tact into `L + (K+1)(get+put) + ΣP + U` and
/// `ΣR + Σw`.
pub fn decompose_tact(terms: &TactTerms, k: usize) -> Result<TactSplit, TactError> {
    if k == 0 {
        return Err(TactError::NoChambers);
    }
    terms.check_arity(k)?;
    let fixed = terms.load
        + (k as Ticks + 1) * (terms.get + terms.put)
        + terms.process.iter().sum::<Ticks>()
        + terms.unload;
    let delta = terms.rotations.iter().sum::<Ticks>() + terms.waits.iter().sum::<Ticks>();
    Ok(TactSplit { fixed, delta })
}

/// Spawn-to-unload time of `glass` in seconds.
pub fn measured_tact(events: &[Event], glass: GlassId, tick_duration_s: f64) -> Result<f64, TactError> {
    let (spawn, unload) = glass_span(events, glass)?;
    Ok(TactTerms::seconds(unload - spawn, tick_duration_s))
}

fn glass_span(events: &[Event], glass: GlassId) -> Result<(Ticks, Ticks), TactError> {
    let (first, last) = glass_span_index(events, glass)?;
    Ok((events[first].tick, events[last].tick))
}

/// Indices of the spawn and unload events of `glass`.
fn glass_span_index(events: &[Event], glass: GlassId) -> Result<(usize, usize), TactError> {
    let first = events
        .iter()
        .position(|e| matches!(e.kind, EventKind::GlassSpawned { glass: g, .. } if g == glass))
        .ok_or(TactError::UnknownGlass(glass))?;
    let last = events[first..]
        .iter()
        .position(|e| matches!(e.kind, EventKind::GlassUnloaded { glass: g, .. } if g == glass))
        .ok_or(TactError::NotCompleted(glass))?
        + first;
    Ok((first, last))
}

/// Tick-by-tick classification of one completed glass' lifetime, from its
/// spawn tick to its unload tick inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlassBreakdown {
    pub glass: GlassId,
    pub spawn_tick: Ticks,
    pub unload_tick: Ticks,
    /// Ticks inside get sequences that picked this glass.
    pub get: Ticks,
    /// Ticks inside put sequences that placed this glass.
    pub put: Ticks,
    /// Ticks of rotations while the glass was carried.
    pub rotation: Ticks,
    /// Ticks under an active process timer.
    pub process: Ticks,
    /// Everything else: loader dwell, post-process dwell, idle carrying.
    pub wait: Ticks,
    pub gets: u32,
    pub puts: u32,
    /// Process stations that ran a process step on this glass.
    pub stations: u32,
}

impl GlassBreakdown {
    /// `unload - spawn`, the measured tact in ticks.
    pub fn tact(&self) -> Ticks {
        self.unload_tick - self.spawn_tick
    }

    /// Terms for the K-chamber form with measured rotation and wait totals
    /// folded into single entries and nominal handling/process durations.
    pub fn terms(&self, handling_ticks: Ticks, process_ticks: Ticks) -> TactTerms {
        let k = self.stations.max(1) as usize;
        let mut rotations = vec![0; k];
        let mut waits = vec![0; k];
        rotations[0] = self.rotation;
        waits[0] = self.wait;
        TactTerms {
            load: 0,
            unload: 0,
            rotations,
            get: handling_ticks,
            put: handling_ticks,
            process: vec![process_ticks; k],
            waits,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Wait,
    Process,
    Rotation,
    Put,
    Get,
}

/// Classifies every tick of `glass`' lifetime. Handling takes precedence over
/// rotation, rotation over processing.
pub fn glass_breakdown(events: &[Event], glass: GlassId) -> Result<GlassBreakdown, TactError> {
    let (first, last) = glass_span_index(events, glass)?;
    let (spawn, unload) = (events[first].tick, events[last].tick);
    let lo = events[..first].partition_point(|e| e.tick < spawn);
    let hi = last + events[last..].partition_point(|e| e.tick <= unload);
    let len = (unload - spawn + 1) as usize;
    let mut slots = vec![Slot::Wait; len];
    let mut mark = |from: Ticks, to: Ticks, slot: Slot| {
        let lo = from.max(spawn);
        let hi = to.min(unload);
        for t in lo..=hi {
            let s = &mut slots[(t - spawn) as usize];
            if (slot as u8) > (*s as u8) {
                *s = slot;
            }
        }
    };

    let mut out = GlassBreakdown { glass, spawn_tick: spawn, unload_tick: unload, ..Default::default() };
    let mut current: Option<(Command, Ticks)> = None;
    let mut carried = false;
    let mut process_start: Option<Ticks> = None;
    for event in &events[lo..hi] {
        match event.kind {
            EventKind::CommandStarted { command } => current = Some((command, event.tick)),
            EventKind::CommandFinished { command } => {
                if let (Command::RotateTo(_), Some((_, start))) = (command, current) {
                    if carried {
                        mark(start, event.tick, Slot::Rotation);
                    }
                }
                current = None;
            }
            EventKind::GlassPicked { glass: g, .. } if g == glass => {
                if let Some((_, start)) = current {
                    mark(start, event.tick, Slot::Get);
                }
                if let Some(p) = process_start.take() {
                    mark(p + 1, event.tick, Slot::Process);
                }
                out.gets += 1;
                carried = true;
            }
            EventKind::GlassPlaced { glass: g, .. } if g == glass => {
                if let Some((_, start)) = current {
                    mark(start, event.tick, Slot::Put);
                }
                out.puts += 1;
                carried = false;
            }
            EventKind::ProcessStarted { glass: g, .. } if g == glass => {
                process_start = Some(event.tick);
            }
            EventKind::ProcessCompleted { glass: g, .. } if g == glass => {
                if let Some(p) = process_start.take() {
                    mark(p + 1, event.tick, Slot::Process);
                    out.stations += 1;
                }
            }
            _ => {}
        }
    }

    for slot in slots {
        match slot {
            Slot::Wait => out.wait += 1,
            Slot::Process => out.process += 1,
            Slot::Rotation => out.rotation += 1,
            Slot::Put => out.put += 1,
            Slot::Get => out.get += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq1_terms() -> TactTerms {
        TactTerms {
            load: 0,
            unload: 2,
            rotations: vec![1, 1, 1],
            get: 1,
            put: 1,
            process: vec![30],
            waits: vec![0],
        }
    }

    fn eq2_terms() -> TactTerms {
        TactTerms {
            load: 2,
            unload: 2,
            rotations: vec![1, 1, 1],
            get: 1,
            put: 1,
            process: vec![30, 30, 30],
            waits: vec![0, 0, 0],
        }
    }

    #[test]
    fn single_chamber_form() {
        assert_eq!(process_tact_single(&eq1_terms()), Ok(39));
        assert_eq!(
            process_tact_single(&TactTerms {
                rotations: vec![0; 3],
                process: vec![0],
                waits: vec![0],
                ..Default::default()
            }),
            Ok(0)
        );
        let mut short = eq1_terms();
        short.rotations = vec![1, 1];
        assert_eq!(
            process_tact_single(&short),
            Err(TactError::Arity { term: "t_R", expected: 3, actual: 2 })
        );
    }

    #[test]
    fn general_form() {
        assert_eq!(process_tact_general(&eq2_terms(), 3), Ok(105));
        let dominated = TactTerms {
            rotations: vec![0],
            process: vec![30],
            waits: vec![0],
            ..Default::default()
        };
        assert_eq!(process_tact_general(&dominated, 1), Ok(30));
        assert_eq!(process_tact_general(&dominated, 0), Err(TactError::NoChambers));
    }

    #[test]
    fn waits_enter_linearly() {
        let base = TactTerms {
            load: 1,
            unload: 1,
            rotations: vec![2, 2],
            get: 1,
            put: 1,
            process: vec![30, 30],
            waits: vec![0, 0],
        };
        let mut waiting = base.clone();
        waiting.waits = vec![5, 7];
        let a = process_tact_general(&base, 2).unwrap();
        let b = process_tact_general(&waiting, 2).unwrap();
        assert_eq!(b - a, 12);
    }

    #[test]
    fn decomposition_partitions_the_sum() {
        assert_eq!(decompose_tact(&eq2_terms(), 3), Ok(TactSplit { fixed: 102, delta: 3 }));
        let mut still = eq2_terms();
        still.rotations = vec![0; 3];
        assert_eq!(decompose_tact(&still, 3).unwrap().delta, 0);

        let mut waits = eq2_terms();
        waits.waits = vec![3, 4, 5];
        let once = decompose_tact(&waits, 3).unwrap();
        waits.waits = vec![6, 8, 10];
        let twice = decompose_tact(&waits, 3).unwrap();
        assert_eq!(once.fixed, twice.fixed);
        assert_eq!(twice.delta - 3, 2 * (once.delta - 3));
    }

    #[test]
    fn measured_tact_is_spawn_to_unload() {
        let events = vec![
            Event::new(0, EventKind::GlassSpawned { glass: 4, chamber: 0 }),
            Event::new(390, EventKind::GlassUnloaded { glass: 4, chamber: 2, processed: true }),
        ];
        let tact = measured_tact(&events, 4, 0.1).unwrap();
        assert!((tact - 39.0).abs() < 1e-12);
    }

    #[test]
    fn dropped_glass_has_no_tact() {
        let events = vec![
            Event::new(0, EventKind::GlassSpawned { glass: 1, chamber: 0 }),
            Event::new(20, EventKind::GlassDropped { glass: 1, arm: 0 }),
        ];
        assert_eq!(measured_tact(&events, 1, 0.1), Err(TactError::NotCompleted(1)));
    }
}
