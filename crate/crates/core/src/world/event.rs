//! Simulation events and their CSV form (`tick,event,glass_id,chamber_id,detail`).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ArmId, ChamberId, Command, GlassId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    GlassSpawned { glass: GlassId, chamber: ChamberId },
    ProcessStarted { glass: GlassId, chamber: ChamberId },
    ProcessCompleted { glass: GlassId, chamber: ChamberId },
    /// Glass slid off an arm during an over-speed rotation.
    GlassDropped { glass: GlassId, arm: ArmId },
    /// Glass destroyed by an arm sweep; `chamber` is the slot it sat in, if any.
    GlassBroken { glass: GlassId, chamber: Option<ChamberId>, arm: Option<ArmId> },
    GlassUnloaded { glass: GlassId, chamber: ChamberId, processed: bool },
    GlassPicked { glass: GlassId, chamber: ChamberId, arm: ArmId },
    GlassPlaced { glass: GlassId, chamber: ChamberId, arm: ArmId },
    CommandStarted { command: Command },
    CommandFinished { command: Command },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub kind: EventKind,
}

impl Event {
    pub fn new(tick: u64, kind: EventKind) -> Self {
        Self { tick, kind }
    }

    pub fn glass(&self) -> Option<GlassId> {
        match self.kind {
            EventKind::GlassSpawned { glass, .. }
            | EventKind::ProcessStarted { glass, .. }
            | EventKind::ProcessCompleted { glass, .. }
            | EventKind::GlassDropped { glass, .. }
            | EventKind::GlassBroken { glass, .. }
            | EventKind::GlassUnloaded { glass, .. }
            | EventKind::GlassPicked { glass, .. }
            | EventKind::GlassPlaced { glass, .. } => Some(glass),
            EventKind::CommandStarted { .. } | EventKind::CommandFinished { .. } => None,
        }
    }

    pub fn chamber(&self) -> Option<ChamberId> {
        match self.kind {
            EventKind::GlassSpawned { chamber, .. }
            | EventKind::ProcessStarted { chamber, .. }
            | EventKind::ProcessCompleted { chamber, .. }
            | EventKind::GlassUnloaded { chamber, .. }
            | EventKind::GlassPicked { chamber, .. }
            | EventKind::GlassPlaced { chamber, .. } => Some(chamber),
            EventKind::GlassBroken { chamber, .. } => chamber,
            EventKind::CommandStarted { command } | EventKind::CommandFinished { command } => {
                match command {
                    Command::RotateTo(chamber) => Some(chamber),
                    _ => None,
                }
            }
            EventKind::GlassDropped { .. } => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EventKind::GlassSpawned { .. } => "GlassSpawned",
            EventKind::ProcessStarted { .. } => "ProcessStarted",
            EventKind::ProcessCompleted { .. } => "ProcessCompleted",
            EventKind::GlassDropped { .. } => "GlassDropped",
            EventKind::GlassBroken { .. } => "GlassBroken",
            EventKind::GlassUnloaded { .. } => "GlassUnloaded",
            EventKind::GlassPicked { .. } => "GlassPicked",
            EventKind::GlassPlaced { .. } => "GlassPlaced",
            EventKind::CommandStarted { .. } => "CommandStarted",
            EventKind::CommandFinished { .. } => "CommandFinished",
        }
    }

    fn detail(&self) -> String {
        match self.kind {
            EventKind::GlassDropped { arm, .. }
            | EventKind::GlassPicked { arm, .. }
            | EventKind::GlassPlaced { arm, .. } => format!("arm={arm}"),
            EventKind::GlassBroken { arm: Some(arm), .. } => format!("arm={arm}"),
            EventKind::GlassUnloaded { processed, .. } => format!("processed={processed}"),
            EventKind::CommandStarted { command } | EventKind::CommandFinished { command } => {
                command.to_string()
            }
            _ => String::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EventCsvError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed event row {row}: {reason}")]
    Malformed { row: usize, reason: String },
}

pub const EVENT_CSV_HEADER: [&str; 5] = ["tick", "event", "glass_id", "chamber_id", "detail"];

pub fn write_events_csv<W: Write>(events: &[Event], writer: W) -> Result<(), EventCsvError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(EVENT_CSV_HEADER)?;
    for event in events {
        let glass = event.glass().map(|g| g.to_string()).unwrap_or_default();
        let chamber = event.chamber().map(|c| c.to_string()).unwrap_or_default();
        out.write_record([
            event.tick.to_string(),
            event.name().to_string(),
            glass,
            chamber,
            event.detail(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_events_csv<R: Read>(reader: R) -> Result<Vec<Event>, EventCsvError> {
    let mut input = csv::Reader::from_reader(reader);
    let mut events = Vec::new();
    for (idx, record) in input.records().enumerate() {
        let record = record?;
        let row = idx + 2;
        let bad = |reason: &str| EventCsvError::Malformed {
            row,
            reason: reason.to_string(),
        };
        if record.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let tick: u64 = record[0].parse().map_err(|_| bad("tick"))?;
        let glass = || record[2].parse::<GlassId>().map_err(|_| bad("glass_id"));
        let chamber = || record[3].parse::<ChamberId>().map_err(|_| bad("chamber_id"));
        let opt_chamber = || -> Result<Option<ChamberId>, EventCsvError> {
            if record[3].is_empty() {
                Ok(None)
            } else {
                chamber().map(Some)
            }
        };
        let detail = &record[4];
        let arm = || -> Result<ArmId, EventCsvError> {
            detail
                .strip_prefix("arm=")
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| bad("detail arm"))
        };
        let command = || -> Result<Command, EventCsvError> {
            detail.parse::<Command>().map_err(|_| bad("detail command"))
        };
        let kind = match &record[1] {
            "GlassSpawned" => EventKind::GlassSpawned { glass: glass()?, chamber: chamber()? },
            "ProcessStarted" => EventKind::ProcessStarted { glass: glass()?, chamber: chamber()? },
            "ProcessCompleted" => {
                EventKind::ProcessCompleted { glass: glass()?, chamber: chamber()? }
            }
            "GlassDropped" => EventKind::GlassDropped { glass: glass()?, arm: arm()? },
            "GlassBroken" => EventKind::GlassBroken {
                glass: glass()?,
                chamber: opt_chamber()?,
                arm: if detail.is_empty() { None } else { Some(arm()?) },
            },
            "GlassUnloaded" => EventKind::GlassUnloaded {
                glass: glass()?,
                chamber: chamber()?,
                processed: match detail {
                    "processed=true" => true,
                    "processed=false" => false,
                    _ => return Err(bad("detail processed flag")),
                },
            },
            "GlassPicked" => {
                EventKind::GlassPicked { glass: glass()?, chamber: chamber()?, arm: arm()? }
            }
            "GlassPlaced" => {
                EventKind::GlassPlaced { glass: glass()?, chamber: chamber()?, arm: arm()? }
            }
            "CommandStarted" => EventKind::CommandStarted { command: command()? },
            "CommandFinished" => EventKind::CommandFinished { command: command()? },
            _ => return Err(bad("unknown event name")),
        };
        events.push(Event { tick, kind });
    }
    Ok(events)
}
