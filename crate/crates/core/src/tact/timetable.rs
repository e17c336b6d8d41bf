//! Gantt timetable reconstructed from a simulation event log.
//!
//! Robot rows come from command start/finish pairs (a command started at
//! tick `s` and finished at tick `f` occupies `[s, f + 1)`); the gaps between
//! commands are Idle. Each handling command also yields a row on the arm it
//! drives. Chamber rows are Process intervals from `ProcessStarted` to
//! `ProcessCompleted` (or to the pick/break that interrupted them) with Idle
//! gaps between consecutive Process rows. Intervals still open when the log
//! ends are dropped.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Ticks;
use crate::world::{ArmId, ChamberId, Command, Event, EventKind, GlassId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    Robot,
    Arm(ArmId),
    Chamber(ChamberId),
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Robot => f.write_str("robot"),
            Resource::Arm(a) => write!(f, "arm{a}"),
            Resource::Chamber(c) => write!(f, "chamber{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    Moving,
    Idle,
    Process,
    Load,
    Unload,
}

impl Activity {
    pub fn name(self) -> &'static str {
        match self {
            Activity::Moving => "Moving",
            Activity::Idle => "Idle",
            Activity::Process => "Process",
            Activity::Load => "Load",
            Activity::Unload => "Unload",
        }
    }

    fn color(self) -> &'static str {
        match self {
            Activity::Moving => "#4878cf",
            Activity::Idle => "#d0d0d0",
            Activity::Process => "#6acc65",
            Activity::Load => "#d65f5f",
            Activity::Unload => "#b47cc7",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimetableRow {
    pub resource: Resource,
    pub activity: Activity,
    pub start_tick: Ticks,
    pub end_tick: Ticks,
    pub glass: Option<GlassId>,
}

impl TimetableRow {
    pub fn duration(&self) -> Ticks {
        self.end_tick - self.start_tick
    }
}

/// Rows sorted by resource, then start tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timetable {
    pub rows: Vec<TimetableRow>,
}

impl Timetable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows_for(&self, resource: Resource) -> impl Iterator<Item = &TimetableRow> {
        self.rows.iter().filter(move |r| r.resource == resource)
    }

    pub fn resources(&self) -> Vec<Resource> {
        let mut out: Vec<Resource> = self.rows.iter().map(|r| r.resource).collect();
        out.dedup();
        out
    }

    pub fn end_tick(&self) -> Ticks {
        self.rows.iter().map(|r| r.end_tick).max().unwrap_or(0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimetableError {
    #[error("event {index} at tick {tick} precedes tick {previous}")]
    OutOfOrder { index: usize, tick: Ticks, previous: Ticks },
    #[error("command {command} finished at tick {tick} without a matching start")]
    UnmatchedFinish { command: Command, tick: Ticks },
}

struct OpenCommand {
    command: Command,
    start: Ticks,
    glass: Option<GlassId>,
}

pub fn build_timetable(events: &[Event]) -> Result<Timetable, TimetableError> {
    let mut previous = 0;
    for (index, event) in events.iter().enumerate() {
        if event.tick < previous {
            return Err(TimetableError::OutOfOrder { index, tick: event.tick, previous });
        }
        previous = event.tick;
    }

    let mut rows = Vec::new();
    let mut open: Option<OpenCommand> = None;
    let mut robot_free_since: Option<Ticks> = None;
    let mut process_open: BTreeMap<ChamberId, (Ticks, GlassId)> = BTreeMap::new();
    let mut chamber_rows: BTreeMap<ChamberId, Vec<TimetableRow>> = BTreeMap::new();

    let mut close_process = |open: &mut BTreeMap<ChamberId, (Ticks, GlassId)>,
                             chamber: ChamberId,
                             glass: GlassId,
                             tick: Ticks| {
        if let Some(&(start, g)) = open.get(&chamber) {
            if g == glass {
                open.remove(&chamber);
                if tick > start {
                    chamber_rows.entry(chamber).or_default().push(TimetableRow {
                        resource: Resource::Chamber(chamber),
                        activity: Activity::Process,
                        start_tick: start,
                        end_tick: tick,
                        glass: Some(glass),
                    });
                }
            }
        }
    };

    for event in events {
        match event.kind {
            EventKind::CommandStarted { command } => {
                if let Some(free) = robot_free_since.take() {
                    if event.tick > free {
                        rows.push(TimetableRow {
                            resource: Resource::Robot,
                            activity: Activity::Idle,
                            start_tick: free,
                            end_tick: event.tick,
                            glass: None,
                        });
                    }
                }
                open = Some(OpenCommand { command, start: event.tick, glass: None });
            }
            EventKind::CommandFinished { command } => {
                let cmd = match open.take() {
                    Some(cmd) if cmd.command == command => cmd,
                    _ => return Err(TimetableError::UnmatchedFinish { command, tick: event.tick }),
                };
                let end = event.tick + 1;
                let activity = match command {
                    Command::RotateTo(_) => Activity::Moving,
                    Command::ArmLoad(_) => Activity::Load,
                    Command::ArmUnload(_) => Activity::Unload,
                    Command::Wait => Activity::Idle,
                };
                let row = TimetableRow {
                    resource: Resource::Robot,
                    activity,
                    start_tick: cmd.start,
                    end_tick: end,
                    glass: cmd.glass,
                };
                rows.push(row);
                if let Command::ArmLoad(arm) | Command::ArmUnload(arm) = command {
                    rows.push(TimetableRow { resource: Resource::Arm(arm), ..row });
                }
                robot_free_since = Some(end);
            }
            EventKind::GlassPicked { glass, chamber, .. } => {
                if let Some(cmd) = open.as_mut() {
                    cmd.glass = Some(glass);
                }
                close_process(&mut process_open, chamber, glass, event.tick);
            }
            EventKind::GlassPlaced { glass, .. } => {
                if let Some(cmd) = open.as_mut() {
                    cmd.glass = Some(glass);
                }
            }
            EventKind::ProcessStarted { glass, chamber } => {
                process_open.insert(chamber, (event.tick, glass));
            }
            EventKind::ProcessCompleted { glass, chamber } => {
                close_process(&mut process_open, chamber, glass, event.tick);
            }
            EventKind::GlassBroken { glass, chamber: Some(chamber), .. } => {
                close_process(&mut process_open, chamber, glass, event.tick);
            }
            _ => {}
        }
    }

    for (chamber, process_rows) in chamber_rows {
        let mut last_end: Option<Ticks> = None;
        for row in process_rows {
            if let Some(end) = last_end {
                if row.start_tick > end {
                    rows.push(TimetableRow {
                        resource: Resource::Chamber(chamber),
                        activity: Activity::Idle,
                        start_tick: end,
                        end_tick: row.start_tick,
                        glass: None,
                    });
                }
            }
            last_end = Some(row.end_tick);
            rows.push(row);
        }
    }

    rows.sort_by_key(|r| (r.resource, r.start_tick));
    Ok(Timetable { rows })
}

/// CSV with columns `resource,activity,start_s,end_s,glass_id`.
pub fn write_timetable_csv<W: Write>(
    timetable: &Timetable,
    tick_duration_s: f64,
    writer: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["resource", "activity", "start_s", "end_s", "glass_id"])?;
    for row in &timetable.rows {
        out.write_record([
            row.resource.to_string(),
            row.activity.name().to_string(),
            format_seconds(row.start_tick, tick_duration_s),
            format_seconds(row.end_tick, tick_duration_s),
            row.glass.map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn format_seconds(ticks: Ticks, tick_duration_s: f64) -> String {
    let s = ticks as f64 * tick_duration_s;
    format!("{:.3}", s)
}

const BAND_HEIGHT: f64 = 24.0;
const LABEL_WIDTH: f64 = 90.0;
const PLOT_WIDTH: f64 = 1200.0;
const AXIS_HEIGHT: f64 = 30.0;

/// Standalone SVG with one horizontal band per resource.
pub fn write_timetable_svg<W: Write>(
    timetable: &Timetable,
    tick_duration_s: f64,
    mut writer: W,
) -> io::Result<()> {
    let resources = timetable.resources();
    let end = timetable.end_tick().max(1) as f64;
    let scale = PLOT_WIDTH / end;
    let width = LABEL_WIDTH + PLOT_WIDTH + 20.0;
    let height = BAND_HEIGHT * resources.len() as f64 + AXIS_HEIGHT + 10.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (band, resource) in resources.iter().enumerate() {
        let y = 5.0 + band as f64 * BAND_HEIGHT;
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{:.1}">{}</text>"#,
            y + BAND_HEIGHT * 0.65,
            resource
        );
        for row in timetable.rows_for(*resource) {
            let x = LABEL_WIDTH + row.start_tick as f64 * scale;
            let w = (row.duration() as f64 * scale).max(0.5);
            let glass = row.glass.map(|g| format!(" glass {g}")).unwrap_or_default();
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{:.1}" width="{w:.2}" height="{:.1}" fill="{}"><title>{} {}-{} s{}</title></rect>"#,
                y + 2.0,
                BAND_HEIGHT - 4.0,
                row.activity.color(),
                row.activity.name(),
                format_seconds(row.start_tick, tick_duration_s),
                format_seconds(row.end_tick, tick_duration_s),
                glass,
            );
        }
    }
    let axis_y = 5.0 + resources.len() as f64 * BAND_HEIGHT + 4.0;
    let _ = writeln!(
        svg,
        r#"<line x1="{LABEL_WIDTH}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
        LABEL_WIDTH + PLOT_WIDTH
    );
    for i in 0..=10 {
        let t = end * i as f64 / 10.0;
        let x = LABEL_WIDTH + t * scale;
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{:.1}s</text>"#,
            axis_y + 14.0,
            t * tick_duration_s
        );
    }
    svg.push_str("</svg>\n");
    writer.write_all(svg.as_bytes())
}
