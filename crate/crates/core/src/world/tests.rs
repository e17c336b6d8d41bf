use super::*;

fn config(k: usize, arms: usize) -> WorldConfig {
    let mut config = WorldConfig::default();
    config.process.num_process_chambers = k;
    config.process.num_arms = arms;
    config
}

fn world(k: usize, arms: usize) -> WorldState {
    WorldState::build(config(k, arms), 1).unwrap()
}

fn has(events: &[Event], pred: impl Fn(&EventKind) -> bool) -> bool {
    events.iter().any(|e| pred(&e.kind))
}

#[test]
fn two_chamber_layout_is_symmetric() {
    let w = world(0, 1);
    assert_eq!(w.num_chambers(), 2);
    assert_eq!(w.chambers[0].kind, ChamberKind::Loader);
    assert_eq!(w.chambers[1].kind, ChamberKind::Unloader);
    assert_eq!(w.chambers[0].angle, 0.0);
    assert_eq!(w.chambers[1].angle, PI);
    assert_eq!(w.robot.theta, 0.0);
    assert_eq!(w.tick, 0);
    assert!(w.glasses.is_empty());
}

#[test]
fn default_layout_has_five_equally_spaced_chambers() {
    let w = world(3, 2);
    assert_eq!(w.num_chambers(), 5);
    for (i, c) in w.chambers.iter().enumerate() {
        assert!((c.angle - TAU * i as f64 / 5.0).abs() < 1e-15);
    }
    let kinds: Vec<_> = w.chambers.iter().map(|c| c.kind).collect();
    assert_eq!(
        kinds,
        vec![
            ChamberKind::Loader,
            ChamberKind::Process,
            ChamberKind::Process,
            ChamberKind::Process,
            ChamberKind::Unloader
        ]
    );
}

#[test]
fn three_arms_are_rejected() {
    let err = WorldState::build(config(1, 3), 0).unwrap_err();
    assert!(err.to_string().contains("process.num_arms"));
}

#[test]
fn empty_loader_spawns_on_first_tick() {
    let mut w = world(1, 1);
    let events = w.tick();
    assert!(has(&events, |k| matches!(k, EventKind::GlassSpawned { glass: 0, chamber: 0 })));
    assert_eq!(w.chambers[0].occupant, Some(0));
    assert_eq!(w.glasses[&0].state, GlassState::Raw);
}

#[test]
fn occupied_loader_stops_input() {
    let mut w = world(1, 1);
    w.tick();
    let interval = w.config.process.interval_ticks();
    for _ in 0..interval * 3 {
        let events = w.tick();
        assert!(!has(&events, |k| matches!(k, EventKind::GlassSpawned { .. })));
    }
    assert_eq!(w.chambers[0].spawn_cooldown, 0);
    assert_eq!(w.counters.spawned, 1);
}

#[test]
fn input_follows_interval_when_loader_is_cleared() {
    let mut config = config(1, 1);
    config.process.glass_input_interval_s = 5.0;
    let mut w = WorldState::build(config, 0).unwrap();
    w.tick();
    w.execute(Command::ArmLoad(0)).unwrap();
    while w.counters.spawned < 2 {
        w.tick();
    }
    let spawns: Vec<u64> = w
        .event_log
        .iter()
        .filter(|e| matches!(e.kind, EventKind::GlassSpawned { .. }))
        .map(|e| e.tick)
        .collect();
    assert_eq!(spawns, vec![0, 50]);
}

#[test]
fn process_timer_expiry_completes_glass() {
    let mut w = world(1, 1);
    w.tick();
    w.execute(Command::ArmLoad(0)).unwrap();
    w.execute(Command::RotateTo(1)).unwrap();
    let events = w.execute(Command::ArmUnload(0)).unwrap();
    let start = events
        .iter()
        .find(|e| matches!(e.kind, EventKind::ProcessStarted { .. }))
        .unwrap()
        .tick;
    assert_eq!(w.chamber_glass_state(1).unwrap(), ChamberGlassState::Processing);
    let process = w.config.process.process_ticks() as u64;
    while w.tick < start + process {
        w.tick();
    }
    assert_eq!(w.glasses[&0].process_ticks_remaining, 1);
    let events = w.tick();
    assert!(has(&events, |k| matches!(k, EventKind::ProcessCompleted { glass: 0, chamber: 1 })));
    assert_eq!(w.glasses[&0].state, GlassState::Processed);
    assert_eq!(events[0].tick, start + process);
    assert_eq!(w.chamber_glass_state(1).unwrap(), ChamberGlassState::Processed);
}

#[test]
fn idle_rotation_is_accepted() {
    let mut w = world(3, 2);
    let event = w.issue_command(Command::RotateTo(1)).unwrap();
    assert_eq!(event.kind, EventKind::CommandStarted { command: Command::RotateTo(1) });
    assert!(w.is_busy());
}

#[test]
fn interlock_rejects_second_command_without_side_effects() {
    let mut w = world(3, 2);
    w.issue_command(Command::RotateTo(2)).unwrap();
    w.tick();
    let before = w.clone();
    assert_eq!(w.issue_command(Command::ArmLoad(0)), Err(WorldError::Busy(Command::RotateTo(2))));
    assert_eq!(w, before);
}

#[test]
fn out_of_range_targets_are_rejected() {
    let mut w = world(1, 1);
    assert_eq!(w.issue_command(Command::RotateTo(3)), Err(WorldError::InvalidTarget(Command::RotateTo(3))));
    assert_eq!(w.issue_command(Command::ArmLoad(1)), Err(WorldError::InvalidTarget(Command::ArmLoad(1))));
    assert!(!w.is_busy());
}

#[test]
fn wait_takes_exactly_one_tick() {
    let mut w = world(1, 1);
    w.issue_command(Command::Wait).unwrap();
    let events = w.tick();
    assert!(has(&events, |k| matches!(k, EventKind::CommandFinished { command: Command::Wait })));
    assert!(!w.is_busy());
    assert_eq!(w.tick, 1);
    assert_eq!(w.robot.theta, 0.0);
}

#[test]
fn rotation_takes_ceil_of_angle_over_rate_ticks() {
    let mut w = world(0, 1);
    let rate = w.rotation_rate();
    let events = w.execute(Command::RotateTo(1)).unwrap();
    let expected = (PI / rate).ceil() as u64;
    let finished = events.last().unwrap();
    assert_eq!(finished.tick + 1, expected);
    assert_eq!(w.robot.theta, PI);
}

#[test]
fn half_turn_tie_goes_positive() {
    assert_eq!(shortest_delta(0.0, PI), PI);
    assert_eq!(shortest_delta(PI, 0.0), PI);
    assert!(shortest_delta(0.1, 0.0) < 0.0);
}

#[test]
fn overspeed_rotation_drops_carried_glass() {
    let mut config = config(0, 1);
    config.physical.transfer_speed = 0.02;
    let mut w = WorldState::build(config, 0).unwrap();
    assert!(w.rotation_rate() > w.omega_max() * 1.99);
    w.tick();
    w.execute(Command::ArmLoad(0)).unwrap();
    let events = w.execute(Command::RotateTo(1)).unwrap();
    assert!(has(&events, |k| matches!(k, EventKind::GlassDropped { glass: 0, arm: 0 })));
    assert_eq!(w.glasses[&0].state, GlassState::Dropped);
    assert_eq!(w.counters.dropped, 1);
    assert!(w.conservation_holds());
}

#[test]
fn safe_speed_rotation_keeps_glass() {
    let mut w = world(0, 1);
    w.tick();
    w.execute(Command::ArmLoad(0)).unwrap();
    let events = w.execute(Command::RotateTo(1)).unwrap();
    assert!(!has(&events, |k| matches!(k, EventKind::GlassDropped { .. })));
    assert_eq!(w.robot.arms[0].held_glass, Some(0));
}

#[test]
fn empty_arms_rotate_at_any_speed() {
    let mut config = config(0, 1);
    config.physical.transfer_speed = 1.0;
    let mut w = WorldState::build(config, 0).unwrap();
    let events = w.execute(Command::RotateTo(1)).unwrap();
    assert!(!has(&events, |k| matches!(k, EventKind::GlassDropped { .. } | EventKind::GlassBroken { .. })));
}

#[test]
fn unloading_into_occupied_chamber_breaks_glass() {
    let mut w = world(1, 2);
    w.tick();
    // first glass into the process chamber
    w.execute(Command::ArmLoad(0)).unwrap();
    w.execute(Command::RotateTo(1)).unwrap();
    w.execute(Command::ArmUnload(0)).unwrap();
    // second glass
    w.execute(Command::RotateTo(0)).unwrap();
    while w.chambers[0].occupant.is_none() {
        w.execute(Command::Wait).unwrap();
    }
    w.execute(Command::ArmLoad(1)).unwrap();
    w.execute(Command::RotateTo(1)).unwrap();
    let events = w.execute(Command::ArmUnload(1)).unwrap();
    let broken: Vec<_> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::GlassBroken { .. }))
        .collect();
    assert_eq!(broken.len(), 2);
    assert_eq!(w.counters.broken, 2);
    assert_eq!(w.chamber_glass_state(1).unwrap(), ChamberGlassState::Empty);
    assert!(w.conservation_holds());
}

#[test]
fn chamber_sensor_reports_slot_state() {
    let mut w = world(1, 1);
    assert_eq!(w.chamber_glass_state(1).unwrap(), ChamberGlassState::Empty);
    w.tick();
    assert_eq!(w.chamber_glass_state(0).unwrap(), ChamberGlassState::Raw);
    assert_eq!(w.chamber_glass_state(7), Err(WorldError::InvalidChamber(7)));
}

#[test]
fn loader_processes_in_place_without_process_chambers() {
    let mut w = world(0, 1);
    let events = w.tick();
    assert!(has(&events, |k| matches!(k, EventKind::ProcessStarted { glass: 0, chamber: 0 })));
    assert_eq!(w.chamber_glass_state(0).unwrap(), ChamberGlassState::Processing);
    for _ in 0..w.config.physical.process_time_ticks {
        w.tick();
    }
    assert_eq!(w.chamber_glass_state(0).unwrap(), ChamberGlassState::Processed);
}

#[test]
fn raw_glass_at_unloader_counts_as_incomplete() {
    let mut w = world(1, 1);
    w.tick();
    w.execute(Command::ArmLoad(0)).unwrap();
    w.execute(Command::RotateTo(2)).unwrap();
    let events = w.execute(Command::ArmUnload(0)).unwrap();
    assert!(has(&events, |k| matches!(k, EventKind::GlassUnloaded { processed: false, .. })));
    assert_eq!(w.counters.incomplete(), 1);
    assert_eq!(w.chambers[2].unload_count, 1);
}

#[test]
fn event_csv_round_trips() {
    let mut w = world(1, 2);
    w.tick();
    w.execute(Command::ArmLoad(1)).unwrap();
    w.execute(Command::RotateTo(2)).unwrap();
    w.execute(Command::ArmUnload(1)).unwrap();
    let mut buf = Vec::new();
    write_events_csv(&w.event_log, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("tick,event,glass_id,chamber_id,detail\n"));
    let parsed = read_events_csv(buf.as_slice()).unwrap();
    assert_eq!(parsed, w.event_log);
}
