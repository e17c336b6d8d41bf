//! Observation encodings.
//!
//! Basic: chamber positions `(x, z)`, robot heading `(sin, cos)`, per arm
//! `(extension, height, holding)`, per glass slot `(present, x, z, processed)`,
//! then the distance from the robot to each chamber and from each arm tip to
//! the nearest glass lying in a chamber. Positions are divided by the layout
//! radius, distances by its diameter.
//!
//! Reduced: a 4-way one-hot per chamber (empty, raw, processing, processed),
//! a facing one-hot with one extra "between chambers" slot, and a 3-way
//! one-hot per arm (none, unfinished, processed).

use crate::world::{ChamberGlassState, GlassLocation, GlassState, WorldState};

use super::{EnvConfig, ObservationMode};

const GLASS_FEATURES: usize = 4;

pub fn basic_len(chambers: usize, arms: usize, slots: usize) -> usize {
    2 * chambers + 2 + 3 * arms + GLASS_FEATURES * slots + chambers + arms
}

pub fn reduced_len(chambers: usize, arms: usize) -> usize {
    4 * chambers + chambers + 1 + 3 * arms
}

pub fn observation_len(config: &EnvConfig) -> usize {
    let (c, a) = (config.num_chambers(), config.num_arms());
    match config.env.observation_mode {
        ObservationMode::Basic => basic_len(c, a, config.env.max_glasses_tracked),
        ObservationMode::Reduced => reduced_len(c, a),
    }
}

pub fn observe(world: &WorldState, config: &EnvConfig) -> Vec<f64> {
    match config.env.observation_mode {
        ObservationMode::Basic => observe_basic(world, config.env.max_glasses_tracked),
        ObservationMode::Reduced => observe_reduced(world),
    }
}

/// Arm tip on the horizontal plane; the arm retracted sits one stroke short
/// of the chamber ring.
fn arm_tip(world: &WorldState, extension: f64) -> (f64, f64) {
    let g = &world.config.geometry;
    let r = g.layout_radius - g.arm_stroke + extension;
    (r * world.robot.theta.cos(), r * world.robot.theta.sin())
}

fn chamber_point(world: &WorldState, chamber: usize) -> (f64, f64) {
    let r = world.config.geometry.layout_radius;
    let angle = world.chambers[chamber].angle;
    (r * angle.cos(), r * angle.sin())
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

pub fn observe_basic(world: &WorldState, slots: usize) -> Vec<f64> {
    let c = world.num_chambers();
    let a = world.num_arms();
    let geometry = &world.config.geometry;
    let radius = geometry.layout_radius;
    let mut out = Vec::with_capacity(basic_len(c, a, slots));

    for chamber in 0..c {
        let (x, z) = chamber_point(world, chamber);
        out.push(x / radius);
        out.push(z / radius);
    }
    out.push(world.robot.theta.sin());
    out.push(world.robot.theta.cos());
    for arm in &world.robot.arms {
        out.push(arm.extension / geometry.arm_stroke);
        out.push(arm.height / geometry.lift_height);
        out.push(if arm.held_glass.is_some() { 1.0 } else { 0.0 });
    }

    let mut glass_slots = vec![[0.0; GLASS_FEATURES]; slots];
    let mut filled = vec![false; slots];
    // BTreeMap iteration is by ascending id, so the lowest id keeps a slot.
    for glass in world.glasses.values().filter(|g| !g.state.is_terminal()) {
        let slot = (glass.id % slots as u64) as usize;
        if filled[slot] {
            continue;
        }
        filled[slot] = true;
        let (x, z) = match glass.location {
            GlassLocation::InChamber(chamber) => chamber_point(world, chamber),
            GlassLocation::OnArm(arm) => arm_tip(world, world.robot.arms[arm].extension),
        };
        let processed = if glass.state == GlassState::Processed { 1.0 } else { 0.0 };
        glass_slots[slot] = [1.0, x / radius, z / radius, processed];
    }
    for features in glass_slots {
        out.extend_from_slice(&features);
    }

    let robot = (radius * world.robot.theta.cos(), radius * world.robot.theta.sin());
    for chamber in 0..c {
        out.push(dist(robot, chamber_point(world, chamber)) / (2.0 * radius));
    }
    for arm in &world.robot.arms {
        let tip = arm_tip(world, arm.extension);
        let nearest = world
            .chambers
            .iter()
            .filter(|ch| ch.occupant.is_some())
            .map(|ch| dist(tip, chamber_point(world, ch.id)))
            .fold(f64::INFINITY, f64::min);
        out.push(if nearest.is_finite() { nearest / (2.0 * radius) } else { 1.0 });
    }
    out
}

pub fn observe_reduced(world: &WorldState) -> Vec<f64> {
    let c = world.num_chambers();
    let a = world.num_arms();
    let mut out = vec![0.0; reduced_len(c, a)];
    for chamber in 0..c {
        let idx = match world.chamber_glass_state(chamber).expect("chamber in range") {
            ChamberGlassState::Empty => 0,
            ChamberGlassState::Raw => 1,
            ChamberGlassState::Processing => 2,
            ChamberGlassState::Processed => 3,
        };
        out[4 * chamber + idx] = 1.0;
    }
    let facing = world.facing_chamber().unwrap_or(c);
    out[4 * c + facing] = 1.0;
    let base = 5 * c + 1;
    for (i, arm) in world.robot.arms.iter().enumerate() {
        let idx = match arm.held_glass.map(|g| world.glasses[&g].state) {
            None => 0,
            Some(GlassState::Processed) => 2,
            Some(_) => 1,
        };
        out[base + 3 * i + idx] = 1.0;
    }
    out
}
