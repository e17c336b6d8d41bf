//! Physical, process and geometry parameters of the FAB cell.
//!
//! Durations given in seconds are converted to whole ticks by rounding half-up.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Physical parameter setting of the cell (glass body, friction, robot speed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub glass_scale_x: f64,
    pub glass_scale_y: f64,
    pub glass_scale_z: f64,
    pub glass_mass: f64,
    pub drag: f64,
    pub angular_drag: f64,
    pub gravity_enabled: bool,
    pub dynamic_friction: f64,
    pub static_friction: f64,
    /// Rotation speed in speed units; see [`GeometryParams::angular_gain`].
    pub transfer_speed: f64,
    /// In-place process dwell used when the loader is the only processing
    /// station (layouts without process chambers).
    pub process_time_ticks: u32,
    /// Radius at which a carried glass rides during rotation.
    pub arm_radius: f64,
    /// Gravitational acceleration in length units per second squared.
    pub gravity_accel: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            glass_scale_x: 1.0,
            glass_scale_y: 0.01,
            glass_scale_z: 1.0,
            glass_mass: 500.0,
            drag: 0.0,
            angular_drag: 0.05,
            gravity_enabled: true,
            dynamic_friction: 0.6,
            static_friction: 0.6,
            transfer_speed: 0.01,
            process_time_ticks: 50,
            arm_radius: 1.0,
            gravity_accel: 9.81,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let non_negative = [
            ("physical.glass_scale_x", self.glass_scale_x),
            ("physical.glass_scale_y", self.glass_scale_y),
            ("physical.glass_scale_z", self.glass_scale_z),
            ("physical.glass_mass", self.glass_mass),
            ("physical.drag", self.drag),
            ("physical.angular_drag", self.angular_drag),
            ("physical.dynamic_friction", self.dynamic_friction),
            ("physical.static_friction", self.static_friction),
            ("physical.gravity_accel", self.gravity_accel),
        ];
        for (field, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ConfigError::invalid(field, "must be a finite value >= 0"));
            }
        }
        if self.static_friction < self.dynamic_friction {
            return Err(ConfigError::invalid(
                "physical.static_friction",
                "must be >= physical.dynamic_friction",
            ));
        }
        if !(self.transfer_speed > 0.0) || !self.transfer_speed.is_finite() {
            return Err(ConfigError::invalid("physical.transfer_speed", "must be > 0"));
        }
        if self.process_time_ticks < 1 {
            return Err(ConfigError::invalid("physical.process_time_ticks", "must be >= 1"));
        }
        if !(self.arm_radius > 0.0) || !self.arm_radius.is_finite() {
            return Err(ConfigError::invalid("physical.arm_radius", "must be > 0"));
        }
        Ok(())
    }

    fn effective_gravity(&self) -> f64 {
        if self.gravity_enabled {
            self.gravity_accel
        } else {
            0.0
        }
    }
}

/// Largest angular speed (rad/s) at which static friction still supplies the
/// centripetal force for a glass carried at `arm_radius`:
/// `mu_s * g >= omega^2 * r`.
pub fn max_safe_rotation_speed(physical: &PhysicalParams) -> f64 {
    (physical.static_friction * physical.effective_gravity() / physical.arm_radius).sqrt()
}

/// [`max_safe_rotation_speed`] expressed in radians per tick.
pub fn max_safe_rotation_per_tick(physical: &PhysicalParams, tick_duration_s: f64) -> f64 {
    max_safe_rotation_speed(physical) * tick_duration_s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamberPlacement {
    Cluster,
}

/// Process recipe of the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessParams {
    pub glass_input_interval_s: f64,
    pub glass_size_mm: [f64; 2],
    pub glass_weight: f64,
    pub num_process_chambers: usize,
    pub chamber_placement: ChamberPlacement,
    pub num_arms: usize,
    pub process_time_s: f64,
    pub tick_duration_s: f64,
    /// Uniform jitter added to each input interval, drawn from the world RNG.
    pub input_jitter_s: f64,
}

impl Default for ProcessParams {
    fn default() -> Self {
        Self {
            glass_input_interval_s: 20.0,
            glass_size_mm: [1000.0, 1000.0],
            glass_weight: 500.0,
            num_process_chambers: 3,
            chamber_placement: ChamberPlacement::Cluster,
            num_arms: 2,
            process_time_s: 30.0,
            tick_duration_s: 0.1,
            input_jitter_s: 0.0,
        }
    }
}

impl ProcessParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_arms != 1 && self.num_arms != 2 {
            return Err(ConfigError::invalid("process.num_arms", "must be 1 or 2"));
        }
        let positive = [
            ("process.glass_input_interval_s", self.glass_input_interval_s),
            ("process.process_time_s", self.process_time_s),
            ("process.tick_duration_s", self.tick_duration_s),
            ("process.glass_weight", self.glass_weight),
            ("process.glass_size_mm", self.glass_size_mm[0].min(self.glass_size_mm[1])),
        ];
        for (field, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConfigError::invalid(field, "must be > 0"));
            }
        }
        if !(self.input_jitter_s >= 0.0) {
            return Err(ConfigError::invalid("process.input_jitter_s", "must be >= 0"));
        }
        if self.interval_ticks() < 1 {
            return Err(ConfigError::invalid(
                "process.glass_input_interval_s",
                "must be at least one tick",
            ));
        }
        if self.process_ticks() < 1 {
            return Err(ConfigError::invalid("process.process_time_s", "must be at least one tick"));
        }
        Ok(())
    }

    pub fn to_ticks(&self, seconds: f64) -> u32 {
        seconds_to_ticks(seconds, self.tick_duration_s)
    }

    pub fn interval_ticks(&self) -> u32 {
        self.to_ticks(self.glass_input_interval_s)
    }

    pub fn process_ticks(&self) -> u32 {
        self.to_ticks(self.process_time_s)
    }

    pub fn jitter_ticks(&self) -> u32 {
        self.to_ticks(self.input_jitter_s)
    }

    /// Loader + process chambers + unloader.
    pub fn num_chambers(&self) -> usize {
        self.num_process_chambers + 2
    }
}

/// Round-half-up conversion of seconds to ticks.
pub fn seconds_to_ticks(seconds: f64, tick_duration_s: f64) -> u32 {
    let ticks = (seconds / tick_duration_s + 0.5).floor();
    if ticks <= 0.0 {
        0
    } else {
        ticks as u32
    }
}

/// Cell layout and arm motion profile. None of these values are given by the
/// source recipe; they are chosen for a unit-radius cluster cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    pub layout_radius: f64,
    pub arm_stroke: f64,
    pub lift_height: f64,
    pub extend_ticks: u32,
    pub lift_ticks: u32,
    pub retract_ticks: u32,
    /// Radians per tick per unit of `transfer_speed`. When absent, the gain
    /// is calibrated so that `speed_reference` equals the retention limit of
    /// the default physical parameters.
    pub angular_gain: Option<f64>,
    pub speed_reference: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            layout_radius: 1.0,
            arm_stroke: 0.5,
            lift_height: 0.05,
            extend_ticks: 4,
            lift_ticks: 2,
            retract_ticks: 4,
            angular_gain: None,
            speed_reference: 0.01,
        }
    }
}

impl GeometryParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.layout_radius > 0.0) {
            return Err(ConfigError::invalid("geometry.layout_radius", "must be > 0"));
        }
        if !(self.arm_stroke > 0.0) || self.arm_stroke > self.layout_radius {
            return Err(ConfigError::invalid(
                "geometry.arm_stroke",
                "must be in (0, layout_radius]",
            ));
        }
        if !(self.lift_height > 0.0) {
            return Err(ConfigError::invalid("geometry.lift_height", "must be > 0"));
        }
        for (field, value) in [
            ("geometry.extend_ticks", self.extend_ticks),
            ("geometry.lift_ticks", self.lift_ticks),
            ("geometry.retract_ticks", self.retract_ticks),
        ] {
            if value < 1 {
                return Err(ConfigError::invalid(field, "must be >= 1"));
            }
        }
        if let Some(gain) = self.angular_gain {
            if !(gain > 0.0) || !gain.is_finite() {
                return Err(ConfigError::invalid("geometry.angular_gain", "must be > 0"));
            }
        }
        if !(self.speed_reference > 0.0) {
            return Err(ConfigError::invalid("geometry.speed_reference", "must be > 0"));
        }
        Ok(())
    }

    /// Duration of a full get or put sequence.
    pub fn handling_ticks(&self) -> u32 {
        self.extend_ticks + self.lift_ticks + self.retract_ticks
    }

    /// Angle per tick advanced at `transfer_speed`.
    pub fn rotation_rate(&self, transfer_speed: f64, tick_duration_s: f64) -> f64 {
        match self.angular_gain {
            Some(gain) => transfer_speed * gain,
            None => {
                (transfer_speed / self.speed_reference)
                    * max_safe_rotation_per_tick(&PhysicalParams::default(), tick_duration_s)
            }
        }
    }
}

/// Everything needed to build a world.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldConfig {
    pub physical: PhysicalParams,
    pub process: ProcessParams,
    pub geometry: GeometryParams,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.physical.validate()?;
        self.process.validate()?;
        self.geometry.validate()
    }

    /// Angle advanced per tick by a rotation at `transfer_speed`.
    pub fn rotation_rate_per_tick(&self) -> f64 {
        self.geometry
            .rotation_rate(self.physical.transfer_speed, self.process.tick_duration_s)
    }

    pub fn omega_max_per_tick(&self) -> f64 {
        max_safe_rotation_per_tick(&self.physical, self.process.tick_duration_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_max_matches_friction_bound() {
        let physical = PhysicalParams::default();
        let omega = max_safe_rotation_speed(&physical);
        assert!((omega - 2.4261).abs() < 1e-4);
        // mu_s * g == omega^2 * r at the bound
        let lhs = physical.static_friction * physical.gravity_accel;
        let rhs = omega * omega * physical.arm_radius;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn frictionless_glass_has_no_safe_speed() {
        let physical = PhysicalParams {
            static_friction: 0.0,
            dynamic_friction: 0.0,
            ..PhysicalParams::default()
        };
        assert_eq!(max_safe_rotation_speed(&physical), 0.0);
    }

    #[test]
    fn default_calibration_maps_reference_speed_onto_limit() {
        let config = WorldConfig::default();
        assert_eq!(config.rotation_rate_per_tick(), config.omega_max_per_tick());

        let mut faster = config.clone();
        faster.physical.transfer_speed = 0.0101;
        assert!(faster.rotation_rate_per_tick() > faster.omega_max_per_tick());
    }

    #[test]
    fn seconds_round_half_up() {
        assert_eq!(seconds_to_ticks(20.0, 0.1), 200);
        assert_eq!(seconds_to_ticks(30.0, 0.1), 300);
        assert_eq!(seconds_to_ticks(0.25, 0.1), 3);
        assert_eq!(seconds_to_ticks(0.04, 0.1), 0);
    }

    #[test]
    fn static_friction_below_dynamic_is_rejected() {
        let physical = PhysicalParams {
            static_friction: 0.5,
            dynamic_friction: 0.6,
            ..PhysicalParams::default()
        };
        let err = physical.validate().unwrap_err();
        assert!(err.to_string().contains("physical.static_friction"));
    }
}
