//! Simulation configuration: a flat `key = value` text format (SI units,
//! `#` comments), override handling, and the load-time validation gates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector2;
use thiserror::Error;

use crate::contact::ContactParams;
use crate::control::GaitParams;
use crate::model::{validate_parameters, PidGains, RobotParams, MOON_GRAVITY};
use crate::terrain::{Crater, TerrainSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GravityPreset {
    Moon,
    Custom(f64),
}

/// Full experiment configuration. One instance drives one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub robot: RobotParams,
    /// Integrator timestep, s.
    pub dt: f64,
    /// Controller update rate, Hz. The control period must be an integer
    /// multiple of `dt`.
    pub control_frequency: f64,
    pub episode_duration: f64,
    pub gravity_preset: GravityPreset,
    pub gains: PidGains,
    pub gait: GaitParams,
    pub contact: ContactParams,
    pub terrain: TerrainSpec,
    pub rw_enabled: bool,
    /// Apply the impulsive impact map at touchdown instead of relying on the
    /// compliant contact alone.
    pub rigid_touchdown: bool,
    pub rng_seed: u64,
    /// Aggregate deviation-reduction threshold for the compare command, %.
    pub compare_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            robot: RobotParams::default(),
            // 20 physics substeps per 1 kHz control period: first-order
            // symplectic integration needs this to hold flight-phase angular
            // momentum about the CoM to better than 0.1% during leg swings.
            dt: 5e-5,
            control_frequency: 1000.0,
            episode_duration: 25.0,
            gravity_preset: GravityPreset::Moon,
            gains: PidGains::default(),
            gait: GaitParams::default(),
            contact: ContactParams::default(),
            terrain: TerrainSpec::default(),
            rw_enabled: true,
            rigid_touchdown: false,
            rng_seed: 1,
            compare_threshold: 50.0,
        }
    }
}

impl SimConfig {
    /// Physics steps per control update.
    pub fn steps_per_control(&self) -> usize {
        (1.0 / (self.control_frequency * self.dt)).round().max(1.0) as usize
    }

    pub fn gravity(&self) -> f64 {
        match self.gravity_preset {
            GravityPreset::Moon => MOON_GRAVITY,
            GravityPreset::Custom(g) => g,
        }
    }

    /// Terrain spec with the episode seed folded in.
    pub fn seeded_terrain(&self) -> TerrainSpec {
        TerrainSpec {
            rng_seed: self.rng_seed,
            ..self.terrain.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let report = validate_parameters(&self.robot);
        if !report.passed() {
            return Err(ConfigError::Invalid(format!(
                "robot parameters: {}",
                report.violations.join("; ")
            )));
        }
        if !(self.dt > 0.0) {
            return Err(ConfigError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        let period = 1.0 / self.control_frequency;
        let ratio = period / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(ConfigError::Invalid(format!(
                "control period {period} s is not an integer multiple of dt {}",
                self.dt
            )));
        }
        if self.episode_duration < 0.0 {
            return Err(ConfigError::Invalid("episode_duration must be non-negative".into()));
        }
        if !self.gains.is_stable(self.robot.pitch_inertia()) {
            return Err(ConfigError::Invalid(format!(
                "PID gains (kp={}, kd={}, ki={}) fail the Routh-Hurwitz closed-loop test \
                 for pitch inertia {}",
                self.gains.kp,
                self.gains.kd,
                self.gains.ki,
                self.robot.pitch_inertia()
            )));
        }
        if !(self.gait.crouch_duration > 0.0 && self.gait.pushoff_duration > 0.0) {
            return Err(ConfigError::Invalid("gait durations must be positive".into()));
        }
        let leg_len = self.robot.upper_leg_length + self.robot.lower_leg_length;
        if self.gait.crouch_depth >= leg_len {
            return Err(ConfigError::Invalid(format!(
                "crouch_depth {} exceeds leg length {leg_len}",
                self.gait.crouch_depth
            )));
        }
        if !(self.contact.stiffness > 0.0 && self.contact.damping > 0.0) {
            return Err(ConfigError::Invalid("contact stiffness/damping must be positive".into()));
        }
        if self.contact.friction < 0.0 || !(self.contact.v_reg > 0.0) {
            return Err(ConfigError::Invalid("invalid contact friction parameters".into()));
        }
        self.terrain
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Canonical text form; parsing it back reproduces the value exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let f = |v: f64| format!("{v:?}");
        s.push_str("# hopper experiment configuration (SI units)\n\n");
        let r = &self.robot;
        kv(&mut s, "robot.torso_mass", f(r.torso_mass));
        kv(&mut s, "robot.wheel_mass", f(r.wheel_mass));
        kv(&mut s, "robot.upper_leg_mass", f(r.upper_leg_mass));
        kv(&mut s, "robot.lower_leg_mass", f(r.lower_leg_mass));
        kv(&mut s, "robot.upper_leg_length", f(r.upper_leg_length));
        kv(&mut s, "robot.lower_leg_length", f(r.lower_leg_length));
        kv(&mut s, "robot.torso_inertia", f(r.torso_inertia));
        kv(&mut s, "robot.wheel_inertia", f(r.wheel_inertia));
        kv(&mut s, "robot.hip_min", f(r.hip_range.0));
        kv(&mut s, "robot.hip_max", f(r.hip_range.1));
        kv(&mut s, "robot.knee_min", f(r.knee_range.0));
        kv(&mut s, "robot.knee_max", f(r.knee_range.1));
        kv(&mut s, "robot.wheel_torque_limit", f(r.wheel_torque_limit));
        kv(&mut s, "robot.wheel_speed_limit", f(r.wheel_speed_limit));
        kv(&mut s, "robot.gear_ratio", f(r.gear_ratio));
        kv(&mut s, "robot.foot_radius", f(r.foot_radius));
        kv(&mut s, "sim.dt", f(self.dt));
        kv(&mut s, "sim.control_frequency", f(self.control_frequency));
        kv(&mut s, "sim.episode_duration", f(self.episode_duration));
        match self.gravity_preset {
            GravityPreset::Moon => kv(&mut s, "sim.gravity_preset", "moon".into()),
            GravityPreset::Custom(g) => {
                kv(&mut s, "sim.gravity_preset", "custom".into());
                kv(&mut s, "sim.gravity", f(g));
            }
        }
        kv(&mut s, "sim.rw_enabled", self.rw_enabled.to_string());
        kv(&mut s, "sim.rigid_touchdown", self.rigid_touchdown.to_string());
        kv(&mut s, "sim.rng_seed", self.rng_seed.to_string());
        kv(&mut s, "sim.compare_threshold", f(self.compare_threshold));
        let g = &self.gains;
        kv(&mut s, "control.kp", f(g.kp));
        kv(&mut s, "control.kd", f(g.kd));
        kv(&mut s, "control.ki", f(g.ki));
        kv(&mut s, "control.integral_clamp", f(g.integral_clamp));
        let gt = &self.gait;
        kv(&mut s, "gait.crouch_depth", f(gt.crouch_depth));
        kv(&mut s, "gait.crouch_duration", f(gt.crouch_duration));
        kv(&mut s, "gait.pushoff_duration", f(gt.pushoff_duration));
        kv(&mut s, "gait.pushoff_knee_rate", f(gt.pushoff_knee_rate));
        kv(&mut s, "gait.stance_settle_threshold", f(gt.stance_settle_threshold));
        kv(&mut s, "gait.settle_min_time", f(gt.settle_min_time));
        kv(&mut s, "gait.stance_length", f(gt.stance_length));
        kv(&mut s, "gait.landing_dwell", f(gt.landing_dwell));
        kv(&mut s, "gait.stance_splay", f(gt.stance_splay));
        kv(&mut s, "gait.pushoff_hip_bias", f(gt.pushoff_hip_bias));
        kv(&mut s, "gait.pushoff_knee_target", f(gt.pushoff_knee_target));
        kv(&mut s, "gait.flight_hip", f(gt.flight_hip));
        kv(&mut s, "gait.flight_ease_time", f(gt.flight_ease_time));
        kv(&mut s, "gait.stance_leg_kp", f(gt.stance_leg_kp));
        kv(&mut s, "gait.stance_leg_kd", f(gt.stance_leg_kd));
        kv(&mut s, "gait.flight_leg_kp", f(gt.flight_leg_kp));
        kv(&mut s, "gait.flight_leg_kd", f(gt.flight_leg_kd));
        kv(&mut s, "gait.landing_leg_kp", f(gt.landing_leg_kp));
        kv(&mut s, "gait.landing_leg_kd", f(gt.landing_leg_kd));
        kv(&mut s, "gait.leg_torque_limit", f(gt.leg_torque_limit));
        kv(&mut s, "gait.balance_kp", f(gt.balance_kp));
        kv(&mut s, "gait.balance_kd", f(gt.balance_kd));
        kv(&mut s, "gait.desaturation_gain", f(gt.desaturation_gain));
        kv(&mut s, "gait.desaturation_max", f(gt.desaturation_max));
        let c = &self.contact;
        kv(&mut s, "contact.stiffness", f(c.stiffness));
        kv(&mut s, "contact.damping", f(c.damping));
        kv(&mut s, "contact.friction", f(c.friction));
        kv(&mut s, "contact.v_reg", f(c.v_reg));
        let t = &self.terrain;
        kv(&mut s, "terrain.grid_size", t.grid_size.to_string());
        kv(&mut s, "terrain.extent", f(t.extent));
        kv(&mut s, "terrain.base_noise_amplitude", f(t.base_noise_amplitude));
        for (i, c) in t.craters.iter().enumerate() {
            kv(&mut s, &format!("terrain.crater.{i}.x"), f(c.center.x));
            kv(&mut s, &format!("terrain.crater.{i}.y"), f(c.center.y));
            kv(&mut s, &format!("terrain.crater.{i}.radius"), f(c.radius));
            kv(&mut s, &format!("terrain.crater.{i}.depth"), f(c.depth));
            kv(&mut s, &format!("terrain.crater.{i}.rim_height"), f(c.rim_height));
        }
        s
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            msg: format!("expected `key = value`, got `{raw}`"),
        })?;
        out.push((key.trim().to_string(), value.trim().to_string(), line));
    }
    Ok(out)
}

struct Reader {
    map: BTreeMap<String, (String, usize)>,
}

impl Reader {
    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("`{key}`: expected a number, got `{v}`"),
            }),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("`{key}`: expected an integer, got `{v}`"),
            }),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("`{key}`: expected true/false, got `{v}`"),
            }),
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(v, _)| v)
    }
}

/// Parse a config text, apply `key=value` overrides (which must reference
/// known keys), and validate the result.
pub fn load_config(text: &str, overrides: &[(String, String)]) -> Result<SimConfig, ConfigError> {
    let mut map: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (k, v, line) in parse_pairs(text)? {
        map.insert(k, (v, line));
    }
    for (k, v) in overrides {
        map.insert(k.clone(), (v.clone(), 0));
    }
    let mut r = Reader { map };
    let d = SimConfig::default();

    let robot = RobotParams {
        torso_mass: r.f64("robot.torso_mass", d.robot.torso_mass)?,
        wheel_mass: r.f64("robot.wheel_mass", d.robot.wheel_mass)?,
        upper_leg_mass: r.f64("robot.upper_leg_mass", d.robot.upper_leg_mass)?,
        lower_leg_mass: r.f64("robot.lower_leg_mass", d.robot.lower_leg_mass)?,
        upper_leg_length: r.f64("robot.upper_leg_length", d.robot.upper_leg_length)?,
        lower_leg_length: r.f64("robot.lower_leg_length", d.robot.lower_leg_length)?,
        torso_inertia: r.f64("robot.torso_inertia", d.robot.torso_inertia)?,
        wheel_inertia: r.f64("robot.wheel_inertia", d.robot.wheel_inertia)?,
        hip_range: (
            r.f64("robot.hip_min", d.robot.hip_range.0)?,
            r.f64("robot.hip_max", d.robot.hip_range.1)?,
        ),
        knee_range: (
            r.f64("robot.knee_min", d.robot.knee_range.0)?,
            r.f64("robot.knee_max", d.robot.knee_range.1)?,
        ),
        wheel_torque_limit: r.f64("robot.wheel_torque_limit", d.robot.wheel_torque_limit)?,
        wheel_speed_limit: r.f64("robot.wheel_speed_limit", d.robot.wheel_speed_limit)?,
        gear_ratio: r.f64("robot.gear_ratio", d.robot.gear_ratio)?,
        foot_radius: r.f64("robot.foot_radius", d.robot.foot_radius)?,
        gravity: MOON_GRAVITY, // set from the preset below
    };

    let gravity_preset = match r.string("sim.gravity_preset").as_deref() {
        None | Some("moon") => GravityPreset::Moon,
        Some("custom") => GravityPreset::Custom(r.f64("sim.gravity", MOON_GRAVITY)?),
        Some(other) => {
            return Err(ConfigError::Invalid(format!(
                "sim.gravity_preset must be `moon` or `custom`, got `{other}`"
            )))
        }
    };

    let gains = PidGains {
        kp: r.f64("control.kp", d.gains.kp)?,
        kd: r.f64("control.kd", d.gains.kd)?,
        ki: r.f64("control.ki", d.gains.ki)?,
        integral_clamp: r.f64("control.integral_clamp", d.gains.integral_clamp)?,
    };

    let gait = GaitParams {
        crouch_depth: r.f64("gait.crouch_depth", d.gait.crouch_depth)?,
        crouch_duration: r.f64("gait.crouch_duration", d.gait.crouch_duration)?,
        pushoff_duration: r.f64("gait.pushoff_duration", d.gait.pushoff_duration)?,
        pushoff_knee_rate: r.f64("gait.pushoff_knee_rate", d.gait.pushoff_knee_rate)?,
        stance_settle_threshold: r.f64(
            "gait.stance_settle_threshold",
            d.gait.stance_settle_threshold,
        )?,
        settle_min_time: r.f64("gait.settle_min_time", d.gait.settle_min_time)?,
        stance_length: r.f64("gait.stance_length", d.gait.stance_length)?,
        landing_dwell: r.f64("gait.landing_dwell", d.gait.landing_dwell)?,
        stance_splay: r.f64("gait.stance_splay", d.gait.stance_splay)?,
        pushoff_hip_bias: r.f64("gait.pushoff_hip_bias", d.gait.pushoff_hip_bias)?,
        pushoff_knee_target: r.f64("gait.pushoff_knee_target", d.gait.pushoff_knee_target)?,
        flight_hip: r.f64("gait.flight_hip", d.gait.flight_hip)?,
        flight_ease_time: r.f64("gait.flight_ease_time", d.gait.flight_ease_time)?,
        stance_leg_kp: r.f64("gait.stance_leg_kp", d.gait.stance_leg_kp)?,
        stance_leg_kd: r.f64("gait.stance_leg_kd", d.gait.stance_leg_kd)?,
        flight_leg_kp: r.f64("gait.flight_leg_kp", d.gait.flight_leg_kp)?,
        flight_leg_kd: r.f64("gait.flight_leg_kd", d.gait.flight_leg_kd)?,
        landing_leg_kp: r.f64("gait.landing_leg_kp", d.gait.landing_leg_kp)?,
        landing_leg_kd: r.f64("gait.landing_leg_kd", d.gait.landing_leg_kd)?,
        leg_torque_limit: r.f64("gait.leg_torque_limit", d.gait.leg_torque_limit)?,
        balance_kp: r.f64("gait.balance_kp", d.gait.balance_kp)?,
        balance_kd: r.f64("gait.balance_kd", d.gait.balance_kd)?,
        desaturation_gain: r.f64("gait.desaturation_gain", d.gait.desaturation_gain)?,
        desaturation_max: r.f64("gait.desaturation_max", d.gait.desaturation_max)?,
    };

    let contact = ContactParams {
        stiffness: r.f64("contact.stiffness", d.contact.stiffness)?,
        damping: r.f64("contact.damping", d.contact.damping)?,
        friction: r.f64("contact.friction", d.contact.friction)?,
        v_reg: r.f64("contact.v_reg", d.contact.v_reg)?,
    };

    let grid_size = r.u64("terrain.grid_size", d.terrain.grid_size as u64)? as usize;
    let extent = r.f64("terrain.extent", d.terrain.extent)?;
    let base_noise_amplitude =
        r.f64("terrain.base_noise_amplitude", d.terrain.base_noise_amplitude)?;
    // Craters are read as `terrain.crater.<i>.<field>`; explicit craters in
    // the file replace the defaults.
    let crater_indices: std::collections::BTreeSet<usize> = r
        .map
        .keys()
        .filter_map(|k| {
            k.strip_prefix("terrain.crater.")
                .and_then(|rest| rest.split('.').next())
                .and_then(|idx| idx.parse().ok())
        })
        .collect();
    let craters = if crater_indices.is_empty() && !r.map.contains_key("terrain.craters_clear") {
        d.terrain.craters.clone()
    } else {
        let mut cs = Vec::new();
        for i in crater_indices {
            cs.push(Crater {
                center: Vector2::new(
                    r.f64(&format!("terrain.crater.{i}.x"), 0.0)?,
                    r.f64(&format!("terrain.crater.{i}.y"), 0.0)?,
                ),
                radius: r.f64(&format!("terrain.crater.{i}.radius"), 1.0)?,
                depth: r.f64(&format!("terrain.crater.{i}.depth"), 0.1)?,
                rim_height: r.f64(&format!("terrain.crater.{i}.rim_height"), 0.0)?,
            });
        }
        cs
    };
    // `terrain.craters_clear = true` empties the crater list (flat presets).
    let clear = r.bool("terrain.craters_clear", false)?;
    let craters = if clear { Vec::new() } else { craters };

    let rng_seed = r.u64("sim.rng_seed", d.rng_seed)?;
    let config = SimConfig {
        robot: RobotParams {
            gravity: match gravity_preset {
                GravityPreset::Moon => MOON_GRAVITY,
                GravityPreset::Custom(g) => g,
            },
            ..robot
        },
        dt: r.f64("sim.dt", d.dt)?,
        control_frequency: r.f64("sim.control_frequency", d.control_frequency)?,
        episode_duration: r.f64("sim.episode_duration", d.episode_duration)?,
        gravity_preset,
        gains,
        gait,
        contact,
        terrain: TerrainSpec {
            grid_size,
            extent,
            craters,
            base_noise_amplitude,
            rng_seed: d.terrain.rng_seed,
        },
        rw_enabled: r.bool("sim.rw_enabled", d.rw_enabled)?,
        rigid_touchdown: r.bool("sim.rigid_touchdown", d.rigid_touchdown)?,
        rng_seed,
        compare_threshold: r.f64("sim.compare_threshold", d.compare_threshold)?,
    };

    if let Some(key) = r.map.keys().next() {
        return Err(ConfigError::UnknownKey { key: key.clone() });
    }
    config.validate()?;
    Ok(config)
}

/// FNV-1a hash of the canonical config text; recorded in log metadata.
pub fn config_hash(config: &SimConfig) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in config.to_text().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = SimConfig::default();
        let parsed = load_config(&cfg.to_text(), &[]).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn default_passes_validation() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn override_known_key() {
        let cfg = load_config("", &[("sim.rw_enabled".into(), "false".into())]).unwrap();
        assert!(!cfg.rw_enabled);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = load_config("sim.bogus = 1\n", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let err = load_config("sim.dt = 0.001\nnot a pair\n", &[]).unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unstable_gains_rejected_at_load() {
        let text = "control.kp = 1\ncontrol.kd = 0.01\ncontrol.ki = 50\n";
        let err = load_config(text, &[]).unwrap_err();
        assert!(err.to_string().contains("Routh-Hurwitz"));
    }

    #[test]
    fn non_multiple_control_period_rejected() {
        let err = load_config("sim.control_frequency = 333\n", &[]).unwrap_err();
        assert!(err.to_string().contains("integer multiple"));
    }

    #[test]
    fn hash_changes_with_config() {
        let a = SimConfig::default();
        let mut b = a.clone();
        b.rng_seed = 99;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
