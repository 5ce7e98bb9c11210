//! Robot description: physical parameters, generalized state, controller gains,
//! and the validation pass that gates every simulation run.

use nalgebra::SVector;

/// Generalized coordinate vector layout.
///
/// `q = [x, z, theta, phi_w, q_hL, q_kL, q_hR, q_kR]` where `x, z` are the
/// torso position in the sagittal plane, `theta` the torso pitch, `phi_w` the
/// reaction wheel angle relative to the torso, and the remaining four entries
/// the hip and knee angles of the left and right legs.
pub const NDOF: usize = 8;
pub const IX: usize = 0;
pub const IZ: usize = 1;
pub const ITH: usize = 2;
pub const IPHI: usize = 3;
pub const IHL: usize = 4;
pub const IKL: usize = 5;
pub const IHR: usize = 6;
pub const IKR: usize = 7;

/// Actuator vector layout: `[tau_w, tau_hL, tau_kL, tau_hR, tau_kR]`.
pub const NACT: usize = 5;

pub type Vec8 = SVector<f64, NDOF>;
pub type Vec5 = SVector<f64, NACT>;

pub const DEG: f64 = std::f64::consts::PI / 180.0;

/// Lunar surface gravity in m/s^2.
pub const MOON_GRAVITY: f64 = 1.625;

/// Physical and actuator parameters of the hopper.
///
/// All quantities in SI units. Angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    pub torso_mass: f64,
    pub wheel_mass: f64,
    /// Per leg.
    pub upper_leg_mass: f64,
    /// Per leg.
    pub lower_leg_mass: f64,
    pub upper_leg_length: f64,
    pub lower_leg_length: f64,
    /// Torso pitch inertia about its own center of mass.
    pub torso_inertia: f64,
    /// Reaction wheel inertia about its spin axis.
    pub wheel_inertia: f64,
    /// (lo, hi) hip joint range.
    pub hip_range: (f64, f64),
    /// (lo, hi) knee joint range.
    pub knee_range: (f64, f64),
    /// Reaction wheel torque limit, N*m.
    pub wheel_torque_limit: f64,
    /// Reaction wheel speed limit, rad/s.
    pub wheel_speed_limit: f64,
    pub gear_ratio: f64,
    pub foot_radius: f64,
    pub gravity: f64,
}

impl RobotParams {
    pub fn total_mass(&self) -> f64 {
        self.torso_mass + self.wheel_mass + 2.0 * (self.upper_leg_mass + self.lower_leg_mass)
    }

    /// Combined torso + wheel pitch inertia used by the reduced gyrostat model.
    pub fn pitch_inertia(&self) -> f64 {
        self.torso_inertia + self.wheel_inertia
    }
}

/// Torso sagittal bounding box used to derive the default torso inertia
/// (solid cuboid).
const TORSO_BOX: (f64, f64) = (0.30, 0.20);
/// Wheel disc radius used to derive the default wheel inertia.
const WHEEL_RADIUS: f64 = 0.12;

impl Default for RobotParams {
    /// Default parameter set for the Moon-gravity hopper. Torso and wheel
    /// inertias are derived (cuboid torso, solid-disc wheel) and can be
    /// overridden through the config file.
    fn default() -> Self {
        let torso_mass = 4.0;
        let wheel_mass = 3.0;
        RobotParams {
            torso_mass,
            wheel_mass,
            upper_leg_mass: 0.4,
            lower_leg_mass: 0.2,
            upper_leg_length: 0.5,
            lower_leg_length: 0.5,
            torso_inertia: torso_mass * (TORSO_BOX.0.powi(2) + TORSO_BOX.1.powi(2)) / 12.0,
            wheel_inertia: 0.5 * wheel_mass * WHEEL_RADIUS.powi(2),
            hip_range: (-120.0 * DEG, 120.0 * DEG),
            knee_range: (-160.0 * DEG, 0.0),
            wheel_torque_limit: 29.5,
            wheel_speed_limit: 6000.0 * 2.0 * std::f64::consts::PI / 60.0,
            gear_ratio: 30.0,
            foot_radius: 0.04,
            gravity: MOON_GRAVITY,
        }
    }
}

/// Generalized coordinates and rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenState {
    pub q: Vec8,
    pub qdot: Vec8,
}

impl GenState {
    pub fn zero() -> Self {
        GenState {
            q: Vec8::zeros(),
            qdot: Vec8::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.qdot.iter().all(|v| v.is_finite())
    }

    /// Clamp joint angles into the configured ranges. Applied at integration
    /// boundaries; matching rates are zeroed when a limit is hit.
    pub fn clamp_joints(&mut self, params: &RobotParams) {
        for (idx, range) in [
            (IHL, params.hip_range),
            (IKL, params.knee_range),
            (IHR, params.hip_range),
            (IKR, params.knee_range),
        ] {
            if self.q[idx] < range.0 {
                self.q[idx] = range.0;
                self.qdot[idx] = self.qdot[idx].max(0.0);
            } else if self.q[idx] > range.1 {
                self.q[idx] = range.1;
                self.qdot[idx] = self.qdot[idx].min(0.0);
            }
        }
    }
}

/// PID gains for the flight-phase attitude loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    /// Clamp on the integral state, rad*s.
    pub integral_clamp: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        // Pole placement on the reduced pitch model.
        PidGains {
            kp: 60.0,
            kd: 18.0,
            ki: 4.0,
            integral_clamp: 0.5,
        }
    }
}

impl PidGains {
    /// Routh-Hurwitz stability test for the closed pitch loop
    /// `(I_b + I_w) s^3 + K_d s^2 + K_p s + K_i = 0`.
    ///
    /// All coefficients must be positive (K_i may be zero, degenerating to a
    /// stable PD loop) and `K_d * K_p > (I_b + I_w) * K_i`.
    pub fn is_stable(&self, pitch_inertia: f64) -> bool {
        if !(self.kp > 0.0 && self.kd > 0.0 && self.ki >= 0.0) {
            return false;
        }
        if self.ki == 0.0 {
            return true;
        }
        self.kd * self.kp > pitch_inertia * self.ki
    }
}

/// Outcome of parameter validation. Failures are carried, not thrown.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of a parameter set.
pub fn validate_parameters(params: &RobotParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut fail = |msg: String| report.violations.push(msg);

    let positives = [
        ("torso_mass", params.torso_mass),
        ("wheel_mass", params.wheel_mass),
        ("upper_leg_mass", params.upper_leg_mass),
        ("lower_leg_mass", params.lower_leg_mass),
        ("upper_leg_length", params.upper_leg_length),
        ("lower_leg_length", params.lower_leg_length),
        ("torso_inertia", params.torso_inertia),
        ("wheel_inertia", params.wheel_inertia),
        ("wheel_torque_limit", params.wheel_torque_limit),
        ("wheel_speed_limit", params.wheel_speed_limit),
        ("gear_ratio", params.gear_ratio),
        ("foot_radius", params.foot_radius),
        ("gravity", params.gravity),
    ];
    for (name, v) in positives {
        if !(v > 0.0) || !v.is_finite() {
            fail(format!("non-positive {name}: {v}"));
        }
    }
    for (name, (lo, hi)) in [("hip_range", params.hip_range), ("knee_range", params.knee_range)] {
        if !(lo < hi) {
            fail(format!("unordered {name}: [{lo}, {hi}]"));
        }
    }
    if params.hip_range.0 < -120.0 * DEG - 1e-12 || params.hip_range.1 > 120.0 * DEG + 1e-12 {
        fail(format!(
            "hip_range outside [-120 deg, 120 deg]: [{}, {}]",
            params.hip_range.0, params.hip_range.1
        ));
    }
    if params.knee_range.0 < -160.0 * DEG - 1e-12 || params.knee_range.1 > 1e-12 {
        fail(format!(
            "knee_range outside [-160 deg, 0 deg]: [{}, {}]",
            params.knee_range.0, params.knee_range.1
        ));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults_pass_with_total_mass_8_2() {
        let params = RobotParams::default();
        let report = validate_parameters(&params);
        assert!(report.passed(), "violations: {:?}", report.violations);
        assert!(report.warnings.is_empty());
        assert_eq!(params.total_mass(), 8.2);
    }

    #[test]
    fn zero_length_fails() {
        let params = RobotParams {
            upper_leg_length: 0.0,
            ..RobotParams::default()
        };
        let report = validate_parameters(&params);
        assert!(!report.passed());
        assert!(report.violations.iter().any(|v| v.contains("upper_leg_length")));
    }

    #[test]
    fn unordered_knee_range_fails() {
        let params = RobotParams {
            knee_range: (0.0, -160.0 * DEG),
            ..RobotParams::default()
        };
        let report = validate_parameters(&params);
        assert!(report.violations.iter().any(|v| v.contains("knee_range")));
    }

    #[test]
    fn joint_clamp_zeroes_outward_rate() {
        let params = RobotParams::default();
        let mut s = GenState::zero();
        s.q[IKL] = 0.2; // above the knee upper limit of 0
        s.qdot[IKL] = 1.0;
        s.clamp_joints(&params);
        assert_eq!(s.q[IKL], 0.0);
        assert_eq!(s.qdot[IKL], 0.0);
    }

    #[test]
    fn default_gains_pass_routh_hurwitz() {
        let params = RobotParams::default();
        assert!(PidGains::default().is_stable(params.pitch_inertia()));
    }

    #[test]
    fn integral_heavy_gains_rejected() {
        let params = RobotParams::default();
        let bad = PidGains {
            kp: 1.0,
            kd: 0.01,
            ki: 50.0,
            integral_clamp: 0.5,
        };
        assert!(!bad.is_stable(params.pitch_inertia()));
    }
}
