//! Gait state machine and controllers: flight-phase PID attitude control of
//! the reaction wheel, stance-phase wheel desaturation, and the leg PD
//! tracking of phase-dependent joint targets.

use crate::contact::ContactState;
use crate::model::{GenState, PidGains, RobotParams, Vec5, IHL, IHR, IKL, IKR, IPHI, ITH};

/// Discrete gait mode. Transitions only along the cycle
/// Landing -> StanceStabilize -> CrouchLoad -> PushOff -> Flight -> Landing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopperPhase {
    Landing,
    StanceStabilize,
    CrouchLoad,
    PushOff,
    Flight,
}

impl HopperPhase {
    pub fn is_stance(&self) -> bool {
        !matches!(self, HopperPhase::Flight)
    }

    pub fn name(&self) -> &'static str {
        match self {
            HopperPhase::Landing => "landing",
            HopperPhase::StanceStabilize => "stance_stabilize",
            HopperPhase::CrouchLoad => "crouch_load",
            HopperPhase::PushOff => "push_off",
            HopperPhase::Flight => "flight",
        }
    }
}

/// Mutable controller bookkeeping carried across steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    /// Integrated pitch error, rad*s, clamped to the configured window.
    pub integral_error: f64,
    pub previous_error: f64,
    /// Wheel spin rate relative to the torso, rad/s; mirrored from the
    /// simulation state each control step.
    pub wheel_speed: f64,
    /// Time spent at >= 98% of the torque limit this hop, s.
    pub saturation_accumulator: f64,
}

impl ControllerState {
    pub fn new() -> Self {
        ControllerState {
            integral_error: 0.0,
            previous_error: 0.0,
            wheel_speed: 0.0,
            saturation_accumulator: 0.0,
        }
    }
}

impl Default for ControllerState {
    fn default() -> Self {
        Self::new()
    }
}

/// Fraction of the torque limit that counts as saturated operation.
pub const SATURATION_FRACTION: f64 = 0.98;

/// PID on torso pitch about a reference (`e = theta - theta_ref`). The
/// returned torque is the motor torque on the wheel; its reaction on the
/// torso opposes the pitch error. Output is clamped to the torque limit,
/// with conditional integration so the integral never grows while the
/// output is clamped.
pub fn pid_attitude_torque(
    mut cs: ControllerState,
    theta: f64,
    theta_dot: f64,
    theta_ref: f64,
    dt: f64,
    gains: &PidGains,
    tau_max: f64,
) -> (f64, ControllerState) {
    let e = theta - theta_ref;
    let unsat = gains.kp * e + gains.kd * theta_dot + gains.ki * cs.integral_error;
    if unsat.abs() < tau_max {
        cs.integral_error = (cs.integral_error + e * dt)
            .clamp(-gains.integral_clamp, gains.integral_clamp);
    }
    let tau = (gains.kp * e + gains.kd * theta_dot + gains.ki * cs.integral_error)
        .clamp(-tau_max, tau_max);
    if tau.abs() >= SATURATION_FRACTION * tau_max {
        cs.saturation_accumulator += dt;
    }
    cs.previous_error = e;
    (tau, cs)
}

/// Stance-phase wheel momentum dump via the pitch reference: leaning the
/// setpoint in proportion to the stored wheel speed lets gravity supply
/// the despin torque through the contact, so the attitude loop itself
/// drains momentum rather than fighting a separate bias torque. Zero in
/// flight, where there is no external torque to dump against, and during
/// Landing and PushOff so the touchdown transient and the thrust line stay
/// upright.
pub fn desaturation_lean(wheel_speed: f64, phase: HopperPhase, gait: &GaitParams) -> f64 {
    if !matches!(
        phase,
        HopperPhase::StanceStabilize | HopperPhase::CrouchLoad
    ) {
        return 0.0;
    }
    (-gait.desaturation_gain * wheel_speed).clamp(-gait.desaturation_max, gait.desaturation_max)
}

/// Zero any torque that would push the wheel further past its speed limit.
pub fn apply_wheel_speed_limit(tau: f64, wheel_speed: f64, speed_limit: f64) -> f64 {
    if wheel_speed.abs() >= speed_limit && tau * wheel_speed > 0.0 {
        0.0
    } else {
        tau
    }
}

/// Joint-space PD with torque clamping: `tau = kp (q* - q) + kd (qd* - qd)`.
pub fn joint_pd_torques(
    setpoints: &[f64; 4],
    rate_setpoints: &[f64; 4],
    q: &[f64; 4],
    qdot: &[f64; 4],
    kp: f64,
    kd: f64,
    torque_limit: f64,
) -> [f64; 4] {
    let mut tau = [0.0; 4];
    for i in 0..4 {
        tau[i] = (kp * (setpoints[i] - q[i]) + kd * (rate_setpoints[i] - qdot[i]))
            .clamp(-torque_limit, torque_limit);
    }
    tau
}

/// Gait shaping parameters. Magnitudes are tuning defaults for the shipped
/// Moon-gravity experiments; every one is exposed in the config.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitParams {
    /// Target center-of-mass drop during CrouchLoad, m.
    pub crouch_depth: f64,
    pub crouch_duration: f64,
    pub pushoff_duration: f64,
    /// Knee extension rate during PushOff, rad/s.
    pub pushoff_knee_rate: f64,
    /// Pitch-rate threshold to leave StanceStabilize, rad/s.
    pub stance_settle_threshold: f64,
    /// Minimum dwell in StanceStabilize before crouching, s.
    pub settle_min_time: f64,
    /// Hip-to-foot distance of the recovered standing posture, m.
    pub stance_length: f64,
    /// Fixed dwell in Landing before StanceStabilize, s.
    pub landing_dwell: f64,
    /// Hip fore/aft splay so the two feet form a support base, rad.
    pub stance_splay: f64,
    /// Backward hip lean ramped in during PushOff; tilts the thrust line to
    /// propel the hop forward (and perturbs pitch, which the wheel must
    /// absorb in flight), rad.
    pub pushoff_hip_bias: f64,
    /// Knee angle the push-off ramps toward, rad.
    pub pushoff_knee_target: f64,
    /// Flight leg lean from straight down, rad; the feet are held under the
    /// hips (via the leg IK at the stance length) so touchdown produces no
    /// pitch impulse.
    pub flight_hip: f64,
    /// Time to ease from the push-off posture to the flight posture, s. A
    /// gentle swing keeps leg rates (and the pitch reaction the wheel must
    /// absorb) small.
    pub flight_ease_time: f64,
    pub stance_leg_kp: f64,
    pub stance_leg_kd: f64,
    pub flight_leg_kp: f64,
    pub flight_leg_kd: f64,
    pub landing_leg_kp: f64,
    pub landing_leg_kd: f64,
    pub leg_torque_limit: f64,
    /// Stance pitch-balance PD on the loaded hips, N*m/rad and N*m*s/rad.
    pub balance_kp: f64,
    pub balance_kd: f64,
    /// Stance pitch-reference lean per unit wheel speed, rad/(rad/s).
    pub desaturation_gain: f64,
    /// Cap on the desaturation lean reference, rad.
    pub desaturation_max: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            crouch_depth: 0.15,
            crouch_duration: 0.8,
            pushoff_duration: 0.25,
            pushoff_knee_rate: 6.0,
            stance_settle_threshold: 0.6,
            settle_min_time: 0.2,
            stance_length: 0.95,
            landing_dwell: 0.03,
            stance_splay: 0.0,
            pushoff_hip_bias: -0.5,
            pushoff_knee_target: -0.15,
            flight_hip: 0.12,
            flight_ease_time: 0.4,
            stance_leg_kp: 200.0,
            stance_leg_kd: 8.0,
            flight_leg_kp: 40.0,
            flight_leg_kd: 4.0,
            landing_leg_kp: 100.0,
            landing_leg_kd: 8.0,
            leg_torque_limit: 40.0,
            balance_kp: 0.0,
            balance_kd: 0.0,
            desaturation_gain: 0.001,
            desaturation_max: 0.1,
        }
    }
}

/// Planar two-link leg inverse kinematics: hip/knee angles that place the
/// foot at distance `leg_length` from the hip along the direction `lean`
/// (measured from straight down, torso frame). Infeasible lengths clamp to
/// the nearest feasible posture; the flag reports clamping.
pub fn leg_ik(leg_length: f64, lean: f64, params: &RobotParams) -> (f64, f64, bool) {
    let (l1, l2) = (params.upper_leg_length, params.lower_leg_length);
    let min_len = (l1 - l2).abs() + 1e-6;
    let max_len = l1 + l2 - 1e-9;
    let clamped_len = leg_length.clamp(min_len, max_len);
    let mut clamped = clamped_len != leg_length;
    let cos_k = ((clamped_len * clamped_len - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let mut knee = -cos_k.acos();
    if knee < params.knee_range.0 || knee > params.knee_range.1 {
        knee = knee.clamp(params.knee_range.0, params.knee_range.1);
        clamped = true;
    }
    // Angle of the hip-to-foot line relative to the upper leg.
    let chi = (l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
    let mut hip = lean - chi;
    if hip < params.hip_range.0 || hip > params.hip_range.1 {
        hip = hip.clamp(params.hip_range.0, params.hip_range.1);
        clamped = true;
    }
    (hip, knee, clamped)
}

/// Hip-to-foot distance for a knee angle; forward-kinematic counterpart of
/// [`leg_ik`].
pub fn leg_length(knee: f64, params: &RobotParams) -> f64 {
    let (l1, l2) = (params.upper_leg_length, params.lower_leg_length);
    (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * knee.cos()).sqrt()
}

fn cubic_ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Full gait controller: phase machine plus the wheel and leg control laws.
#[derive(Debug, Clone)]
pub struct Controller {
    pub phase: HopperPhase,
    pub time_in_phase: f64,
    pub state: ControllerState,
    pub gains: PidGains,
    pub gait: GaitParams,
    pub rw_enabled: bool,
    /// Joint posture captured when the current phase was entered.
    entry_posture: [f64; 4],
    /// Joint rates captured when the current phase was entered.
    entry_rates: [f64; 4],
    /// Crouch end posture, solved once at CrouchLoad entry.
    crouch_targets: [f64; 4],
    /// Knee targets at PushOff entry, ramped toward extension.
    pushoff_start_knees: [f64; 2],
    ik_warned: bool,
}

/// Output of one control step.
#[derive(Debug, Clone, Copy)]
pub struct ControlOutput {
    /// `[tau_w, tau_hL, tau_kL, tau_hR, tau_kR]`.
    pub tau: Vec5,
    pub targets: [f64; 4],
}

const JOINT_IDX: [usize; 4] = [IHL, IKL, IHR, IKR];

impl Controller {
    pub fn new(gains: PidGains, gait: GaitParams, rw_enabled: bool) -> Self {
        Controller {
            phase: HopperPhase::StanceStabilize,
            time_in_phase: 0.0,
            state: ControllerState::new(),
            gains,
            gait,
            rw_enabled,
            entry_posture: [0.0; 4],
            entry_rates: [0.0; 4],
            crouch_targets: [0.0; 4],
            pushoff_start_knees: [0.0; 2],
            ik_warned: false,
        }
    }

    fn joint_angles(gen: &GenState) -> [f64; 4] {
        JOINT_IDX.map(|i| gen.q[i])
    }

    fn joint_rates(gen: &GenState) -> [f64; 4] {
        JOINT_IDX.map(|i| gen.qdot[i])
    }

    /// Initialize phase-entry bookkeeping from the initial standing state.
    pub fn initialize(&mut self, gen: &GenState) {
        self.entry_posture = Self::joint_angles(gen);
    }

    /// Flight posture: feet held under the hips at the stance length so the
    /// touchdown force passes through the center of mass.
    fn flight_targets(&self, params: &RobotParams) -> [f64; 4] {
        let (hl, kl, _) = leg_ik(
            self.gait.stance_length,
            self.gait.flight_hip + self.gait.stance_splay,
            params,
        );
        let (hr, kr, _) = leg_ik(
            self.gait.stance_length,
            self.gait.flight_hip - self.gait.stance_splay,
            params,
        );
        [hl, kl, hr, kr]
    }

    /// Phase-dependent joint setpoints.
    pub fn stance_joint_targets(&self, params: &RobotParams) -> [f64; 4] {
        self.stance_joint_setpoints(params).0
    }

    /// Phase-dependent joint position and rate setpoints. Rate setpoints are
    /// zero except in flight, where a cubic Hermite blend matches the lift-off
    /// joint rates so the leg PD decelerates the push-off extension smoothly
    /// instead of slamming against the torque limit at flight entry.
    pub fn stance_joint_setpoints(&self, params: &RobotParams) -> ([f64; 4], [f64; 4]) {
        let mut rates = [0.0; 4];
        let targets = match self.phase {
            HopperPhase::Landing => self.flight_targets(params),
            HopperPhase::Flight => {
                let fly = self.flight_targets(params);
                let big_t = self.gait.flight_ease_time;
                let u = (self.time_in_phase / big_t).clamp(0.0, 1.0);
                let (u2, u3) = (u * u, u * u * u);
                let (h00, h10, h01) = (2.0 * u3 - 3.0 * u2 + 1.0, u3 - 2.0 * u2 + u, 3.0 * u2 - 2.0 * u3);
                let (d00, d10, d01) = (6.0 * u2 - 6.0 * u, 3.0 * u2 - 4.0 * u + 1.0, 6.0 * u - 6.0 * u2);
                let mut t = [0.0; 4];
                for i in 0..4 {
                    let (p0, v0, p1) = (self.entry_posture[i], self.entry_rates[i], fly[i]);
                    t[i] = h00 * p0 + h10 * big_t * v0 + h01 * p1;
                    rates[i] = (d00 * p0 + d01 * p1) / big_t + d10 * v0;
                }
                return (t, rates);
            }
            // Ease from the posture captured mid-landing-compression back to
            // the canonical splayed stand; snapping there would kick the
            // torso through the hip reactions.
            HopperPhase::StanceStabilize => {
                let (hl, kl, _) = leg_ik(self.gait.stance_length, self.gait.stance_splay, params);
                let (hr, kr, _) = leg_ik(self.gait.stance_length, -self.gait.stance_splay, params);
                let stand = [hl, kl, hr, kr];
                let s = cubic_ease(self.time_in_phase / self.gait.settle_min_time);
                let mut t = [0.0; 4];
                for i in 0..4 {
                    t[i] = self.entry_posture[i] * (1.0 - s) + stand[i] * s;
                }
                t
            }
            HopperPhase::CrouchLoad => {
                let s = cubic_ease(self.time_in_phase / self.gait.crouch_duration);
                let mut t = [0.0; 4];
                for i in 0..4 {
                    t[i] = self.entry_posture[i] * (1.0 - s) + self.crouch_targets[i] * s;
                }
                t
            }
            HopperPhase::PushOff => {
                let bias = self.gait.pushoff_hip_bias
                    * (self.time_in_phase / self.gait.pushoff_duration).min(1.0);
                let mut t = [0.0; 4];
                for leg in 0..2 {
                    let knee = (self.pushoff_start_knees[leg]
                        + self.gait.pushoff_knee_rate * self.time_in_phase)
                        .min(self.gait.pushoff_knee_target);
                    let chi = (params.lower_leg_length * knee.sin())
                        .atan2(params.upper_leg_length + params.lower_leg_length * knee.cos());
                    let splay = if leg == 0 {
                        self.gait.stance_splay
                    } else {
                        -self.gait.stance_splay
                    };
                    t[2 * leg] = (bias + splay - chi)
                        .clamp(params.hip_range.0, params.hip_range.1);
                    t[2 * leg + 1] = knee.clamp(params.knee_range.0, params.knee_range.1);
                }
                t
            }
        };
        (targets, rates)
    }

    fn leg_gains(&self) -> (f64, f64) {
        match self.phase {
            HopperPhase::Flight => (self.gait.flight_leg_kp, self.gait.flight_leg_kd),
            HopperPhase::Landing => (self.gait.landing_leg_kp, self.gait.landing_leg_kd),
            _ => (self.gait.stance_leg_kp, self.gait.stance_leg_kd),
        }
    }

    /// Compute actuator torques for the current phase. `contacts` is the
    /// most recent foot contact state; `dt` is the control period.
    pub fn update(
        &mut self,
        gen: &GenState,
        contacts: &[ContactState; 2],
        params: &RobotParams,
        dt: f64,
    ) -> ControlOutput {
        self.state.wheel_speed = gen.qdot[IPHI];
        let (targets, rate_targets) = self.stance_joint_setpoints(params);
        let (kp, kd) = self.leg_gains();
        let mut leg_tau = joint_pd_torques(
            &targets,
            &rate_targets,
            &Self::joint_angles(gen),
            &Self::joint_rates(gen),
            kp,
            kd,
            self.gait.leg_torque_limit,
        );
        let mut tau_w = 0.0;
        if self.rw_enabled {
            // The attitude PID runs in every phase: the torso pitch inertia
            // is far too small to stand unassisted on point feet, and the
            // wheel has ample authority. In stance the pitch reference is
            // biased by the stored wheel speed so gravity despins the wheel;
            // the integral term then settles at the natural balance lean
            // instead of pumping momentum into the wheel every cycle.
            let mut theta_ref = desaturation_lean(self.state.wheel_speed, self.phase, &self.gait);
            // Fade the lean out over the crouch so the robot is upright again
            // by push-off and the thrust direction stays repeatable.
            if self.phase == HopperPhase::CrouchLoad {
                theta_ref *= 1.0 - cubic_ease(self.time_in_phase / self.gait.crouch_duration);
            }
            let (t, cs) = pid_attitude_torque(
                self.state,
                gen.q[ITH],
                gen.qdot[ITH],
                theta_ref,
                dt,
                &self.gains,
                params.wheel_torque_limit,
            );
            self.state = cs;
            tau_w = apply_wheel_speed_limit(t, self.state.wheel_speed, params.wheel_speed_limit);
        }
        // Optional stance pitch assist through the loaded hips (cart-pole
        // style); disabled by default since the wheel handles stance balance.
        if self.phase.is_stance() && (self.gait.balance_kp != 0.0 || self.gait.balance_kd != 0.0) {
            let loaded: Vec<usize> = (0..2).filter(|&l| contacts[l].f_n > 0.0).collect();
            if !loaded.is_empty() {
                let balance =
                    self.gait.balance_kp * gen.q[ITH] + self.gait.balance_kd * gen.qdot[ITH];
                let per_hip = balance / loaded.len() as f64;
                for l in loaded {
                    let idx = 2 * l; // hip entry in the 4-joint torque array
                    leg_tau[idx] = (leg_tau[idx] + per_hip)
                        .clamp(-self.gait.leg_torque_limit, self.gait.leg_torque_limit);
                }
            }
        }
        ControlOutput {
            tau: Vec5::from([tau_w, leg_tau[0], leg_tau[1], leg_tau[2], leg_tau[3]]),
            targets,
        }
    }

    fn enter(&mut self, phase: HopperPhase, gen: &GenState, params: &RobotParams) {
        self.phase = phase;
        self.time_in_phase = 0.0;
        self.entry_posture = Self::joint_angles(gen);
        self.entry_rates = Self::joint_rates(gen);
        match phase {
            HopperPhase::CrouchLoad => {
                // Solve the crouch posture once: shorten each leg by the
                // crouch depth from its entry length, keeping the splay.
                let mut clamped = false;
                for leg in 0..2 {
                    let entry_len = leg_length(self.entry_posture[2 * leg + 1], params);
                    let splay = if leg == 0 {
                        self.gait.stance_splay
                    } else {
                        -self.gait.stance_splay
                    };
                    let (hip, knee, c) =
                        leg_ik(entry_len - self.gait.crouch_depth, splay, params);
                    self.crouch_targets[2 * leg] = hip;
                    self.crouch_targets[2 * leg + 1] = knee;
                    clamped |= c;
                }
                if clamped && !self.ik_warned {
                    self.ik_warned = true;
                    eprintln!(
                        "warning: crouch depth {} m infeasible; clamped to joint limits",
                        self.gait.crouch_depth
                    );
                }
            }
            HopperPhase::PushOff => {
                self.pushoff_start_knees = [self.entry_posture[1], self.entry_posture[3]];
                self.state.saturation_accumulator = 0.0;
            }
            HopperPhase::Flight => {
                self.state.integral_error = 0.0;
                self.state.previous_error = 0.0;
            }
            _ => {}
        }
    }

    /// Advance the phase machine one control step. Returns `true` when the
    /// stuck-phase watchdog trips (> 5 s in any stance phase).
    pub fn advance_phase(
        &mut self,
        contacts: &[ContactState; 2],
        gen: &GenState,
        params: &RobotParams,
        dt: f64,
    ) -> bool {
        self.time_in_phase += dt;
        let any_contact = contacts.iter().any(|c| c.f_n > 0.0);
        let both_free = contacts.iter().all(|c| c.f_n == 0.0);
        match self.phase {
            HopperPhase::Flight => {
                if any_contact {
                    self.enter(HopperPhase::Landing, gen, params);
                }
            }
            HopperPhase::Landing => {
                if self.time_in_phase >= self.gait.landing_dwell {
                    self.enter(HopperPhase::StanceStabilize, gen, params);
                }
            }
            HopperPhase::StanceStabilize => {
                // Crouch only from a loaded, settled stance; unloaded feet
                // would just be withdrawn in place.
                if any_contact
                    && self.time_in_phase >= self.gait.settle_min_time
                    && gen.qdot[ITH].abs() < self.gait.stance_settle_threshold
                {
                    self.enter(HopperPhase::CrouchLoad, gen, params);
                }
            }
            HopperPhase::CrouchLoad => {
                if self.time_in_phase >= self.gait.crouch_duration {
                    self.enter(HopperPhase::PushOff, gen, params);
                }
            }
            HopperPhase::PushOff => {
                if both_free {
                    self.enter(HopperPhase::Flight, gen, params);
                }
            }
        }
        self.phase.is_stance() && self.time_in_phase > 5.0
    }
}
