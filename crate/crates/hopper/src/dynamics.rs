//! Planar manipulator-form dynamics of the hopper.
//!
//! The model is assembled numerically from per-body Jacobians: the torso and
//! wheel translate together as a point mass at `(x, z)`, the torso carries
//! pitch inertia `I_b`, the wheel spins at absolute angle `theta + phi_w`
//! with inertia `I_w`, and each leg is two uniform slender rods hanging from
//! a hip located at the torso center of mass.
//!
//! The equations of motion are the standard manipulator form
//! `M(q) qdd + C(q, qd) qd + G(q) = B tau + J_c^T F_c`, with `C` built from
//! Christoffel symbols of the analytic mass-matrix partials.

use nalgebra::{SMatrix, Vector2};
use thiserror::Error;

use crate::model::{GenState, RobotParams, Vec5, Vec8, IHL, IHR, IKL, IKR, IPHI, ITH, IX, IZ, NDOF};

pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Mat2x8 = SMatrix<f64, 2, 8>;
pub type Mat8x5 = SMatrix<f64, 8, 5>;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Hip/knee coordinate indices per leg.
pub const LEG_JOINTS: [(usize, usize); 2] = [(IHL, IKL), (IHR, IKR)];

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("mass-matrix solve failed (singular or indefinite); q = {q:?}, qdot = {qdot:?}")]
    SolveFailed { q: Vec8, qdot: Vec8 },
}

/// A point on the robot whose position is `(x, z)` plus a chain of rotating
/// link offsets. Each term contributes `r * (sin a, -cos a)` where the angle
/// `a` is the sum of the listed generalized coordinates (all coefficients 1).
#[derive(Debug, Clone, Copy)]
struct Chain {
    terms: [(f64, [usize; 3], usize); 2],
    nterms: usize,
}

impl Chain {
    fn angle(coords: &[usize; 3], n: usize, q: &Vec8) -> f64 {
        coords[..n].iter().map(|&c| q[c]).sum()
    }

    fn position(&self, q: &Vec8) -> Vector2<f64> {
        let mut p = Vector2::new(q[IX], q[IZ]);
        for (r, coords, n) in &self.terms[..self.nterms] {
            let a = Self::angle(coords, *n, q);
            p.x += r * a.sin();
            p.y -= r * a.cos();
        }
        p
    }

    fn jacobian(&self, q: &Vec8) -> Mat2x8 {
        let mut j = Mat2x8::zeros();
        j[(0, IX)] = 1.0;
        j[(1, IZ)] = 1.0;
        for (r, coords, n) in &self.terms[..self.nterms] {
            let a = Self::angle(coords, *n, q);
            let (sa, ca) = a.sin_cos();
            for &c in &coords[..*n] {
                j[(0, c)] += r * ca;
                j[(1, c)] += r * sa;
            }
        }
        j
    }

    /// Partial of the Jacobian with respect to coordinate `wrt`.
    fn jacobian_partial(&self, q: &Vec8, wrt: usize) -> Mat2x8 {
        let mut dj = Mat2x8::zeros();
        for (r, coords, n) in &self.terms[..self.nterms] {
            if !coords[..*n].contains(&wrt) {
                continue;
            }
            let a = Self::angle(coords, *n, q);
            let (sa, ca) = a.sin_cos();
            for &c in &coords[..*n] {
                dj[(0, c)] += -r * sa;
                dj[(1, c)] += r * ca;
            }
        }
        dj
    }
}

/// One leg segment: a uniform rod with its center-of-mass chain and the
/// coordinates that make up its absolute orientation.
#[derive(Debug, Clone, Copy)]
struct Rod {
    mass: f64,
    inertia_com: f64,
    com: Chain,
    psi: [usize; 3],
    npsi: usize,
}

fn leg_rods(params: &RobotParams) -> [Rod; 4] {
    let l1 = params.upper_leg_length;
    let l2 = params.lower_leg_length;
    let mut rods = [Rod {
        mass: 0.0,
        inertia_com: 0.0,
        com: Chain {
            terms: [(0.0, [0; 3], 0); 2],
            nterms: 0,
        },
        psi: [0; 3],
        npsi: 0,
    }; 4];
    for (leg, &(hip, knee)) in LEG_JOINTS.iter().enumerate() {
        rods[2 * leg] = Rod {
            mass: params.upper_leg_mass,
            inertia_com: params.upper_leg_mass * l1 * l1 / 12.0,
            com: Chain {
                terms: [(0.5 * l1, [ITH, hip, 0], 2), (0.0, [0; 3], 0)],
                nterms: 1,
            },
            psi: [ITH, hip, 0],
            npsi: 2,
        };
        rods[2 * leg + 1] = Rod {
            mass: params.lower_leg_mass,
            inertia_com: params.lower_leg_mass * l2 * l2 / 12.0,
            com: Chain {
                terms: [(l1, [ITH, hip, 0], 2), (0.5 * l2, [ITH, hip, knee], 3)],
                nterms: 2,
            },
            psi: [ITH, hip, knee],
            npsi: 3,
        };
    }
    rods
}

fn foot_chain(params: &RobotParams, leg: usize) -> Chain {
    let (hip, knee) = LEG_JOINTS[leg];
    Chain {
        terms: [
            (params.upper_leg_length, [ITH, hip, 0], 2),
            (params.lower_leg_length, [ITH, hip, knee], 3),
        ],
        nterms: 2,
    }
}

/// Inertia matrix `M(q)`, symmetric positive definite for valid parameters.
pub fn mass_matrix(q: &Vec8, params: &RobotParams) -> Mat8 {
    let mut m = Mat8::zeros();
    let m_base = params.torso_mass + params.wheel_mass;
    m[(IX, IX)] = m_base;
    m[(IZ, IZ)] = m_base;
    m[(ITH, ITH)] = params.torso_inertia;
    // Wheel spin term I_w (thetad + phid)^2 / 2.
    m[(ITH, ITH)] += params.wheel_inertia;
    m[(ITH, IPHI)] += params.wheel_inertia;
    m[(IPHI, ITH)] += params.wheel_inertia;
    m[(IPHI, IPHI)] += params.wheel_inertia;
    for rod in &leg_rods(params) {
        let j = rod.com.jacobian(q);
        m += rod.mass * j.transpose() * j;
        for &a in &rod.psi[..rod.npsi] {
            for &b in &rod.psi[..rod.npsi] {
                m[(a, b)] += rod.inertia_com;
            }
        }
    }
    m
}

/// Analytic partials `dM/dq_c` for every coordinate. Only pitch and leg
/// joint coordinates contribute; the rest are zero matrices.
fn mass_matrix_partials(q: &Vec8, params: &RobotParams) -> [Mat8; NDOF] {
    let mut partials = [Mat8::zeros(); NDOF];
    let rods = leg_rods(params);
    for c in [ITH, IHL, IKL, IHR, IKR] {
        let mut dm = Mat8::zeros();
        for rod in &rods {
            let j = rod.com.jacobian(q);
            let dj = rod.com.jacobian_partial(q, c);
            dm += rod.mass * (dj.transpose() * j + j.transpose() * dj);
        }
        partials[c] = dm;
    }
    partials
}

/// Gravity vector `G(q) = dV/dq`.
pub fn gravity_vector(q: &Vec8, params: &RobotParams) -> Vec8 {
    let mut g = Vec8::zeros();
    g[IZ] = (params.torso_mass + params.wheel_mass) * params.gravity;
    for rod in &leg_rods(params) {
        let j = rod.com.jacobian(q);
        for c in 0..NDOF {
            g[c] += rod.mass * params.gravity * j[(1, c)];
        }
    }
    g
}

/// Coriolis/centrifugal matrix from Christoffel symbols of `M(q)`.
pub fn coriolis_matrix(q: &Vec8, qdot: &Vec8, params: &RobotParams) -> Mat8 {
    let dm = mass_matrix_partials(q, params);
    let mut c = Mat8::zeros();
    for i in 0..NDOF {
        for j in 0..NDOF {
            let mut cij = 0.0;
            for k in 0..NDOF {
                cij += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qdot[k];
            }
            c[(i, j)] = cij;
        }
    }
    c
}

/// `C(q, qd) qd + G(q)`; reduces to `G(q)` at rest.
pub fn bias_terms(q: &Vec8, qdot: &Vec8, params: &RobotParams) -> Vec8 {
    coriolis_matrix(q, qdot, params) * qdot + gravity_vector(q, params)
}

/// Actuation map. Column 0 is the wheel motor, applied between torso and
/// wheel, so only the relative wheel coordinate receives a generalized
/// force. Columns 1..=4 are the hip/knee joint motors. Floating-base rows
/// are zero; rank is 5.
pub fn actuation_matrix() -> Mat8x5 {
    let mut b = Mat8x5::zeros();
    b[(IPHI, 0)] = 1.0;
    b[(IHL, 1)] = 1.0;
    b[(IKL, 2)] = 1.0;
    b[(IHR, 3)] = 1.0;
    b[(IKR, 4)] = 1.0;
    b
}

/// Kinematic state of one foot point.
#[derive(Debug, Clone, Copy)]
pub struct FootState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub jacobian: Mat2x8,
}

/// Forward kinematics and Jacobians of both foot points.
pub fn foot_states(state: &GenState, params: &RobotParams) -> [FootState; 2] {
    [LEFT, RIGHT].map(|leg| {
        let chain = foot_chain(params, leg);
        let jacobian = chain.jacobian(&state.q);
        FootState {
            position: chain.position(&state.q),
            velocity: jacobian * state.qdot,
            jacobian,
        }
    })
}

/// Aggregate of the manipulator-form terms at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass: Mat8,
    pub bias: Vec8,
    pub actuation: Mat8x5,
    pub contact_jacobians: [Mat2x8; 2],
}

pub fn dynamics_terms(state: &GenState, params: &RobotParams) -> DynamicsTerms {
    DynamicsTerms {
        mass: mass_matrix(&state.q, params),
        bias: bias_terms(&state.q, &state.qdot, params),
        actuation: actuation_matrix(),
        contact_jacobians: [LEFT, RIGHT].map(|leg| foot_chain(params, leg).jacobian(&state.q)),
    }
}

/// Conditioning diagnostic for near-singular configurations.
pub fn mass_matrix_is_ill_conditioned(m: &Mat8) -> bool {
    let eigs = m.symmetric_eigenvalues();
    let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
    let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
    min <= 0.0 || max / min > 1e12
}

/// Solve `M(q) qdd = Q - bias` for an arbitrary generalized force vector.
pub fn forward_dynamics_generalized(
    state: &GenState,
    qforce: &Vec8,
    params: &RobotParams,
) -> Result<Vec8, DynamicsError> {
    let m = mass_matrix(&state.q, params);
    let rhs = qforce - bias_terms(&state.q, &state.qdot, params);
    m.cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(DynamicsError::SolveFailed {
            q: state.q,
            qdot: state.qdot,
        })
}

/// Generalized force vector from actuator torques and optional per-foot
/// contact forces (world frame).
pub fn generalized_forces(
    state: &GenState,
    tau: &Vec5,
    foot_forces: &[Vector2<f64>; 2],
    params: &RobotParams,
) -> Vec8 {
    let mut qforce = actuation_matrix() * tau;
    for (leg, f) in foot_forces.iter().enumerate() {
        if f.x != 0.0 || f.y != 0.0 {
            let j = foot_chain(params, leg).jacobian(&state.q);
            qforce += j.transpose() * f;
        }
    }
    qforce
}

/// Forward dynamics with actuator torques and optional per-foot contact
/// forces (world frame). Zero contact forces give the flight equation.
pub fn forward_dynamics(
    state: &GenState,
    tau: &Vec5,
    foot_forces: &[Vector2<f64>; 2],
    params: &RobotParams,
) -> Result<Vec8, DynamicsError> {
    let qforce = generalized_forces(state, tau, foot_forces, params);
    forward_dynamics_generalized(state, &qforce, params)
}

/// Generalized momentum `p = M(q) qdot`.
pub fn generalized_momentum(state: &GenState, params: &RobotParams) -> Vec8 {
    mass_matrix(&state.q, params) * state.qdot
}

/// Momentum rate from the Hamiltonian form of the equations of motion:
/// `pdot_i = Q_i - dV/dq_i + qdot^T (dM/dq_i) qdot / 2`. Coordinates the
/// Lagrangian does not depend on (x in free flight) keep their momentum
/// exactly, which the momentum-form integrator inherits step by step.
pub fn momentum_rate(state: &GenState, qforce: &Vec8, params: &RobotParams) -> Vec8 {
    let dm = mass_matrix_partials(&state.q, params);
    let mut pdot = qforce - gravity_vector(&state.q, params);
    for i in [ITH, IHL, IKL, IHR, IKR] {
        pdot[i] += 0.5 * state.qdot.dot(&(dm[i] * state.qdot));
    }
    pdot
}

/// Solve `M(q) qdot = p` for the velocity matching a momentum.
pub fn velocity_from_momentum(
    q: &Vec8,
    p: &Vec8,
    params: &RobotParams,
) -> Result<Vec8, DynamicsError> {
    let m = mass_matrix(q, params);
    m.cholesky()
        .map(|ch| ch.solve(p))
        .ok_or(DynamicsError::SolveFailed { q: *q, qdot: *p })
}

/// Forward dynamics restricted to a subset of coordinates; the rest are held
/// (zero acceleration). Used for frozen-leg and pinned-base analyses.
pub fn forward_dynamics_reduced(
    state: &GenState,
    qforce: &Vec8,
    active: &[usize],
    params: &RobotParams,
) -> Result<Vec8, DynamicsError> {
    let m = mass_matrix(&state.q, params);
    let rhs_full = qforce - bias_terms(&state.q, &state.qdot, params);
    let n = active.len();
    let mut msub = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut rhs = nalgebra::DVector::<f64>::zeros(n);
    for (i, &a) in active.iter().enumerate() {
        rhs[i] = rhs_full[a];
        for (j, &b) in active.iter().enumerate() {
            msub[(i, j)] = m[(a, b)];
        }
    }
    let sol = msub
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(DynamicsError::SolveFailed {
            q: state.q,
            qdot: state.qdot,
        })?;
    let mut qdd = Vec8::zeros();
    for (i, &a) in active.iter().enumerate() {
        qdd[a] = sol[i];
    }
    Ok(qdd)
}

/// Reduced-order pitch acceleration of the gyrostat:
/// `thetadd = (tau_ext - tau_w) / (I_b + I_w)`, where `tau_w` is the wheel
/// torque in the relative-acceleration sense `I_w * phidd_w`.
pub fn gyrostat_accel(tau_w: f64, tau_ext: f64, params: &RobotParams) -> f64 {
    (tau_ext - tau_w) / params.pitch_inertia()
}

/// Center of mass position and velocity of the whole robot.
pub fn com_state(state: &GenState, params: &RobotParams) -> (Vector2<f64>, Vector2<f64>) {
    let m_base = params.torso_mass + params.wheel_mass;
    let mut p = m_base * Vector2::new(state.q[IX], state.q[IZ]);
    let mut v = m_base * Vector2::new(state.qdot[IX], state.qdot[IZ]);
    for rod in &leg_rods(params) {
        p += rod.mass * rod.com.position(&state.q);
        v += rod.mass * (rod.com.jacobian(&state.q) * state.qdot);
    }
    let m_tot = params.total_mass();
    (p / m_tot, v / m_tot)
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Total angular momentum about the torso pitch axis.
///
/// With `reduced = true` this is the torso-plus-wheel expression
/// `I_b * thetad + I_w * (thetad + phid_w)` alone; with `reduced = false`
/// the legs' contribution about the system center of mass is included.
pub fn total_pitch_momentum(state: &GenState, params: &RobotParams, reduced: bool) -> f64 {
    let thetad = state.qdot[ITH];
    let wheel = params.wheel_inertia * (thetad + state.qdot[IPHI]);
    if reduced {
        return params.torso_inertia * thetad + wheel;
    }
    let (p_com, v_com) = com_state(state, params);
    let base_p = Vector2::new(state.q[IX], state.q[IZ]);
    let base_v = Vector2::new(state.qdot[IX], state.qdot[IZ]);
    let m_base = params.torso_mass + params.wheel_mass;
    let mut h = params.torso_inertia * thetad + wheel;
    h += m_base * cross2(&(base_p - p_com), &(base_v - v_com));
    for rod in &leg_rods(params) {
        let omega: f64 = rod.psi[..rod.npsi].iter().map(|&c| state.qdot[c]).sum();
        let p = rod.com.position(&state.q) - p_com;
        let v = rod.com.jacobian(&state.q) * state.qdot - v_com;
        h += rod.inertia_com * omega + rod.mass * cross2(&p, &v);
    }
    h
}

pub fn kinetic_energy(state: &GenState, params: &RobotParams) -> f64 {
    let m = mass_matrix(&state.q, params);
    0.5 * state.qdot.dot(&(m * state.qdot))
}

/// Kinetic and potential energy. `datum` is the elevation where the
/// gravitational potential is zero (terrain floor by convention).
pub fn mechanical_energy(state: &GenState, params: &RobotParams, datum: f64) -> (f64, f64) {
    let t = kinetic_energy(state, params);
    let mut v = (params.torso_mass + params.wheel_mass) * params.gravity * (state.q[IZ] - datum);
    for rod in &leg_rods(params) {
        v += rod.mass * params.gravity * (rod.com.position(&state.q).y - datum);
    }
    (t, v)
}

/// Rotate a local-frame contact force into the world frame given the terrain
/// normal; helper shared with the contact module.
pub fn rotate_to_world(normal: &Vector2<f64>, f_n: f64, f_t: f64) -> Vector2<f64> {
    let tangent = Vector2::new(normal.y, -normal.x);
    f_n * normal + f_t * tangent
}

/// Plastic impact map: project pre-impact velocities onto the constraint
/// `J_c qdot = 0` for the active contact rows. Kinetic energy never
/// increases. Returns `None` when the Delassus operator is singular, in
/// which case the caller falls back to compliant handling.
pub fn impact_map(
    q: &Vec8,
    qdot_minus: &Vec8,
    contact_jacobians: &[Mat2x8],
    params: &RobotParams,
) -> Option<Vec8> {
    if contact_jacobians.is_empty() {
        return Some(*qdot_minus);
    }
    let m = mass_matrix(q, params);
    let minv = m.cholesky()?.inverse();
    let rows = 2 * contact_jacobians.len();
    let mut jc = nalgebra::DMatrix::<f64>::zeros(rows, NDOF);
    for (i, j) in contact_jacobians.iter().enumerate() {
        for r in 0..2 {
            for c in 0..NDOF {
                jc[(2 * i + r, c)] = j[(r, c)];
            }
        }
    }
    let minv_d = nalgebra::DMatrix::<f64>::from_fn(NDOF, NDOF, |i, j| minv[(i, j)]);
    let delassus = &jc * &minv_d * jc.transpose();
    let jv = &jc * nalgebra::DVector::from_iterator(NDOF, qdot_minus.iter().cloned());
    let lambda = delassus.lu().solve(&jv)?;
    let dv = minv_d * jc.transpose() * lambda;
    let mut qdot_plus = *qdot_minus;
    for i in 0..NDOF {
        qdot_plus[i] -= dv[i];
    }
    Some(qdot_plus)
}
