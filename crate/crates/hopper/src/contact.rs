//! Foot-terrain contact: penetration detection, compliant normal force with
//! regularized Coulomb friction, and the hybrid flight/stance criterion.
//!
//! The runtime model is a penalty (spring-damper) contact; the impulsive
//! touchdown map lives in [`crate::dynamics::impact_map`] and is applied only
//! in rigid-touchdown mode.

use nalgebra::Vector2;

use crate::dynamics::FootState;
use crate::terrain::TerrainProfile;

/// Penalty contact constants, tuned for ~0.7 mm static penetration under
/// full weight at the default timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub stiffness: f64,
    /// Normal damping, N*s/m.
    pub damping: f64,
    /// Coulomb friction coefficient.
    pub friction: f64,
    /// Tangential velocity regularization scale, m/s.
    pub v_reg: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            stiffness: 2.0e4,
            damping: 200.0,
            friction: 0.8,
            v_reg: 0.01,
        }
    }
}

/// Contact state of one foot. Forces are zero until [`contact_force`] runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState {
    pub in_contact: bool,
    /// Non-negative penetration depth, m.
    pub penetration: f64,
    pub contact_point: Vector2<f64>,
    /// Unit surface normal at the contact point.
    pub normal: Vector2<f64>,
    /// Normal force magnitude, N; always >= 0.
    pub f_n: f64,
    /// Tangential force magnitude (signed along the surface tangent), N.
    pub f_t: f64,
}

impl ContactState {
    pub fn free() -> Self {
        ContactState {
            in_contact: false,
            penetration: 0.0,
            contact_point: Vector2::zeros(),
            normal: Vector2::new(0.0, 1.0),
            f_n: 0.0,
            f_t: 0.0,
        }
    }

    /// World-frame contact force on the foot.
    pub fn world_force(&self) -> Vector2<f64> {
        let tangent = Vector2::new(self.normal.y, -self.normal.x);
        self.f_n * self.normal + self.f_t * tangent
    }
}

/// Geometric contact query for one foot sphere against the terrain profile.
/// Penetration is measured vertically: `h(x) + foot_radius - z`.
pub fn detect_contact(
    foot: &FootState,
    terrain: &TerrainProfile,
    foot_radius: f64,
) -> ContactState {
    let x = foot.position.x;
    let penetration = (terrain.height(x) + foot_radius - foot.position.y).max(0.0);
    ContactState {
        in_contact: penetration > 0.0,
        penetration,
        contact_point: Vector2::new(x, terrain.height(x)),
        normal: terrain.normal(x),
        f_n: 0.0,
        f_t: 0.0,
    }
}

/// Fill in the contact forces: unilateral spring-damper normal force and
/// tanh-regularized Coulomb friction.
pub fn contact_force(
    cs: &ContactState,
    foot_velocity: &Vector2<f64>,
    params: &ContactParams,
) -> ContactState {
    let mut out = *cs;
    if cs.penetration <= 0.0 {
        out.f_n = 0.0;
        out.f_t = 0.0;
        return out;
    }
    let v_n = foot_velocity.dot(&cs.normal);
    let tangent = Vector2::new(cs.normal.y, -cs.normal.x);
    let v_t = foot_velocity.dot(&tangent);
    // Damping only resists approach; it never creates adhesion.
    out.f_n = (params.stiffness * cs.penetration + params.damping * (-v_n).max(0.0)).max(0.0);
    out.f_t = -params.friction * out.f_n * (v_t / params.v_reg).tanh();
    out
}

/// Flight criterion: both feet carry zero normal force.
pub fn is_flight(contacts: &[ContactState; 2]) -> bool {
    contacts.iter().all(|c| c.f_n == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Mat2x8;
    use crate::model::DEG;
    use crate::terrain::TerrainProfile;
    use approx::assert_abs_diff_eq;

    fn foot_at(x: f64, z: f64, v: Vector2<f64>) -> FootState {
        FootState {
            position: Vector2::new(x, z),
            velocity: v,
            jacobian: Mat2x8::zeros(),
        }
    }

    const R: f64 = 0.04;

    #[test]
    fn foot_above_ground_not_in_contact() {
        let terrain = TerrainProfile::flat(0.0);
        let cs = detect_contact(&foot_at(0.0, 0.1 + R, Vector2::zeros()), &terrain, R);
        assert!(!cs.in_contact);
        assert_eq!(cs.penetration, 0.0);
    }

    #[test]
    fn grazing_contact_has_zero_penetration() {
        let terrain = TerrainProfile::flat(0.0);
        let cs = detect_contact(&foot_at(0.0, R, Vector2::zeros()), &terrain, R);
        assert_eq!(cs.penetration, 0.0);
        assert!(!cs.in_contact);
    }

    #[test]
    fn slope_normal_matches_analytic() {
        let slope = (10.0 * DEG).tan();
        let terrain = TerrainProfile::ramp(slope);
        let cs = detect_contact(&foot_at(0.0, 1.0, Vector2::zeros()), &terrain, R);
        assert_abs_diff_eq!(cs.normal.x, -(10.0 * DEG).sin(), epsilon = 1e-9);
        assert_abs_diff_eq!(cs.normal.y, (10.0 * DEG).cos(), epsilon = 1e-9);
    }

    #[test]
    fn zero_penetration_zero_force() {
        let terrain = TerrainProfile::flat(0.0);
        let cs = detect_contact(&foot_at(0.0, 1.0, Vector2::zeros()), &terrain, R);
        let cs = contact_force(&cs, &Vector2::new(1.0, -1.0), &ContactParams::default());
        assert_eq!(cs.f_n, 0.0);
        assert_eq!(cs.f_t, 0.0);
    }

    #[test]
    fn spring_force_formula() {
        let terrain = TerrainProfile::flat(0.0);
        let params = ContactParams {
            stiffness: 1.0e4,
            damping: 0.0,
            ..ContactParams::default()
        };
        let cs = detect_contact(&foot_at(0.0, R - 1e-3, Vector2::zeros()), &terrain, R);
        let cs = contact_force(&cs, &Vector2::zeros(), &params);
        assert_abs_diff_eq!(cs.f_n, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn withdrawal_never_adhesive() {
        let terrain = TerrainProfile::flat(0.0);
        let params = ContactParams::default();
        let cs = detect_contact(&foot_at(0.0, R - 1e-3, Vector2::zeros()), &terrain, R);
        let cs = contact_force(&cs, &Vector2::new(0.0, 50.0), &params);
        assert_abs_diff_eq!(cs.f_n, params.stiffness * 1e-3, epsilon = 1e-9);
        assert!(cs.f_n >= 0.0);
    }

    #[test]
    fn friction_cone_respected() {
        let terrain = TerrainProfile::flat(0.0);
        let params = ContactParams::default();
        let cs = detect_contact(&foot_at(0.0, R - 2e-3, Vector2::zeros()), &terrain, R);
        for vx in [-3.0, -0.01, 0.0, 0.005, 2.0] {
            let f = contact_force(&cs, &Vector2::new(vx, 0.0), &params);
            assert!(f.f_t.abs() <= params.friction * f.f_n + 1e-12);
            // Friction opposes the tangential velocity.
            if vx != 0.0 {
                assert!(f.f_t * vx <= 0.0);
            }
        }
    }

    #[test]
    fn flight_criterion() {
        let mut a = ContactState::free();
        let b = ContactState::free();
        assert!(is_flight(&[a, b]));
        a.f_n = 1.0;
        assert!(!is_flight(&[a, b]));
    }
}
