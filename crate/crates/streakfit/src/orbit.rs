//! Two-body orbit state vectors, Keplerian elements and propagation.
//!
//! Everything here is pure: states in, states out, Earth-centered inertial
//! frame, kilometers and seconds. Only bound (elliptical) orbits are
//! supported; the propagator solves Kepler's equation on the eccentric
//! anomaly and advances the state with Lagrange f and g coefficients, which
//! stays well-conditioned for near-circular and near-equatorial orbits.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS-84 gravitational parameter of Earth (km³/s²).
pub const MU_EARTH: f64 = 398600.4418;

/// Mean equatorial Earth radius (km).
pub const EARTH_RADIUS_KM: f64 = 6378.137;

/// Eccentricity below which the argument of periapsis and true anomaly are
/// reported as undefined.
pub const CIRCULAR_TOL: f64 = 1e-8;

/// Inclination (degrees) below which the ascending node is reported as
/// undefined.
pub const EQUATORIAL_TOL_DEG: f64 = 1e-8;

const KEPLER_TOL: f64 = 1e-12;
const KEPLER_MAX_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum OrbitError {
    #[error("orbit is not elliptical (e = {e}); only bound orbits are supported")]
    NotElliptical { e: f64 },
    #[error("orbit is unbound (specific energy = {energy} km^2/s^2)")]
    Unbound { energy: f64 },
    #[error("degenerate orbit: angular momentum {h} km^2/s below tolerance")]
    Degenerate { h: f64 },
    #[error("Kepler solver did not converge after {iters} iterations")]
    KeplerNonConvergence { iters: usize },
    #[error("non-finite state encountered")]
    NonFinite,
}

/// Position and velocity of an orbiting object at an epoch.
///
/// The epoch is continuous time in seconds past the J2000 reference epoch;
/// position is km, velocity km/s, both Earth-centered inertial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitState {
    pub epoch: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl OrbitState {
    pub fn new(epoch: f64, position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self {
            epoch,
            position,
            velocity,
        }
    }

    /// Specific orbital energy v²/2 − μ/|p| (km²/s²). Negative for bound orbits.
    pub fn specific_energy(&self, mu: f64) -> f64 {
        self.velocity.norm_squared() / 2.0 - mu / self.position.norm()
    }

    /// Specific angular momentum vector p × v (km²/s).
    pub fn angular_momentum(&self) -> Vector3<f64> {
        self.position.cross(&self.velocity)
    }

    pub fn is_finite(&self) -> bool {
        self.epoch.is_finite()
            && self.position.iter().all(|c| c.is_finite())
            && self.velocity.iter().all(|c| c.is_finite())
    }
}

/// Geometric orbit parameterization.
///
/// Angles are degrees; `periapsis_radius` is km. Inclination lies in
/// [0, 180], the other angles in [0, 360).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeplerianElements {
    pub periapsis_radius: f64,
    pub eccentricity: f64,
    pub inclination_deg: f64,
    pub raan_deg: f64,
    pub arg_periapsis_deg: f64,
    pub true_anomaly_deg: f64,
}

/// Marks elements that are geometrically undefined for degenerate orbits
/// (the values in [`KeplerianElements`] then hold conventional zeros /
/// arguments of latitude so that conversions still round-trip).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementFlags {
    /// e below [`CIRCULAR_TOL`]: argument of periapsis and true anomaly
    /// are undefined.
    pub circular: bool,
    /// Inclination below [`EQUATORIAL_TOL_DEG`]: RAAN is undefined.
    pub equatorial: bool,
}

impl KeplerianElements {
    /// Semi-major axis a = r_p / (1 − e) (km).
    pub fn semi_major_axis(&self) -> f64 {
        self.periapsis_radius / (1.0 - self.eccentricity)
    }

    /// Orbital period 2π√(a³/μ) (s).
    pub fn period(&self, mu: f64) -> f64 {
        let a = self.semi_major_axis();
        2.0 * std::f64::consts::PI * (a.powi(3) / mu).sqrt()
    }
}

fn wrap_360(deg: f64) -> f64 {
    let mut d = deg % 360.0;
    if d < 0.0 {
        d += 360.0;
    }
    d
}

/// Convert Keplerian elements to a state vector at epoch 0.
///
/// Rejects non-elliptical element sets; the simulation harness only ever
/// produces e < 1.
pub fn elements_to_state(el: &KeplerianElements, mu: f64) -> Result<OrbitState, OrbitError> {
    if el.eccentricity >= 1.0 {
        return Err(OrbitError::NotElliptical {
            e: el.eccentricity,
        });
    }
    let e = el.eccentricity;
    let p = el.periapsis_radius * (1.0 + e); // semi-latus rectum
    let f = el.true_anomaly_deg.to_radians();
    let r = p / (1.0 + e * f.cos());

    // Perifocal frame: x toward periapsis, z along angular momentum.
    let r_pqw = Vector3::new(r * f.cos(), r * f.sin(), 0.0);
    let vf = (mu / p).sqrt();
    let v_pqw = Vector3::new(-vf * f.sin(), vf * (e + f.cos()), 0.0);

    let (sin_raan, cos_raan) = el.raan_deg.to_radians().sin_cos();
    let (sin_i, cos_i) = el.inclination_deg.to_radians().sin_cos();
    let (sin_w, cos_w) = el.arg_periapsis_deg.to_radians().sin_cos();

    let rot = nalgebra::Matrix3::new(
        cos_raan * cos_w - sin_raan * sin_w * cos_i,
        -cos_raan * sin_w - sin_raan * cos_w * cos_i,
        sin_raan * sin_i,
        sin_raan * cos_w + cos_raan * sin_w * cos_i,
        -sin_raan * sin_w + cos_raan * cos_w * cos_i,
        -cos_raan * sin_i,
        sin_w * sin_i,
        cos_w * sin_i,
        cos_i,
    );

    Ok(OrbitState::new(0.0, rot * r_pqw, rot * v_pqw))
}

/// Recover Keplerian elements from a state vector.
///
/// Inverse of [`elements_to_state`] up to angle normalization. For
/// near-circular or near-equatorial orbits the undefined angles are filled
/// with the usual conventions (node at +x, periapsis at the node) and the
/// returned flags mark them as undefined.
pub fn state_to_elements(
    s: &OrbitState,
    mu: f64,
) -> Result<(KeplerianElements, ElementFlags), OrbitError> {
    let r_vec = s.position;
    let v_vec = s.velocity;
    let r = r_vec.norm();
    let h_vec = r_vec.cross(&v_vec);
    let h = h_vec.norm();
    if h < 1e-6 {
        return Err(OrbitError::Degenerate { h });
    }
    let energy = s.specific_energy(mu);
    if energy >= 0.0 {
        return Err(OrbitError::Unbound { energy });
    }

    let e_vec = v_vec.cross(&h_vec) / mu - r_vec / r;
    let e = e_vec.norm();
    let a = -mu / (2.0 * energy);

    let inc = (h_vec.z / h).clamp(-1.0, 1.0).acos();
    let n_vec = Vector3::new(-h_vec.y, h_vec.x, 0.0); // node vector ẑ × h
    let n = n_vec.norm();

    let circular = e < CIRCULAR_TOL;
    let equatorial = inc.to_degrees() < EQUATORIAL_TOL_DEG;

    let raan = if equatorial {
        0.0
    } else {
        n_vec.y.atan2(n_vec.x)
    };

    // Reference direction in the orbit plane from which periapsis is measured:
    // ascending node for inclined orbits, +x for equatorial ones.
    let node_ref = if equatorial {
        Vector3::x()
    } else {
        n_vec / n
    };

    let in_plane_angle = |from: &Vector3<f64>, to: &Vector3<f64>| -> f64 {
        let cross = from.cross(to);
        let sin = cross.dot(&h_vec) / h;
        let cos = from.dot(to);
        sin.atan2(cos)
    };

    let (argp, true_anom) = if circular {
        // Periapsis undefined: measure the position from the node directly
        // (argument of latitude) so elements_to_state reproduces the state.
        let u = in_plane_angle(&node_ref, &(r_vec / r));
        (0.0, u)
    } else {
        let e_hat = e_vec / e;
        let w = in_plane_angle(&node_ref, &e_hat);
        let mut f = in_plane_angle(&e_hat, &(r_vec / r));
        // Resolve the quadrant of f with the radial-velocity sign for
        // numerical robustness near f = 0 or π.
        if r_vec.dot(&v_vec) < 0.0 && f > 0.0 && f.sin().abs() < 1e-12 {
            f = -f;
        }
        (w, f)
    };

    let el = KeplerianElements {
        periapsis_radius: a * (1.0 - e),
        eccentricity: e,
        inclination_deg: inc.to_degrees(),
        raan_deg: wrap_360(raan.to_degrees()),
        arg_periapsis_deg: wrap_360(argp.to_degrees()),
        true_anomaly_deg: wrap_360(true_anom.to_degrees()),
    };
    Ok((el, ElementFlags { circular, equatorial }))
}

/// Solve Kepler's equation E − e·sin E = M by Newton iteration.
fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64, OrbitError> {
    let m = mean_anomaly;
    // Standard starter: M itself for small e, pi-biased otherwise.
    let mut ecc_anom = if e < 0.8 { m } else { std::f64::consts::PI };
    for _ in 0..KEPLER_MAX_ITERS {
        let f = ecc_anom - e * ecc_anom.sin() - m;
        let fp = 1.0 - e * ecc_anom.cos();
        let delta = f / fp;
        ecc_anom -= delta;
        if delta.abs() < KEPLER_TOL {
            return Ok(ecc_anom);
        }
    }
    Err(OrbitError::KeplerNonConvergence {
        iters: KEPLER_MAX_ITERS,
    })
}

/// Lagrange coefficients (f, g, fdot, gdot) relating the state at `dt`
/// seconds from `s` to the state at `s`: p(dt) = f·p0 + g·v0 and
/// v(dt) = fdot·p0 + gdot·v0.
pub fn lagrange_coefficients(
    s: &OrbitState,
    dt: f64,
    mu: f64,
) -> Result<(f64, f64, f64, f64), OrbitError> {
    if !s.is_finite() || !dt.is_finite() {
        return Err(OrbitError::NonFinite);
    }
    if dt == 0.0 {
        return Ok((1.0, 0.0, 0.0, 1.0));
    }
    let r0_vec = s.position;
    let v0_vec = s.velocity;
    let r0 = r0_vec.norm();
    let energy = s.specific_energy(mu);
    if energy >= 0.0 {
        return Err(OrbitError::Unbound { energy });
    }
    let a = -mu / (2.0 * energy);
    let n = (mu / a.powi(3)).sqrt(); // mean motion

    // Eccentric anomaly of the initial state from e·cosE and e·sinE.
    let ecos0 = 1.0 - r0 / a;
    let esin0 = r0_vec.dot(&v0_vec) / (n * a * a);
    let e = (ecos0 * ecos0 + esin0 * esin0).sqrt();
    if e >= 1.0 {
        return Err(OrbitError::NotElliptical { e });
    }
    let ecc_anom0 = esin0.atan2(ecos0);
    let mean_anom0 = ecc_anom0 - esin0;

    let mean_anom = mean_anom0 + n * dt;
    let ecc_anom = solve_kepler(mean_anom, e)?;
    let de = ecc_anom - ecc_anom0;
    let (sin_de, cos_de) = de.sin_cos();

    let f = 1.0 - a / r0 * (1.0 - cos_de);
    let g = dt + (sin_de - de) / n;
    let r = (r0_vec * f + v0_vec * g).norm();
    let fdot = -(mu * a).sqrt() / (r * r0) * sin_de;
    let gdot = 1.0 - a / r * (1.0 - cos_de);
    Ok((f, g, fdot, gdot))
}

/// Propagate a bound two-body state by `dt` seconds (either sign).
///
/// Uses the change in eccentric anomaly with Lagrange f/g coefficients, so
/// no angle elements are ever extracted and near-circular orbits pose no
/// problem. Energy and the angular-momentum vector are conserved to
/// fractional 1e-10 over the intervals used here.
pub fn propagate_kepler(s: &OrbitState, dt: f64, mu: f64) -> Result<OrbitState, OrbitError> {
    if dt == 0.0 {
        if !s.is_finite() {
            return Err(OrbitError::NonFinite);
        }
        return Ok(*s);
    }
    let (f, g, fdot, gdot) = lagrange_coefficients(s, dt, mu)?;
    let out = OrbitState::new(
        s.epoch + dt,
        s.position * f + s.velocity * g,
        s.position * fdot + s.velocity * gdot,
    );
    if !out.is_finite() {
        return Err(OrbitError::NonFinite);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_elements(rng: &mut impl Rng, e_range: (f64, f64)) -> KeplerianElements {
        KeplerianElements {
            periapsis_radius: rng.random_range(6880.0..9380.0),
            eccentricity: rng.random_range(e_range.0..e_range.1),
            inclination_deg: rng.random_range(0.0..180.0),
            raan_deg: rng.random_range(0.0..360.0),
            arg_periapsis_deg: rng.random_range(0.0..360.0),
            true_anomaly_deg: rng.random_range(0.0..360.0),
        }
    }

    #[test]
    fn circular_equatorial_state() {
        let el = KeplerianElements {
            periapsis_radius: 7000.0,
            eccentricity: 0.0,
            inclination_deg: 0.0,
            raan_deg: 0.0,
            arg_periapsis_deg: 0.0,
            true_anomaly_deg: 0.0,
        };
        let s = elements_to_state(&el, MU_EARTH).unwrap();
        assert_abs_diff_eq!(s.position.x, 7000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.position.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.position.z, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.velocity.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.velocity.y, (MU_EARTH / 7000.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.velocity.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn periapsis_radius_at_f_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut el = random_elements(&mut rng, (0.0, 0.9));
            el.true_anomaly_deg = 0.0;
            let s = elements_to_state(&el, MU_EARTH).unwrap();
            assert_relative_eq!(s.position.norm(), el.periapsis_radius, epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_hyperbolic_elements() {
        let el = KeplerianElements {
            periapsis_radius: 7000.0,
            eccentricity: 1.2,
            inclination_deg: 10.0,
            raan_deg: 0.0,
            arg_periapsis_deg: 0.0,
            true_anomaly_deg: 0.0,
        };
        assert!(matches!(
            elements_to_state(&el, MU_EARTH),
            Err(OrbitError::NotElliptical { .. })
        ));
    }

    #[test]
    fn elements_round_trip() {
        // Table-1 type-C style ranges plus wider eccentricities.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let el = random_elements(&mut rng, (1e-6, 0.99));
            let s = elements_to_state(&el, MU_EARTH).unwrap();
            let (back, flags) = state_to_elements(&s, MU_EARTH).unwrap();
            assert!(!flags.circular);
            assert_relative_eq!(back.periapsis_radius, el.periapsis_radius, epsilon = 1e-9);
            assert_relative_eq!(back.eccentricity, el.eccentricity, epsilon = 1e-9);
            assert_relative_eq!(back.inclination_deg, el.inclination_deg, epsilon = 1e-9);
            for (a, b) in [
                (back.raan_deg, el.raan_deg),
                (back.arg_periapsis_deg, el.arg_periapsis_deg),
                (back.true_anomaly_deg, el.true_anomaly_deg),
            ] {
                let mut d = (a - b).abs() % 360.0;
                if d > 180.0 {
                    d = 360.0 - d;
                }
                assert!(d < 1e-7, "angle mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exactly_circular_flags_undefined() {
        let el = KeplerianElements {
            periapsis_radius: 7000.0,
            eccentricity: 0.0,
            inclination_deg: 45.0,
            raan_deg: 30.0,
            arg_periapsis_deg: 0.0,
            true_anomaly_deg: 80.0,
        };
        let s = elements_to_state(&el, MU_EARTH).unwrap();
        let (back, flags) = state_to_elements(&s, MU_EARTH).unwrap();
        assert!(flags.circular);
        assert!(!flags.equatorial);
        assert!(back.eccentricity < 1e-10);
        // Conventional elements still reproduce the state.
        let s2 = elements_to_state(&back, MU_EARTH).unwrap();
        assert_relative_eq!(s.position, s2.position, epsilon = 1e-6);
        assert_relative_eq!(s.velocity, s2.velocity, epsilon = 1e-9);
    }

    #[test]
    fn circular_speed_yields_zero_eccentricity() {
        let v_circ = (MU_EARTH / 7000.0).sqrt(); // 7.546049108...
        let s = OrbitState::new(
            0.0,
            Vector3::new(7000.0, 0.0, 0.0),
            Vector3::new(0.0, v_circ, 0.0),
        );
        let (el, _) = state_to_elements(&s, MU_EARTH).unwrap();
        assert!(el.eccentricity < 1e-9);
        assert_abs_diff_eq!(el.periapsis_radius, 7000.0, epsilon = 1e-6);
    }

    #[test]
    fn propagate_zero_dt_is_identity() {
        let el = KeplerianElements {
            periapsis_radius: 8380.0,
            eccentricity: 0.1,
            inclination_deg: 60.0,
            raan_deg: 10.0,
            arg_periapsis_deg: 20.0,
            true_anomaly_deg: 30.0,
        };
        let s = elements_to_state(&el, MU_EARTH).unwrap();
        let p = propagate_kepler(&s, 0.0, MU_EARTH).unwrap();
        assert_eq!(s.position, p.position);
        assert_eq!(s.velocity, p.velocity);
    }

    #[test]
    fn propagate_full_period_returns_home() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let el = random_elements(&mut rng, (0.0, 0.6));
            let s = elements_to_state(&el, MU_EARTH).unwrap();
            let period = el.period(MU_EARTH);
            let p = propagate_kepler(&s, period, MU_EARTH).unwrap();
            assert!(
                (p.position - s.position).norm() < 1e-6,
                "period return error {}",
                (p.position - s.position).norm()
            );
        }
    }

    #[test]
    fn propagate_conserves_energy_and_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let el = random_elements(&mut rng, (0.0, 0.6));
            let s = elements_to_state(&el, MU_EARTH).unwrap();
            let dt = rng.random_range(-4000.0..4000.0);
            let p = propagate_kepler(&s, dt, MU_EARTH).unwrap();
            assert_relative_eq!(
                p.specific_energy(MU_EARTH),
                s.specific_energy(MU_EARTH),
                epsilon = 1e-10
            );
            let h0 = s.angular_momentum();
            let h1 = p.angular_momentum();
            assert!((h1 - h0).norm() / h0.norm() < 1e-10);
        }
    }

    #[test]
    fn propagate_composes_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let el = random_elements(&mut rng, (0.0, 0.6));
            let s = elements_to_state(&el, MU_EARTH).unwrap();
            let (a, b) = (rng.random_range(-600.0..600.0), rng.random_range(-600.0..600.0));
            let two_step =
                propagate_kepler(&propagate_kepler(&s, a, MU_EARTH).unwrap(), b, MU_EARTH)
                    .unwrap();
            let one_step = propagate_kepler(&s, a + b, MU_EARTH).unwrap();
            assert!(
                (two_step.position - one_step.position).norm() / one_step.position.norm() < 1e-8
            );

            let back = propagate_kepler(
                &propagate_kepler(&s, a, MU_EARTH).unwrap(),
                -a,
                MU_EARTH,
            )
            .unwrap();
            assert!((back.position - s.position).norm() / s.position.norm() < 1e-8);
            assert!((back.velocity - s.velocity).norm() / s.velocity.norm() < 1e-8);
        }
    }

    #[test]
    fn propagate_rejects_unbound_state() {
        let s = OrbitState::new(
            0.0,
            Vector3::new(7000.0, 0.0, 0.0),
            Vector3::new(0.0, 12.0, 0.0), // above escape speed
        );
        assert!(matches!(
            propagate_kepler(&s, 60.0, MU_EARTH),
            Err(OrbitError::Unbound { .. })
        ));
    }
}
