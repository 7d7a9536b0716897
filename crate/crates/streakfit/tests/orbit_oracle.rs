//! Propagator cross-check against a brute-force two-body ODE integrator.
//!
//! The oracle integrates p'' = -mu p / |p|^3 with an adaptive embedded
//! Runge-Kutta-Fehlberg 4(5) scheme and never touches the Kepler-solver
//! code path it is checking.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streakfit::orbit::{elements_to_state, propagate_kepler, KeplerianElements, MU_EARTH};

#[derive(Clone, Copy)]
struct State6 {
    p: Vector3<f64>,
    v: Vector3<f64>,
}

fn deriv(s: &State6, mu: f64) -> State6 {
    let r = s.p.norm();
    State6 {
        p: s.v,
        v: -s.p * (mu / (r * r * r)),
    }
}

fn axpy(s: &State6, d: &State6, h: f64) -> State6 {
    State6 {
        p: s.p + d.p * h,
        v: s.v + d.v * h,
    }
}

/// One RKF45 step; returns (4th-order solution, 5th-order solution).
fn rkf45_step(s: &State6, h: f64, mu: f64) -> (State6, State6) {
    let k1 = deriv(s, mu);
    let k2 = deriv(&axpy(s, &k1, h * 0.25), mu);
    let s3 = State6 {
        p: s.p + (k1.p * (3.0 / 32.0) + k2.p * (9.0 / 32.0)) * h,
        v: s.v + (k1.v * (3.0 / 32.0) + k2.v * (9.0 / 32.0)) * h,
    };
    let k3 = deriv(&s3, mu);
    let s4 = State6 {
        p: s.p
            + (k1.p * (1932.0 / 2197.0) - k2.p * (7200.0 / 2197.0) + k3.p * (7296.0 / 2197.0))
                * h,
        v: s.v
            + (k1.v * (1932.0 / 2197.0) - k2.v * (7200.0 / 2197.0) + k3.v * (7296.0 / 2197.0))
                * h,
    };
    let k4 = deriv(&s4, mu);
    let s5 = State6 {
        p: s.p
            + (k1.p * (439.0 / 216.0) - k2.p * 8.0 + k3.p * (3680.0 / 513.0)
                - k4.p * (845.0 / 4104.0))
                * h,
        v: s.v
            + (k1.v * (439.0 / 216.0) - k2.v * 8.0 + k3.v * (3680.0 / 513.0)
                - k4.v * (845.0 / 4104.0))
                * h,
    };
    let k5 = deriv(&s5, mu);
    let s6 = State6 {
        p: s.p
            + (-k1.p * (8.0 / 27.0) + k2.p * 2.0 - k3.p * (3544.0 / 2565.0)
                + k4.p * (1859.0 / 4104.0)
                - k5.p * (11.0 / 40.0))
                * h,
        v: s.v
            + (-k1.v * (8.0 / 27.0) + k2.v * 2.0 - k3.v * (3544.0 / 2565.0)
                + k4.v * (1859.0 / 4104.0)
                - k5.v * (11.0 / 40.0))
                * h,
    };
    let k6 = deriv(&s6, mu);

    let order4 = State6 {
        p: s.p
            + (k1.p * (25.0 / 216.0)
                + k3.p * (1408.0 / 2565.0)
                + k4.p * (2197.0 / 4104.0)
                - k5.p * (1.0 / 5.0))
                * h,
        v: s.v
            + (k1.v * (25.0 / 216.0)
                + k3.v * (1408.0 / 2565.0)
                + k4.v * (2197.0 / 4104.0)
                - k5.v * (1.0 / 5.0))
                * h,
    };
    let order5 = State6 {
        p: s.p
            + (k1.p * (16.0 / 135.0)
                + k3.p * (6656.0 / 12825.0)
                + k4.p * (28561.0 / 56430.0)
                - k5.p * (9.0 / 50.0)
                + k6.p * (2.0 / 55.0))
                * h,
        v: s.v
            + (k1.v * (16.0 / 135.0)
                + k3.v * (6656.0 / 12825.0)
                + k4.v * (28561.0 / 56430.0)
                - k5.v * (9.0 / 50.0)
                + k6.v * (2.0 / 55.0))
                * h,
    };
    (order4, order5)
}

/// Integrate the two-body problem from `(p, v)` over `dt` seconds with
/// adaptive step control targeting `tol` per-step position error (km).
fn integrate_two_body(p: Vector3<f64>, v: Vector3<f64>, dt: f64, mu: f64, tol: f64) -> State6 {
    let mut s = State6 { p, v };
    let mut t = 0.0;
    let dir = dt.signum();
    let mut h = dir * (dt.abs() / 100.0).clamp(1e-6, 10.0);
    while (dt - t).abs() > 1e-12 {
        if (h.abs()) > (dt - t).abs() {
            h = dt - t;
        }
        let (o4, o5) = rkf45_step(&s, h, mu);
        let err = (o5.p - o4.p).norm().max(1e-18);
        if err <= tol {
            s = o5;
            t += h;
        }
        let scale = (0.9 * (tol / err).powf(0.2)).clamp(0.1, 4.0);
        h *= scale;
    }
    s
}

fn table1_elements(rng: &mut impl Rng) -> KeplerianElements {
    // All four orbit families of the simulation protocol, drawn uniformly.
    let (rp_range, e_range) = match rng.random_range(0..4u8) {
        0 => ((6880.0, 8380.0), (0.0, 0.01)),
        1 => ((8380.0, 9380.0), (0.01, 0.2)),
        2 => ((8380.0, 9380.0), (0.2, 0.4)),
        _ => ((8380.0, 9380.0), (0.4, 0.6)),
    };
    KeplerianElements {
        periapsis_radius: rng.random_range(rp_range.0..rp_range.1),
        eccentricity: rng.random_range(e_range.0..e_range.1),
        inclination_deg: rng.random_range(0.0..180.0),
        raan_deg: rng.random_range(0.0..360.0),
        arg_periapsis_deg: rng.random_range(0.0..360.0),
        true_anomaly_deg: rng.random_range(0.0..360.0),
    }
}

#[test]
fn propagator_matches_ode_oracle_type_b_60s() {
    let el = KeplerianElements {
        periapsis_radius: 8900.0,
        eccentricity: 0.12,
        inclination_deg: 63.0,
        raan_deg: 120.0,
        arg_periapsis_deg: 45.0,
        true_anomaly_deg: 200.0,
    };
    let s = elements_to_state(&el, MU_EARTH).unwrap();
    let kepler = propagate_kepler(&s, 60.0, MU_EARTH).unwrap();
    let ode = integrate_two_body(s.position, s.velocity, 60.0, MU_EARTH, 1e-10);
    let dp = (kepler.position - ode.p).norm();
    assert!(dp < 1e-6, "position deviation {dp} km");
}

#[test]
fn propagator_matches_ode_oracle_100_random_orbits_240s() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let el = table1_elements(&mut rng);
        let s = elements_to_state(&el, MU_EARTH).unwrap();
        let kepler = propagate_kepler(&s, 240.0, MU_EARTH).unwrap();
        let ode = integrate_two_body(s.position, s.velocity, 240.0, MU_EARTH, 1e-10);
        worst = worst.max((kepler.position - ode.p).norm());
    }
    let elapsed = start.elapsed();
    assert!(worst < 1e-6, "worst position deviation {worst} km");
    assert!(elapsed.as_secs_f64() < 5.0, "oracle run took {elapsed:?}");
}
