//! Observer sites, Earth rotation, and exposure-window timestamp grids.
//!
//! Time is carried as seconds past the J2000 epoch everywhere inside the
//! library; file formats convert to Julian Date at the boundary. Earth
//! orientation is a plain GMST rotation about the pole (IAU 1982 polynomial);
//! nutation and precession are far below the 10 arcsec/px plate scale used
//! by the cameras modelled here.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbit::EARTH_RADIUS_KM;

/// Julian Date of the J2000 epoch.
pub const J2000_JD: f64 = 2451545.0;

/// Ratio of sidereal to solar rate, from the linear term of the IAU 1982
/// GMST polynomial.
pub const SIDEREAL_RATE: f64 = (876600.0 * 3600.0 + 8640184.812866) / (36525.0 * 86400.0);

/// Length of one sidereal day in seconds, consistent with [`gmst_rad`].
pub const SIDEREAL_DAY_S: f64 = 86400.0 / SIDEREAL_RATE;

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("exposure window must have at least one step (got {steps})")]
    EmptyWindow { steps: usize },
    #[error("exposure duration must be positive (got {duration})")]
    NonPositiveDuration { duration: f64 },
}

/// A fixed camera site in Earth-centered Earth-fixed coordinates (km).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverSite {
    pub ecef_position: Vector3<f64>,
}

impl ObserverSite {
    pub fn new(ecef_position: Vector3<f64>) -> Self {
        Self { ecef_position }
    }
}

/// One long exposure: start epoch (s past J2000), duration, and the number
/// of sub-intervals used to discretize the photon accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureWindow {
    pub start: f64,
    pub duration: f64,
    pub steps: usize,
}

impl ExposureWindow {
    pub fn new(start: f64, duration: f64, steps: usize) -> Result<Self, ObserverError> {
        if steps == 0 {
            return Err(ObserverError::EmptyWindow { steps });
        }
        if duration <= 0.0 {
            return Err(ObserverError::NonPositiveDuration { duration });
        }
        Ok(Self {
            start,
            duration,
            steps,
        })
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn mid(&self) -> f64 {
        self.start + 0.5 * self.duration
    }
}

/// Uniform timestamp grid t_n = t0 + n·Δt/N for n = 0..=N.
///
/// The first timestamp is the exposure start and the last is exactly the
/// exposure end, so the grid always covers the full window.
pub fn interpolate_timestamps(window: &ExposureWindow) -> Vec<f64> {
    let n = window.steps;
    (0..=n)
        .map(|i| window.start + (i as f64) * window.duration / (n as f64))
        .collect()
}

/// Greenwich mean sidereal time in radians at `epoch` seconds past J2000.
///
/// IAU 1982 polynomial evaluated in UT1 days; the sub-second UT1/TT
/// distinction is ignored, which cancels anyway because synthesis and
/// fitting share this function.
pub fn gmst_rad(epoch: f64) -> f64 {
    let t = epoch / (36525.0 * 86400.0); // Julian centuries past J2000
    let seconds = 67310.54841
        + (876600.0 * 3600.0 + 8640184.812866) * t
        + 0.093104 * t * t
        - 6.2e-6 * t * t * t;
    let frac = seconds.rem_euclid(86400.0);
    frac * (2.0 * std::f64::consts::PI / 86400.0)
}

/// Rotation matrix taking ECEF coordinates to ECI at `epoch`.
pub fn ecef_to_eci_matrix(epoch: f64) -> Matrix3<f64> {
    let (sin_g, cos_g) = gmst_rad(epoch).sin_cos();
    Matrix3::new(
        cos_g, -sin_g, 0.0, //
        sin_g, cos_g, 0.0, //
        0.0, 0.0, 1.0,
    )
}

/// Inertial position of a site at `epoch`: its ECEF vector rotated by GMST.
pub fn site_eci(site: &ObserverSite, epoch: f64) -> Vector3<f64> {
    ecef_to_eci_matrix(epoch) * site.ecef_position
}

/// Sample a site uniformly on the sphere of Earth radius.
pub fn random_site<R: Rng + ?Sized>(rng: &mut R) -> ObserverSite {
    let p: [f64; 3] = UnitSphere.sample(rng);
    ObserverSite::new(Vector3::new(p[0], p[1], p[2]) * EARTH_RADIUS_KM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_grid() {
        let w = ExposureWindow::new(0.0, 5.0, 5).unwrap();
        assert_eq!(interpolate_timestamps(&w), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn endpoints_only() {
        let w = ExposureWindow::new(10.0, 5.0, 1).unwrap();
        assert_eq!(interpolate_timestamps(&w), vec![10.0, 15.0]);
    }

    #[test]
    fn dense_grid_spacing() {
        let w = ExposureWindow::new(0.0, 5.0, 500).unwrap();
        let ts = interpolate_timestamps(&w);
        assert_eq!(ts.len(), 501);
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 5.0);
        let max_gap = ts.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max);
        assert_abs_diff_eq!(max_gap, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(ExposureWindow::new(0.0, 5.0, 0).is_err());
    }

    #[test]
    fn pole_site_is_fixed() {
        let site = ObserverSite::new(Vector3::new(0.0, 0.0, 6356.75));
        for epoch in [0.0, 1234.5, 9.9e7] {
            let p = site_eci(&site, epoch);
            assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.z, 6356.75, epsilon = 1e-12);
        }
    }

    #[test]
    fn sidereal_day_periodicity() {
        let site = ObserverSite::new(Vector3::new(EARTH_RADIUS_KM, 0.0, 0.0));
        let t0 = 86400.0;
        let a = site_eci(&site, t0);
        let b = site_eci(&site, t0 + SIDEREAL_DAY_S);
        assert!((a - b).norm() < 1e-6, "drift {}", (a - b).norm());
    }

    #[test]
    fn quarter_turn_orthogonality() {
        let site = ObserverSite::new(Vector3::new(EARTH_RADIUS_KM, 0.0, 0.0));
        let t0 = 5000.0;
        let a = site_eci(&site, t0);
        let b = site_eci(&site, t0 + SIDEREAL_DAY_S / 4.0);
        let cos_angle = a.dot(&b) / (a.norm() * b.norm());
        assert!(cos_angle.abs() < 1e-9, "cos angle {cos_angle}");
    }

    #[test]
    fn norm_preserved_and_rotation_proper() {
        let site = ObserverSite::new(Vector3::new(4000.0, -3000.0, 3500.0));
        let epoch = 7.7e6;
        assert_abs_diff_eq!(
            site_eci(&site, epoch).norm(),
            site.ecef_position.norm(),
            epsilon = 1e-9
        );
        let m = ecef_to_eci_matrix(epoch);
        assert_abs_diff_eq!(m.determinant(), 1.0, epsilon = 1e-12);
        let should_be_identity = m * m.transpose();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(should_be_identity[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn random_site_reproducible_and_on_sphere() {
        let a = random_site(&mut ChaCha8Rng::seed_from_u64(9));
        let b = random_site(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.ecef_position, b.ecef_position);
        assert_abs_diff_eq!(a.ecef_position.norm(), EARTH_RADIUS_KM, epsilon = 1e-9);
    }

    #[test]
    fn random_sites_cover_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 10_000;
        let mut mean = Vector3::zeros();
        for _ in 0..n {
            mean += random_site(&mut rng).ecef_position;
        }
        mean /= n as f64;
        // E|mean|^2 = R^2/n; allow three times the RMS radius.
        let three_sigma = 3.0 * EARTH_RADIUS_KM / (n as f64).sqrt();
        assert!(mean.norm() < three_sigma, "mean {} vs {}", mean.norm(), three_sigma);
    }
}
