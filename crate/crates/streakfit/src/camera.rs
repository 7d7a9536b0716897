//! Gnomonic (tangent-plane) camera model.
//!
//! A frame is the camera at one instant: observer position in ECI, an
//! inertially fixed boresight, an up reference fixing roll, and the pixel
//! intrinsics. The boresight stays fixed across one exposure (sidereal
//! tracking); only the observer moves with the Earth.
//!
//! Pixel axes: +x right, +y down, with the image "up" direction mapping to
//! decreasing y. World-to-pixel places the boresight exactly on the
//! principal point and scales tangent-plane coordinates by the plate scale.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observer::{interpolate_timestamps, site_eci, ExposureWindow, ObserverSite};

pub const ARCSEC_PER_RAD: f64 = 180.0 * 3600.0 / std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("target is behind the camera (line-of-sight dot boresight = {dot})")]
    BehindCamera { dot: f64 },
    #[error("up reference is parallel to the boresight")]
    DegenerateUp,
}

/// Fixed per-sensor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Plate scale, arcseconds per pixel.
    pub pixel_scale_arcsec: f64,
    /// Full sensor width in pixels.
    pub width: u32,
    /// Full sensor height in pixels.
    pub height: u32,
    /// Principal point in full-sensor pixel coordinates.
    pub principal_point: Vector2<f64>,
}

impl CameraIntrinsics {
    /// The survey camera used throughout the simulations: 4930×7382 px at
    /// 10 arcsec/px with the principal point at the geometric center.
    pub fn survey_default() -> Self {
        Self {
            pixel_scale_arcsec: 10.0,
            width: 7382,
            height: 4930,
            principal_point: Vector2::new(7382.0 / 2.0, 4930.0 / 2.0),
        }
    }

    pub fn pixel_scale_rad(&self) -> f64 {
        self.pixel_scale_arcsec / ARCSEC_PER_RAD
    }

    pub fn diagonal_px(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }
}

/// The camera at a single timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub epoch: f64,
    /// Observer position, km ECI.
    pub observer_eci: Vector3<f64>,
    /// Unit boresight direction, ECI.
    pub boresight: Vector3<f64>,
    /// Unit reference fixing the roll about the boresight; must not be
    /// parallel to it.
    pub up_reference: Vector3<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl CameraFrame {
    pub fn new(
        epoch: f64,
        observer_eci: Vector3<f64>,
        boresight: Vector3<f64>,
        up_reference: Vector3<f64>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, CameraError> {
        let a = boresight.normalize();
        let up = up_reference.normalize();
        if a.cross(&up).norm() < 1e-9 {
            return Err(CameraError::DegenerateUp);
        }
        Ok(Self {
            epoch,
            observer_eci,
            boresight: a,
            up_reference: up,
            intrinsics,
        })
    }

    /// Orthonormal image basis: (right, up) spanning the tangent plane.
    pub fn image_basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let a = self.boresight;
        let up = (self.up_reference - a * self.up_reference.dot(&a)).normalize();
        let right = up.cross(&a);
        (right, up)
    }
}

/// Project an inertial position onto the sensor.
///
/// Returns full-sensor pixel coordinates; errors if the target is on or
/// behind the tangent plane.
pub fn world_to_pixel(p_eci: &Vector3<f64>, frame: &CameraFrame) -> Result<Vector2<f64>, CameraError> {
    let los = (p_eci - frame.observer_eci).normalize();
    los_to_pixel(&los, frame)
}

/// Project a unit line-of-sight direction onto the sensor.
pub fn los_to_pixel(los: &Vector3<f64>, frame: &CameraFrame) -> Result<Vector2<f64>, CameraError> {
    let dot = los.dot(&frame.boresight);
    if dot <= 0.0 {
        return Err(CameraError::BehindCamera { dot });
    }
    let (right, up) = frame.image_basis();
    let xi = los.dot(&right) / dot;
    let eta = los.dot(&up) / dot;
    let s = frame.intrinsics.pixel_scale_rad();
    Ok(Vector2::new(
        frame.intrinsics.principal_point.x + xi / s,
        frame.intrinsics.principal_point.y - eta / s,
    ))
}

/// Back-project a pixel to its unit line-of-sight direction in ECI.
pub fn pixel_to_los(u: &Vector2<f64>, frame: &CameraFrame) -> Vector3<f64> {
    let s = frame.intrinsics.pixel_scale_rad();
    let xi = (u.x - frame.intrinsics.principal_point.x) * s;
    let eta = -(u.y - frame.intrinsics.principal_point.y) * s;
    let (right, up) = frame.image_basis();
    (frame.boresight + right * xi + up * eta).normalize()
}

/// Inertially fixed pointing shared by all frames of one exposure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pointing {
    pub boresight: Vector3<f64>,
    pub up_reference: Vector3<f64>,
}

/// Build one camera frame per window timestamp.
///
/// The observer position follows the site through Earth rotation; boresight,
/// up reference and intrinsics are held fixed.
pub fn frames_for_window(
    site: &ObserverSite,
    pointing: &Pointing,
    intrinsics: &CameraIntrinsics,
    window: &ExposureWindow,
) -> Result<Vec<CameraFrame>, CameraError> {
    interpolate_timestamps(window)
        .into_iter()
        .map(|t| {
            CameraFrame::new(
                t,
                site_eci(site, t),
                pointing.boresight,
                pointing.up_reference,
                *intrinsics,
            )
        })
        .collect()
}
