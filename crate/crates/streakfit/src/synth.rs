//! The forward model: render a candidate orbit into a streak image.
//!
//! A streak is the accumulation of a Gaussian point-spread function over the
//! discretized exposure timestamps. Each timestamp propagates the state,
//! projects it through that instant's camera frame, and splats a truncated
//! Gaussian around the sub-pixel projection. Orbits that never enter the
//! field of view render to an all-zero image rather than an error so the
//! optimizer can keep moving.
//!
//! Simulation-only corruptions live here too: zero holes along the streak
//! (mimicking upstream star removal) and additive Gaussian noise.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{world_to_pixel, CameraFrame};
use crate::grid::Grid;
use crate::observer::ExposureWindow;
use crate::orbit::{propagate_kepler, OrbitState};

/// PSF contributions beyond this many sigmas from the projection are zero.
pub const PSF_TRUNCATION_SIGMAS: f64 = 4.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("non-finite state during propagation: {0}")]
    Propagation(#[from] crate::orbit::OrbitError),
    #[error("frame count {frames} does not match window steps + 1 = {expected}")]
    FrameCountMismatch { frames: usize, expected: usize },
}

/// Integer crop window into the full sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBounds {
    /// Full-sensor pixel coordinates of the crop's (0, 0) pixel.
    pub origin: Vector2<f64>,
    pub width: usize,
    pub height: usize,
}

impl CropBounds {
    pub fn diagonal_px(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }
}

/// Which corner of a crop is closest to the start of the streak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    /// Pixel coordinates of this corner in a width×height crop.
    pub fn pixel(&self, width: usize, height: usize) -> Vector2<f64> {
        let w = width as f64 - 1.0;
        let h = height as f64 - 1.0;
        match self {
            Corner::TopLeft => Vector2::new(0.0, 0.0),
            Corner::TopRight => Vector2::new(w, 0.0),
            Corner::BottomLeft => Vector2::new(0.0, h),
            Corner::BottomRight => Vector2::new(w, h),
        }
    }

    pub fn opposite(&self) -> Corner {
        match self {
            Corner::TopLeft => Corner::BottomRight,
            Corner::TopRight => Corner::BottomLeft,
            Corner::BottomLeft => Corner::TopRight,
            Corner::BottomRight => Corner::TopLeft,
        }
    }
}

/// An observed or generated streak image with the metadata needed to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreakImage {
    pub pixels: Grid,
    pub window: ExposureWindow,
    pub frames: Vec<CameraFrame>,
    pub psf_sigma: f64,
    /// Full-sensor pixel coordinates of the crop's (0,0) pixel.
    pub origin_offset: Vector2<f64>,
    /// Which crop corner is nearest the beginning of the streak, when known.
    pub start_corner: Option<Corner>,
}

impl StreakImage {
    pub fn crop_bounds(&self) -> CropBounds {
        CropBounds {
            origin: self.origin_offset,
            width: self.pixels.width(),
            height: self.pixels.height(),
        }
    }
}

/// Gaussian point-spread intensity at pixel `u_pixel` for a point source
/// projected at `u_proj`, truncated at [`PSF_TRUNCATION_SIGMAS`].
pub fn psf_value(u_proj: &Vector2<f64>, u_pixel: &Vector2<f64>, sigma: f64) -> f64 {
    let d2 = (u_pixel - u_proj).norm_squared();
    let r = PSF_TRUNCATION_SIGMAS * sigma;
    if d2 > r * r {
        return 0.0;
    }
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    norm * (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Splat one truncated Gaussian into the grid around a crop-relative
/// projection. Separable evaluation with a circular cutoff.
fn splat_psf(grid: &mut Grid, center: &Vector2<f64>, sigma: f64) {
    let radius = PSF_TRUNCATION_SIGMAS * sigma;
    let r2 = radius * radius;
    let x_min = ((center.x - radius).ceil() as i64).max(0);
    let x_max = ((center.x + radius).floor() as i64).min(grid.width() as i64 - 1);
    let y_min = ((center.y - radius).ceil() as i64).max(0);
    let y_max = ((center.y + radius).floor() as i64).min(grid.height() as i64 - 1);
    if x_min > x_max || y_min > y_max {
        return;
    }
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let inv_2s2 = 1.0 / (2.0 * sigma * sigma);

    let mut ex = Vec::with_capacity((x_max - x_min + 1) as usize);
    for x in x_min..=x_max {
        let dx = x as f64 - center.x;
        ex.push((dx, (-dx * dx * inv_2s2).exp()));
    }
    for y in y_min..=y_max {
        let dy = y as f64 - center.y;
        let ey = (-dy * dy * inv_2s2).exp();
        let dy2 = dy * dy;
        for (i, &(dx, exv)) in ex.iter().enumerate() {
            if dx * dx + dy2 > r2 {
                continue;
            }
            let x = (x_min as usize) + i;
            grid.add(x, y as usize, norm * exv * ey);
        }
    }
}

/// Crop-relative projected positions of the orbit at every window timestamp.
///
/// `None` marks timestamps where the target is behind the tangent plane.
/// Positions outside the crop are still reported; callers clip as needed.
pub fn streak_path(
    orbit: &OrbitState,
    frames: &[CameraFrame],
    crop: &CropBounds,
) -> Result<Vec<Option<Vector2<f64>>>, SynthError> {
    let mut path = Vec::with_capacity(frames.len());
    for frame in frames {
        let state = propagate_kepler(orbit, frame.epoch - orbit.epoch, crate::orbit::MU_EARTH)?;
        match world_to_pixel(&state.position, frame) {
            Ok(u) => path.push(Some(u - crop.origin)),
            Err(crate::camera::CameraError::BehindCamera { .. }) => path.push(None),
            Err(_) => path.push(None),
        }
    }
    Ok(path)
}

/// Render the streak of `orbit` through the given frames into a bare grid.
///
/// This is the inner loop of both synthesis and fitting: the sum over all
/// frame timestamps of the truncated Gaussian PSF centered on each projected
/// position. Deterministic for fixed inputs.
pub fn render_grid(
    orbit: &OrbitState,
    frames: &[CameraFrame],
    sigma: f64,
    crop: &CropBounds,
) -> Result<Grid, SynthError> {
    let mut grid = Grid::zeros(crop.width, crop.height);
    for center in streak_path(orbit, frames, crop)?.into_iter().flatten() {
        splat_psf(&mut grid, &center, sigma);
    }
    Ok(grid)
}

/// Render the long-exposure streak of `orbit` into a full [`StreakImage`]
/// carrying the window and camera metadata.
pub fn render_streak(
    orbit: &OrbitState,
    frames: &[CameraFrame],
    window: &ExposureWindow,
    sigma: f64,
    crop: &CropBounds,
) -> Result<StreakImage, SynthError> {
    if frames.len() != window.steps + 1 {
        return Err(SynthError::FrameCountMismatch {
            frames: frames.len(),
            expected: window.steps + 1,
        });
    }
    let grid = render_grid(orbit, frames, sigma, crop)?;
    Ok(StreakImage {
        pixels: grid,
        window: *window,
        frames: frames.to_vec(),
        psf_sigma: sigma,
        origin_offset: crop.origin,
        start_corner: None,
    })
}

/// A zero hole punched into a streak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: Vector2<f64>,
    pub diameter_px: f64,
}

/// Draw hole placements uniformly along the in-crop part of a streak path.
pub fn sample_holes<R: Rng + ?Sized>(
    path: &[Option<Vector2<f64>>],
    crop: &CropBounds,
    count: usize,
    diameter_range: (f64, f64),
    rng: &mut R,
) -> Vec<Hole> {
    let in_crop: Vec<Vector2<f64>> = path
        .iter()
        .flatten()
        .filter(|u| {
            u.x >= 0.0 && u.y >= 0.0 && u.x < crop.width as f64 && u.y < crop.height as f64
        })
        .copied()
        .collect();
    if in_crop.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| Hole {
            center: in_crop[rng.random_range(0..in_crop.len())],
            diameter_px: rng.random_range(diameter_range.0..diameter_range.1),
        })
        .collect()
}

/// Zero every pixel whose center lies inside one of the hole disks.
pub fn inject_holes(image: &mut StreakImage, holes: &[Hole]) {
    let (w, h) = (image.pixels.width(), image.pixels.height());
    for hole in holes {
        let r = hole.diameter_px / 2.0;
        let x_min = ((hole.center.x - r).floor() as i64).max(0);
        let x_max = ((hole.center.x + r).ceil() as i64).min(w as i64 - 1);
        let y_min = ((hole.center.y - r).floor() as i64).max(0);
        let y_max = ((hole.center.y + r).ceil() as i64).min(h as i64 - 1);
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let d = Vector2::new(x as f64, y as f64) - hole.center;
                if d.norm_squared() <= r * r {
                    image.pixels.set(x as usize, y as usize, 0.0);
                }
            }
        }
    }
}

/// Add zero-mean Gaussian intensity noise, clipped at zero from below.
///
/// The image is expected to already be normalized to unit streak amplitude
/// so that `sigma_noise` is the reciprocal of the SNR.
pub fn add_gaussian_noise<R: Rng + ?Sized>(image: &mut StreakImage, sigma_noise: f64, rng: &mut R) {
    if sigma_noise == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma_noise).expect("valid noise sigma");
    for v in image.pixels.data_mut() {
        *v = (*v + normal.sample(rng)).max(0.0);
    }
}

/// Scale the image so its brightest pixel is 1. No-op for all-zero images.
pub fn normalize_to_unit_peak(image: &mut StreakImage) {
    let max = image.pixels.max_value();
    if max > 0.0 {
        image.pixels.scale_in_place(1.0 / max);
    }
}
