//! Angles-only initialization: classical Gauss IOD from three timestamped
//! line-of-sight vectors, the end-to-end corner initializer that backprojects
//! crop corners, and the level-graded degraded initializers used by the
//! robustness experiments.
//!
//! The Gauss solver follows the classical formulation: the 8th-degree range
//! polynomial for the middle range, f/g series for the velocity, then
//! iterative refinement with exact Lagrange coefficients from the two-body
//! propagator.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use thiserror::Error;

use crate::camera::{pixel_to_los, world_to_pixel};
use crate::fitting::ObservationSet;
use crate::orbit::{lagrange_coefficients, propagate_kepler, OrbitState, EARTH_RADIUS_KM};
use crate::synth::StreakImage;

/// Retries for the degraded initializer before giving up.
const DEGRADED_INIT_RETRIES: usize = 10;

/// Refinement loop tolerance on the middle range (km) and iteration cap.
const REFINE_TOL_KM: f64 = 1e-8;
const REFINE_MAX_ITERS: usize = 50;

/// Residual line-of-sight angle accepted when validating a candidate root.
const LOS_RESIDUAL_TOL_RAD: f64 = 0.5 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error)]
pub enum IodError {
    #[error("line-of-sight epochs must be strictly increasing")]
    NonIncreasingEpochs,
    #[error("degenerate geometry: line-of-sight directions are coplanar with the observer")]
    DegenerateGeometry,
    #[error("no physically valid root of the range polynomial")]
    NoValidRoot,
    #[error("initializer needs three images or a single tagged image (got {count})")]
    UnsupportedImageCount { count: usize },
    #[error("image is missing its streak-start corner tag")]
    MissingCornerTag,
    #[error("degraded initializer failed after {retries} resamples")]
    RetriesExhausted { retries: usize },
    #[error("target projects behind the camera")]
    BehindCamera,
    #[error(transparent)]
    Orbit(#[from] crate::orbit::OrbitError),
}

/// One timestamped unit line of sight from a known observer position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosObservation {
    pub epoch: f64,
    pub site_eci: Vector3<f64>,
    pub los: Vector3<f64>,
}

impl LosObservation {
    pub fn new(epoch: f64, site_eci: Vector3<f64>, los: Vector3<f64>) -> Self {
        Self {
            epoch,
            site_eci,
            los: los.normalize(),
        }
    }
}

/// Positive real roots of r^8 + a6 r^6 + a3 r^3 + a0 by sign-change scan and
/// bisection over the physically plausible bracket.
fn positive_roots(a6: f64, a3: f64, a0: f64) -> Vec<f64> {
    let poly = |r: f64| {
        let r3 = r * r * r;
        let r6 = r3 * r3;
        r6 * r * r + a6 * r6 + a3 * r3 + a0
    };
    let (lo, hi) = (1000.0f64, 200_000.0f64);
    let steps = 2000usize;
    let ratio = (hi / lo).powf(1.0 / steps as f64);
    let mut roots = Vec::new();
    let mut r_prev = lo;
    let mut f_prev = poly(lo);
    for i in 1..=steps {
        let r = lo * ratio.powi(i as i32);
        let f = poly(r);
        if f_prev == 0.0 {
            roots.push(r_prev);
        } else if f_prev.signum() != f.signum() {
            let (mut a, mut b) = (r_prev, r);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if poly(a).signum() == poly(mid).signum() {
                    a = mid;
                } else {
                    b = mid;
                }
                if (b - a) / mid < 1e-14 {
                    break;
                }
            }
            roots.push(0.5 * (a + b));
        }
        r_prev = r;
        f_prev = f;
    }
    roots
}

struct GaussGeometry {
    tau1: f64,
    tau3: f64,
    los: Matrix3<f64>,
    m: Matrix3<f64>,
    sites: [Vector3<f64>; 3],
}

fn gauss_geometry(obs: &[LosObservation; 3]) -> Result<GaussGeometry, IodError> {
    if !(obs[0].epoch < obs[1].epoch && obs[1].epoch < obs[2].epoch) {
        return Err(IodError::NonIncreasingEpochs);
    }
    let los = Matrix3::from_columns(&[obs[0].los, obs[1].los, obs[2].los]);
    if los.determinant().abs() < 1e-10 {
        return Err(IodError::DegenerateGeometry);
    }
    let inv = los.try_inverse().ok_or(IodError::DegenerateGeometry)?;
    let sites = Matrix3::from_columns(&[obs[0].site_eci, obs[1].site_eci, obs[2].site_eci]);
    Ok(GaussGeometry {
        tau1: obs[0].epoch - obs[1].epoch,
        tau3: obs[2].epoch - obs[1].epoch,
        los,
        m: inv * sites,
        sites: [obs[0].site_eci, obs[1].site_eci, obs[2].site_eci],
    })
}

/// Ranges along the three lines of sight for mixing coefficients `c`:
/// rho_i = -(M c)_i / c_i.
fn ranges_for(geom: &GaussGeometry, c: &Vector3<f64>) -> Option<[f64; 3]> {
    let mc = geom.m * c;
    let mut rho = [0.0; 3];
    for i in 0..3 {
        if c[i].abs() < 1e-30 {
            return None;
        }
        rho[i] = -mc[i] / c[i];
    }
    Some(rho)
}

fn positions_for(geom: &GaussGeometry, rho: &[f64; 3]) -> [Vector3<f64>; 3] {
    std::array::from_fn(|i| geom.sites[i] + geom.los.column(i) * rho[i])
}

/// Velocity at the middle observation from Lagrange coefficients:
/// solves p1 = f1 p2 + g1 v2 and p3 = f3 p2 + g3 v2.
fn middle_velocity(
    p1: &Vector3<f64>,
    p3: &Vector3<f64>,
    f1: f64,
    g1: f64,
    f3: f64,
    g3: f64,
) -> Option<Vector3<f64>> {
    let denom = f3 * g1 - f1 * g3;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((p1 * f3 - p3 * f1) / denom)
}

/// Worst angular deviation (radians) between the candidate orbit's predicted
/// lines of sight and the observed ones.
fn los_residual(obs: &[LosObservation; 3], state: &OrbitState, mu: f64) -> f64 {
    let mut worst = 0.0f64;
    for o in obs {
        let Ok(s) = propagate_kepler(state, o.epoch - state.epoch, mu) else {
            return f64::INFINITY;
        };
        let predicted = (s.position - o.site_eci).normalize();
        let cos = predicted.dot(&o.los).clamp(-1.0, 1.0);
        worst = worst.max(cos.acos());
    }
    worst
}

/// Classical Gauss angles-only orbit determination.
///
/// Returns the two-body state at the middle epoch. The physically valid
/// root of the range polynomial is chosen by proximity to a 1.5-Earth-radii
/// prior and validated by positive ranges, a bound orbit, and small
/// line-of-sight residuals.
pub fn gauss_iod(obs: &[LosObservation; 3], mu: f64) -> Result<OrbitState, IodError> {
    let geom = gauss_geometry(obs)?;
    let (tau1, tau3) = (geom.tau1, geom.tau3);
    let tau13 = tau3 - tau1;

    let a1 = tau3 / tau13;
    let a3 = -tau1 / tau13;
    let a1u = a1 * (tau13 * tau13 - tau3 * tau3) / 6.0;
    let a3u = a3 * (tau13 * tau13 - tau1 * tau1) / 6.0;

    let d1 = geom.m[(1, 0)] * a1 - geom.m[(1, 1)] + geom.m[(1, 2)] * a3;
    let d2 = geom.m[(1, 0)] * a1u + geom.m[(1, 2)] * a3u;
    let c_site = obs[1].los.dot(&obs[1].site_eci);
    let r2_site_sq = obs[1].site_eci.norm_squared();

    let a6 = -(d1 * d1 + 2.0 * c_site * d1 + r2_site_sq);
    let a3_coef = -2.0 * mu * d2 * (c_site + d1);
    let a0 = -(mu * mu * d2 * d2);

    let mut roots: Vec<f64> = positive_roots(a6, a3_coef, a0)
        .into_iter()
        .filter(|&r| r > EARTH_RADIUS_KM)
        .collect();
    if roots.is_empty() {
        return Err(IodError::NoValidRoot);
    }
    // Tie-break: prefer the root nearest 1.5 Earth radii.
    let prior = 1.5 * EARTH_RADIUS_KM;
    roots.sort_by(|a, b| {
        (a - prior)
            .abs()
            .partial_cmp(&(b - prior).abs())
            .unwrap()
    });

    let mut best_fallback: Option<(f64, OrbitState)> = None;
    for r2 in roots {
        let Some(candidate) = solve_for_root(&geom, obs, r2, a1, a3, a1u, a3u, mu) else {
            continue;
        };
        let residual = los_residual(obs, &candidate, mu);
        if residual < LOS_RESIDUAL_TOL_RAD {
            return Ok(candidate);
        }
        match &best_fallback {
            Some((best, _)) if *best <= residual => {}
            _ => best_fallback = Some((residual, candidate)),
        }
    }
    // No root met the residual gate; a finite-residual candidate is still
    // better than nothing for degraded-input callers.
    best_fallback
        .map(|(_, s)| s)
        .ok_or(IodError::NoValidRoot)
}

#[allow(clippy::too_many_arguments)]
fn solve_for_root(
    geom: &GaussGeometry,
    obs: &[LosObservation; 3],
    r2: f64,
    a1: f64,
    a3: f64,
    a1u: f64,
    a3u: f64,
    mu: f64,
) -> Option<OrbitState> {
    let (tau1, tau3) = (geom.tau1, geom.tau3);
    let u = mu / (r2 * r2 * r2);
    let c = Vector3::new(a1 + a1u * u, -1.0, a3 + a3u * u);
    let rho = ranges_for(geom, &c)?;
    if rho[1] < 1.0 || rho[0] < 0.0 || rho[2] < 0.0 {
        return None;
    }
    let p = positions_for(geom, &rho);

    // Series f and g to bootstrap the velocity.
    let u2 = mu / (p[1].norm().powi(3));
    let f1 = 1.0 - 0.5 * u2 * tau1 * tau1;
    let g1 = tau1 - u2 * tau1.powi(3) / 6.0;
    let f3 = 1.0 - 0.5 * u2 * tau3 * tau3;
    let g3 = tau3 - u2 * tau3.powi(3) / 6.0;
    let v2 = middle_velocity(&p[0], &p[2], f1, g1, f3, g3)?;

    let mut state = OrbitState::new(obs[1].epoch, p[1], v2);
    let mut rho2_prev = rho[1];

    // Refinement: replace series f/g with exact Lagrange coefficients.
    for _ in 0..REFINE_MAX_ITERS {
        let Ok((f1, g1, _, _)) = lagrange_coefficients(&state, tau1, mu) else {
            break;
        };
        let Ok((f3, g3, _, _)) = lagrange_coefficients(&state, tau3, mu) else {
            break;
        };
        let denom = f1 * g3 - f3 * g1;
        if denom.abs() < 1e-30 {
            break;
        }
        let c = Vector3::new(g3 / denom, -1.0, -g1 / denom);
        let Some(rho) = ranges_for(geom, &c) else {
            break;
        };
        if rho[1] < 1.0 {
            break;
        }
        let p = positions_for(geom, &rho);
        let Some(v2) = middle_velocity(&p[0], &p[2], f1, g1, f3, g3) else {
            break;
        };
        let next = OrbitState::new(obs[1].epoch, p[1], v2);
        if next.specific_energy(mu) < 0.0 {
            state = next;
        } else {
            break;
        }
        if (rho[1] - rho2_prev).abs() < REFINE_TOL_KM {
            break;
        }
        rho2_prev = rho[1];
    }

    if state.specific_energy(mu) >= 0.0 {
        return None;
    }
    Some(state)
}

/// Pick the three images feeding a Gauss triple: the earliest, the one
/// nearest the middle epoch, and the latest.
fn gauss_image_triple(images: &[StreakImage]) -> [&StreakImage; 3] {
    let mut sorted: Vec<&StreakImage> = images.iter().collect();
    sorted.sort_by(|a, b| a.window.start.partial_cmp(&b.window.start).unwrap());
    let first = sorted[0];
    let last = sorted[sorted.len() - 1];
    let mid_epoch = 0.5 * (first.window.start + last.window.start);
    let middle = sorted[1..sorted.len() - 1]
        .iter()
        .min_by(|a, b| {
            (a.window.start - mid_epoch)
                .abs()
                .partial_cmp(&(b.window.start - mid_epoch).abs())
                .unwrap()
        })
        .copied()
        .expect("triple selection requires at least three images");
    [first, middle, last]
}

/// Line of sight through a crop-relative pixel at a given frame.
fn los_from_crop_pixel(
    image: &StreakImage,
    frame_index: usize,
    crop_pixel: Vector2<f64>,
) -> LosObservation {
    let frame = &image.frames[frame_index];
    let full_px = crop_pixel + image.origin_offset;
    LosObservation::new(frame.epoch, frame.observer_eci, pixel_to_los(&full_px, frame))
}

/// End-to-end initialization: backproject tagged crop corners to lines of
/// sight and run Gauss, then carry the state to `t_initial`.
///
/// With three or more images, each contributes the corner nearest its streak
/// start at its exposure start time. With a single image, three pixels are
/// used: the start corner at the start time, the image center at
/// mid-exposure, and the opposite corner at the end time.
pub fn corner_init(obs: &ObservationSet, mu: f64) -> Result<OrbitState, IodError> {
    let images = obs.images();
    let triple: [LosObservation; 3] = match images.len() {
        0 | 2 => {
            return Err(IodError::UnsupportedImageCount {
                count: images.len(),
            })
        }
        1 => {
            let img = &images[0];
            let corner = img.start_corner.ok_or(IodError::MissingCornerTag)?;
            let (w, h) = (img.pixels.width(), img.pixels.height());
            let n = img.frames.len() - 1;
            let center = Vector2::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
            [
                los_from_crop_pixel(img, 0, corner.pixel(w, h)),
                los_from_crop_pixel(img, n / 2, center),
                los_from_crop_pixel(img, n, corner.opposite().pixel(w, h)),
            ]
        }
        _ => {
            let picks = gauss_image_triple(images);
            let mut triple = Vec::with_capacity(3);
            for img in picks {
                let corner = img.start_corner.ok_or(IodError::MissingCornerTag)?;
                let (w, h) = (img.pixels.width(), img.pixels.height());
                triple.push(los_from_crop_pixel(img, 0, corner.pixel(w, h)));
            }
            [triple[0], triple[1], triple[2]]
        }
    };
    let state = gauss_iod(&triple, mu)?;
    Ok(propagate_kepler(&state, obs.t_initial() - state.epoch, mu)?)
}

/// Difficulty grades for the initialization experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitLevel {
    I,
    II,
    III,
    IV,
    V,
}

impl InitLevel {
    pub const ALL: [InitLevel; 5] = [
        InitLevel::I,
        InitLevel::II,
        InitLevel::III,
        InitLevel::IV,
        InitLevel::V,
    ];

    /// Pixel radius by which the true streak endpoints are displaced.
    /// Chosen to bracket the published per-level initial endpoint errors.
    pub fn perturbation_px(&self) -> f64 {
        match self {
            InitLevel::I => 0.0,
            InitLevel::II => 25.0,
            InitLevel::III => 55.0,
            InitLevel::IV => 120.0,
            InitLevel::V => 160.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            InitLevel::I => "I",
            InitLevel::II => "II",
            InitLevel::III => "III",
            InitLevel::IV => "IV",
            InitLevel::V => "V",
        }
    }
}

/// Level-graded degraded initialization: perturb the true streak start
/// endpoints by the level's pixel radius in uniform random directions,
/// backproject, solve Gauss, and carry the state to `t_initial`.
///
/// Gauss failures resample the directions a bounded number of times.
pub fn degraded_init<R: Rng + ?Sized>(
    truth: &OrbitState,
    obs: &ObservationSet,
    level: InitLevel,
    mu: f64,
    rng: &mut R,
) -> Result<OrbitState, IodError> {
    let images = obs.images();
    if images.len() < 3 {
        return Err(IodError::UnsupportedImageCount {
            count: images.len(),
        });
    }
    let picks = gauss_image_triple(images);
    let radius = level.perturbation_px();

    let mut last_err = IodError::NoValidRoot;
    for _ in 0..DEGRADED_INIT_RETRIES {
        let mut triple = Vec::with_capacity(3);
        for img in picks {
            let frame = &img.frames[0];
            let state = propagate_kepler(truth, frame.epoch - truth.epoch, mu)?;
            let true_px = match world_to_pixel(&state.position, frame) {
                Ok(u) => u,
                Err(_) => return Err(IodError::BehindCamera),
            };
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let perturbed = true_px + Vector2::new(angle.cos(), angle.sin()) * radius;
            triple.push(LosObservation::new(
                frame.epoch,
                frame.observer_eci,
                pixel_to_los(&perturbed, frame),
            ));
        }
        match gauss_iod(&[triple[0], triple[1], triple[2]], mu) {
            Ok(state) => match propagate_kepler(&state, obs.t_initial() - state.epoch, mu) {
                Ok(at_anchor) => return Ok(at_anchor),
                Err(e) => last_err = IodError::Orbit(e),
            },
            Err(e) => last_err = e,
        }
        // Level I has no randomness to resample.
        if radius == 0.0 {
            return Err(last_err);
        }
    }
    Err(IodError::RetriesExhausted {
        retries: DEGRADED_INIT_RETRIES,
    })
}
