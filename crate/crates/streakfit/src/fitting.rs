//! The direct orbit fit: weighted multi-image pixel loss, central-difference
//! gradients, ADAM updates, a coarse-to-fine blur-kernel schedule with
//! step-size cooldown, and moving-average convergence detection.
//!
//! The optimizer never sees kilometers: the six state components are scaled
//! by the characteristic position and velocity magnitudes of the initial
//! estimate, so one dimensionless finite-difference step `h` perturbs
//! position and velocity proportionately.
//!
//! A poor fit is not an error. Propagation failures during line search are
//! swallowed into a large finite sentinel loss and the loop keeps running;
//! a high final loss is the caller's signal that the inputs violate the
//! model assumptions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::orbit::{OrbitState, MU_EARTH};
use crate::preprocess::{
    box_blur, compute_weights, preprocess_observed, streak_scale, PreprocessError,
    PreprocessedImage,
};
use crate::synth::{render_grid, StreakImage};

/// Finite loss returned when a candidate state cannot be propagated or
/// rendered; large enough to dominate any real pixel loss.
pub const SENTINEL_LOSS: f64 = 1e3;

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("observation set must contain at least one image")]
    EmptyObservationSet,
    #[error("initial state epoch {init} does not match t_initial {t_initial}")]
    EpochMismatch { init: f64, t_initial: f64 },
    #[error("kernel sizes must be odd with k_max >= k_min >= 3 (got {k_max}, {k_min})")]
    BadKernelRange { k_max: usize, k_min: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// The observed images being fitted plus the anchor epoch of the state
/// vector: the midpoint of the furthest pair of exposure start times.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    images: Vec<StreakImage>,
    t_initial: f64,
}

impl ObservationSet {
    pub fn new(images: Vec<StreakImage>) -> Result<Self, FitError> {
        if images.is_empty() {
            return Err(FitError::EmptyObservationSet);
        }
        let min = images
            .iter()
            .map(|i| i.window.start)
            .fold(f64::INFINITY, f64::min);
        let max = images
            .iter()
            .map(|i| i.window.start)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            images,
            t_initial: 0.5 * (min + max),
        })
    }

    pub fn images(&self) -> &[StreakImage] {
        &self.images
    }

    pub fn t_initial(&self) -> f64 {
        self.t_initial
    }

    /// Largest interval between the anchor epoch and any exposure timestamp;
    /// this drives the step-size hyperparameters.
    pub fn dt_max(&self) -> f64 {
        self.images
            .iter()
            .flat_map(|i| [i.window.start, i.window.end()])
            .map(|t| (t - self.t_initial).abs())
            .fold(0.0, f64::max)
    }
}

/// All hyperparameters of one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Dimensionless central-difference perturbation (the paper's h).
    pub fd_step: f64,
    /// Initial ADAM step size (the paper's alpha).
    pub step_size: f64,
    /// Step-size cooldown factor applied after each kernel stage.
    pub cooldown: f64,
    /// Largest blur kernel (odd pixels).
    pub k_max: usize,
    /// Smallest blur kernel (odd pixels, >= 3 to keep noise suppression).
    pub k_min: usize,
    /// Fraction of brightest pixels defining the streak scale (0.001 = top
    /// 0.1%).
    pub eta: f64,
    /// Convergence ratio: converged once the loss-difference moving average
    /// falls to this fraction of its running maximum.
    pub gamma: f64,
    /// Moving-average window length.
    pub ma_window: usize,
    /// ADAM first-moment decay.
    pub beta1: f64,
    /// ADAM second-moment decay.
    pub beta2: f64,
    /// Safety cap on iterations within one kernel stage.
    pub max_iters_per_stage: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            fd_step: 4e-4,
            step_size: 0.02,
            cooldown: 0.5,
            k_max: 101,
            k_min: 3,
            eta: 0.001,
            gamma: 0.3,
            ma_window: 10,
            beta1: 0.9,
            beta2: 0.999,
            max_iters_per_stage: 500,
        }
    }
}

impl FitConfig {
    /// Hyperparameters for a given maximum anchor-to-timestamp interval.
    ///
    /// The anchor values are the published table: (h, alpha) =
    /// (2e-3, 0.1) at 30 s, (4e-4, 0.02) at 60 s, (2e-4, 0.01) at 120 s,
    /// log-log interpolated between anchors and clamped outside them.
    pub fn for_dt_max(dt_max: f64) -> Self {
        let anchors = [(30.0, 2e-3, 0.1), (60.0, 4e-4, 0.02), (120.0, 2e-4, 0.01)];
        let (h, alpha) = if dt_max <= anchors[0].0 {
            (anchors[0].1, anchors[0].2)
        } else if dt_max >= anchors[2].0 {
            (anchors[2].1, anchors[2].2)
        } else {
            let (lo, hi) = if dt_max <= anchors[1].0 {
                (anchors[0], anchors[1])
            } else {
                (anchors[1], anchors[2])
            };
            let t = (dt_max.ln() - lo.0.ln()) / (hi.0.ln() - lo.0.ln());
            (
                (lo.1.ln() + t * (hi.1.ln() - lo.1.ln())).exp(),
                (lo.2.ln() + t * (hi.2.ln() - lo.2.ln())).exp(),
            )
        };
        Self {
            fd_step: h,
            step_size: alpha,
            ..Self::default()
        }
    }
}

/// One loss evaluation in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub kernel: usize,
    pub iteration: usize,
    pub per_image: Vec<f64>,
    pub total: f64,
}

/// Everything a fit produced: the converged state, the full loss trace, and
/// iteration/runtime accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub final_state: OrbitState,
    pub loss_trace: Vec<TraceRow>,
    /// Number of ADAM updates applied.
    pub iterations: usize,
    /// Trace indices at which each kernel stage ended.
    pub stage_boundaries: Vec<usize>,
    /// Finite-difference components zeroed because a perturbed loss was
    /// non-finite.
    pub gradient_warnings: usize,
    pub runtime_s: f64,
}

impl FitResult {
    pub fn final_total_loss(&self) -> f64 {
        self.loss_trace.last().map(|r| r.total).unwrap_or(f64::NAN)
    }

    pub fn final_per_image_losses(&self) -> Vec<f64> {
        self.loss_trace
            .last()
            .map(|r| r.per_image.clone())
            .unwrap_or_default()
    }
}

/// Mean Frobenius-norm loss between a generated and an observed grid:
/// ||S − D||_F divided by the pixel count.
pub fn image_loss(generated: &Grid, observed: &Grid) -> f64 {
    assert!(
        generated.same_shape(observed),
        "loss requires equal image shapes"
    );
    let ss: f64 = generated
        .data()
        .iter()
        .zip(observed.data())
        .map(|(s, d)| (s - d) * (s - d))
        .sum();
    ss.sqrt() / observed.len() as f64
}

/// The coarse-to-fine kernel schedule: start at `k_max`, halve (rounded down
/// to odd) until `k_min`.
pub fn kernel_schedule(k_max: usize, k_min: usize) -> Vec<usize> {
    let odd_floor = |x: usize| if x % 2 == 0 { x - 1 } else { x };
    let mut ks = Vec::new();
    let mut k = k_max;
    loop {
        ks.push(k);
        if k <= k_min {
            break;
        }
        let next = odd_floor(k.div_ceil(2));
        k = next.max(k_min);
    }
    ks
}

/// Per-kernel-stage preprocessing artifacts for the whole observation set.
#[derive(Debug, Clone)]
pub struct StageData {
    pub kernel: usize,
    pub images: Vec<PreprocessedImage>,
    pub weights: Vec<f64>,
    pub eta: f64,
}

/// Build the stage artifacts: preprocess every observed image at kernel `k`
/// and derive the SIR weights.
pub fn prepare_stage(obs: &ObservationSet, k: usize, eta: f64) -> Result<StageData, FitError> {
    let images: Vec<PreprocessedImage> = obs
        .images
        .iter()
        .map(|img| preprocess_observed(&img.pixels, k, eta))
        .collect::<Result<_, _>>()?;
    let sirs: Vec<f64> = images.iter().map(|p| p.sir).collect();
    Ok(StageData {
        kernel: k,
        images,
        weights: compute_weights(&sirs),
        eta,
    })
}

/// Loss of one candidate state against one preprocessed observation.
///
/// The generated image follows the same conditioning as the observed one:
/// render, zero-mask, blur, then amplitude-match so the generated streak
/// scale equals the observed streak scale.
fn generated_image_loss(
    state: &OrbitState,
    observation: &StreakImage,
    prep: &PreprocessedImage,
    eta: f64,
) -> f64 {
    let crop = observation.crop_bounds();
    let mut rendered = match render_grid(
        state,
        &observation.frames,
        observation.psf_sigma,
        &crop,
    ) {
        Ok(g) => g,
        Err(_) => return SENTINEL_LOSS,
    };
    prep.zero_mask.apply(&mut rendered);
    let mut blurred = match box_blur(&rendered, prep.kernel) {
        Ok(g) => g,
        Err(_) => return SENTINEL_LOSS,
    };
    if blurred.max_value() > 0.0 {
        let own_scale = streak_scale(&blurred, eta);
        if own_scale > 0.0 {
            blurred.scale_in_place(prep.streak_scale / own_scale);
        }
    }
    image_loss(&blurred, &prep.pixels)
}

/// Weighted total loss of a candidate state across all images of a stage.
///
/// Returns the weighted total and the unweighted per-image losses. A state
/// that cannot be propagated yields the sentinel loss instead of an error.
pub fn total_loss(
    state: &OrbitState,
    obs: &ObservationSet,
    stage: &StageData,
) -> (f64, Vec<f64>) {
    let per_image: Vec<f64> = obs
        .images
        .iter()
        .zip(&stage.images)
        .map(|(img, prep)| generated_image_loss(state, img, prep, stage.eta))
        .collect();
    let total = per_image
        .iter()
        .zip(&stage.weights)
        .map(|(l, w)| l * w)
        .sum();
    (total, per_image)
}

/// Central-difference gradient with per-component scales:
/// dL/do_q = (L(o + h·scale_q·e_q) − L(o − h·scale_q·e_q)) / (2·h·scale_q).
///
/// Components whose perturbed losses are non-finite are zeroed; the second
/// return value counts them.
pub fn gradient_scaled<F>(loss_fn: F, o: &[f64; 6], h: f64, scales: &[f64; 6]) -> ([f64; 6], usize)
where
    F: Fn(&[f64; 6]) -> f64 + Sync,
{
    let evals: Vec<f64> = (0..12usize)
        .into_par_iter()
        .map(|i| {
            let q = i / 2;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut x = *o;
            x[q] += sign * h * scales[q];
            loss_fn(&x)
        })
        .collect();
    let mut grad = [0.0; 6];
    let mut warnings = 0;
    for q in 0..6 {
        let plus = evals[2 * q];
        let minus = evals[2 * q + 1];
        if plus.is_finite() && minus.is_finite() {
            grad[q] = (plus - minus) / (2.0 * h * scales[q]);
        } else {
            warnings += 1;
        }
    }
    (grad, warnings)
}

/// Plain central-difference gradient (unit scales).
pub fn gradient<F>(loss_fn: F, o: &[f64; 6], h: f64) -> ([f64; 6], usize)
where
    F: Fn(&[f64; 6]) -> f64 + Sync,
{
    gradient_scaled(loss_fn, o, h, &[1.0; 6])
}

/// ADAM moment accumulators.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m1: [f64; 6],
    m2: [f64; 6],
    iter: u32,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn iterations(&self) -> u32 {
        self.iter
    }
}

/// One bias-corrected ADAM update; returns the additive step.
pub fn adam_step(
    grad: &[f64; 6],
    state: &mut AdamState,
    step_size: f64,
    beta1: f64,
    beta2: f64,
) -> [f64; 6] {
    state.iter += 1;
    let t = state.iter as i32;
    let mut update = [0.0; 6];
    for q in 0..6 {
        state.m1[q] = beta1 * state.m1[q] + (1.0 - beta1) * grad[q];
        state.m2[q] = beta2 * state.m2[q] + (1.0 - beta2) * grad[q] * grad[q];
        let m_hat = state.m1[q] / (1.0 - beta1.powi(t));
        let v_hat = state.m2[q] / (1.0 - beta2.powi(t));
        update[q] = -step_size * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    update
}

/// Moving-average convergence state for one kernel stage.
#[derive(Debug, Clone)]
pub struct ConvergenceTracker {
    gamma: f64,
    window: usize,
    prev: Vec<f64>,
    diffs: Vec<Vec<f64>>,
    max_ma: Vec<f64>,
}

impl ConvergenceTracker {
    pub fn new(image_count: usize, gamma: f64, window: usize) -> Self {
        Self {
            gamma,
            window,
            prev: vec![0.0; image_count],
            diffs: vec![Vec::new(); image_count],
            max_ma: vec![0.0; image_count],
        }
    }

    /// Record this iteration's per-image losses.
    pub fn push(&mut self, per_image: &[f64]) {
        for (m, &loss) in per_image.iter().enumerate() {
            let diff = loss - self.prev[m];
            self.prev[m] = loss;
            self.diffs[m].push(diff.abs());
            if self.diffs[m].len() >= self.window {
                let ma = moving_average_tail(&self.diffs[m], self.window);
                if ma > self.max_ma[m] {
                    self.max_ma[m] = ma;
                }
            }
        }
    }

    /// True once every image's moving average has dropped to gamma times
    /// its running maximum.
    pub fn is_converged(&self) -> bool {
        self.diffs.iter().zip(&self.max_ma).all(|(d, &max_ma)| {
            d.len() >= self.window
                && moving_average_tail(d, self.window) <= self.gamma * max_ma
        })
    }
}

fn moving_average_tail(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len() - window..];
    tail.iter().sum::<f64>() / window as f64
}

/// Stand-alone convergence decision from complete per-image loss-difference
/// histories (absolute values are taken internally).
pub fn converged(loss_diff_histories: &[Vec<f64>], gamma: f64, window: usize) -> bool {
    loss_diff_histories.iter().all(|history| {
        if history.len() < window {
            return false;
        }
        let abs: Vec<f64> = history.iter().map(|d| d.abs()).collect();
        let current = moving_average_tail(&abs, window);
        let max_ma = (window..=abs.len())
            .map(|end| abs[end - window..end].iter().sum::<f64>() / window as f64)
            .fold(0.0, f64::max);
        current <= gamma * max_ma
    })
}

/// Scaled parameter-space mapping for one fit.
#[derive(Debug, Clone, Copy)]
struct ParamScale {
    a_char: f64,
    v_char: f64,
    epoch: f64,
}

impl ParamScale {
    fn from_init(init: &OrbitState) -> Self {
        Self {
            a_char: init.position.norm(),
            v_char: init.velocity.norm(),
            epoch: init.epoch,
        }
    }

    fn encode(&self, s: &OrbitState) -> [f64; 6] {
        [
            s.position.x / self.a_char,
            s.position.y / self.a_char,
            s.position.z / self.a_char,
            s.velocity.x / self.v_char,
            s.velocity.y / self.v_char,
            s.velocity.z / self.v_char,
        ]
    }

    fn decode(&self, x: &[f64; 6]) -> OrbitState {
        OrbitState::new(
            self.epoch,
            nalgebra::Vector3::new(x[0], x[1], x[2]) * self.a_char,
            nalgebra::Vector3::new(x[3], x[4], x[5]) * self.v_char,
        )
    }
}

/// Grow the starting kernel for oversized images: k_max must span at least
/// 20% of the largest image diagonal, rounded up to odd.
pub fn effective_k_max(k_max: usize, obs: &ObservationSet) -> usize {
    let max_diag = obs
        .images
        .iter()
        .map(|i| i.crop_bounds().diagonal_px())
        .fold(0.0, f64::max);
    let needed = (0.2 * max_diag).ceil() as usize;
    let needed_odd = if needed % 2 == 0 { needed + 1 } else { needed };
    k_max.max(needed_odd)
}

/// Run the full direct fit.
///
/// Walks the kernel schedule from coarse to fine; each stage preprocesses
/// the observations for its kernel, restarts the optimizer state, and
/// iterates loss → gradient → ADAM until the moving-average criterion fires
/// or the per-stage cap is reached. The step size cools down by the
/// configured factor between stages.
pub fn fit(
    obs: &ObservationSet,
    o_init: &OrbitState,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    if (o_init.epoch - obs.t_initial).abs() > 1e-9 {
        return Err(FitError::EpochMismatch {
            init: o_init.epoch,
            t_initial: obs.t_initial,
        });
    }
    if cfg.k_max < cfg.k_min || cfg.k_min < 3 || cfg.k_max % 2 == 0 || cfg.k_min % 2 == 0 {
        return Err(FitError::BadKernelRange {
            k_max: cfg.k_max,
            k_min: cfg.k_min,
        });
    }
    let start = std::time::Instant::now();
    let scale = ParamScale::from_init(o_init);
    let mut x = scale.encode(o_init);
    let mut step_size = cfg.step_size;
    let fd_scales = [1.0; 6]; // x is already dimensionless

    let mut trace: Vec<TraceRow> = Vec::new();
    let mut stage_boundaries = Vec::new();
    let mut updates = 0usize;
    let mut warnings = 0usize;

    let k_start = effective_k_max(cfg.k_max, obs);
    for k in kernel_schedule(k_start, cfg.k_min) {
        let stage = prepare_stage(obs, k, cfg.eta)?;
        let mut tracker = ConvergenceTracker::new(obs.images.len(), cfg.gamma, cfg.ma_window);
        let mut adam = AdamState::new();

        for _ in 0..cfg.max_iters_per_stage {
            let (total, per_image) = total_loss(&scale.decode(&x), obs, &stage);
            trace.push(TraceRow {
                kernel: k,
                iteration: trace.len(),
                per_image: per_image.clone(),
                total,
            });
            tracker.push(&per_image);
            if tracker.is_converged() {
                break;
            }

            let loss_fn = |p: &[f64; 6]| total_loss(&scale.decode(p), obs, &stage).0;
            let (grad, w) = gradient_scaled(loss_fn, &x, cfg.fd_step, &fd_scales);
            warnings += w;
            let update = adam_step(&grad, &mut adam, step_size, cfg.beta1, cfg.beta2);
            for q in 0..6 {
                x[q] += update[q];
            }
            updates += 1;
        }
        stage_boundaries.push(trace.len() - 1);
        step_size *= cfg.cooldown;
    }

    Ok(FitResult {
        final_state: scale.decode(&x),
        loss_trace: trace,
        iterations: updates,
        stage_boundaries,
        gradient_warnings: warnings,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
