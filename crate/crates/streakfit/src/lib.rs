//! Synthesis and direct fitting of long-exposure satellite streak images.
//!
//! The crate models the full chain from a six-parameter orbit state vector to
//! the intensity image its streak leaves on a ground camera, and inverts that
//! chain: given one or more observed streak images it fits the state vector
//! directly to the pixel intensities with a coarse-to-fine gradient descent.
//!
//! Module map:
//! - [`orbit`] — two-body state vectors, Keplerian elements, propagation
//! - [`observer`] — ground sites, Earth rotation, exposure timestamp grids
//! - [`camera`] — gnomonic world/pixel projection with per-timestamp extrinsics
//! - [`grid`] — dense intensity grids shared by synthesis and fitting
//! - [`synth`] — the forward model: PSF accumulation, holes, noise
//! - [`preprocess`] — box blur, background subtraction, scale/SIR/weights, masks
//! - [`fitting`] — the direct fit: loss, finite-difference gradient, ADAM,
//!   kernel schedule and convergence detection
//! - [`iod`] — Gauss angles-only initialization and degraded inits
//! - [`sim`] — scenario generation, metrics, experiment sweeps
//! - [`files`] — observation file format (binary grid + JSON sidecar)
//! - [`plot`] — minimal raster plotter for overlays and quartile charts

pub mod camera;
pub mod files;
pub mod fitting;
pub mod grid;
pub mod iod;
pub mod observer;
pub mod orbit;
pub mod plot;
pub mod preprocess;
pub mod sim;
pub mod synth;

pub use camera::{CameraFrame, CameraIntrinsics};
pub use grid::Grid;
pub use orbit::{KeplerianElements, OrbitState, MU_EARTH};
pub use synth::StreakImage;
