//! Per-image conditioning applied identically to observed and generated
//! streak images: box blurring, median background subtraction, unity
//! rescaling, streak-scale estimation, streak-to-image ratios and loss
//! weights, and the zero mask that excludes star-removal holes from the
//! loss.

use thiserror::Error;

use crate::grid::{Grid, Mask};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("box blur kernel must be odd and >= 1 (got {k})")]
    EvenKernel { k: usize },
    #[error("image has no signal after background subtraction")]
    NoSignal,
    #[error("no pixels at or above the streak scale")]
    NoStreakPixels,
    #[error("streak-to-image ratio requires a positive scale (got {alpha})")]
    NonPositiveScale { alpha: f64 },
}

/// Mean filter over a k×k window with zero padding outside the image.
///
/// Separable two-pass implementation with running sums; the division by k²
/// happens once at the end so constant regions stay exact. `k = 1` is the
/// identity.
pub fn box_blur(img: &Grid, k: usize) -> Result<Grid, PreprocessError> {
    if k % 2 == 0 || k == 0 {
        return Err(PreprocessError::EvenKernel { k });
    }
    if k == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let r = (k / 2) as i64;

    // Horizontal pass: raw window sums.
    let mut horiz = Grid::zeros(w, h);
    for y in 0..h {
        let row = img.row(y);
        let mut sum = 0.0;
        for x in 0..=(r as usize).min(w - 1) {
            sum += row[x];
        }
        for x in 0..w {
            horiz.set(x, y, sum);
            let leaving = x as i64 - r;
            let entering = x as i64 + r + 1;
            if leaving >= 0 {
                sum -= row[leaving as usize];
            }
            if entering < w as i64 {
                sum += row[entering as usize];
            }
        }
    }

    // Vertical pass over the horizontal sums, then normalize by k².
    let mut out = Grid::zeros(w, h);
    let norm = 1.0 / ((k * k) as f64);
    let mut col_sums = vec![0.0f64; w];
    for y in 0..=(r as usize).min(h - 1) {
        for x in 0..w {
            col_sums[x] += horiz.get(x, y);
        }
    }
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, col_sums[x] * norm);
        }
        let leaving = y as i64 - r;
        let entering = y as i64 + r + 1;
        if leaving >= 0 {
            for x in 0..w {
                col_sums[x] -= horiz.get(x, leaving as usize);
            }
        }
        if entering < h as i64 {
            for x in 0..w {
                col_sums[x] += horiz.get(x, entering as usize);
            }
        }
    }
    Ok(out)
}

/// Median of a slice; the mean of the two middle values for even lengths.
fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0, "median of empty slice");
    let mid = n / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Background level: the exact median of all pixels of the blurred image.
pub fn estimate_background(blurred: &Grid) -> f64 {
    let mut values = blurred.data().to_vec();
    median_of(&mut values)
}

/// Noise suppression: per-pixel `max(v - background, 0)`, then rescale so
/// the brightest pixel is exactly 1.
///
/// Errors when nothing survives the subtraction, which means the image had
/// no signal above the background.
pub fn subtract_background(blurred: &Grid, background: f64) -> Result<Grid, PreprocessError> {
    let mut out = blurred.clone();
    for v in out.data_mut() {
        *v = (*v - background).max(0.0);
    }
    let max = out.max_value();
    if max <= 0.0 {
        return Err(PreprocessError::NoSignal);
    }
    out.scale_in_place(1.0 / max);
    Ok(out)
}

/// Median of the brightest ceil(eta * pixel_count) pixels.
///
/// `eta` is a fraction: the survey default "top 0.1%" is 0.001.
pub fn streak_scale(img: &Grid, eta: f64) -> f64 {
    assert!(eta > 0.0 && eta < 1.0, "eta must lie in (0, 1)");
    let n = img.len();
    let m = ((eta * n as f64).ceil() as usize).clamp(1, n);
    let mut top = top_k(img.data(), m);
    median_of(&mut top)
}

/// The m largest values of a slice, unordered. Bounded min-heap scan so a
/// full sort of the image is never needed.
fn top_k(values: &[f64], m: usize) -> Vec<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Ord64(f64);
    impl Eq for Ord64 {}
    impl PartialOrd for Ord64 {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Ord64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }

    let mut heap: BinaryHeap<Reverse<Ord64>> = BinaryHeap::with_capacity(m + 1);
    for &v in values {
        if heap.len() < m {
            heap.push(Reverse(Ord64(v)));
        } else if v > heap.peek().unwrap().0 .0 {
            heap.pop();
            heap.push(Reverse(Ord64(v)));
        }
    }
    heap.into_iter().map(|Reverse(Ord64(v))| v).collect()
}

/// Streak-to-image ratio: the fraction of pixels at or above the streak
/// scale.
pub fn compute_sir(img: &Grid, alpha: f64) -> Result<f64, PreprocessError> {
    if alpha <= 0.0 {
        return Err(PreprocessError::NonPositiveScale { alpha });
    }
    let count = img.data().iter().filter(|&&v| v >= alpha).count();
    if count == 0 {
        return Err(PreprocessError::NoStreakPixels);
    }
    Ok(count as f64 / img.len() as f64)
}

/// Loss-balancing weights: lambda_m = max(SIR) / SIR_m, so the smallest
/// weight is always 1.
pub fn compute_weights(sirs: &[f64]) -> Vec<f64> {
    let max = sirs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sirs.iter().map(|s| max / s).collect()
}

/// Mask marking pixels of the raw observed image that are exactly zero
/// (star-removal holes and empty background).
pub fn zero_mask(observed: &Grid) -> Mask {
    Mask::from_data(
        observed.width(),
        observed.height(),
        observed.data().iter().map(|&v| v != 0.0).collect(),
    )
}

/// All per-kernel-stage artifacts of one observed image.
#[derive(Debug, Clone)]
pub struct PreprocessedImage {
    /// Blurred, background-subtracted, unity-rescaled pixels D'_k.
    pub pixels: Grid,
    /// Median background of the blurred image.
    pub background: f64,
    /// Streak scale alpha (median of the top-eta pixels of D'_k).
    pub streak_scale: f64,
    /// Streak-to-image ratio of D'_k.
    pub sir: f64,
    /// Zero mask from the raw observed image.
    pub zero_mask: Mask,
    /// Blur kernel size this stage was built for.
    pub kernel: usize,
}

/// Run the full observed-image pipeline for one kernel stage:
/// mask from the raw image, blur, background subtract + rescale, then
/// streak scale and SIR.
pub fn preprocess_observed(
    observed: &Grid,
    kernel: usize,
    eta: f64,
) -> Result<PreprocessedImage, PreprocessError> {
    let mask = zero_mask(observed);
    let blurred = box_blur(observed, kernel)?;
    let background = estimate_background(&blurred);
    let pixels = subtract_background(&blurred, background)?;
    let alpha = streak_scale(&pixels, eta);
    let sir = compute_sir(&pixels, alpha)?;
    Ok(PreprocessedImage {
        pixels,
        background,
        streak_scale: alpha,
        sir,
        zero_mask: mask,
        kernel,
    })
}
