//! Otsu thresholding over 1-D real samples.
//!
//! Samples are bucketed into a `bins`-bin histogram over `[min, max]`, sorted
//! within each bucket, and every gap between consecutive distinct values is
//! evaluated as a split. The search is therefore exhaustive over all
//! realizable partitions while costing `O(n + bins)` plus the small
//! within-bucket sorts.
//!
//! The returned threshold is the midpoint of the winning gap, so the lower
//! class is exactly `{x <= θ}` and the upper class `{x > θ}`; this is the
//! partition the strict `>` keep rule and the inclusive `<=` link rule see
//! downstream. Ties resolve to the smallest threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::MAX_DISTANCE;

pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_FLAT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("cannot threshold an empty sample set")]
    Empty,
    #[error("non-finite sample {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsuConfig {
    pub bins: usize,
    /// Sample ranges below this are reported as degenerate.
    pub flat_epsilon: f64,
}

impl Default for OtsuConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            flat_epsilon: DEFAULT_FLAT_EPSILON,
        }
    }
}

impl OtsuConfig {
    pub fn with_bins(bins: usize) -> Self {
        Self {
            bins,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub inter_class_variance: f64,
    pub degenerate: bool,
    pub bin_width: f64,
}

impl ThresholdReport {
    /// Report for a distribution with nothing to separate.
    fn flat(value: f64, mean: f64) -> Self {
        Self {
            threshold: value,
            omega1: 1.0,
            omega2: 0.0,
            mu1: mean,
            mu2: mean,
            inter_class_variance: 0.0,
            degenerate: true,
            bin_width: 0.0,
        }
    }

    /// Report used when there are no samples at all (e.g. a frame with no
    /// adjacent retained pairs).
    pub fn no_samples() -> Self {
        Self::flat(0.0, 0.0)
    }

    /// Threshold to compare distances against.
    ///
    /// A degenerate report maps to [`MAX_DISTANCE`]: with the strict keep rule
    /// `s > θ` nothing survives, with the inclusive link rule `d <= θ`
    /// everything links.
    pub fn effective_threshold(&self) -> f64 {
        if self.degenerate {
            f64::from(MAX_DISTANCE)
        } else {
            self.threshold
        }
    }
}

/// Otsu's threshold over `samples` using a `config.bins`-bin histogram.
///
/// Ties in inter-class variance resolve to the smallest threshold.
pub fn otsu_threshold<T>(
    samples: &[T],
    config: OtsuConfig,
) -> Result<ThresholdReport, ThresholdError>
where
    T: Copy + Into<f64>,
{
    if config.bins < 2 {
        return Err(ThresholdError::TooFewBins(config.bins));
    }
    if samples.is_empty() {
        return Err(ThresholdError::Empty);
    }
    let (mut lo, mut hi, mut total_sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for (index, &s) in samples.iter().enumerate() {
        let v: f64 = s.into();
        if !v.is_finite() {
            return Err(ThresholdError::NonFinite { index, value: v });
        }
        lo = lo.min(v);
        hi = hi.max(v);
        total_sum += v;
    }
    let n = samples.len() as f64;
    let range = hi - lo;
    if range < config.flat_epsilon {
        return Ok(ThresholdReport::flat(lo, total_sum / n));
    }

    let bins = config.bins;
    let width = range / bins as f64;
    let sorted = bucket_sort(samples, lo, width, bins);

    let mut best: Option<ThresholdReport> = None;
    let mut below_sum = 0.0f64;
    for i in 0..sorted.len() - 1 {
        below_sum += sorted[i];
        let (a, b) = (sorted[i], sorted[i + 1]);
        if a == b {
            continue;
        }
        let below = (i + 1) as f64;
        let omega1 = below / n;
        let omega2 = (n - below) / n;
        let mu1 = below_sum / below;
        let mu2 = (total_sum - below_sum) / (n - below);
        let variance = omega1 * omega2 * (mu1 - mu2) * (mu1 - mu2);
        if best.is_none_or(|r| variance > r.inter_class_variance) {
            best = Some(ThresholdReport {
                threshold: gap_midpoint(a, b),
                omega1,
                omega2,
                mu1,
                mu2,
                inter_class_variance: variance,
                degenerate: false,
                bin_width: width,
            });
        }
    }
    Ok(best.expect("non-flat samples have at least one gap"))
}

/// A value `m` with `a <= m < b`, as close to the middle as rounding allows.
pub fn gap_midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Ascending copy of `samples` via right-closed histogram buckets: bucket 0
/// holds `x <= lo + w`, bucket `j` holds `lo + j*w < x <= lo + (j+1)*w`.
fn bucket_sort<T: Copy + Into<f64>>(samples: &[T], lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let bucket = |v: f64| -> usize {
        let mut j = (((v - lo) / width).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
        // Settle against the computed edges so membership is monotone in v.
        while j > 0 && v <= lo + j as f64 * width {
            j -= 1;
        }
        while j + 1 < bins && v > lo + (j + 1) as f64 * width {
            j += 1;
        }
        j
    };
    let mut starts = vec![0usize; bins + 1];
    let keys: Vec<(usize, f64)> = samples
        .iter()
        .map(|&s| {
            let v: f64 = s.into();
            let j = bucket(v);
            starts[j + 1] += 1;
            (j, v)
        })
        .collect();
    for j in 0..bins {
        starts[j + 1] += starts[j];
    }
    let mut next = starts.clone();
    let mut sorted = vec![0.0f64; samples.len()];
    for (j, v) in keys {
        sorted[next[j]] = v;
        next[j] += 1;
    }
    for j in 0..bins {
        let bucket = &mut sorted[starts[j]..starts[j + 1]];
        if bucket.len() > 1 {
            bucket.sort_unstable_by(f64::total_cmp);
        }
    }
    sorted
}
