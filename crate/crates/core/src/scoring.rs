//! Cosine distance and 3x3-neighborhood temporal novelty scores.
//!
//! A token's score against an adjacent frame is its minimum cosine distance
//! to that frame's tokens in the 3x3 window centered on the same position.
//! The window is clipped at grid borders: 4 candidates at corners, 6 along
//! edges, 9 in the interior.

use std::cell::Cell;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token::{GridShape, TokenGrid};

/// Largest possible cosine distance.
pub const MAX_DISTANCE: f32 = 2.0;

/// Vectors with a norm below this are treated as directionless.
pub const ZERO_NORM: f64 = 1e-12;

/// Distances this close to zero are reported as exactly zero, so that
/// positively scaled copies of a vector compare as identical.
const SNAP_TO_ZERO: f64 = 1e-12;

thread_local! {
    static DISTANCE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`cosine_distance`] evaluations performed on this thread.
///
/// Scoring is single-threaded, so differences of this counter around a call
/// measure exactly the distance work that call did.
pub fn distance_calls() -> u64 {
    DISTANCE_CALLS.with(Cell::get)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot score {current} against {other}")]
pub struct ShapeMismatch {
    pub current: GridShape,
    pub other: GridShape,
}

/// `1 - cos(x, y)`, clamped to `[0, 2]`.
///
/// Reductions run in f64. If either norm is below [`ZERO_NORM`] the distance
/// is defined as 1.0.
#[inline]
pub fn cosine_distance(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    distance_from_parts(dot(x, y), dot(x, x), dot(y, y))
}

#[inline]
fn distance_from_parts(dot: f64, nx: f64, ny: f64) -> f32 {
    DISTANCE_CALLS.with(|c| c.set(c.get() + 1));
    if nx.sqrt() < ZERO_NORM || ny.sqrt() < ZERO_NORM {
        return 1.0;
    }
    let d = 1.0 - dot / (nx * ny).sqrt();
    if d < SNAP_TO_ZERO {
        0.0
    } else {
        d.min(f64::from(MAX_DISTANCE)) as f32
    }
}

const LANES: usize = 8;

/// f64 dot product with a fixed lane-wise summation order, so the compiler
/// can vectorize it and every caller gets bit-identical sums.
#[inline]
fn dot(x: &[f32], y: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (xc, yc) = (x.chunks_exact(LANES), y.chunks_exact(LANES));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..LANES {
            acc[k] += f64::from(a[k]) * f64::from(b[k]);
        }
    }
    for (k, (&a, &b)) in xr.iter().zip(yr).enumerate() {
        acc[k] += f64::from(a) * f64::from(b);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

fn squared_norms(grid: &TokenGrid) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let t = grid.token_at(i);
            dot(t, t)
        })
        .collect()
}

/// An `height x width` grid of scores in `[0, 2]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ScoreGrid {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Backward (`s⁻`, against frame t-1) and forward (`s⁺`, against t+1) scores
/// for one frame. Either side may be unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreField {
    pub frame_index: u64,
    pub backward: Option<ScoreGrid>,
    pub forward: Option<ScoreGrid>,
}

impl ScoreField {
    pub fn new(frame_index: u64) -> Self {
        Self {
            frame_index,
            backward: None,
            forward: None,
        }
    }
}

/// Rows (or columns) covered by the clipped 3x3 window around `center`.
#[inline]
pub fn window(center: usize, extent: usize) -> std::ops::Range<usize> {
    center.saturating_sub(1)..(center + 2).min(extent)
}

/// Minimum 3x3-window distance from each token of `current` into `other`.
pub fn neighborhood_scores(
    current: &TokenGrid,
    other: &TokenGrid,
) -> Result<ScoreGrid, ShapeMismatch> {
    if current.shape() != other.shape() {
        return Err(ShapeMismatch {
            current: current.shape(),
            other: other.shape(),
        });
    }
    let (height, width) = (current.height(), current.width());
    let (own, theirs) = (squared_norms(current), squared_norms(other));
    let mut values = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let token = current.token(row, col);
            let nx = own[row * width + col];
            let mut best = f32::INFINITY;
            for i in window(row, height) {
                for j in window(col, width) {
                    let d = distance_from_parts(
                        dot(token, other.token(i, j)),
                        nx,
                        theirs[i * width + j],
                    );
                    best = best.min(d);
                }
            }
            values.push(best);
        }
    }
    Ok(ScoreGrid {
        height,
        width,
        values,
    })
}

/// Backward scores `s⁻` of `current` against its predecessor.
pub fn backward_scores(
    current: &TokenGrid,
    previous: &TokenGrid,
) -> Result<ScoreGrid, ShapeMismatch> {
    neighborhood_scores(current, previous)
}

/// Forward scores `s⁺` of `current` against its successor.
pub fn forward_scores(current: &TokenGrid, next: &TokenGrid) -> Result<ScoreGrid, ShapeMismatch> {
    neighborhood_scores(current, next)
}

/// Number of distance evaluations one scoring pass over an `height x width`
/// grid performs.
pub fn evaluations_per_pass(height: usize, width: usize) -> u64 {
    let axis = |n: usize| -> u64 { (0..n).map(|c| window(c, n).len() as u64).sum() };
    axis(height) * axis(width)
}
