//! Temporal adjacency selection: which tokens of an evicted frame move on
//! to mid-term memory.
//!
//! A token survives if its backward score exceeds the backward threshold or
//! its forward score exceeds the forward threshold. Both thresholds come from
//! Otsu over the respective score distribution of that frame alone.

use thiserror::Error;

use crate::scoring::{ScoreField, ScoreGrid};
use crate::threshold::{otsu_threshold, OtsuConfig, ThresholdError, ThresholdReport};
use crate::token::{FrameEntry, TokenGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TasError {
    #[error("scores belong to frame {scores}, grid is frame {frame}")]
    FrameMismatch { frame: u64, scores: u64 },
    #[error("frame {0} has neither backward nor forward scores")]
    NoScores(u64),
    #[error("score grid is {found}, frame has {expected} tokens")]
    ScoreLength { expected: usize, found: usize },
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TasOutput {
    pub entry: FrameEntry,
    pub backward: Option<ThresholdReport>,
    pub forward: Option<ThresholdReport>,
}

/// Keep mask under explicit thresholds.
///
/// A missing backward side means the frame has no past and every token is
/// kept. Otherwise each present side votes with `score > threshold`.
pub fn keep_mask(
    backward: Option<(&ScoreGrid, f64)>,
    forward: Option<(&ScoreGrid, f64)>,
    len: usize,
) -> Vec<bool> {
    let Some((back, back_cut)) = backward else {
        return vec![true; len];
    };
    let mut mask: Vec<bool> = back
        .values
        .iter()
        .map(|&s| f64::from(s) > back_cut)
        .collect();
    if let Some((fwd, fwd_cut)) = forward {
        for (keep, &s) in mask.iter_mut().zip(&fwd.values) {
            *keep |= f64::from(s) > fwd_cut;
        }
    }
    mask
}

fn check_scores(frame: &TokenGrid, scores: &ScoreField) -> Result<(), TasError> {
    if scores.frame_index != frame.frame_index() {
        return Err(TasError::FrameMismatch {
            frame: frame.frame_index(),
            scores: scores.frame_index,
        });
    }
    if scores.backward.is_none() && scores.forward.is_none() {
        return Err(TasError::NoScores(frame.frame_index()));
    }
    for grid in [&scores.backward, &scores.forward].into_iter().flatten() {
        if grid.len() != frame.len() {
            return Err(TasError::ScoreLength {
                expected: frame.len(),
                found: grid.len(),
            });
        }
    }
    Ok(())
}

/// Adaptive-threshold selection of one frame.
pub fn tas_select(
    frame: &TokenGrid,
    scores: &ScoreField,
    config: OtsuConfig,
) -> Result<TasOutput, TasError> {
    check_scores(frame, scores)?;
    let backward = scores
        .backward
        .as_ref()
        .map(|g| otsu_threshold(&g.values, config))
        .transpose()?;
    let forward = scores
        .forward
        .as_ref()
        .map(|g| otsu_threshold(&g.values, config))
        .transpose()?;
    let mask = keep_mask(
        scores
            .backward
            .as_ref()
            .zip(backward.map(|r| r.effective_threshold())),
        scores
            .forward
            .as_ref()
            .zip(forward.map(|r| r.effective_threshold())),
        frame.len(),
    );
    Ok(TasOutput {
        entry: frame.select(|i| mask[i]),
        backward,
        forward,
    })
}

/// Selection with caller-supplied thresholds instead of Otsu.
pub fn select_fixed(
    frame: &TokenGrid,
    scores: &ScoreField,
    backward_threshold: f64,
    forward_threshold: f64,
) -> Result<FrameEntry, TasError> {
    check_scores(frame, scores)?;
    let mask = keep_mask(
        scores.backward.as_ref().map(|g| (g, backward_threshold)),
        scores.forward.as_ref().map(|g| (g, forward_threshold)),
        frame.len(),
    );
    Ok(frame.select(|i| mask[i]))
}
