//! Token reduction policies applied when a frame leaves short-term memory,
//! and the matching consolidation step at the mid-to-long boundary.
//!
//! `fluxmem` is the adaptive method (Otsu-thresholded temporal selection,
//! then spatial consolidation). The others are comparison baselines with
//! per-frame budgets:
//!
//! - `fifo` keeps every token; only tier eviction drops anything.
//! - `uniform` keeps an evenly strided row-major subset of `floor((1-r)·N)`.
//! - `random` keeps a seeded sample of exactly `round((1-r)·N)`.
//! - `fixed_threshold` is the temporal/spatial rule with constant thresholds.
//!   It stands in for fixed-rule pruning methods; it is not a reproduction
//!   of any specific published system.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;
use crate::scoring::{ScoreField, MAX_DISTANCE};
use crate::sdc::{consolidate_with_threshold, into_entry, sdc_consolidate};
use crate::tas::{select_fixed, tas_select, TasError};
use crate::threshold::OtsuConfig;
use crate::token::{FrameEntry, TokenGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy {0:?} (expected fluxmem, fifo, uniform, random or fixed_threshold)")]
    UnknownKind(String),
    #[error("drop ratio {0} outside [0, 1]")]
    Ratio(f64),
    #[error("threshold {0} outside [0, 2]")]
    Threshold(f64),
    #[error("policy {0} needs score fields")]
    MissingScores(PolicyKind),
    #[error(transparent)]
    Tas(#[from] TasError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fluxmem,
    Fifo,
    Uniform,
    Random,
    FixedThreshold,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Fluxmem,
        PolicyKind::Fifo,
        PolicyKind::Uniform,
        PolicyKind::Random,
        PolicyKind::FixedThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Fluxmem => "fluxmem",
            PolicyKind::Fifo => "fifo",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Random => "random",
            PolicyKind::FixedThreshold => "fixed_threshold",
        }
    }

    pub fn needs_scores(self) -> bool {
        matches!(self, PolicyKind::Fluxmem | PolicyKind::FixedThreshold)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PolicyError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Fluxmem,
    Fifo,
    Uniform {
        ratio: f64,
    },
    Random {
        ratio: f64,
        seed: u64,
    },
    FixedThreshold {
        backward: f64,
        forward: f64,
        consolidation: f64,
    },
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Fluxmem => PolicyKind::Fluxmem,
            Policy::Fifo => PolicyKind::Fifo,
            Policy::Uniform { .. } => PolicyKind::Uniform,
            Policy::Random { .. } => PolicyKind::Random,
            Policy::FixedThreshold { .. } => PolicyKind::FixedThreshold,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match *self {
            Policy::Uniform { ratio } | Policy::Random { ratio, .. }
                if !(0.0..=1.0).contains(&ratio) =>
            {
                Err(PolicyError::Ratio(ratio))
            }
            Policy::FixedThreshold {
                backward,
                forward,
                consolidation,
            } => {
                for t in [backward, forward, consolidation] {
                    if !(0.0..=f64::from(MAX_DISTANCE)).contains(&t) {
                        return Err(PolicyError::Threshold(t));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Selects the tokens of `frame` that move on to mid-term memory.
    pub fn apply(
        &self,
        frame: &TokenGrid,
        scores: Option<&ScoreField>,
        otsu: OtsuConfig,
    ) -> Result<FrameEntry, PolicyError> {
        let kind = self.kind();
        let need = || scores.ok_or(PolicyError::MissingScores(kind));
        match *self {
            Policy::Fluxmem => Ok(tas_select(frame, need()?, otsu)?.entry),
            Policy::Fifo => Ok(frame.to_entry()),
            Policy::Uniform { ratio } => {
                let keep = 1.0 - ratio;
                Ok(frame.select(|i| stride_count(i + 1, keep) > stride_count(i, keep)))
            }
            Policy::Random { ratio, seed } => {
                let n = frame.len();
                let target = random_target(n, ratio);
                let mut rng = stream_rng(seed, frame.frame_index());
                let mut mask = vec![false; n];
                for i in index::sample(&mut rng, n, target) {
                    mask[i] = true;
                }
                Ok(frame.select(|i| mask[i]))
            }
            Policy::FixedThreshold {
                backward, forward, ..
            } => Ok(select_fixed(frame, need()?, backward, forward)?),
        }
    }

    /// Consolidates a mid-term entry on its way to long-term memory.
    /// Only the score-driven policies merge; the rest pass entries through.
    pub fn consolidate(&self, entry: FrameEntry, otsu: OtsuConfig) -> FrameEntry {
        match *self {
            Policy::Fluxmem => into_entry(entry.frame_index, sdc_consolidate(&entry, otsu)),
            Policy::FixedThreshold { consolidation, .. } => into_entry(
                entry.frame_index,
                consolidate_with_threshold(&entry, consolidation),
            ),
            _ => entry,
        }
    }
}

// Guards against keep·i landing a hair under an integer.
const ROUNDING_SLACK: f64 = 1e-9;

fn stride_count(i: usize, keep: f64) -> u64 {
    (i as f64 * keep + ROUNDING_SLACK).floor() as u64
}

/// Tokens the uniform policy keeps out of `n` at drop ratio `ratio`.
pub fn uniform_target(n: usize, ratio: f64) -> usize {
    stride_count(n, 1.0 - ratio) as usize
}

/// Tokens the random policy keeps out of `n` at drop ratio `ratio`.
pub fn random_target(n: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * n as f64).round() as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(index: u64, n_side: usize) -> TokenGrid {
        let data = (0..n_side * n_side * 2)
            .map(|i| (i % 7) as f32 + 1.0)
            .collect();
        TokenGrid::new(index, n_side, n_side, 2, data).unwrap()
    }

    fn apply(p: Policy, f: &TokenGrid) -> FrameEntry {
        p.apply(f, None, OtsuConfig::default()).unwrap()
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "fixed_threshold".parse::<PolicyKind>().unwrap(),
            PolicyKind::FixedThreshold
        );
        assert!(matches!(
            "lru".parse::<PolicyKind>(),
            Err(PolicyError::UnknownKind(_))
        ));
    }

    #[test]
    fn uniform_counts() {
        let f = frame(0, 16);
        assert_eq!(apply(Policy::Uniform { ratio: 0.0 }, &f).len(), 256);
        let half = apply(Policy::Uniform { ratio: 0.5 }, &f);
        assert_eq!(half.len(), 128);
        let cols: Vec<usize> = half
            .tokens
            .iter()
            .map(|t| t.origin.row as usize * 16 + t.origin.col as usize)
            .collect();
        assert!(cols.windows(2).all(|w| w[1] - w[0] == 2));
        assert_eq!(apply(Policy::Uniform { ratio: 0.75 }, &f).len(), 64);
        assert_eq!(apply(Policy::Uniform { ratio: 1.0 }, &f).len(), 0);
        assert_eq!(
            apply(Policy::Uniform { ratio: 0.3 }, &frame(0, 10)).len(),
            70
        );
    }

    #[test]
    fn random_is_seeded() {
        let f = frame(3, 16);
        let a = apply(
            Policy::Random {
                ratio: 0.5,
                seed: 1,
            },
            &f,
        );
        let b = apply(
            Policy::Random {
                ratio: 0.5,
                seed: 1,
            },
            &f,
        );
        let c = apply(
            Policy::Random {
                ratio: 0.5,
                seed: 2,
            },
            &f,
        );
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 128);
        assert!(a.is_well_formed());
    }

    #[test]
    fn fifo_keeps_all_and_score_policies_need_scores() {
        let f = frame(0, 4);
        assert_eq!(apply(Policy::Fifo, &f).len(), 16);
        assert_eq!(
            Policy::Fluxmem.apply(&f, None, OtsuConfig::default()),
            Err(PolicyError::MissingScores(PolicyKind::Fluxmem))
        );
    }

    #[test]
    fn validation() {
        assert!(Policy::Uniform { ratio: 1.5 }.validate().is_err());
        assert!(Policy::FixedThreshold {
            backward: 0.1,
            forward: 2.5,
            consolidation: 0.0
        }
        .validate()
        .is_err());
        assert!(Policy::Random {
            ratio: 0.2,
            seed: 0
        }
        .validate()
        .is_ok());
    }

    proptest! {
        #[test]
        fn exact_cardinality_and_monotone(side in 1usize..20, r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0, seed in any::<u64>()) {
            let f = frame(1, side);
            let n = side * side;
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let u_lo = apply(Policy::Uniform { ratio: lo }, &f).len();
            let u_hi = apply(Policy::Uniform { ratio: hi }, &f).len();
            prop_assert_eq!(u_lo, uniform_target(n, lo));
            prop_assert!(u_hi <= u_lo);
            let r_lo = apply(Policy::Random { ratio: lo, seed }, &f).len();
            let r_hi = apply(Policy::Random { ratio: hi, seed }, &f).len();
            prop_assert_eq!(r_lo, random_target(n, lo));
            prop_assert!(r_hi <= r_lo);
        }
    }
}
