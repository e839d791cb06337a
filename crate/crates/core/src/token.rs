//! Frame and token value types.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive (got {height}x{width}x{dim})")]
    ZeroDimension {
        height: usize,
        width: usize,
        dim: usize,
    },
    #[error("grid data holds {actual} values, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },
}

/// One frame's `height x width` grid of `dim`-dimensional feature tokens,
/// stored row-major with the feature axis innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    frame_index: u64,
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    pub fn new(
        frame_index: u64,
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(GridError::ZeroDimension { height, width, dim });
        }
        let expected = height * width * dim;
        if data.len() != expected {
            return Err(GridError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Self {
            frame_index,
            height,
            width,
            dim,
            data,
        })
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tokens, `height * width`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            height: self.height,
            width: self.width,
            dim: self.dim,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Feature vector at `(row, col)`.
    #[inline]
    pub fn token(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Feature vector at row-major position `index`.
    #[inline]
    pub fn token_at(&self, index: usize) -> &[f32] {
        let start = index * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Returns a copy with every feature multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Same tokens, different frame index.
    pub fn with_frame_index(mut self, frame_index: u64) -> Self {
        self.frame_index = frame_index;
        self
    }

    /// Every token kept, in row-major order, with weight 1.
    pub fn to_entry(&self) -> FrameEntry {
        self.select(|_| true)
    }

    /// Builds a [`FrameEntry`] from the tokens whose row-major index passes `keep`.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> FrameEntry {
        let tokens = (0..self.len())
            .filter(|&i| keep(i))
            .map(|i| RetainedToken {
                feature: self.token_at(i).to_vec(),
                origin: Origin {
                    frame_index: self.frame_index,
                    row: (i / self.width) as u32,
                    col: (i % self.width) as u32,
                },
                weight: 1,
            })
            .collect();
        FrameEntry {
            frame_index: self.frame_index,
            tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.dim)
    }
}

/// Spatiotemporal provenance of a retained token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub frame_index: u64,
    pub row: u32,
    pub col: u32,
}

impl Origin {
    pub fn position(&self) -> (u32, u32) {
        (self.row, self.col)
    }
}

/// A token that survived selection, or an anchor standing in for a merged
/// component. `weight` counts the raw tokens it represents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedToken {
    pub feature: Vec<f32>,
    pub origin: Origin,
    pub weight: u32,
}

/// The tokens one frame contributes to a memory tier, sorted row-major by origin.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_index: u64,
    pub tokens: Vec<RetainedToken>,
}

impl FrameEntry {
    pub fn empty(frame_index: u64) -> Self {
        Self {
            frame_index,
            tokens: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sum of token weights, i.e. the number of raw tokens represented.
    pub fn total_weight(&self) -> u64 {
        self.tokens.iter().map(|t| u64::from(t.weight)).sum()
    }

    /// Checks the row-major ordering and shared-frame invariants.
    pub fn is_well_formed(&self) -> bool {
        self.tokens
            .iter()
            .all(|t| t.origin.frame_index == self.frame_index && t.weight >= 1)
            && self
                .tokens
                .windows(2)
                .all(|w| w[0].origin.position() < w[1].origin.position())
    }
}
