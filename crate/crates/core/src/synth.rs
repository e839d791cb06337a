//! Deterministic synthetic token streams with known change structure.
//!
//! Scenes are described by a [`SceneSpec`], which round-trips through a flat
//! `key = value` text format:
//!
//! ```text
//! # comments and blank lines are ignored
//! kind = scene_cuts
//! height = 16
//! width = 16
//! dim = 64
//! frames = 200
//! noise_sigma = 0
//! cut_period = 50
//! fraction_changed = 0.8
//! seed = 7
//! ```
//!
//! Every frame comes with a ground-truth change mask: cells whose noiseless
//! content differs from the previous frame (all cells for frame 0).

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{gaussian, stream_rng, unit_vector};
use crate::token::TokenGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Static,
    MovingBlob,
    SceneCuts,
    Noise,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Static => "static",
            SceneKind::MovingBlob => "moving_blob",
            SceneKind::SceneCuts => "scene_cuts",
            SceneKind::Noise => "noise",
        }
    }
}

impl FromStr for SceneKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            SceneKind::Static,
            SceneKind::MovingBlob,
            SceneKind::SceneCuts,
            SceneKind::Noise,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| SceneError::Invalid(format!("unknown scene kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub frames: usize,
    pub noise_sigma: f64,
    pub blob_size: usize,
    /// Blob displacement per frame, in cells.
    pub blob_velocity: (i64, i64),
    pub cut_period: usize,
    pub fraction_changed: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Static,
            height: 16,
            width: 16,
            dim: 64,
            frames: 100,
            noise_sigma: 0.0,
            blob_size: 4,
            blob_velocity: (0, 1),
            cut_period: 50,
            fraction_changed: 0.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn new(kind: SceneKind, height: usize, width: usize, dim: usize, frames: usize) -> Self {
        Self {
            kind,
            height,
            width,
            dim,
            frames,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Invalid(m.to_string()));
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return bad("height, width and dim must be positive");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and >= 0");
        }
        match self.kind {
            SceneKind::MovingBlob
                if self.blob_size == 0 || self.blob_size > self.height.min(self.width) =>
            {
                bad("blob_size must be in [1, min(height, width)]")
            }
            SceneKind::SceneCuts if self.cut_period == 0 => bad("cut_period must be positive"),
            SceneKind::SceneCuts if !(0.0..=1.0).contains(&self.fraction_changed) => {
                bad("fraction_changed must be in [0, 1]")
            }
            _ => Ok(()),
        }
    }

    /// Number of cells a cut replaces: `ceil(fraction_changed · H · W)`.
    pub fn cells_per_cut(&self) -> usize {
        let n = self.height * self.width;
        ((self.fraction_changed * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
    }

    pub fn is_cut_frame(&self, t: usize) -> bool {
        self.kind == SceneKind::SceneCuts && t > 0 && t.is_multiple_of(self.cut_period)
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut spec = SceneSpec::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| SceneError::Parse {
                line: n + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(v: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("bad number {v:?}"))
            }
            let r: Result<(), String> = (|| {
                match key {
                    "kind" => spec.kind = value.parse().map_err(|e: SceneError| e.to_string())?,
                    "height" => spec.height = num(value)?,
                    "width" => spec.width = num(value)?,
                    "dim" => spec.dim = num(value)?,
                    "frames" => spec.frames = num(value)?,
                    "noise_sigma" => spec.noise_sigma = num(value)?,
                    "blob_size" => spec.blob_size = num(value)?,
                    "blob_velocity" => {
                        let (a, b) = value
                            .split_once(',')
                            .ok_or("blob_velocity is \"rows,cols\"")?;
                        spec.blob_velocity = (num(a.trim())?, num(b.trim())?);
                    }
                    "cut_period" => spec.cut_period = num(value)?,
                    "fraction_changed" => spec.fraction_changed = num(value)?,
                    "seed" => spec.seed = num(value)?,
                    other => return Err(format!("unknown key {other:?}")),
                }
                Ok(())
            })();
            r.map_err(perr)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn generator(&self) -> Result<SceneGenerator, SceneError> {
        SceneGenerator::new(self.clone())
    }

    /// All frames, materialized.
    pub fn generate(&self) -> Result<Vec<SyntheticFrame>, SceneError> {
        Ok(self.generator()?.collect())
    }
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind = {}", self.kind.name())?;
        writeln!(f, "height = {}", self.height)?;
        writeln!(f, "width = {}", self.width)?;
        writeln!(f, "dim = {}", self.dim)?;
        writeln!(f, "frames = {}", self.frames)?;
        writeln!(f, "noise_sigma = {}", self.noise_sigma)?;
        writeln!(f, "blob_size = {}", self.blob_size)?;
        writeln!(
            f,
            "blob_velocity = {},{}",
            self.blob_velocity.0, self.blob_velocity.1
        )?;
        writeln!(f, "cut_period = {}", self.cut_period)?;
        writeln!(f, "fraction_changed = {}", self.fraction_changed)?;
        writeln!(f, "seed = {}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub grid: TokenGrid,
    /// Row-major; true where noiseless content changed since the previous frame.
    pub changed: Vec<bool>,
}

/// Lazily produces the frames of a scene.
pub struct SceneGenerator {
    spec: SceneSpec,
    /// Noiseless content of the last emitted frame.
    clean: Vec<f32>,
    background: Vec<f32>,
    blob_vector: Vec<f32>,
    blob_cells: Vec<bool>,
    next: usize,
}

// Stream ids 0 and 1 hold scene-level draws; frame t draws from 2 + t.
const BASE_STREAM: u64 = 0;
const BLOB_STREAM: u64 = 1;

impl SceneGenerator {
    pub fn new(spec: SceneSpec) -> Result<Self, SceneError> {
        spec.validate()?;
        let cells = spec.height * spec.width;
        let mut rng = stream_rng(spec.seed, BASE_STREAM);
        let clean = fill_random(&mut rng, cells, spec.dim);
        let (background, blob_vector) = if spec.kind == SceneKind::MovingBlob {
            (
                clean.clone(),
                unit_vector(&mut stream_rng(spec.seed, BLOB_STREAM), spec.dim),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            spec,
            clean,
            background,
            blob_vector,
            blob_cells: vec![false; cells],
            next: 0,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    fn blob_mask(&self, t: usize) -> Vec<bool> {
        let (h, w) = (self.spec.height as i64, self.spec.width as i64);
        let top = (self.spec.blob_velocity.0 * t as i64).rem_euclid(h);
        let left = (self.spec.blob_velocity.1 * t as i64).rem_euclid(w);
        let mut mask = vec![false; (h * w) as usize];
        for i in 0..self.spec.blob_size as i64 {
            for j in 0..self.spec.blob_size as i64 {
                mask[((top + i) % h * w + (left + j) % w) as usize] = true;
            }
        }
        mask
    }

    fn advance(&mut self, t: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let spec = &self.spec;
        let cells = spec.height * spec.width;
        let d = spec.dim;
        match spec.kind {
            SceneKind::Static => vec![t == 0; cells],
            SceneKind::Noise => {
                if t > 0 {
                    self.clean = fill_random(rng, cells, d);
                }
                vec![true; cells]
            }
            SceneKind::SceneCuts => {
                if !spec.is_cut_frame(t) {
                    return vec![t == 0; cells];
                }
                let mut changed = vec![false; cells];
                let chosen = index::sample(rng, cells, spec.cells_per_cut());
                for cell in chosen {
                    changed[cell] = true;
                    self.clean[cell * d..(cell + 1) * d].copy_from_slice(&unit_vector(rng, d));
                }
                changed
            }
            SceneKind::MovingBlob => {
                let mask = self.blob_mask(t);
                let changed = if t == 0 {
                    vec![true; cells]
                } else {
                    mask.iter()
                        .zip(&self.blob_cells)
                        .map(|(a, b)| a != b)
                        .collect()
                };
                for (cell, &in_blob) in mask.iter().enumerate() {
                    let src = if in_blob {
                        &self.blob_vector[..]
                    } else {
                        &self.background[cell * d..(cell + 1) * d]
                    };
                    self.clean[cell * d..(cell + 1) * d].copy_from_slice(src);
                }
                self.blob_cells = mask;
                changed
            }
        }
    }
}

impl Iterator for SceneGenerator {
    type Item = SyntheticFrame;

    fn next(&mut self) -> Option<SyntheticFrame> {
        let t = self.next;
        if t >= self.spec.frames {
            return None;
        }
        self.next += 1;
        let mut rng = stream_rng(self.spec.seed, 2 + t as u64);
        let changed = self.advance(t, &mut rng);
        let mut data = self.clean.clone();
        if self.spec.noise_sigma > 0.0 {
            for v in &mut data {
                *v += gaussian(&mut rng, self.spec.noise_sigma);
            }
        }
        let grid = TokenGrid::new(
            t as u64,
            self.spec.height,
            self.spec.width,
            self.spec.dim,
            data,
        )
        .expect("generated grids are well formed");
        Some(SyntheticFrame { grid, changed })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.frames - self.next;
        (left, Some(left))
    }
}

fn fill_random(rng: &mut ChaCha8Rng, cells: usize, dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(cells * dim);
    for _ in 0..cells {
        out.extend(unit_vector(rng, dim));
    }
    out
}
