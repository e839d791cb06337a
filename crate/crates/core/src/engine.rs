//! Streaming three-tier memory.
//!
//! Raw frames enter the short tier. When it overflows, the oldest frame is
//! reduced by the configured policy (adaptive temporal selection by default)
//! and pushed to the mid tier. Mid-tier overflow consolidates the earliest
//! entry spatially and pushes it to the long tier; long-tier overflow drops
//! the earliest entry for good.
//!
//! Each incoming frame is scored against its predecessor once, on entry.
//! Those backward scores drive both the scene-switch trigger and, later, the
//! backward half of the frame's eviction-time selection.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Policy, PolicyError};
use crate::scoring::{backward_scores, distance_calls, forward_scores, ScoreField, ScoreGrid};
use crate::threshold::{otsu_threshold, OtsuConfig};
use crate::token::{FrameEntry, GridShape, Origin, RetainedToken, TokenGrid};

pub const DEFAULT_SHORT_CAPACITY: usize = 8;
pub const DEFAULT_MID_CAPACITY: usize = 64;
pub const DEFAULT_LONG_CAPACITY: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("expected frame {expected}, got {found}")]
    OutOfOrder { expected: u64, found: u64 },
    #[error("frame {frame} has shape {found}, stream shape is {expected}")]
    ShapeChanged {
        frame: u64,
        expected: GridShape,
        found: GridShape,
    },
    #[error("no frames ingested yet")]
    Empty,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityUnit {
    #[default]
    Frames,
    Tokens,
}

impl std::str::FromStr for CapacityUnit {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frames" => Ok(CapacityUnit::Frames),
            "tokens" => Ok(CapacityUnit::Tokens),
            other => Err(EngineError::Config(format!(
                "unknown capacity unit {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    /// Short tier capacity, always in frames.
    pub short_capacity: usize,
    pub mid_capacity: usize,
    pub long_capacity: usize,
    /// Unit of the mid and long capacities.
    pub capacity_unit: CapacityUnit,
    /// Trigger sensitivity: a scene switch needs more than this fraction of
    /// tokens above the backward threshold.
    pub gamma: f64,
    pub otsu: OtsuConfig,
    pub policy: Policy,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            short_capacity: DEFAULT_SHORT_CAPACITY,
            mid_capacity: DEFAULT_MID_CAPACITY,
            long_capacity: DEFAULT_LONG_CAPACITY,
            capacity_unit: CapacityUnit::Frames,
            gamma: 0.5,
            otsu: OtsuConfig::default(),
            policy: Policy::Fluxmem,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        // Eviction-time selection needs the evicted frame's successor in the buffer.
        if self.short_capacity < 2 {
            return bad(format!(
                "short capacity must be >= 2, got {}",
                self.short_capacity
            ));
        }
        if self.mid_capacity == 0 || self.long_capacity == 0 {
            return bad("mid and long capacities must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if self.otsu.bins < 2 {
            return bad(format!("bins must be >= 2, got {}", self.otsu.bins));
        }
        if self.otsu.flat_epsilon.is_nan() || self.otsu.flat_epsilon <= 0.0 {
            return bad("flat_epsilon must be > 0".into());
        }
        self.policy.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortFrame {
    pub grid: TokenGrid,
    /// Scores against the predecessor, computed on entry. `None` for frame 0.
    pub backward: Option<ScoreGrid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub ingested_frames: u64,
    pub ingested_tokens: u64,
    /// Tokens removed when frames left the short tier.
    pub selection_dropped: u64,
    /// Tokens removed by merging at the mid-to-long boundary.
    pub consolidation_merged: u64,
    /// Tokens lost to long-tier eviction.
    pub evicted: u64,
}

/// Everything the engine remembers. Serializing it gives a byte-comparable
/// snapshot; wall-clock timings are kept elsewhere.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryState {
    pub short: VecDeque<ShortFrame>,
    pub mid: VecDeque<FrameEntry>,
    pub long: VecDeque<FrameEntry>,
    pub last_activation: Option<u64>,
    pub shape: Option<GridShape>,
    pub counters: Counters,
}

impl MemoryState {
    pub fn short_tokens(&self) -> usize {
        self.short.iter().map(|f| f.grid.len()).sum()
    }

    pub fn mid_tokens(&self) -> usize {
        self.mid.iter().map(FrameEntry::len).sum()
    }

    pub fn long_tokens(&self) -> usize {
        self.long.iter().map(FrameEntry::len).sum()
    }

    pub fn held_tokens(&self) -> usize {
        self.short_tokens() + self.mid_tokens() + self.long_tokens()
    }

    pub fn next_frame(&self) -> u64 {
        self.counters.ingested_frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub frame_index: u64,
    /// Fraction of tokens whose backward score exceeds the backward threshold.
    pub ratio: f64,
    /// Backward threshold used; `None` when the frame has no predecessor.
    pub threshold_used: Option<f64>,
    pub fired: bool,
}

/// Scene-switch test on a frame's entry-time backward scores.
///
/// Fires when there was a previous activation and the above-threshold ratio
/// strictly exceeds `gamma`. Uses only the given scores.
pub fn evaluate_trigger(
    frame_index: u64,
    backward: Option<&ScoreGrid>,
    last_activation: Option<u64>,
    gamma: f64,
    otsu: OtsuConfig,
) -> TriggerEvent {
    let Some(scores) = backward.filter(|s| !s.is_empty()) else {
        return TriggerEvent {
            frame_index,
            ratio: 0.0,
            threshold_used: None,
            fired: false,
        };
    };
    let report = otsu_threshold(&scores.values, otsu).expect("scores are finite");
    let cut = report.effective_threshold();
    let above = scores
        .values
        .iter()
        .filter(|&&s| f64::from(s) > cut)
        .count();
    let ratio = above as f64 / scores.len() as f64;
    TriggerEvent {
        frame_index,
        ratio,
        threshold_used: Some(report.threshold),
        fired: last_activation.is_some() && ratio > gamma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub frame_index: u64,
    pub tokens_in: usize,
    pub tokens_out: usize,
}

/// What moved between tiers during one ingest.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvictionLog {
    pub short_to_mid: Vec<Transfer>,
    pub mid_to_long: Vec<Transfer>,
    /// `(frame_index, tokens)` of long-tier entries dropped.
    pub dropped: Vec<(u64, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub scoring: Duration,
    pub trigger: Duration,
    pub selection: Duration,
    pub consolidation: Duration,
    pub total: Duration,
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.scoring += o.scoring;
        self.trigger += o.trigger;
        self.selection += o.selection;
        self.consolidation += o.consolidation;
        self.total += o.total;
    }
}

/// Distance-kernel evaluations, split by the stage that requested them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DistanceCounts {
    /// Entry-time backward scoring.
    pub scoring: u64,
    pub trigger: u64,
    /// Eviction-time forward scoring and selection.
    pub selection: u64,
    pub consolidation: u64,
}

impl DistanceCounts {
    pub fn total(&self) -> u64 {
        self.scoring + self.trigger + self.selection + self.consolidation
    }
}

impl std::ops::AddAssign for DistanceCounts {
    fn add_assign(&mut self, o: Self) {
        self.scoring += o.scoring;
        self.trigger += o.trigger;
        self.selection += o.selection;
        self.consolidation += o.consolidation;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub trigger: TriggerEvent,
    pub evictions: EvictionLog,
    pub timings: StageTimings,
    pub distances: DistanceCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Long,
    Mid,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextToken {
    pub tier: Tier,
    pub origin: Origin,
    pub weight: u32,
    pub feature: Vec<f32>,
}

/// Memory contents at response time: long, then mid, then short; each tier
/// oldest first, tokens within a frame row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlattenedContext {
    pub frame_index: u64,
    pub tokens: Vec<ContextToken>,
}

impl FlattenedContext {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tier_len(&self, tier: Tier) -> usize {
        self.tokens.iter().filter(|t| t.tier == tier).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryStats {
    pub short_frames: usize,
    pub short_tokens: usize,
    pub mid_frames: usize,
    pub mid_tokens: usize,
    pub long_frames: usize,
    pub long_tokens: usize,
    pub held_tokens: usize,
    pub counters: Counters,
    /// `1 - held / ingested`; 0 before any ingest.
    pub drop_ratio: f64,
    pub timings: StageTimings,
    pub distances: DistanceCounts,
}

/// Single-writer streaming memory. One ingest or query at a time.
#[derive(Debug, Clone)]
pub struct MemoryEngine {
    config: MemoryConfig,
    state: MemoryState,
    timings: StageTimings,
    distances: DistanceCounts,
}

impl MemoryEngine {
    pub fn new(config: MemoryConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            config,
            state: MemoryState::default(),
            timings: StageTimings::default(),
            distances: DistanceCounts::default(),
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    /// Deterministic byte encoding of the state.
    pub fn serialize_state(&self) -> Vec<u8> {
        serde_json::to_vec(&self.state).expect("state is serializable")
    }

    pub fn ingest(&mut self, grid: TokenGrid) -> Result<IngestOutcome, EngineError> {
        let started = Instant::now();
        let t = grid.frame_index();
        let expected = self.state.next_frame();
        if t != expected {
            return Err(EngineError::OutOfOrder { expected, found: t });
        }
        if let Some(shape) = self.state.shape {
            if grid.shape() != shape {
                return Err(EngineError::ShapeChanged {
                    frame: t,
                    expected: shape,
                    found: grid.shape(),
                });
            }
        }
        let mut timings = StageTimings::default();
        let mut distances = DistanceCounts::default();

        // (1) score against the predecessor, which is always the newest short frame
        let (backward, elapsed, calls) = measure(|| {
            self.state
                .short
                .back()
                .map(|prev| backward_scores(&grid, &prev.grid).expect("shape checked"))
        });
        timings.scoring = elapsed;
        distances.scoring = calls;

        // (2) scene-switch trigger
        let (trigger, elapsed, calls) = measure(|| {
            evaluate_trigger(
                t,
                backward.as_ref(),
                self.state.last_activation,
                self.config.gamma,
                self.config.otsu,
            )
        });
        timings.trigger = elapsed;
        distances.trigger = calls;
        if trigger.fired {
            self.state.last_activation = Some(t);
        }

        // (3) admit
        self.state.shape = Some(grid.shape());
        self.state.counters.ingested_frames += 1;
        self.state.counters.ingested_tokens += grid.len() as u64;
        self.state.short.push_back(ShortFrame { grid, backward });

        // (4)-(6) cascade
        let mut evictions = EvictionLog::default();
        while self.state.short.len() > self.config.short_capacity {
            let (entry, elapsed, calls) = measure(|| self.evict_short());
            timings.selection += elapsed;
            distances.selection += calls;
            let entry = entry?;
            let tokens_in = self.state.shape.map_or(0, |s| s.height * s.width);
            evictions.short_to_mid.push(Transfer {
                frame_index: entry.frame_index,
                tokens_in,
                tokens_out: entry.len(),
            });
            self.state.counters.selection_dropped += (tokens_in - entry.len()) as u64;
            self.state.mid.push_back(entry);
        }
        while self.over_capacity(&self.state.mid, self.config.mid_capacity) {
            let entry = self
                .state
                .mid
                .pop_front()
                .expect("over capacity implies non-empty");
            let tokens_in = entry.len();
            let (anchors, elapsed, calls) =
                measure(|| self.config.policy.consolidate(entry, self.config.otsu));
            timings.consolidation += elapsed;
            distances.consolidation += calls;
            evictions.mid_to_long.push(Transfer {
                frame_index: anchors.frame_index,
                tokens_in,
                tokens_out: anchors.len(),
            });
            self.state.counters.consolidation_merged += (tokens_in - anchors.len()) as u64;
            self.state.long.push_back(anchors);
        }
        while self.over_capacity(&self.state.long, self.config.long_capacity) {
            let gone = self
                .state
                .long
                .pop_front()
                .expect("over capacity implies non-empty");
            self.state.counters.evicted += gone.len() as u64;
            evictions.dropped.push((gone.frame_index, gone.len()));
        }

        timings.total = started.elapsed();
        self.timings += timings;
        self.distances += distances;
        Ok(IngestOutcome {
            trigger,
            evictions,
            timings,
            distances,
        })
    }

    fn over_capacity(&self, tier: &VecDeque<FrameEntry>, capacity: usize) -> bool {
        match self.config.capacity_unit {
            CapacityUnit::Frames => tier.len() > capacity,
            CapacityUnit::Tokens => tier.iter().map(FrameEntry::len).sum::<usize>() > capacity,
        }
    }

    /// Pops the oldest short frame and reduces it. Its successor is the new
    /// oldest short frame.
    fn evict_short(&mut self) -> Result<FrameEntry, EngineError> {
        let oldest = self.state.short.pop_front().expect("short tier overflowed");
        let successor = self
            .state
            .short
            .front()
            .expect("short capacity >= 2 keeps a successor");
        let policy = self.config.policy;
        let scores = if policy.kind().needs_scores() {
            let forward = forward_scores(&oldest.grid, &successor.grid).expect("shape checked");
            Some(ScoreField {
                frame_index: oldest.grid.frame_index(),
                backward: oldest.backward,
                forward: Some(forward),
            })
        } else {
            None
        };
        Ok(policy.apply(&oldest.grid, scores.as_ref(), self.config.otsu)?)
    }

    /// Flattens memory for a user query and records it as the last activation.
    pub fn handle_query(&mut self) -> Result<FlattenedContext, EngineError> {
        let context = self.snapshot()?;
        self.state.last_activation = Some(context.frame_index);
        Ok(context)
    }

    /// Flattens memory without touching the activation state.
    pub fn snapshot(&self) -> Result<FlattenedContext, EngineError> {
        let newest = self.state.short.back().ok_or(EngineError::Empty)?;
        let mut tokens = Vec::with_capacity(self.state.held_tokens());
        for (tier, entries) in [(Tier::Long, &self.state.long), (Tier::Mid, &self.state.mid)] {
            for entry in entries {
                tokens.extend(entry.tokens.iter().map(|t| context_token(tier, t)));
            }
        }
        for frame in &self.state.short {
            tokens.extend(
                frame
                    .grid
                    .to_entry()
                    .tokens
                    .iter()
                    .map(|t| context_token(Tier::Short, t)),
            );
        }
        Ok(FlattenedContext {
            frame_index: newest.grid.frame_index(),
            tokens,
        })
    }

    pub fn stats(&self) -> MemoryStats {
        let s = &self.state;
        let held = s.held_tokens();
        let ingested = s.counters.ingested_tokens;
        MemoryStats {
            short_frames: s.short.len(),
            short_tokens: s.short_tokens(),
            mid_frames: s.mid.len(),
            mid_tokens: s.mid_tokens(),
            long_frames: s.long.len(),
            long_tokens: s.long_tokens(),
            held_tokens: held,
            counters: s.counters,
            drop_ratio: if ingested == 0 {
                0.0
            } else {
                1.0 - held as f64 / ingested as f64
            },
            timings: self.timings,
            distances: self.distances,
        }
    }
}

fn context_token(tier: Tier, t: &RetainedToken) -> ContextToken {
    ContextToken {
        tier,
        origin: t.origin,
        weight: t.weight,
        feature: t.feature.clone(),
    }
}

fn measure<T>(f: impl FnOnce() -> T) -> (T, Duration, u64) {
    let calls = distance_calls();
    let start = Instant::now();
    let out = f();
    (out, start.elapsed(), distance_calls() - calls)
}
