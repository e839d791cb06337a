//! Streaming token memory for dense per-frame feature grids.
//!
//! Frames of `H x W` feature tokens flow through three tiers. Raw frames sit
//! in short-term memory; on eviction, temporal adjacency selection keeps only
//! tokens that changed relative to the previous or next frame; on mid-term
//! eviction, spatial consolidation merges adjacent similar tokens into mean
//! anchors. All thresholds are chosen per frame with Otsu's method.
//!
//! ```
//! use fluxmem_core::engine::{MemoryConfig, MemoryEngine};
//! use fluxmem_core::synth::{SceneKind, SceneSpec};
//!
//! let mut engine = MemoryEngine::new(MemoryConfig::default()).unwrap();
//! for frame in SceneSpec::new(SceneKind::MovingBlob, 8, 8, 16, 20).generator().unwrap() {
//!     engine.ingest(frame.grid).unwrap();
//! }
//! let context = engine.handle_query().unwrap();
//! assert_eq!(context.len(), engine.stats().held_tokens);
//! ```

pub mod engine;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod scoring;
pub mod sdc;
pub mod stream;
pub mod synth;
pub mod tas;
pub mod threshold;
pub mod token;

pub use engine::{
    CapacityUnit, FlattenedContext, MemoryConfig, MemoryEngine, MemoryState, TriggerEvent,
};
pub use policy::{Policy, PolicyKind};
pub use scoring::{cosine_distance, ScoreField, ScoreGrid};
pub use threshold::{otsu_threshold, OtsuConfig, ThresholdReport};
pub use token::{FrameEntry, Origin, RetainedToken, TokenGrid};
