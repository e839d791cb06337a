//! `run`: replay a stream through the engine, writing per-frame records and
//! a summary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use fluxmem_core::engine::{
    CapacityUnit, MemoryConfig, MemoryEngine, DEFAULT_LONG_CAPACITY, DEFAULT_MID_CAPACITY,
    DEFAULT_SHORT_CAPACITY,
};
use fluxmem_core::{OtsuConfig, Policy, PolicyKind};
use serde::Serialize;

use crate::source::{load_events, SourceArgs};

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    /// fluxmem, fifo, uniform, random or fixed_threshold.
    #[arg(long, default_value = "fluxmem")]
    pub policy: PolicyKind,
    /// Drop ratio for uniform and random; the threshold for fixed_threshold.
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    /// Seed for the random policy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram buckets for Otsu thresholds.
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
}

impl PolicyArgs {
    pub fn otsu(&self) -> OtsuConfig {
        OtsuConfig::with_bins(self.bins)
    }
}

/// Builds a policy of `kind` with knob value `value`.
pub fn make_policy(kind: PolicyKind, value: f64, seed: u64) -> Policy {
    match kind {
        PolicyKind::Fluxmem => Policy::Fluxmem,
        PolicyKind::Fifo => Policy::Fifo,
        PolicyKind::Uniform => Policy::Uniform { ratio: value },
        PolicyKind::Random => Policy::Random { ratio: value, seed },
        PolicyKind::FixedThreshold => Policy::FixedThreshold {
            backward: value,
            forward: value,
            consolidation: value,
        },
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// JSON-lines sidecar of `{"frame": N, "event": "query"}` records.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Short tier capacity in frames.
    #[arg(long, default_value_t = DEFAULT_SHORT_CAPACITY)]
    pub cs: usize,
    #[arg(long, default_value_t = DEFAULT_MID_CAPACITY)]
    pub cm: usize,
    #[arg(long, default_value_t = DEFAULT_LONG_CAPACITY)]
    pub cl: usize,
    /// Unit of --cm and --cl: frames or tokens.
    #[arg(long, default_value = "frames")]
    pub capacity_unit: CapacityUnit,
    /// Trigger sensitivity in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Output directory for frames.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Write zeros in every timing field.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Serialize)]
struct FrameRecord {
    frame: u64,
    short_frames: usize,
    mid_frames: usize,
    long_frames: usize,
    short_tokens: usize,
    mid_tokens: usize,
    long_tokens: usize,
    held_tokens: usize,
    drop_ratio: f64,
    trigger_ratio: f64,
    trigger_threshold: Option<f64>,
    trigger_fired: bool,
    query: bool,
    context_tokens: Option<usize>,
    /// Tokens that left the short tier this frame, after selection.
    selected_tokens: Option<usize>,
    /// Tokens that entered the long tier this frame, after consolidation.
    anchors: Option<usize>,
    score_us: u64,
    trigger_us: u64,
    tas_us: u64,
    sdc_us: u64,
    ingest_us: u64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub source: String,
    pub config: MemoryConfig,
    pub frames: u64,
    pub queries: usize,
    pub triggers: usize,
    pub final_drop_ratio: f64,
    pub held_tokens: usize,
    pub total_anchors: usize,
    pub selection_dropped: u64,
    pub consolidation_merged: u64,
    pub evicted: u64,
    pub mean_ingest_us: f64,
    pub p95_ingest_us: u64,
}

pub fn run(args: &RunArgs) -> Result<Summary> {
    let config = MemoryConfig {
        short_capacity: args.cs,
        mid_capacity: args.cm,
        long_capacity: args.cl,
        capacity_unit: args.capacity_unit,
        gamma: args.gamma,
        otsu: args.policy.otsu(),
        policy: make_policy(args.policy.policy, args.policy.ratio, args.policy.seed),
    };
    let mut engine = MemoryEngine::new(config)?;
    let queries = match &args.events {
        Some(path) => load_events(path)?,
        None => Default::default(),
    };

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join("frames.csv");
    let mut csv = csv::Writer::from_writer(BufWriter::new(
        File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?,
    ));
    let us = |d: Duration| {
        if args.no_timing {
            0
        } else {
            d.as_micros() as u64
        }
    };

    let mut latencies = Vec::new();
    let (mut triggers, mut anchors_total, mut answered) = (0, 0, 0);
    for frame in args.source.open()? {
        let frame = frame?;
        let t = frame.frame_index();
        let out = engine.ingest(frame)?;
        let query = queries.contains(&t);
        let context = if query {
            Some(engine.handle_query()?.len())
        } else {
            None
        };
        answered += usize::from(query);
        triggers += usize::from(out.trigger.fired);
        let anchors: Option<usize> = (!out.evictions.mid_to_long.is_empty())
            .then(|| out.evictions.mid_to_long.iter().map(|x| x.tokens_out).sum());
        anchors_total += anchors.unwrap_or(0);
        let stats = engine.stats();
        let timings = out.timings;
        latencies.push(us(timings.total));
        csv.serialize(FrameRecord {
            frame: t,
            short_frames: stats.short_frames,
            mid_frames: stats.mid_frames,
            long_frames: stats.long_frames,
            short_tokens: stats.short_tokens,
            mid_tokens: stats.mid_tokens,
            long_tokens: stats.long_tokens,
            held_tokens: stats.held_tokens,
            drop_ratio: stats.drop_ratio,
            trigger_ratio: out.trigger.ratio,
            trigger_threshold: out.trigger.threshold_used,
            trigger_fired: out.trigger.fired,
            query,
            context_tokens: context,
            selected_tokens: (!out.evictions.short_to_mid.is_empty()).then(|| {
                out.evictions
                    .short_to_mid
                    .iter()
                    .map(|x| x.tokens_out)
                    .sum()
            }),
            anchors,
            score_us: us(timings.scoring),
            trigger_us: us(timings.trigger),
            tas_us: us(timings.selection),
            sdc_us: us(timings.consolidation),
            ingest_us: us(timings.total),
        })?;
    }
    csv.flush()?;

    let missed: Vec<u64> = queries
        .iter()
        .copied()
        .filter(|&q| q >= engine.state().next_frame())
        .collect();
    if !missed.is_empty() {
        bail!("events reference frames beyond the stream: {missed:?}");
    }
    let stats = engine.stats();
    let summary = Summary {
        source: args.source.describe(),
        config,
        frames: stats.counters.ingested_frames,
        queries: answered,
        triggers,
        final_drop_ratio: stats.drop_ratio,
        held_tokens: stats.held_tokens,
        total_anchors: anchors_total,
        selection_dropped: stats.counters.selection_dropped,
        consolidation_merged: stats.counters.consolidation_merged,
        evicted: stats.counters.evicted,
        mean_ingest_us: mean(&latencies),
        p95_ingest_us: percentile(&mut latencies, 0.95),
    };
    let summary_path = args.out.join("summary.json");
    let file = File::create(&summary_path)
        .with_context(|| format!("creating {}", summary_path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &summary)?;
    Ok(summary)
}

fn mean(xs: &[u64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<u64>() as f64 / xs.len() as f64
    }
}

/// Nearest-rank percentile.
fn percentile(xs: &mut [u64], q: f64) -> u64 {
    if xs.is_empty() {
        return 0;
    }
    xs.sort_unstable();
    let rank = (q * xs.len() as f64).ceil() as usize;
    xs[rank.clamp(1, xs.len()) - 1]
}
