//! `bench`: sweep policies and drop ratios over one stream, per frame.
//!
//! Each (policy, value) cell applies the policy to every frame with both
//! neighbors scored, then consolidates the survivors. Fidelity is a proxy:
//! the mean cosine distance from each dropped token to its nearest kept token
//! in the same frame. Frames that drop tokens but keep none have no such
//! distance; they are counted in `proxy_frames_skipped` instead.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use fluxmem_core::scoring::{backward_scores, forward_scores};
use fluxmem_core::{cosine_distance, OtsuConfig, Policy, PolicyKind, ScoreField, TokenGrid};
use rayon::prelude::*;
use serde::Serialize;

use crate::run::make_policy;
use crate::source::SourceArgs;

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Policies to sweep, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "fluxmem,fifo,uniform,random,fixed_threshold"
    )]
    pub policy: Vec<PolicyKind>,
    /// Drop ratios for uniform and random; thresholds for fixed_threshold.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75")]
    pub ratio: Vec<f64>,
    /// Seed for the random policy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub policy: PolicyKind,
    /// Requested drop ratio (uniform, random).
    pub target_ratio: Option<f64>,
    /// Fixed threshold (fixed_threshold).
    pub threshold: Option<f64>,
    pub frames: usize,
    pub tokens_in: usize,
    pub kept: usize,
    pub anchors: usize,
    /// Achieved `1 - kept / tokens_in`; for fluxmem this is self-determined.
    pub drop_ratio: f64,
    pub proxy_nn_distance_mean: Option<f64>,
    pub proxy_frames_skipped: usize,
}

/// The (policy, knob) cells of a sweep. Policies without a knob get one cell.
pub fn cells(policies: &[PolicyKind], values: &[f64], seed: u64) -> Vec<Policy> {
    let mut out = Vec::new();
    for &kind in policies {
        match kind {
            PolicyKind::Fluxmem | PolicyKind::Fifo => out.push(make_policy(kind, 0.0, seed)),
            _ => out.extend(values.iter().map(|&v| make_policy(kind, v, seed))),
        }
    }
    out
}

/// Both-sided scores for every frame.
pub fn score_all(frames: &[TokenGrid]) -> Result<Vec<ScoreField>> {
    let mut fields = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let mut field = ScoreField::new(frame.frame_index());
        if t > 0 {
            field.backward = Some(backward_scores(frame, &frames[t - 1])?);
        }
        if let Some(next) = frames.get(t + 1) {
            field.forward = Some(forward_scores(frame, next)?);
        }
        fields.push(field);
    }
    Ok(fields)
}

pub fn bench_cell(
    policy: Policy,
    frames: &[TokenGrid],
    fields: &[ScoreField],
    otsu: OtsuConfig,
) -> Result<BenchRow> {
    policy.validate()?;
    let (mut tokens_in, mut kept, mut anchors) = (0, 0, 0);
    let (mut distance_sum, mut dropped_scored, mut skipped) = (0.0f64, 0usize, 0usize);
    for (frame, field) in frames.iter().zip(fields) {
        let entry = policy.apply(frame, Some(field), otsu)?;
        tokens_in += frame.len();
        kept += entry.len();
        let mut is_kept = vec![false; frame.len()];
        for t in &entry.tokens {
            is_kept[t.origin.row as usize * frame.width() + t.origin.col as usize] = true;
        }
        if entry.len() < frame.len() {
            if entry.is_empty() {
                skipped += 1;
            } else {
                for i in (0..frame.len()).filter(|&i| !is_kept[i]) {
                    let nearest = entry
                        .tokens
                        .iter()
                        .map(|k| cosine_distance(frame.token_at(i), &k.feature))
                        .fold(f32::INFINITY, f32::min);
                    distance_sum += f64::from(nearest);
                    dropped_scored += 1;
                }
            }
        }
        anchors += policy.consolidate(entry, otsu).len();
    }
    let (target_ratio, threshold) = match policy {
        Policy::Uniform { ratio } | Policy::Random { ratio, .. } => (Some(ratio), None),
        Policy::FixedThreshold { backward, .. } => (None, Some(backward)),
        _ => (None, None),
    };
    Ok(BenchRow {
        policy: policy.kind(),
        target_ratio,
        threshold,
        frames: frames.len(),
        tokens_in,
        kept,
        anchors,
        drop_ratio: if tokens_in == 0 {
            0.0
        } else {
            1.0 - kept as f64 / tokens_in as f64
        },
        proxy_nn_distance_mean: (dropped_scored > 0).then(|| distance_sum / dropped_scored as f64),
        proxy_frames_skipped: skipped,
    })
}

/// Thread count from `FLUXMEM_THREADS`; 0 or unset lets rayon decide.
fn thread_cap() -> Result<usize> {
    match std::env::var("FLUXMEM_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("FLUXMEM_THREADS={v:?} is not a count")),
        Err(_) => Ok(0),
    }
}

pub fn bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let frames = args.source.collect()?;
    let fields = score_all(&frames)?;
    let otsu = OtsuConfig::with_bins(args.bins);
    let cells = cells(&args.policy, &args.ratio, args.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap()?)
        .build()?;
    let rows: Vec<BenchRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&p| bench_cell(p, &frames, &fields, otsu))
            .collect::<Result<_>>()
    })?;

    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    for row in &rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(rows)
}
