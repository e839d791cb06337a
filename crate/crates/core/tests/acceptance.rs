//! Acceptance gate. Runs every criterion in sequence (timing checks must not
//! share the CPU with other tests) and prints one PASS/FAIL line for each.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fluxmem_core::engine::{
    evaluate_trigger, CapacityUnit, MemoryConfig, MemoryEngine, MemoryState,
};
use fluxmem_core::oracle::{
    check_otsu, check_sdc, check_tas, random_retained, random_samples, random_triple,
};
use fluxmem_core::policy::Policy;
use fluxmem_core::rng::stream_rng;
use fluxmem_core::scoring::{
    backward_scores, distance_calls, evaluations_per_pass, forward_scores, ScoreField,
};
use fluxmem_core::sdc::sdc_consolidate;
use fluxmem_core::synth::{SceneKind, SceneSpec};
use fluxmem_core::tas::tas_select;
use fluxmem_core::threshold::{otsu_threshold, OtsuConfig};
use fluxmem_core::token::TokenGrid;
use rand::Rng;

const SEED: u64 = 20240607;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    }
}

fn otsu_oracle() -> Check {
    let started = Instant::now();
    let config = OtsuConfig::default();
    for trial in 0..1000 {
        check_otsu(trial, &random_samples(SEED, trial), config, 0.999)
            .map_err(|m| m.to_string())?;
    }
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("1000 sample sets agree, {took:.2?}"))
}

fn tas_oracle() -> Check {
    let started = Instant::now();
    let config = OtsuConfig::default();
    let mut kept = 0;
    for trial in 0..200 {
        let (h, w, d) = if trial % 2 == 0 {
            (8, 8, 16)
        } else {
            (16, 16, 32)
        };
        kept += check_tas(trial, &random_triple(SEED, trial, h, w, d), config)
            .map_err(|m| m.to_string())?;
    }
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "200 triples bit-identical ({kept} survivors), {took:.2?}"
    ))
}

fn sdc_oracle() -> Check {
    let started = Instant::now();
    let config = OtsuConfig::default();
    let mut anchors = 0;
    for trial in 0..200 {
        let (h, w, d) = if trial % 2 == 0 {
            (8, 8, 16)
        } else {
            (16, 16, 32)
        };
        let entry = random_retained(SEED, trial, h, w, d);
        anchors += check_sdc(trial, &entry, config, 1e-6)
            .map_err(|m| m.to_string())?
            .anchors
            .len();
    }
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "200 sets match BFS ({anchors} anchors), {took:.2?}"
    ))
}

fn random_config(rng: &mut impl Rng) -> MemoryConfig {
    let capacity_unit = if rng.random_bool(0.5) {
        CapacityUnit::Frames
    } else {
        CapacityUnit::Tokens
    };
    let scale = if capacity_unit == CapacityUnit::Tokens {
        20
    } else {
        1
    };
    let ratio = rng.random_range(0.0..=1.0);
    let policy = match rng.random_range(0..5) {
        0 | 1 => Policy::Fluxmem,
        2 => Policy::Uniform { ratio },
        3 => Policy::Random {
            ratio,
            seed: rng.random(),
        },
        _ => Policy::FixedThreshold {
            backward: rng.random_range(0.0..1.0),
            forward: rng.random_range(0.0..1.0),
            consolidation: rng.random_range(0.0..1.0),
        },
    };
    MemoryConfig {
        short_capacity: rng.random_range(2..6),
        mid_capacity: rng.random_range(1..6) * scale,
        long_capacity: rng.random_range(1..6) * scale,
        capacity_unit,
        gamma: rng.random_range(0.0..=1.0),
        policy,
        ..MemoryConfig::default()
    }
}

fn random_scene(rng: &mut impl Rng, h: usize, w: usize, frames: usize) -> Vec<TokenGrid> {
    let kind = [
        SceneKind::Static,
        SceneKind::MovingBlob,
        SceneKind::SceneCuts,
        SceneKind::Noise,
    ][rng.random_range(0..4)];
    let mut spec = SceneSpec::new(kind, h, w, 8, frames);
    spec.noise_sigma = if rng.random_bool(0.5) { 0.0 } else { 0.05 };
    spec.blob_size = 2.min(h).min(w);
    spec.cut_period = rng.random_range(2..6);
    spec.fraction_changed = rng.random_range(0.1..0.9);
    spec.seed = rng.random();
    spec.generate()
        .expect("valid scene")
        .into_iter()
        .map(|f| f.grid)
        .collect()
}

fn capacities_hold(state: &MemoryState, config: &MemoryConfig) -> bool {
    let (mid, long) = match config.capacity_unit {
        CapacityUnit::Frames => (state.mid.len(), state.long.len()),
        CapacityUnit::Tokens => (state.mid_tokens(), state.long_tokens()),
    };
    state.short.len() <= config.short_capacity
        && mid <= config.mid_capacity
        && long <= config.long_capacity
}

/// Runs a stream, issuing a query after each frame listed in `queries`, and
/// returns the serialized state after every ingest.
fn trace(
    config: MemoryConfig,
    frames: &[TokenGrid],
    queries: &[bool],
) -> Result<Vec<Vec<u8>>, String> {
    let mut engine = MemoryEngine::new(config).map_err(|e| e.to_string())?;
    let mut states = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        engine.ingest(frame.clone()).map_err(|e| e.to_string())?;
        if queries[t] {
            engine.handle_query().map_err(|e| e.to_string())?;
        }
        if !capacities_hold(engine.state(), &config) {
            return Err(format!("capacity exceeded after frame {t} with {config:?}"));
        }
        states.push(engine.serialize_state());
    }
    Ok(states)
}

fn causality_and_capacity() -> Check {
    let mut compared = 0;
    for case in 0..50u64 {
        let mut rng = stream_rng(SEED, 1000 + case);
        let config = random_config(&mut rng);
        let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
        let frames = rng.random_range(12..40);
        let cut = rng.random_range(1..frames);
        let base = random_scene(&mut rng, h, w, frames);
        let other = random_scene(&mut rng, h, w, frames);
        let mut alt: Vec<TokenGrid> = base[..cut].to_vec();
        alt.extend(other[cut..].iter().cloned());
        let q_base: Vec<bool> = (0..frames).map(|_| rng.random_bool(0.2)).collect();
        let mut q_alt = q_base.clone();
        for q in &mut q_alt[cut..] {
            *q = rng.random_bool(0.5);
        }
        let a = trace(config, &base, &q_base)?;
        let b = trace(config, &alt, &q_alt)?;
        if let Some(t) = (0..cut).find(|&t| a[t] != b[t]) {
            return Err(format!(
                "case {case}: state after frame {t} depends on frames >= {cut}"
            ));
        }
        compared += cut;
    }
    Ok(format!(
        "50 streams, {compared} prefix states identical, capacities held"
    ))
}

fn trigger_ground_truth() -> Check {
    let mut checked = 0;
    for f in [0.2, 0.5, 0.8] {
        for gamma in [0.1, 0.4, 0.7, 1.0] {
            let mut spec = SceneSpec::new(SceneKind::SceneCuts, 10, 10, 64, 60);
            spec.cut_period = 10;
            spec.fraction_changed = f;
            spec.seed = SEED;
            let config = MemoryConfig {
                gamma,
                ..MemoryConfig::default()
            };
            let mut engine = MemoryEngine::new(config).map_err(|e| e.to_string())?;
            for frame in spec.generator().map_err(|e| e.to_string())? {
                let t = frame.grid.frame_index() as usize;
                let fired = engine
                    .ingest(frame.grid)
                    .map_err(|e| e.to_string())?
                    .trigger
                    .fired;
                if t == 0 {
                    engine.handle_query().map_err(|e| e.to_string())?;
                }
                let want = spec.is_cut_frame(t) && f > gamma;
                if fired != want {
                    return Err(format!(
                        "f={f} gamma={gamma}: frame {t} fired={fired}, expected {want}"
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("12 (f, gamma) cells, {checked} frames as expected"))
}

fn static_compression() -> Check {
    let (h, w, c_s, c_m) = (4usize, 4usize, 4usize, 8usize);
    let hw = h * w;
    let static_frames = |frames| {
        let spec = SceneSpec {
            seed: SEED,
            ..SceneSpec::new(SceneKind::Static, h, w, 16, frames)
        };
        spec.generate().expect("valid scene")
    };
    let run = |frames: usize| -> Result<MemoryEngine, String> {
        let config = MemoryConfig {
            short_capacity: c_s,
            mid_capacity: c_m,
            long_capacity: 1024,
            ..MemoryConfig::default()
        };
        let mut engine = MemoryEngine::new(config).map_err(|e| e.to_string())?;
        for frame in static_frames(frames) {
            engine.ingest(frame.grid).map_err(|e| e.to_string())?;
        }
        Ok(engine)
    };
    let check = |engine: &MemoryEngine, frames: usize, frame0: usize| -> Result<(), String> {
        let s = engine.state();
        let nonempty = s
            .mid
            .iter()
            .chain(&s.long)
            .find(|e| e.frame_index > 0 && !e.tokens.is_empty());
        if let Some(e) = nonempty {
            return Err(format!("frame {} kept {} tokens", e.frame_index, e.len()));
        }
        let total = (frames * hw) as u64;
        let held = (c_s * hw + frame0) as u64;
        let stats = engine.stats();
        if stats.held_tokens as u64 != held || stats.counters.ingested_tokens != total {
            return Err(format!(
                "{frames} frames: held {} of {}, closed form {held} of {total}",
                stats.held_tokens, total
            ));
        }
        if stats.drop_ratio != 1.0 - held as f64 / total as f64 {
            return Err(format!("drop ratio {} vs closed form", stats.drop_ratio));
        }
        Ok(())
    };

    // Frame 0 still in the mid tier: retained whole.
    let frames = c_s + c_m;
    check(&run(frames)?, frames, hw)?;
    // Frame 0 consolidated into the long tier.
    let frames = c_s + c_m + 5;
    let frame0 = static_frames(1).remove(0).grid.to_entry();
    let anchors = sdc_consolidate(&frame0, OtsuConfig::default())
        .anchors
        .len();
    check(&run(frames)?, frames, anchors)?;
    Ok(format!(
        "held = c_s*HW + frame-0 tokens exactly ({hw} raw, {anchors} anchors)"
    ))
}

fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn median_secs(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[reps / 2]
}

fn complexity_echoes() -> Check {
    let config = OtsuConfig::default();
    let mut tas = Vec::new();
    let mut sdc = Vec::new();
    for side in [8usize, 16, 32, 64] {
        let [prev, cur, next] = random_triple(SEED, 1, side, side, 64);
        let backward = backward_scores(&cur, &prev).expect("same shape");
        let secs = median_secs(11, || {
            let field = ScoreField {
                frame_index: cur.frame_index(),
                backward: Some(backward.clone()),
                forward: Some(forward_scores(&cur, &next).expect("same shape")),
            };
            std::hint::black_box(tas_select(&cur, &field, config).expect("valid scores"));
        });
        tas.push(((side * side) as f64, secs));

        let entry = random_retained(SEED, side, side, side, 64);
        let pairs = sdc_consolidate(&entry, config).pair_count;
        let secs = median_secs(11, || {
            std::hint::black_box(sdc_consolidate(&entry, config));
        });
        sdc.push((pairs as f64, secs));
    }
    let (r_tas, r_sdc) = (r_squared(&tas), r_squared(&sdc));
    let detail = format!("R2 TAS vs HW {r_tas:.4}, SDC vs pairs {r_sdc:.4}");
    if r_tas >= 0.9 && r_sdc >= 0.9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn latency_budget() -> Check {
    let mut spec = SceneSpec::new(SceneKind::MovingBlob, 16, 16, 1024, 120);
    spec.noise_sigma = 0.05;
    spec.seed = SEED;
    let config = MemoryConfig {
        mid_capacity: 8,
        long_capacity: 32,
        ..MemoryConfig::default()
    };
    let mut engine = MemoryEngine::new(config).map_err(|e| e.to_string())?;
    let mut total = Duration::ZERO;
    let mut frames = 0u32;
    for frame in spec.generator().map_err(|e| e.to_string())? {
        total += engine
            .ingest(frame.grid)
            .map_err(|e| e.to_string())?
            .timings
            .total;
        frames += 1;
    }
    let stats = engine.stats();
    if stats.long_frames == 0 {
        return Err("run never reached consolidation".into());
    }
    let mean = total / frames;
    let detail = format!("mean ingest {mean:.2?} over {frames} frames at 16x16x1024");
    if mean <= Duration::from_millis(5) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn zero_overhead_trigger() -> Check {
    let mut spec = SceneSpec::new(SceneKind::SceneCuts, 8, 8, 32, 40);
    spec.cut_period = 7;
    spec.noise_sigma = 0.02;
    spec.seed = SEED;
    let per_pass = evaluations_per_pass(8, 8);
    let config = MemoryConfig {
        short_capacity: 3,
        mid_capacity: 4,
        gamma: 0.3,
        ..MemoryConfig::default()
    };
    let mut engine = MemoryEngine::new(config).map_err(|e| e.to_string())?;
    let mut fired = 0;
    for frame in spec.generator().map_err(|e| e.to_string())? {
        let t = frame.grid.frame_index();
        let out = engine.ingest(frame.grid).map_err(|e| e.to_string())?;
        if t % 5 == 0 {
            engine.handle_query().map_err(|e| e.to_string())?;
        }
        let want = if t == 0 { 0 } else { per_pass };
        if out.distances.trigger != 0 || out.distances.scoring != want {
            return Err(format!(
                "frame {t}: trigger {} calls, scoring {} (expected {want})",
                out.distances.trigger, out.distances.scoring
            ));
        }
        fired += usize::from(out.trigger.fired);
    }
    // The standalone trigger on precomputed scores must not touch the kernel either.
    let [prev, cur, _] = random_triple(SEED, 3, 8, 8, 32);
    let scores = backward_scores(&cur, &prev).expect("same shape");
    let before = distance_calls();
    evaluate_trigger(1, Some(&scores), Some(0), 0.1, OtsuConfig::default());
    if distance_calls() != before {
        return Err("evaluate_trigger computed distances".into());
    }
    if engine.stats().distances.trigger != 0 {
        return Err("cumulative trigger distance count is nonzero".into());
    }
    Ok(format!(
        "0 trigger distance calls over 40 frames ({fired} firings), scoring = {per_pass}/frame"
    ))
}

fn policy_bridge() -> Check {
    let config = OtsuConfig::default();
    let mut kept = 0;
    for trial in 0..100 {
        let (h, w, d) = if trial % 2 == 0 {
            (8, 8, 16)
        } else {
            (12, 10, 24)
        };
        let [prev, cur, next] = random_triple(SEED ^ 0xb1, trial, h, w, d);
        let field = ScoreField {
            frame_index: cur.frame_index(),
            backward: Some(backward_scores(&cur, &prev).expect("same shape")),
            forward: Some(forward_scores(&cur, &next).expect("same shape")),
        };
        let own = |g: &Option<fluxmem_core::ScoreGrid>| {
            otsu_threshold(&g.as_ref().expect("both sides scored").values, config)
                .expect("finite")
                .effective_threshold()
        };
        let fixed = Policy::FixedThreshold {
            backward: own(&field.backward),
            forward: own(&field.forward),
            consolidation: 0.0,
        };
        let a = fixed
            .apply(&cur, Some(&field), config)
            .map_err(|e| e.to_string())?;
        let b = Policy::Fluxmem
            .apply(&cur, Some(&field), config)
            .map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!(
                "trial {trial}: fixed kept {} vs fluxmem {}",
                a.len(),
                b.len()
            ));
        }
        kept += a.len();
    }
    Ok(format!("100 frames bit-identical ({kept} tokens kept)"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("otsu oracle", otsu_oracle),
        ("tas oracle", tas_oracle),
        ("sdc oracle", sdc_oracle),
        ("causality and capacity", causality_and_capacity),
        ("trigger ground truth", trigger_ground_truth),
        ("static-stream compression", static_compression),
        ("complexity echoes", complexity_echoes),
        ("latency budget", latency_budget),
        ("zero-overhead trigger", zero_overhead_trigger),
        ("policy bridge", policy_bridge),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", n + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
