use fluxmem_core::engine::{CapacityUnit, MemoryConfig, MemoryEngine, Tier};
use fluxmem_core::policy::Policy;
use fluxmem_core::synth::{SceneKind, SceneSpec};
use fluxmem_core::token::TokenGrid;
use proptest::prelude::*;

fn scene(kind: SceneKind, frames: usize, sigma: f64, seed: u64) -> Vec<TokenGrid> {
    let mut spec = SceneSpec::new(kind, 6, 6, 16, frames);
    spec.noise_sigma = sigma;
    spec.blob_size = 2;
    spec.cut_period = 5;
    spec.seed = seed;
    spec.generate()
        .unwrap()
        .into_iter()
        .map(|f| f.grid)
        .collect()
}

fn kind_strategy() -> impl Strategy<Value = SceneKind> {
    prop_oneof![
        Just(SceneKind::Static),
        Just(SceneKind::MovingBlob),
        Just(SceneKind::SceneCuts),
        Just(SceneKind::Noise),
    ]
}

fn policy_strategy() -> impl Strategy<Value = Policy> {
    prop_oneof![
        Just(Policy::Fluxmem),
        Just(Policy::Fifo),
        (0.0f64..=1.0).prop_map(|ratio| Policy::Uniform { ratio }),
        (0.0f64..=1.0, any::<u64>()).prop_map(|(ratio, seed)| Policy::Random { ratio, seed }),
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(b, f, c)| Policy::FixedThreshold {
            backward: b,
            forward: f,
            consolidation: c
        }),
    ]
}

fn fired_frames(frames: &[TokenGrid], gamma: f64) -> Vec<u64> {
    let config = MemoryConfig {
        gamma,
        ..MemoryConfig::default()
    };
    let mut engine = MemoryEngine::new(config).unwrap();
    let mut fired = Vec::new();
    for frame in frames {
        let t = frame.frame_index();
        if engine.ingest(frame.clone()).unwrap().trigger.fired {
            fired.push(t);
        }
        if t == 0 {
            engine.handle_query().unwrap();
        }
    }
    fired
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn token_accounting_balances(
        kind in kind_strategy(),
        policy in policy_strategy(),
        sigma in prop_oneof![Just(0.0), Just(0.05)],
        c_s in 2usize..5,
        c_m in 1usize..5,
        c_l in 1usize..5,
        tokens in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let unit = if tokens { CapacityUnit::Tokens } else { CapacityUnit::Frames };
        let scale = if tokens { 30 } else { 1 };
        let config = MemoryConfig {
            short_capacity: c_s,
            mid_capacity: c_m * scale,
            long_capacity: c_l * scale,
            capacity_unit: unit,
            policy,
            ..MemoryConfig::default()
        };
        let mut engine = MemoryEngine::new(config).unwrap();
        let mut last = engine.stats().counters;
        for frame in scene(kind, 24, sigma, seed) {
            engine.ingest(frame).unwrap();
            let stats = engine.stats();
            let c = stats.counters;
            prop_assert_eq!(
                c.ingested_tokens,
                stats.held_tokens as u64 + c.selection_dropped + c.consolidation_merged + c.evicted
            );
            prop_assert!(c.selection_dropped >= last.selection_dropped);
            prop_assert!(c.consolidation_merged >= last.consolidation_merged);
            prop_assert!(c.evicted >= last.evicted);
            prop_assert!((0.0..=1.0).contains(&stats.drop_ratio));
            last = c;

            let context = engine.snapshot().unwrap();
            prop_assert_eq!(context.len(), stats.held_tokens);
            let weight: u64 = context.tokens.iter().map(|t| u64::from(t.weight)).sum();
            prop_assert!(weight >= context.len() as u64);
            // long, then mid, then short; oldest first within each tier
            let order: Vec<(Tier, u64)> = context.tokens.iter().map(|t| (t.tier, t.origin.frame_index)).collect();
            prop_assert!(order.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn gamma_nests_firings(seed in any::<u64>(), fraction in 0.05f64..0.95, g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let mut spec = SceneSpec::new(SceneKind::SceneCuts, 6, 6, 16, 30);
        spec.cut_period = 4;
        spec.fraction_changed = fraction;
        spec.noise_sigma = 0.03;
        spec.seed = seed;
        let frames: Vec<TokenGrid> = spec.generate().unwrap().into_iter().map(|f| f.grid).collect();
        let strict = fired_frames(&frames, hi);
        let loose = fired_frames(&frames, lo);
        prop_assert!(strict.iter().all(|t| loose.contains(t)));
        prop_assert!(fired_frames(&frames, 1.0).is_empty());
    }
}

#[test]
fn replay_is_deterministic() {
    let frames = scene(SceneKind::MovingBlob, 40, 0.05, 9);
    let run = || {
        let mut engine = MemoryEngine::new(MemoryConfig {
            mid_capacity: 6,
            ..MemoryConfig::default()
        })
        .unwrap();
        for f in &frames {
            engine.ingest(f.clone()).unwrap();
        }
        engine.serialize_state()
    };
    assert_eq!(run(), run());
}

#[test]
fn cut_content_survives_selection() {
    let mut spec = SceneSpec::new(SceneKind::SceneCuts, 8, 8, 32, 30);
    spec.cut_period = 6;
    spec.fraction_changed = 0.3;
    spec.seed = 5;
    let config = MemoryConfig {
        short_capacity: 2,
        mid_capacity: 64,
        ..MemoryConfig::default()
    };
    let mut engine = MemoryEngine::new(config).unwrap();
    let mut changed_on_cut = Vec::new();
    for frame in spec.generator().unwrap() {
        let t = frame.grid.frame_index();
        if spec.is_cut_frame(t as usize) {
            changed_on_cut.push((t, frame.changed.clone()));
        }
        engine.ingest(frame.grid).unwrap();
    }
    let state = engine.state();
    for (t, changed) in changed_on_cut {
        let entry = state
            .mid
            .iter()
            .find(|e| e.frame_index == t)
            .expect("cut frame reached mid tier");
        let kept: Vec<usize> = entry
            .tokens
            .iter()
            .map(|k| k.origin.row as usize * 8 + k.origin.col as usize)
            .collect();
        for (cell, _) in changed.iter().enumerate().filter(|(_, &c)| c) {
            assert!(kept.contains(&cell), "frame {t} lost changed cell {cell}");
        }
    }
}

#[test]
fn fifo_holds_every_token_until_eviction() {
    let frames = scene(SceneKind::Noise, 10, 0.0, 1);
    let config = MemoryConfig {
        short_capacity: 2,
        mid_capacity: 3,
        long_capacity: 100,
        policy: Policy::Fifo,
        ..MemoryConfig::default()
    };
    let mut engine = MemoryEngine::new(config).unwrap();
    for f in frames {
        engine.ingest(f).unwrap();
    }
    let stats = engine.stats();
    assert_eq!(stats.held_tokens, 10 * 36);
    assert_eq!(stats.drop_ratio, 0.0);
    assert_eq!(
        (stats.short_frames, stats.mid_frames, stats.long_frames),
        (2, 3, 5)
    );
}
