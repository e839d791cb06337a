//! `oracle`: compare the fast threshold, selection and consolidation paths
//! against their brute-force references on seeded inputs.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};
use clap::Args;
use fluxmem_core::oracle::{
    check_otsu, check_sdc, check_tas, random_retained, random_samples, random_triple, Mismatch,
};
use fluxmem_core::scoring::{backward_scores, forward_scores};
use fluxmem_core::tas::tas_select;
use fluxmem_core::{OtsuConfig, ScoreField};

use crate::source::load_spec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [height, width, dim] if height > 0 && width > 0 && dim > 0 => {
                Ok(Size { height, width, dim })
            }
            _ => Err(format!("expected HxWxD with positive sides, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Grid sizes for the selection and consolidation checks.
    #[arg(long, value_delimiter = ',', default_value = "8x8x16,16x16x32")]
    pub sizes: Vec<Size>,
    /// Threshold trials; selection and consolidation run a fifth as many.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    /// Also check every interior frame triple of this scene.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct Tally {
    pub name: &'static str,
    pub passed: usize,
    pub failures: Vec<Mismatch>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            ..Self::default()
        }
    }

    fn record<T>(&mut self, result: Result<T, Mismatch>) {
        match result {
            Ok(_) => self.passed += 1,
            Err(m) => self.failures.push(m),
        }
    }
}

pub fn oracle(args: &OracleArgs) -> Result<Vec<Tally>> {
    let config = OtsuConfig::with_bins(args.bins);
    let mut otsu = Tally::new("otsu");
    for trial in 0..args.trials {
        otsu.record(check_otsu(
            trial,
            &random_samples(args.seed, trial),
            config,
            0.999,
        ));
    }
    let structural = (args.trials / 5).max(1);
    let (mut tas, mut sdc) = (Tally::new("tas"), Tally::new("sdc"));
    for trial in 0..structural {
        let s = args.sizes[trial % args.sizes.len()];
        tas.record(check_tas(
            trial,
            &random_triple(args.seed, trial, s.height, s.width, s.dim),
            config,
        ));
        sdc.record(check_sdc(
            trial,
            &random_retained(args.seed, trial, s.height, s.width, s.dim),
            config,
            1e-6,
        ));
    }
    let mut tallies = vec![otsu, tas, sdc];

    if let Some(path) = &args.spec {
        let frames: Vec<_> = load_spec(path)?
            .generate()?
            .into_iter()
            .map(|f| f.grid)
            .collect();
        let (mut scene_tas, mut scene_sdc) = (Tally::new("scene tas"), Tally::new("scene sdc"));
        for (trial, w) in frames.windows(3).enumerate() {
            let triple = [w[0].clone(), w[1].clone(), w[2].clone()];
            scene_tas.record(check_tas(trial, &triple, config));
            let field = ScoreField {
                frame_index: w[1].frame_index(),
                backward: Some(backward_scores(&w[1], &w[0])?),
                forward: Some(forward_scores(&w[1], &w[2])?),
            };
            let survivors = tas_select(&w[1], &field, config)?.entry;
            scene_sdc.record(check_sdc(trial, &survivors, config, 1e-6));
        }
        tallies.push(scene_tas);
        tallies.push(scene_sdc);
    }

    let mut failed = 0;
    for t in &tallies {
        let status = if t.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        println!(
            "{status} {}: {}/{} agree",
            t.name,
            t.passed,
            t.passed + t.failures.len()
        );
        for m in &t.failures {
            println!("  {m}");
        }
        failed += t.failures.len();
    }
    if failed > 0 {
        bail!("{failed} oracle mismatches");
    }
    Ok(tallies)
}
