//! Frame sources (scene specs or FMTS files) and the query timeline sidecar.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use fluxmem_core::stream::read_stream;
use fluxmem_core::synth::SceneSpec;
use fluxmem_core::TokenGrid;
use serde::Deserialize;

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Scene spec file (key = value lines) to synthesize frames from.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// FMTS stream file.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

pub type Frames = Box<dyn Iterator<Item = Result<TokenGrid>>>;

impl SourceArgs {
    pub fn describe(&self) -> String {
        match (&self.spec, &self.input) {
            (Some(p), _) => format!("spec:{}", p.display()),
            (_, Some(p)) => format!("fmts:{}", p.display()),
            _ => unreachable!("clap requires one source"),
        }
    }

    pub fn open(&self) -> Result<Frames> {
        if let Some(path) = &self.spec {
            let spec = load_spec(path)?;
            let frames = spec.generator()?.map(|f| Ok(f.grid));
            return Ok(Box::new(frames));
        }
        let path = self.input.as_ref().expect("clap requires one source");
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let reader = read_stream(BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(Box::new(reader.map(|r| r.map_err(Into::into))))
    }

    pub fn collect(&self) -> Result<Vec<TokenGrid>> {
        self.open()?.collect()
    }
}

pub fn load_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SceneSpec::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Deserialize)]
struct EventRecord {
    frame: u64,
    event: String,
}

/// Frames after which a query is issued, from a JSON-lines sidecar.
pub fn load_events(path: &Path) -> Result<BTreeSet<u64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut queries = BTreeSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad event record", path.display(), n + 1))?;
        if record.event != "query" {
            bail!(
                "{}:{}: unknown event {:?}",
                path.display(),
                n + 1,
                record.event
            );
        }
        queries.insert(record.frame);
    }
    Ok(queries)
}
