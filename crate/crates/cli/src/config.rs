//! Run configuration. Each value is taken from the first source that sets
//! it: command-line flag, environment variable, JSON config file, default.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use embodia_core::spatial::{parse_vocab_frequencies, synthetic_base_vocab, GridSpec, SpaceVocab};
use embodia_core::token_bank::BankConfig;
use serde::Deserialize;

/// Size of the generated base vocabulary used when no frequency file is given.
pub const SYNTHETIC_VOCAB: usize = 1000;

/// Contents of the JSON config file. Every field is optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub vocab: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub bank: Option<BankConfig>,
    pub review: ReviewFileConfig,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewFileConfig {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub store_dir: Option<PathBuf>,
    pub captioner_url: Option<String>,
    pub captioner_timeout_s: Option<f64>,
    pub captioner_retries: Option<u32>,
    pub token: Option<String>,
    pub ui_dir: Option<PathBuf>,
    pub snapshot_every: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON config file.
    #[arg(long, global = true, env = "EMBODIA_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for everything random [default: 0].
    #[arg(long, global = true, env = "EMBODIA_SEED")]
    pub seed: Option<u64>,
    /// Grid cell size in meters [default: 1].
    #[arg(long, global = true, env = "EMBODIA_GRID_RESOLUTION", value_name = "M")]
    pub resolution: Option<f64>,
    /// Lower grid corner x,y,z in meters [default: -50,-50,-5].
    #[arg(long, global = true, env = "EMBODIA_GRID_MIN", value_name = "X,Y,Z", value_parser = parse_triple, allow_hyphen_values = true)]
    pub extent_min: Option<[f64; 3]>,
    /// Upper grid corner x,y,z in meters [default: 50,50,5].
    #[arg(long, global = true, env = "EMBODIA_GRID_MAX", value_name = "X,Y,Z", value_parser = parse_triple, allow_hyphen_values = true)]
    pub extent_max: Option<[f64; 3]>,
    /// Token frequency file (token<TAB>count per line) the space vocabulary
    /// is drawn from [default: a generated 1000-token vocabulary].
    #[arg(long, global = true, env = "EMBODIA_VOCAB", value_name = "FILE")]
    pub vocab: Option<PathBuf>,
}

pub fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected three comma-separated numbers, got {}", v.len()))
}

/// Resolved settings shared by the subcommands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub vocab: Option<PathBuf>,
    pub file: FileConfig,
}

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let base = file.grid.unwrap_or_default();
        let grid = GridSpec::new(
            args.resolution.unwrap_or(base.resolution),
            args.extent_min.unwrap_or(base.extent_min),
            args.extent_max.unwrap_or(base.extent_max),
        )
        .context("invalid grid")?;
        let vocab = args.vocab.clone().or_else(|| file.vocab.clone());
        if let Some(v) = &vocab {
            if !v.is_file() {
                bail!("vocabulary file {} does not exist", v.display());
            }
        }
        Ok(Self {
            seed: args.seed.or(file.seed).unwrap_or(0),
            grid,
            vocab,
            file,
        })
    }

    pub fn space_vocab(&self) -> Result<SpaceVocab> {
        let base = match &self.vocab {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                parse_vocab_frequencies(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => synthetic_base_vocab(SYNTHETIC_VOCAB),
        };
        SpaceVocab::build(&base, &self.grid).context("building the space vocabulary")
    }
}
