//! Frame selection over a stored token stack.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use embodia_core::tensor::Matrix;
use embodia_core::token_bank::{
    hard_select, manual_select, soft_select, BankConfig, BankParams, Checkpoint, Selected, SelectionOutput,
    SinusoidalTimestamps, TextEncoder, TextualTimestamps, TokenStack, TokenStackFile,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::data::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Attention over all tokens with textual timestamps.
    Soft,
    /// Top-N frames by prompt similarity.
    Hard,
    /// Frames nearest to the times given with --at.
    Manual,
    /// Soft selection with sinusoidal timestamps instead of textual ones.
    SinusoidalAblation,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Token stack JSON: `{"timestamps": [...], "frames": [[[...]]]}`.
    #[arg(long, value_name = "FILE")]
    pub stack: PathBuf,
    /// Question text the selection is conditioned on.
    #[arg(long)]
    pub prompt: String,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Token-bank checkpoint written by `init-params`.
    #[arg(long, value_name = "FILE")]
    pub params: PathBuf,
    /// Frames to keep in hard mode.
    #[arg(long, default_value_t = 1)]
    pub top: usize,
    /// Comma-separated target times for manual mode.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Vec<f64>,
    /// Include the selected features or tokens in the output.
    #[arg(long)]
    pub with_tokens: bool,
    /// Output path [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitParamsArgs {
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Visual feature width [default: 64].
    #[arg(long)]
    pub visual_dim: Option<usize>,
    /// Text embedding width [default: 32].
    #[arg(long)]
    pub text_dim: Option<usize>,
    /// Learned selection queries [default: 128].
    #[arg(long)]
    pub queries: Option<usize>,
    /// Attention heads [default: 4].
    #[arg(long)]
    pub heads: Option<usize>,
    /// Slot tokens per frame [default: 32].
    #[arg(long)]
    pub tokens_per_frame: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthStackArgs {
    #[arg(long, value_name = "FILE")]
    pub params: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Seconds between frames.
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn uniform_stack(config: &BankConfig, frames: usize, step: f64, seed: u64) -> Result<TokenStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = (0..frames)
        .map(|_| Matrix::seeded_uniform(config.tokens_per_frame, config.visual_dim, 1, &mut rng))
        .collect();
    Ok(TokenStack::new(tokens, (0..frames).map(|i| i as f64 * step).collect())?)
}

fn load_params(path: &PathBuf) -> Result<BankParams> {
    if !path.is_file() {
        bail!("parameter file {} does not exist", path.display());
    }
    let ckpt: Checkpoint = read_json(path)?;
    BankParams::from_checkpoint(&ckpt).with_context(|| format!("loading {}", path.display()))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn describe(out: &SelectionOutput, mode: Mode, seed: u64, with_tokens: bool) -> serde_json::Value {
    let mut v = json!({
        "mode": mode.to_possible_value().expect("named").get_name(),
        "params_seed": seed,
        "relevance": out.relevance,
    });
    match &out.selected {
        Selected::Features(f) => {
            v["features_shape"] = json!([f.rows(), f.cols()]);
            if with_tokens {
                v["features"] = json!(rows(f));
            }
        }
        Selected::Frames { indices, tokens } => {
            v["indices"] = json!(indices);
            if with_tokens {
                v["tokens"] = json!(tokens.iter().map(rows).collect::<Vec<_>>());
            }
        }
    }
    v
}

pub fn select(bank: &BankParams, stack: &TokenStack, prompt: &str, args: &SelectArgs) -> Result<SelectionOutput> {
    let prompt_m = bank.text.encode_words(prompt).context("encoding the prompt")?;
    Ok(match args.mode {
        Mode::Manual => {
            if args.at.is_empty() {
                bail!("manual mode needs --at");
            }
            manual_select(stack, &args.at)?
        }
        Mode::Hard => hard_select(bank, &prompt_m, stack, &bank.project(stack)?, args.top)?,
        Mode::Soft => {
            let ts = TextualTimestamps(&bank.text);
            soft_select(bank, &prompt_m, stack, &bank.project(stack)?, &ts)?
        }
        Mode::SinusoidalAblation => {
            let ts = SinusoidalTimestamps {
                dim: bank.config.text_dim,
            };
            soft_select(bank, &prompt_m, stack, &bank.project(stack)?, &ts)?
        }
    })
}

pub fn run_select(_run: &RunConfig, args: &SelectArgs) -> Result<()> {
    let bank = load_params(&args.params)?;
    let file: TokenStackFile = read_json(&args.stack)?;
    let stack = TokenStack::try_from(file).context("invalid token stack")?;
    let out = select(&bank, &stack, &args.prompt, args)?;
    let text = serde_json::to_string_pretty(&describe(&out, args.mode, bank.config.seed, args.with_tokens))?;
    match &args.out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

pub fn run_init(run: &RunConfig, args: &InitParamsArgs) -> Result<()> {
    let base = run.file.bank.unwrap_or_default();
    let config = BankConfig {
        visual_dim: args.visual_dim.unwrap_or(base.visual_dim),
        text_dim: args.text_dim.unwrap_or(base.text_dim),
        n_queries: args.queries.unwrap_or(base.n_queries),
        heads: args.heads.unwrap_or(base.heads),
        tokens_per_frame: args.tokens_per_frame.unwrap_or(base.tokens_per_frame),
        slot_iters: base.slot_iters,
        seed: run.seed,
    };
    let params = BankParams::init(&config)?;
    let text = serde_json::to_string(&params.to_checkpoint())?;
    std::fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("wrote parameters to {}", args.out.display());
    Ok(())
}

pub fn run_synth_stack(run: &RunConfig, args: &SynthStackArgs) -> Result<()> {
    let bank = load_params(&args.params)?;
    if args.frames == 0 {
        bail!("--frames must be positive");
    }
    let stack = uniform_stack(&bank.config, args.frames, args.step, run.seed)?;
    let text = serde_json::to_string(&TokenStackFile::from(&stack))?;
    std::fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
