mod codec;
mod config;
mod data;
mod select;
mod serve;

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use embodia_core::eval::{evaluate, Codec, EvalConfig, Prediction};
use embodia_core::qa::{self, load_scenes_dir, task_counts, GenConfig, Generator, QaPair, TaskKind, TemplateBank};
use serde_json::json;

use config::{GlobalArgs, RunConfig};

#[derive(Parser)]
#[command(name = "embodia", version, about = "Spatial QA generation, evaluation and annotation review tools")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    /// Log debug detail to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate QA pairs from a directory of scene files.
    Generate(GenerateArgs),
    /// Score predictions against ground-truth QA pairs.
    Eval(EvalArgs),
    /// Write predictions that repeat the ground truth, for smoke tests.
    EchoPredict(EchoArgs),
    /// Write the built-in synthetic fixture scenes.
    Synth(SynthArgs),
    /// Convert between metric points, grid cells, space tokens and pixels.
    #[command(after_help = codec::GRID_HELP)]
    Codec {
        #[command(subcommand)]
        op: codec::CodecOp,
    },
    /// Run frame selection over a token stack.
    Select(select::SelectArgs),
    /// Write freshly initialized token-bank parameters.
    InitParams(select::InitParamsArgs),
    /// Write a random token stack shaped for a parameter file.
    SynthStack(select::SynthStackArgs),
    /// Serve the review API (and optionally the UI build).
    ReviewServe(serve::ServeArgs),
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// Directory of `*.jsonl` scene files, with calibrations under `calib/`.
    #[arg(long, value_name = "DIR")]
    scenes: PathBuf,
    /// Question template bank (JSON) [default: built-in bank].
    #[arg(long, env = "EMBODIA_TEMPLATES", value_name = "FILE")]
    templates: Option<PathBuf>,
    /// Output JSON Lines file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Comma-separated task names [default: all].
    #[arg(long, value_delimiter = ',', value_parser = parse_task)]
    tasks: Vec<TaskKind>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Predictions, JSON Lines.
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    /// Ground-truth QA pairs, JSON Lines.
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Comma-separated metric names to keep [default: all].
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    /// Distance thresholds in meters.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    k: Vec<f64>,
    /// Report path [default: stdout].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EchoStyle {
    /// Text plus structured fields.
    Full,
    /// Text only; locations are decoded from space tokens.
    Text,
}

#[derive(clap::Args)]
struct EchoArgs {
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    style: EchoStyle,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    TaskKind::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
        format!("unknown task {s:?}; expected one of {}", names.join(", "))
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_generate(run: &RunConfig, args: &GenerateArgs) -> Result<()> {
    if !args.scenes.is_dir() {
        bail!("scene directory {} does not exist", args.scenes.display());
    }
    let bank = match args.templates.as_ref().or(run.file.templates.as_ref()) {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TemplateBank::from_json(&text).with_context(|| format!("loading templates {}", p.display()))?
        }
        None => TemplateBank::builtin(),
    };
    let (scenes, calibs) = load_scenes_dir(&args.scenes)?;
    let vocab = run.space_vocab()?;
    let tasks: BTreeSet<TaskKind> = if args.tasks.is_empty() {
        TaskKind::ALL.into_iter().collect()
    } else {
        args.tasks.iter().copied().collect()
    };
    let generator = Generator {
        spec: &run.grid,
        vocab: &vocab,
        bank: &bank,
        calibs: &calibs,
        config: GenConfig {
            seed: run.seed,
            tasks: tasks.clone(),
            ..GenConfig::default()
        },
    };
    let pairs = generator.generate(&scenes)?;
    let mut w = create(&args.out)?;
    qa::write_jsonl(&pairs, &mut w)?;
    w.flush()?;

    let counts: serde_json::Map<String, serde_json::Value> = task_counts(&pairs, &tasks)
        .into_iter()
        .map(|(t, n)| (t.name().to_string(), json!(n)))
        .collect();
    let summary = json!({
        "format": "embodia-generate/1",
        "seed": run.seed,
        "scenes": scenes.len(),
        "total": pairs.len(),
        "counts": counts,
    });
    let mut side = create(&sidecar(&args.out))?;
    serde_json::to_writer_pretty(&mut side, &summary)?;
    side.flush()?;
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&summary)?)?;
    tracing::info!(pairs = pairs.len(), scenes = scenes.len(), "generation done");
    Ok(())
}

/// `out.jsonl` -> `out.meta.json`
fn sidecar(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn cmd_eval(run: &RunConfig, args: &EvalArgs) -> Result<()> {
    let preds: Vec<Prediction> = data::read_jsonl(&args.predictions)?;
    let gts: Vec<QaPair> = data::read_jsonl(&args.gt)?;
    let vocab = run.space_vocab()?;
    let codec = Codec {
        spec: &run.grid,
        vocab: &vocab,
    };
    let config = EvalConfig {
        k_values: args.k.clone(),
        metrics: args.metrics.iter().cloned().collect(),
    };
    let mut report = evaluate(&preds, &gts, &config, Some(&codec))?;
    report.config.seed = Some(run.seed);
    let text = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => writeln!(io::stdout().lock(), "{text}")?,
    }
    for (name, m) in &report.metrics {
        tracing::info!("{name}: {}", m.value);
    }
    Ok(())
}

fn cmd_echo(args: &EchoArgs) -> Result<()> {
    let gts: Vec<QaPair> = data::read_jsonl(&args.gt)?;
    let mut w = create(&args.out)?;
    for gt in &gts {
        let p = match args.style {
            EchoStyle::Full => Prediction::echo(gt),
            EchoStyle::Text => Prediction {
                id: gt.id.clone(),
                text: Some(gt.answer.clone()),
                center: None,
                category: None,
                track: None,
                trajectory: None,
            },
        };
        serde_json::to_writer(&mut w, &p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_synth(run: &RunConfig, args: &SynthArgs) -> Result<()> {
    let (scenes, calibs) = qa::synthetic::fixture_scenes(run.seed)?;
    for scene in &scenes {
        let mut w = create(&args.out.join(format!("{}.jsonl", scene.id)))?;
        for f in &scene.frames {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    for (id, calib) in &calibs {
        let mut w = create(&args.out.join("calib").join(format!("{id}.json")))?;
        serde_json::to_writer_pretty(&mut w, calib)?;
        w.flush()?;
    }
    eprintln!("wrote {} scenes to {}", scenes.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let run = RunConfig::resolve(&cli.global)?;
    match cli.command {
        Command::Generate(a) => cmd_generate(&run, &a),
        Command::Eval(a) => cmd_eval(&run, &a),
        Command::EchoPredict(a) => cmd_echo(&a),
        Command::Synth(a) => cmd_synth(&run, &a),
        Command::Codec { op } => codec::run(&run, op, io::stdin().lock(), io::stdout().lock()),
        Command::Select(a) => select::run_select(&run, &a),
        Command::InitParams(a) => select::run_init(&run, &a),
        Command::SynthStack(a) => select::run_synth_stack(&run, &a),
        Command::ReviewServe(a) => serve::run(&run, &a),
    }
}

/// The reader went away, e.g. `embodia ... | head`.
fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose {
        tracing::Level::DEBUG
    } else {
        tracing::Level::INFO
    };
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_max_level(level)
        .with_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
