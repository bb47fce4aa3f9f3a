use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use focal_core::config::{Ablations, ModelConfig};
use focal_core::corpus::{load_dataset, EmbeddingFile, Example};
use focal_core::extract::{extract_example, Triplet};
use focal_core::graph::{build_supergraph, GraphOptions, GraphStats};
use focal_core::train::{evaluate, predict, train, write_metrics, Checkpoint, TrainOptions};
use focal_core::Error;

/// Fact-driven multiple-choice reasoning over parsed text.
#[derive(Debug, Parser)]
#[command(name = "focal", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract fact triplets as JSON lines.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Only check the dataset (and embeddings, if given) and report.
        #[arg(long)]
        validate_only: bool,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build supergraphs and print statistics or DOT.
    Graph {
        #[command(flatten)]
        common: Common,
        /// Emit one DOT digraph per example.
        #[arg(long, conflicts_with = "stats")]
        dot: bool,
        /// Emit node and edge counts as JSON lines (the default).
        #[arg(long)]
        stats: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write checkpoint, metrics and manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Labelled dev set used to select the best checkpoint.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Stop once training accuracy reaches this value.
        #[arg(long)]
        target_train_acc: Option<f64>,
    },
    /// Report accuracy of a checkpoint on a labelled dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write logits and predictions as JSON lines.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Dataset in the parsed interchange format.
    #[arg(long)]
    data: PathBuf,
    /// JSON model configuration; unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated ablation flags, added to those in the config.
    #[arg(long, value_name = "FLAG,...")]
    ablate: Option<String>,
    /// Precomputed token vectors (FEMB file).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl Common {
    fn model_config(&self) -> Result<ModelConfig> {
        let mut config = match &self.config {
            Some(path) => ModelConfig::load(path)?,
            None => ModelConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(list) = &self.ablate {
            config.ablations = config.ablations.union(Ablations::parse_list(list)?);
        }
        config.validate()?;
        Ok(config)
    }

    fn dataset(&self) -> Result<Vec<Example>> {
        load_dataset(&self.data).with_context(|| format!("loading {}", self.data.display()))
    }

    fn embeddings(&self, examples: &[Example]) -> Result<Option<EmbeddingFile>> {
        let Some(path) = &self.embeddings else {
            return Ok(None);
        };
        let file =
            EmbeddingFile::read(path).with_context(|| format!("loading {}", path.display()))?;
        file.check_coverage(examples)?;
        Ok(Some(file))
    }

    /// Settings that only make sense when training; warn rather than silently drop them.
    fn warn_unused_for_checkpoint(&self) {
        if self.config.is_some() || self.seed.is_some() || self.ablate.is_some() {
            log::warn!("--config, --seed and --ablate are ignored; the checkpoint carries its configuration");
        }
    }
}

#[derive(Serialize)]
struct TripletLine<'a> {
    example_id: &'a str,
    #[serde(flatten)]
    triplet: &'a Triplet,
}

#[derive(Serialize)]
struct StatsLine<'a> {
    example_id: &'a str,
    #[serde(flatten)]
    stats: GraphStats,
}

#[derive(Serialize)]
struct ValidationSummary {
    valid: bool,
    examples: usize,
    sentences: usize,
    embeddings_checked: bool,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json_line(w: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn run_extract(common: &Common, validate_only: bool, out: Option<&Path>) -> Result<()> {
    let examples = common.dataset()?;
    let mut w = output(out)?;
    if validate_only {
        let embeddings = common.embeddings(&examples)?;
        for ex in &examples {
            extract_example(ex)?;
        }
        json_line(
            &mut w,
            &ValidationSummary {
                valid: true,
                examples: examples.len(),
                sentences: examples.iter().map(|e| e.sentences().count()).sum(),
                embeddings_checked: embeddings.is_some(),
            },
        )?;
    } else {
        for ex in &examples {
            for triplet in &extract_example(ex)? {
                json_line(
                    &mut w,
                    &TripletLine {
                        example_id: &ex.example_id,
                        triplet,
                    },
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run_graph(common: &Common, dot: bool, out: Option<&Path>) -> Result<()> {
    let config = common.model_config()?;
    let opts = GraphOptions::from_ablations(&config.ablations);
    let examples = common.dataset()?;
    let mut w = output(out)?;
    for ex in &examples {
        let graph = build_supergraph(ex, &extract_example(ex)?, opts);
        if dot {
            writeln!(w, "// {}", ex.example_id)?;
            w.write_all(graph.to_dot().as_bytes())?;
        } else {
            json_line(
                &mut w,
                &StatsLine {
                    example_id: &ex.example_id,
                    stats: graph.stats(),
                },
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_train(common: &Common, dev: Option<&Path>, out: &Path, target: Option<f64>) -> Result<()> {
    let config = common.model_config()?;
    let train_set = common.dataset()?;
    let dev_set = dev
        .map(|p| load_dataset(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let mut all: Vec<Example> = train_set.clone();
    all.extend(dev_set.iter().flatten().cloned());
    let embeddings = common.embeddings(&all)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let checkpoint_path = out.join("checkpoint.json");
    let outcome = train(
        &config,
        &train_set,
        dev_set.as_deref(),
        embeddings.as_ref(),
        &TrainOptions {
            stop_at_train_accuracy: target,
            checkpoint_path: Some(checkpoint_path.clone()),
        },
    )?;
    write_metrics(out.join("metrics.jsonl"), &outcome.metrics)?;
    fs::write(
        out.join("manifest.json"),
        outcome.manifest.to_json_pretty() + "\n",
    )
    .with_context(|| format!("writing manifest in {}", out.display()))?;

    let last = outcome.metrics.last().expect("at least one epoch");
    eprintln!(
        "trained {} epochs, final loss {:.5}, checkpoint from epoch {}{} -> {}",
        outcome.epochs_run,
        last.loss,
        outcome.checkpoint.epoch,
        outcome
            .checkpoint
            .best_dev_acc
            .map(|a| format!(" (dev acc {a:.4})"))
            .unwrap_or_default(),
        checkpoint_path.display()
    );
    Ok(())
}

fn load_for_inference(
    common: &Common,
    checkpoint: &Path,
) -> Result<(Checkpoint, Vec<Example>, Option<EmbeddingFile>)> {
    common.warn_unused_for_checkpoint();
    let ck = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let examples = common.dataset()?;
    let embeddings = common.embeddings(&examples)?;
    Ok((ck, examples, embeddings))
}

fn run_eval(common: &Common, checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let (ck, examples, embeddings) = load_for_inference(common, checkpoint)?;
    let report = evaluate(&ck.model()?, &examples, embeddings.as_ref())?;
    let mut w = output(out)?;
    json_line(&mut w, &report)?;
    w.flush()?;
    Ok(())
}

fn run_predict(common: &Common, checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let (ck, examples, embeddings) = load_for_inference(common, checkpoint)?;
    let mut w = output(out)?;
    for p in predict(&ck.model()?, &examples, embeddings.as_ref())? {
        json_line(&mut w, &p)?;
    }
    w.flush()?;
    Ok(())
}

/// 2 for bad input, 3 for a numeric abort, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err.chain().find_map(|e| e.downcast_ref::<Error>());
    match core {
        Some(Error::Numeric(_)) => 3,
        Some(
            Error::Validation { .. }
            | Error::Coverage { .. }
            | Error::Dimension { .. }
            | Error::MalformedParse { .. }
            | Error::Parse { .. }
            | Error::Config(_),
        ) => 2,
        _ => 1,
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|e| e.downcast_ref::<io::Error>())
        .any(|e| e.kind() == io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Extract {
            common,
            validate_only,
            out,
        } => run_extract(common, *validate_only, out.as_deref()),
        Command::Graph {
            common, dot, out, ..
        } => run_graph(common, *dot, out.as_deref()),
        Command::Train {
            common,
            dev,
            out,
            target_train_acc,
        } => run_train(common, dev.as_deref(), out, *target_train_acc),
        Command::Eval {
            common,
            checkpoint,
            out,
        } => run_eval(common, checkpoint, out.as_deref()),
        Command::Predict {
            common,
            checkpoint,
            out,
        } => run_predict(common, checkpoint, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // downstream reader closed early, as with `| head`
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
