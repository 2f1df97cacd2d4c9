//! Command-line front end.

mod checkpoint;
mod config;
pub mod gradcheck;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ManifestEntry, MAGIC, VERSION};
pub use config::{flatten, parse_override_value, DataConfig, OutputConfig, RunConfig};

use crate::data::{
    load_embeddings, parse_corpus, split_default, synth_generate, write_columns, write_corpus,
    CorpusFormat, SynthSpec, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{attention_traces, evaluate, export_attention, predict_corpus, AttentionFormat};
use crate::model::{Aggregator, Mode};
use crate::optim::{train, EpochRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "jointslu",
    version,
    about = "Joint slot filling and intent classification with sparse attention",
    after_help = "Any configuration key can be overridden with `--<dotted.key> <value>`, \
                  e.g. `--train.adadelta.lr 1.0` or `--model.hidden_dim 64`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus training curves.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Tag and classify an unlabeled corpus.
    Predict(PredictArgs),
    /// Finite-difference check of the joint loss on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Export per-token attention weights.
    Attention(AttentionArgs),
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    aggregator: Option<Aggregator>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

impl ModelFlags {
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        if let Some(m) = self.mode {
            out.push(("model.mode".into(), Value::String(m.name().into())));
        }
        if let Some(a) = self.aggregator {
            out.push(("model.aggregator".into(), serde_json::to_value(a).expect("enum")));
        }
        if let Some(r) = self.rho {
            out.push(("model.sparsity.rho".into(), Value::from(r)));
        }
        if let Some(b) = self.beta {
            out.push(("model.sparsity.beta".into(), Value::from(b)));
        }
        out
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON configuration (flat dotted keys or nested objects).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    format: Option<CorpusFormat>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "columns")]
    format: CorpusFormat,
    /// Also write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "columns")]
    format: CorpusFormat,
    /// Output file (column format); standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    sentences: usize,
    #[arg(long, default_value = "columns")]
    format: CorpusFormat,
    /// Output file; with `--split`, a directory receiving train/dev/test.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write an 80/10/10 train/dev/test split into `--out`.
    #[arg(long)]
    split: bool,
    /// Per-token keyword flags as JSON lines.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Intent-specific openers with shared slot cues, so that some slot
    /// labels depend on the intent.
    #[arg(long)]
    intent_cued: bool,
}

#[derive(Args, Debug)]
struct AttentionArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "columns")]
    format: CorpusFormat,
    /// `json` (one object per line) or `ansi` (shaded terminal output).
    #[arg(long, default_value = "json")]
    render: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Unsupported(_) | Error::InvalidInput(_) => EXIT_USAGE,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Pulls `--a.b value` pairs out of `argv`.
fn split_dotted(argv: Vec<String>) -> std::result::Result<(Vec<String>, Vec<(String, Value)>), String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut overrides = Vec::new();
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--") {
            Some(key) if key.contains('.') && !key.starts_with('.') => {
                let (key, value) = match key.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let v = it.next().ok_or_else(|| format!("--{key} needs a value"))?;
                        (key.to_string(), v)
                    }
                };
                overrides.push((key, parse_override_value(&value)));
            }
            _ => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Errors go to `err` as one line; nothing panics on bad input.
pub fn run(argv: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (argv, overrides) = match split_dotted(argv) {
        Ok(v) => v,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    if !overrides.is_empty() && !matches!(cli.command, Command::Train(_)) {
        let _ = writeln!(err, "error: dotted configuration overrides only apply to `train`");
        return EXIT_USAGE;
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, overrides, out, err),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Attention(a) => cmd_attention(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_train(a: TrainArgs, dotted: Vec<(String, Value)>, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut overrides = Vec::new();
    let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
    if let Some(p) = &a.train {
        overrides.push(("data.train".to_string(), path(p)));
    }
    if let Some(p) = &a.dev {
        overrides.push(("data.dev".to_string(), path(p)));
    }
    if let Some(p) = &a.test {
        overrides.push(("data.test".to_string(), path(p)));
    }
    if let Some(f) = a.format {
        overrides.push(("data.format".to_string(), serde_json::to_value(f)?));
    }
    if let Some(p) = &a.out {
        overrides.push(("output.checkpoint".to_string(), path(p)));
    }
    if let Some(s) = a.seed {
        overrides.push(("train.seed".to_string(), Value::from(s)));
    }
    if let Some(e) = a.epochs {
        overrides.push(("train.epochs".to_string(), Value::from(e)));
    }
    overrides.extend(a.model.overrides());
    overrides.extend(dotted);
    let cfg = RunConfig::load(a.config.as_deref(), &overrides)?;

    let train_path = cfg
        .data
        .train
        .clone()
        .ok_or_else(|| Error::Config("no training corpus: pass --train or set data.train".into()))?;
    let corpus = parse_corpus(&train_path, cfg.data.format)?;
    let dev = cfg.data.dev.as_ref().map(|p| parse_corpus(p, cfg.data.format)).transpose()?;
    let vocab = Vocab::build(&corpus, cfg.data.min_count)?;
    let overlay = cfg
        .data
        .embeddings
        .as_ref()
        .map(|p| load_embeddings(p, &vocab))
        .transpose()?;
    if let Some(o) = &overlay {
        let _ = writeln!(err, "embeddings: {} of {} words covered", o.coverage(), vocab.num_words());
    }

    let ckpt_path = cfg.output.checkpoint.clone();
    let curve_path = with_suffix(&ckpt_path, ".curve.tsv");
    let mut curve = format!("{}\n", EpochRecord::TSV_HEADER);
    let _ = writeln!(out, "{}", EpochRecord::TSV_HEADER);
    let outcome = train(&cfg.model, &cfg.train, &vocab, &corpus, dev.as_deref(), overlay.as_ref(), |r| {
        let line = r.tsv();
        let _ = writeln!(out, "{line}");
        curve.push_str(&line);
        curve.push('\n');
    })?;
    let checkpoint = Checkpoint::new(outcome.model, vocab, cfg);
    if let Some(dir) = ckpt_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_checkpoint(&checkpoint, &ckpt_path)?;
    write_file(&curve_path, &curve)?;
    write_file(&with_suffix(&ckpt_path, ".config.json"), &checkpoint.config.to_flat_json())?;
    let _ = writeln!(
        err,
        "kept epoch {}{}; checkpoint {}",
        outcome.best_epoch,
        if outcome.stopped_early { " (early stop)" } else { "" },
        ckpt_path.display()
    );
    if let Some(test) = &checkpoint.config.data.test {
        let corpus = parse_corpus(test, checkpoint.config.data.format)?;
        let report = evaluate(&checkpoint.model, &checkpoint.vocab, &corpus)?;
        let _ = write!(out, "{}", report.table());
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = load_checkpoint(&a.model)?;
    let corpus = parse_corpus(&a.data, a.format)?;
    let report = evaluate(&ckpt.model, &ckpt.vocab, &corpus)?;
    if report.slot.is_none() && report.intent.is_none() {
        return Err(Error::Data("corpus has no gold labels the model can be scored on".into()));
    }
    if let Some(p) = &a.out {
        write_file(p, &report.to_json())?;
    }
    if a.json {
        let _ = writeln!(out, "{}", report.to_json());
    } else {
        let _ = write!(out, "{}", report.table());
    }
    Ok(EXIT_OK)
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = load_checkpoint(&a.model)?;
    let corpus = parse_corpus(&a.input, a.format)?;
    let preds = predict_corpus(&ckpt.model, &ckpt.vocab, &corpus)?;
    let examples: Vec<_> = preds.iter().map(|p| p.to_example()).collect();
    let text = write_columns(&examples);
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => {
            let _ = write!(out, "{text}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let mut config = gradcheck::tiny_config();
    let f = &a.model;
    if let Some(m) = f.mode {
        config.mode = m;
    }
    if let Some(g) = f.aggregator {
        config.aggregator = g;
    }
    // the tiny default carries a penalty; drop it where it cannot apply
    // unless asked for explicitly
    let explicit = f.rho.is_some() || f.beta.is_some();
    if !explicit && (config.aggregator != Aggregator::Attention || !config.mode.has_intent_head()) {
        config.sparsity = None;
    }
    if let Some(s) = config.sparsity.as_mut() {
        if let Some(r) = f.rho {
            s.rho = r;
        }
        if let Some(b) = f.beta {
            s.beta = b;
        }
    }
    let config = config.resolved()?;
    let batch = gradcheck::tiny_batch(&config, a.seed)?;
    let report = gradcheck::check_model(&config, &batch, a.seed, a.step, a.tolerance)?;
    let _ = writeln!(
        out,
        "{:<22}{:>14}{:>14}{:>9}{:>9}",
        "parameter", "max rel err", "raw rel err", "checked", "skipped"
    );
    for p in &report.params {
        let _ = writeln!(
            out,
            "{:<22}{:>14.3e}{:>14.3e}{:>9}{:>9}",
            p.name, p.max_rel_error, p.max_raw_error, p.checked, p.skipped
        );
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    let _ = writeln!(
        out,
        "{verdict}: max relative error {:.3e} (tolerance {:.1e}, step {:.1e}, rounding allowance {:.1e})",
        report.max_rel_error(),
        report.tolerance,
        report.step,
        report.noise
    );
    Ok(if report.passed() { EXIT_OK } else { EXIT_NUMERIC })
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = if a.intent_cued {
        SynthSpec::intent_cued(a.seed, a.sentences)
    } else {
        SynthSpec::atis_like(a.seed, a.sentences)
    };
    let corpus = synth_generate(&spec)?;
    if let Some(p) = &a.keywords {
        let mut text = String::new();
        for k in &corpus.keywords {
            text.push_str(&serde_json::to_string(k)?);
            text.push('\n');
        }
        write_file(p, &text)?;
    }
    let ext = match a.format {
        CorpusFormat::Columns => "txt",
        CorpusFormat::Jsonl => "jsonl",
    };
    if a.split {
        let dir = a
            .out
            .ok_or_else(|| Error::Config("--split needs --out DIR".into()))?;
        let (train, dev, test) = split_default(&corpus.examples);
        for (name, part) in [("train", train), ("dev", dev), ("test", test)] {
            write_file(&dir.join(format!("{name}.{ext}")), &write_corpus(&part, a.format))?;
        }
        return Ok(EXIT_OK);
    }
    let text = write_corpus(&corpus.examples, a.format);
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => {
            let _ = write!(out, "{text}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_attention(a: AttentionArgs, out: &mut dyn Write) -> Result<i32> {
    let render: AttentionFormat = a.render.parse()?;
    let ckpt = load_checkpoint(&a.model)?;
    let corpus = parse_corpus(&a.data, a.format)?;
    let traces = attention_traces(&ckpt.model, &ckpt.vocab, &corpus)?;
    let text = export_attention(&traces, render)?;
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => {
            let _ = write!(out, "{text}");
        }
    }
    Ok(EXIT_OK)
}
