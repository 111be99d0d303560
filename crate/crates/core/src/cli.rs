//! Command-line surface: ingest, synth, train, sweep-beta, ablate, eval and
//! report.
//!
//! Every command writes its artifacts under `--out` and prints one JSON line
//! listing them. Failures print a one-line JSON error record on stderr and
//! exit non-zero.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::corpus::{read_corpus_file, split_sections, write_rejects, Corpus, Split, SplitSet};
use crate::error::{Error, Result};
use crate::evaluation::{
    gold_sets, per_class_table, predictions_at, read_predictions, score, write_predictions,
    EvalReport,
};
use crate::hierarchy::{Level, SenseHierarchy, Version};
use crate::pairing::StrategyName;
use crate::synth::{generate_with, SynthConfig};
use crate::trainer::{
    ablate, default_beta_grid, default_variants, evaluate, predict, sweep_beta_seeds, train,
    write_jsonl, AblationRow, AblationVariant, Checkpoint, EncoderKind, Model, SweepRow,
    TrainConfig, ADAPTER_DIR_ENV,
};

#[derive(Debug, Parser)]
#[command(
    name = "hiercl",
    version,
    about = "Hierarchy-guided contrastive training for discourse relations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file; writes the accepted records and a rejects report.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "pdtb3")]
        hierarchy: Version,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, default_value = "pdtb3")]
        hierarchy: Version,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; writes checkpoint, metric history and step log.
    Train(RunArgs),
    /// Train one model per β and write the dev curve.
    SweepBeta {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated β values; defaults to 0, 0.2, ..., 2.4.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Comma-separated seeds averaged per β; defaults to `--seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Compare pairing strategies and component removals.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Compare the full model against the β = 0 multi-task baseline.
        #[arg(long)]
        no_contrastive: bool,
        /// Compare the full model against training without augmentation.
        #[arg(long)]
        no_augmentation: bool,
        /// Comma-separated strategies (default: all five).
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<StrategyName>,
    },
    /// Score a checkpoint on a split; writes reports, tables and predictions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an existing predictions file against a corpus split.
    Report {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "pdtb3")]
        hierarchy: Version,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Options shared by the training commands. Flags override `--config`.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<Version>,
    #[arg(long)]
    pub strategy: Option<StrategyName>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Effective settings for a training command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hierarchy: Version,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses a flat TOML document: `hierarchy` plus the training keys.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        let hierarchy = match table.remove("hierarchy") {
            None => Version::Pdtb3,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => {
                return Err(Error::Config(format!(
                    "hierarchy must be a string, got {other}"
                )))
            }
        };
        let train: TrainConfig = table.try_into()?;
        Ok(RunConfig { hierarchy, train })
    }

    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.train).expect("config serializes");
        table.insert(
            "hierarchy".into(),
            toml::Value::String(self.hierarchy.to_string()),
        );
        toml::to_string(&table).expect("table serializes")
    }
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(path) => RunConfig::from_toml(&read_to_string(path)?)?,
            None => RunConfig {
                hierarchy: Version::Pdtb3,
                train: TrainConfig::default(),
            },
        };
        let t = &mut rc.train;
        if let Some(v) = self.hierarchy {
            rc.hierarchy = v;
        }
        if let Some(s) = self.strategy {
            if s != t.strategy {
                t.pos_weight = None;
                t.neg_weight = None;
                t.coarse_pos_weight = None;
            }
            t.strategy = s;
        }
        macro_rules! set {
            ($($flag:ident),*) => { $(if let Some(v) = self.$flag { t.$flag = v; })* };
        }
        set!(
            beta,
            seed,
            encoder,
            learning_rate,
            max_epochs,
            patience,
            batch_size,
            dim,
            temperature
        );
        if t.encoder == EncoderKind::Adapter && t.adapter_dir.is_none() {
            t.adapter_dir = std::env::var_os(ADAPTER_DIR_ENV).map(PathBuf::from);
        }
        t.validate()?;
        Ok(rc)
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return 2;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            1
        }
    }
}

pub fn error_record(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::Hierarchy { .. } => "hierarchy",
        Error::UnknownLabel(_) => "unknown_label",
        Error::NonTerminal(_) => "non_terminal",
        Error::Usage(_) => "usage",
        Error::Config(_) => "config",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::MissingPredictions(_) => "missing_predictions",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
        Error::Toml(_) => "toml",
    };
    let mut rec = json!({"error": kind, "message": e.to_string()});
    if let Error::NonFiniteLoss {
        epoch,
        step,
        batch_ids,
    } = e
    {
        rec["epoch"] = json!(epoch);
        rec["step"] = json!(step);
        rec["batch_ids"] = json!(batch_ids);
    }
    rec
}

/// Runs one command; the returned value lists the artifacts written.
pub fn execute(cmd: &Command) -> Result<serde_json::Value> {
    match cmd {
        Command::Ingest {
            input,
            hierarchy,
            out,
        } => {
            let h = Arc::new(SenseHierarchy::builtin(*hierarchy));
            let ing = read_corpus_file(input, h)?;
            ensure_dir(out)?;
            let corpus_path = out.join("corpus.jsonl");
            let rejects_path = out.join("rejects.jsonl");
            write_file(&corpus_path, |w| ing.corpus.write_jsonl(w))?;
            write_file(&rejects_path, |w| write_rejects(&ing.rejects, w))?;
            Ok(json!({
                "command": "ingest",
                "accepted": ing.corpus.len(),
                "rejected": ing.rejects.len(),
                "artifacts": [corpus_path, rejects_path],
            }))
        }
        Command::Synth {
            hierarchy,
            per_class,
            seed,
            noise,
            out,
        } => {
            let h = Arc::new(SenseHierarchy::builtin(*hierarchy));
            let cfg = SynthConfig {
                per_class: *per_class,
                seed: *seed,
                noise: *noise,
                ..SynthConfig::default()
            };
            let corpus = generate_with(h, &cfg)?;
            ensure_dir(out)?;
            let path = out.join("corpus.jsonl");
            write_file(&path, |w| corpus.write_jsonl(w))?;
            Ok(json!({"command": "synth", "examples": corpus.len(), "artifacts": [path]}))
        }
        Command::Train(args) => {
            let (rc, h, splits) = prepare(args)?;
            let outcome = train(&rc.train, &splits, &h)?;
            let out = &args.out;
            let ckpt = out.join("checkpoint.json");
            let history = out.join("history.jsonl");
            let steps = out.join("steps.jsonl");
            write_file(&ckpt, |w| {
                w.write_all(outcome.checkpoint.to_json()?.as_bytes())
                    .map_err(|e| Error::io(&ckpt, e))
            })?;
            write_file(&history, |w| write_jsonl(&outcome.history, w))?;
            write_file(&steps, |w| write_jsonl(&outcome.steps, w))?;
            Ok(json!({
                "command": "train",
                "best_epoch": outcome.checkpoint.epoch,
                "dev": outcome.checkpoint.dev,
                "truncated": outcome.truncated,
                "artifacts": [out.join("config.toml"), ckpt, history, steps],
            }))
        }
        Command::SweepBeta { run, grid, seeds } => {
            let (rc, h, splits) = prepare(run)?;
            let grid = if grid.is_empty() {
                default_beta_grid()
            } else {
                grid.clone()
            };
            let seeds = if seeds.is_empty() {
                vec![rc.train.seed]
            } else {
                seeds.clone()
            };
            let rows = sweep_beta_seeds(&rc.train, &splits, &h, &grid, &seeds)?;
            let jsonl = run.out.join("sweep.jsonl");
            let tsv = run.out.join("sweep.tsv");
            write_file(&jsonl, |w| write_jsonl(&rows, w))?;
            write_file(&tsv, |w| {
                w.write_all(sweep_tsv(&rows).as_bytes())
                    .map_err(|e| Error::io(&tsv, e))
            })?;
            Ok(json!({
                "command": "sweep-beta",
                "points": rows.len(),
                "artifacts": [run.out.join("config.toml"), jsonl, tsv],
            }))
        }
        Command::Ablate {
            run,
            no_contrastive,
            no_augmentation,
            strategies,
        } => {
            let (rc, h, splits) = prepare(run)?;
            let variants = ablation_variants(*no_contrastive, *no_augmentation, strategies);
            let rows = ablate(&rc.train, &splits, &h, &variants)?;
            let jsonl = run.out.join("ablation.jsonl");
            let txt = run.out.join("ablation.txt");
            write_file(&jsonl, |w| write_jsonl(&rows, w))?;
            write_file(&txt, |w| {
                w.write_all(ablation_table(&rows).as_bytes())
                    .map_err(|e| Error::io(&txt, e))
            })?;
            Ok(json!({
                "command": "ablate",
                "rows": rows.len(),
                "artifacts": [run.out.join("config.toml"), jsonl, txt],
            }))
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            out,
        } => {
            let ckpt = Checkpoint::from_json(&read_to_string(checkpoint)?)?;
            let mut cfg = ckpt.config.clone();
            if cfg.encoder == EncoderKind::Adapter && cfg.adapter_dir.is_none() {
                cfg.adapter_dir = std::env::var_os(ADAPTER_DIR_ENV).map(PathBuf::from);
            }
            let ckpt = Checkpoint {
                config: cfg,
                ..ckpt
            };
            let h = SenseHierarchy::builtin(ckpt.version);
            let splits = load_splits(corpus, Arc::new(h.clone()))?;
            let examples = splits.get(*split);
            if examples.is_empty() {
                return Err(Error::Usage(format!("{split:?} split is empty")));
            }
            let model = Model::from_checkpoint(&ckpt)?;
            let (r1, r2) = evaluate(&model, examples, &h)?;
            let preds = predict(&model, examples, &h)?;
            ensure_dir(out)?;
            let pred_path = out.join("predictions.jsonl");
            write_file(&pred_path, |w| write_predictions(&preds, w))?;
            let mut artifacts = vec![pred_path];
            artifacts.extend(write_reports(out, &[r1, r2])?);
            Ok(json!({"command": "eval", "artifacts": artifacts}))
        }
        Command::Report {
            predictions,
            corpus,
            hierarchy,
            split,
            out,
        } => {
            let h = SenseHierarchy::builtin(*hierarchy);
            let splits = load_splits(corpus, Arc::new(h.clone()))?;
            let file = File::open(predictions).map_err(|e| Error::io(predictions, e))?;
            let records = read_predictions(BufReader::new(file))?;
            let gold = gold_sets(splits.get(*split));
            let reports = [Level::L1, Level::L2]
                .into_iter()
                .map(|level| score(&predictions_at(&records, level), &gold, level, &h))
                .collect::<Result<Vec<EvalReport>>>()?;
            ensure_dir(out)?;
            let artifacts = write_reports(out, &reports)?;
            Ok(json!({"command": "report", "artifacts": artifacts}))
        }
    }
}

fn ablation_variants(
    no_contrastive: bool,
    no_augmentation: bool,
    strategies: &[StrategyName],
) -> Vec<AblationVariant> {
    if !no_contrastive && !no_augmentation {
        let all = default_variants();
        if strategies.is_empty() {
            return all;
        }
        return all
            .into_iter()
            .filter(|v| v.augmentation && v.contrastive && strategies.contains(&v.strategy))
            .collect();
    }
    let base = strategies.first().copied().unwrap_or(StrategyName::Ours);
    let variant = |name: &str, augmentation, contrastive| AblationVariant {
        name: name.into(),
        strategy: base,
        augmentation,
        contrastive,
    };
    let mut v = vec![variant(&base.to_string(), true, true)];
    if no_augmentation {
        v.push(variant("-augmentation", false, true));
    }
    if no_contrastive {
        v.push(variant("-contrastive", true, false));
    }
    if no_augmentation && no_contrastive {
        v.push(variant("-augmentation -contrastive", false, false));
    }
    v
}

fn prepare(args: &RunArgs) -> Result<(RunConfig, SenseHierarchy, SplitSet)> {
    let rc = args.resolve()?;
    let h = SenseHierarchy::builtin(rc.hierarchy);
    let splits = load_splits(&args.corpus, Arc::new(h.clone()))?;
    ensure_dir(&args.out)?;
    let cfg_path = args.out.join("config.toml");
    fs::write(&cfg_path, rc.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    Ok((rc, h, splits))
}

/// Reads a corpus file strictly: any rejected record is an error.
pub fn load_corpus(path: &Path, h: Arc<SenseHierarchy>) -> Result<Corpus> {
    let ing = read_corpus_file(path, h)?;
    if let Some(r) = ing.rejects.first() {
        return Err(Error::Usage(format!(
            "{}: {} invalid record(s); first at line {}: {} (run `ingest` to filter)",
            path.display(),
            ing.rejects.len(),
            r.line,
            r.reason
        )));
    }
    Ok(ing.corpus)
}

fn load_splits(path: &Path, h: Arc<SenseHierarchy>) -> Result<SplitSet> {
    Ok(split_sections(&load_corpus(path, h)?))
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for r in reports {
        let json_path = out.join(format!("report_{}.json", r.level));
        let table_path = out.join(format!("table_{}.txt", r.level));
        let text = serde_json::to_string_pretty(r)?;
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
        fs::write(&table_path, per_class_table(r)).map_err(|e| Error::io(&table_path, e))?;
        paths.push(json_path);
        paths.push(table_path);
    }
    Ok(paths)
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut s = String::from("beta\tl1_accuracy\tl1_macro_f1\tl2_accuracy\tl2_macro_f1\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.beta, r.dev.l1.accuracy, r.dev.l1.macro_f1, r.dev.l2.accuracy, r.dev.l2.macro_f1
        ));
    }
    s
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.variant.name.len())
        .max()
        .unwrap_or(7)
        .max(7);
    let mut s = format!(
        "{:<width$}  {:>8} {:>8}  {:>8} {:>8}  {:>8} {:>8}\n",
        "variant", "dev-L1F1", "dev-L2F1", "L1-Acc", "L1-F1", "L2-Acc", "L2-F1"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>8.2} {:>8.2}  {:>8.2} {:>8.2}  {:>8.2} {:>8.2}\n",
            r.variant.name,
            r.dev.l1.macro_f1 * 100.0,
            r.dev.l2.macro_f1 * 100.0,
            r.test.l1.accuracy * 100.0,
            r.test.l1.macro_f1 * 100.0,
            r.test.l2.accuracy * 100.0,
            r.test.l2.macro_f1 * 100.0,
        ));
    }
    s
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}
