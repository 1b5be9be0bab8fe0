//! The `affect-tune` commands: build-dataset, plan, train, evaluate, stats.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::au::AuError;
use crate::config::{ConfigError, ReasonSource, RunConfig};
use crate::dataset::{
    build_corpus, dataset_stats, ingest_corpus, read_records, validate_record, write_records,
    BuildContext, DatasetError, MockReasonInferencer, MockSceneDescriber, ReasonGenerator,
};
use crate::eval::{
    evaluate_predictions, read_predictions, write_predictions, EvalError, Prediction,
    SchemeSelection,
};
use crate::labels::TaskKind;
use crate::model::{
    apply_adapters, forward, load_checkpoint, save_checkpoint, train_stage, vocabulary_for,
    Checkpoint, MediaCache, ModelError, ToyModel,
};
use crate::scheduler::{
    assign_stream, largest_remainder_quotas, remaining_pool, stream_task_counts, Budget,
    SchedulerError, TaskIdentifierMap,
};

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECTS: i32 = 3;
pub const EXIT_UNDEFINED_METRIC: i32 = 4;
pub const EXIT_FROZEN_VIOLATION: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "affect-tune",
    version,
    about = "Multitask emotion instruction-tuning toolkit"
)]
pub struct Cli {
    /// Run configuration (TOML); built-in defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output root, overriding the configured one.
    #[arg(long, global = true, env = "AFFECT_TUNE_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest the corpus manifest and write task records, stats and rejections.
    BuildDataset(BuildArgs),
    /// Print the resolved stage plans with the source of every value.
    Plan(PlanArgs),
    /// Run the training stages and write checkpoints and the run manifest.
    Train(TrainArgs),
    /// Score predictions (or a checkpoint's responses) on a test record file.
    Evaluate(EvalArgs),
    /// Per-task counts of a record file.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Restrict output to these tasks, e.g. `MSA,ER`.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<TaskKind>,
    /// Exit successfully even when source rows were rejected.
    #[arg(long)]
    pub allow_rejects: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Print the plans (the default action).
    #[arg(long)]
    pub print: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Emit JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run only this stage (1 or 2). Stage 2 alone resumes from `stage1.ckpt`.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: Option<u8>,
    /// Continue after the stage recorded in this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Nn,
    Np,
    Both,
}

impl From<SchemeArg> for SchemeSelection {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Nn => SchemeSelection::Nn,
            SchemeArg::Np => SchemeSelection::Np,
            SchemeArg::Both => SchemeSelection::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Test record file (JSONL).
    #[arg(long)]
    pub test_set: PathBuf,
    /// Checkpoint to generate responses with; defaults to `<out>/stage2.ckpt`.
    #[arg(long, conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score an existing prediction file instead of running a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Acc2 scheme(s) for sentiment.
    #[arg(long, value_enum, default_value = "both")]
    pub scheme: SchemeArg,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Record file; defaults to the configured or built one.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Au(#[from] AuError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{count} source row(s) rejected; see {report} (pass --allow-rejects to accept)")]
    Rejected { count: usize, report: PathBuf },
    #[error("built records are malformed:\n  {}", .0.join("\n  "))]
    InvalidRecords(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Rejected { .. } => EXIT_REJECTS,
            CliError::Eval(EvalError::UndefinedMetric(_)) => EXIT_UNDEFINED_METRIC,
            CliError::Model(ModelError::FrozenViolation(_)) => EXIT_FROZEN_VIOLATION,
            _ => EXIT_ERROR,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path)(e.into()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Appends events to `run_manifest.jsonl`; the only place timestamps appear.
struct RunManifest {
    path: PathBuf,
    file: File,
}

impl RunManifest {
    fn open(out: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        let path = out.join("run_manifest.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    fn event(&mut self, kind: &str, body: serde_json::Value) -> Result<(), CliError> {
        let time = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let line = json!({ "event": kind, "unix_time": time, "data": body });
        writeln!(self.file, "{line}").map_err(io_err(&self.path))
    }
}

struct Context {
    config: RunConfig,
    out: PathBuf,
}

impl Context {
    fn records_path(&self) -> PathBuf {
        self.config
            .paths
            .records
            .clone()
            .unwrap_or_else(|| self.out.join("records.jsonl"))
    }
}

/// Loads and validates the configuration, then runs the command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.paths.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context { config, out };
    match cli.command {
        Command::BuildDataset(a) => cmd_build_dataset(&ctx, &a),
        Command::Plan(a) => cmd_plan(&ctx, &a),
        Command::Train(a) => cmd_train(&ctx, &a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, &a),
        Command::Stats(a) => cmd_stats(&ctx, &a),
    }
}

fn cmd_build_dataset(ctx: &Context, args: &BuildArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let manifest =
        cfg.paths.manifest.as_deref().ok_or_else(|| {
            CliError::Usage("no corpus manifest configured (paths.manifest)".into())
        })?;
    let tasks: BTreeSet<TaskKind> = if args.tasks.is_empty() {
        cfg.dataset.tasks.clone()
    } else {
        args.tasks.iter().copied().collect()
    };
    let report = ingest_corpus(manifest)?;
    let table = cfg.emotion_table()?;
    let lexicon = cfg.lexicon()?;
    let identifiers = TaskIdentifierMap::default();
    let build = BuildContext {
        table: &table,
        lexicon: &lexicon,
        presence_threshold: cfg.dataset.presence_threshold,
        thresholds: cfg.dataset.sentiment,
        identifiers: &identifiers,
        reason: (cfg.dataset.reason == ReasonSource::Mock).then_some(ReasonGenerator {
            describer: &MockSceneDescriber,
            reasoner: &MockReasonInferencer,
        }),
    };
    let outcome = build_corpus(&report.samples, &tasks, &build)?;
    let problems: Vec<String> = outcome
        .records
        .iter()
        .flat_map(|r| {
            validate_record(r, &identifiers)
                .into_iter()
                .map(move |v| format!("{}: {v}", r.record_id))
        })
        .collect();
    if !problems.is_empty() {
        return Err(CliError::InvalidRecords(problems));
    }
    let stats = dataset_stats(&outcome.records);
    let shape = stats.shape_violations();
    if !shape.is_empty() {
        return Err(CliError::InvalidRecords(shape));
    }

    let records_path = ctx.out.join("records.jsonl");
    let mut w = create(&records_path)?;
    write_records(&mut w, &outcome.records).map_err(io_err(&records_path))?;
    write_json(&ctx.out.join("stats.json"), &stats)?;
    let rejections_path = ctx.out.join("rejections.jsonl");
    write_jsonl(&rejections_path, &report.rejections)?;
    write_jsonl(&ctx.out.join("skipped.jsonl"), &outcome.skipped)?;

    println!(
        "{} records from {} samples ({} rejected rows, {} skipped task(s))",
        outcome.records.len(),
        report.samples.len(),
        report.rejections.len(),
        outcome.skipped.len()
    );
    for (task, n) in &stats.per_task {
        println!("  {:<5} {n}", task.as_str());
    }
    println!("wrote {}", records_path.display());
    if !report.rejections.is_empty() && !args.allow_rejects {
        return Err(CliError::Rejected {
            count: report.rejections.len(),
            report: rejections_path,
        });
    }
    Ok(())
}

/// The spelling a unit enum has in the config file.
fn config_name<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn cmd_plan(ctx: &Context, args: &PlanArgs) -> Result<(), CliError> {
    let plans = ctx.config.plans(args.seed)?;
    if args.json {
        let text = serde_json::to_string_pretty(&plans).expect("plans serialize");
        println!("{text}");
        return Ok(());
    }
    println!("ablation: {}", config_name(&ctx.config.schedule.ablation));
    println!("sampling: {}", config_name(&ctx.config.schedule.sampling));
    for resolved in &plans {
        print!("{}", resolved.render());
        if let Budget::Fixed(n) = resolved.plan.sample_budget {
            let rates = resolved.plan.planned_tasks().collect();
            let quotas = largest_remainder_quotas(&rates, n);
            let shown: Vec<String> = quotas.iter().map(|(t, q)| format!("{t}={q}")).collect();
            println!("  {:<12}{:>10}", "quotas", shown.join(" "));
        }
    }
    Ok(())
}

fn fresh_model(
    cfg: &RunConfig,
    records: &[crate::dataset::TaskRecord],
) -> Result<ToyModel, CliError> {
    let identifiers = TaskIdentifierMap::default();
    let vocab = vocabulary_for(records, &identifiers);
    let model = ToyModel::new(cfg.model.clone(), vocab, identifiers)?;
    Ok(apply_adapters(
        model,
        cfg.adapter.rank,
        cfg.adapter.alpha,
        &cfg.adapter.targets,
    )?)
}

fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let plans = cfg.plans(args.seed)?;
    let records_path = ctx.records_path();
    let records = read_records(&records_path)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "{} holds no records",
            records_path.display()
        )));
    }

    let resume = match (&args.resume, args.stage) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(2)) => Some(ctx.out.join("stage1.ckpt")),
        _ => None,
    };
    let (mut model, mut consumed, first) = match &resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            log::info!(
                "resuming after stage {} from {}",
                ckpt.completed_stage,
                path.display()
            );
            let consumed: BTreeSet<String> = ckpt.consumed_record_ids.into_iter().collect();
            (ckpt.model, consumed, ckpt.completed_stage + 1)
        }
        None => (fresh_model(cfg, &records)?, BTreeSet::new(), 1),
    };
    let last = args.stage.unwrap_or(2);
    if first > last {
        return Err(CliError::Usage(format!(
            "nothing to do: stage {last} is already complete"
        )));
    }

    let mut manifest = RunManifest::open(&ctx.out)?;
    manifest.event(
        "config",
        serde_json::to_value(cfg).expect("config serializes"),
    )?;
    manifest.event(
        "adapters",
        json!({
            "rank": cfg.adapter.rank,
            "alpha": cfg.adapter.alpha,
            "targets": cfg.adapter.targets,
            "layers": model.adapted_layers(),
            "adapter_params": model.adapter_param_count(),
            "trainable_params": model.trainable_param_count(),
        }),
    )?;

    let mut cache = MediaCache::default();
    for stage in first..=last {
        let resolved = &plans[usize::from(stage) - 1];
        let pool = remaining_pool(&records, &consumed);
        let stream = assign_stream(&pool, &resolved.plan, cfg.schedule.sampling)?;
        let counts = stream_task_counts(&stream);
        manifest.event(
            "plan",
            json!({ "stage": stage, "plan": resolved, "pool": pool.len(), "stream_counts": counts }),
        )?;
        let vision_before = model.vision_fingerprint();
        let report = train_stage(&stream, &mut model, &cfg.optim, &mut cache)?;
        let vision_after = model.vision_fingerprint();
        consumed.extend(stream.iter().map(|i| i.record.record_id.clone()));

        let ckpt_path = ctx.out.join(format!("stage{stage}.ckpt"));
        let ckpt = Checkpoint {
            completed_stage: stage,
            model,
            consumed_record_ids: consumed.iter().cloned().collect(),
        };
        save_checkpoint(&ckpt_path, &ckpt)?;
        model = ckpt.model;
        manifest.event(
            "stage",
            json!({
                "stage": stage,
                "stream_counts": counts,
                "losses": report.steps.iter().map(|s| s.loss).collect::<Vec<_>>(),
                "vision_fingerprint_before": vision_before,
                "vision_fingerprint_after": vision_after,
                "checkpoint": ckpt_path,
            }),
        )?;
        let shown: Vec<String> = counts.iter().map(|(t, n)| format!("{t}={n}")).collect();
        println!(
            "stage {stage}: {} items [{}], {} steps, loss {:.4} -> {:.4}, wrote {}",
            stream.len(),
            shown.join(" "),
            report.steps.len(),
            report.steps.first().map_or(f64::NAN, |s| s.loss),
            report.final_loss().unwrap_or(f64::NAN),
            ckpt_path.display()
        );
    }
    Ok(())
}

fn cmd_evaluate(ctx: &Context, args: &EvalArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let records = read_records(&args.test_set)?;
    if records.is_empty() {
        return Err(EvalError::UndefinedMetric(format!(
            "{} holds no records",
            args.test_set.display()
        ))
        .into());
    }
    let predictions = match &args.predictions {
        Some(p) => read_predictions(p)?,
        None => {
            let path = args
                .checkpoint
                .clone()
                .unwrap_or_else(|| ctx.out.join("stage2.ckpt"));
            let model = load_checkpoint(&path)?.model;
            let preds: Vec<Prediction> = records
                .par_iter()
                .map(|r| {
                    let x = model.fused_prompt(r, &mut MediaCache::default())?;
                    Ok(Prediction {
                        record_id: r.record_id.clone(),
                        response: forward(&x, &model, &cfg.decode)?,
                    })
                })
                .collect::<Result<_, ModelError>>()?;
            let out = ctx.out.join("predictions.jsonl");
            let mut w = create(&out)?;
            write_predictions(&mut w, &preds).map_err(io_err(&out))?;
            preds
        }
    };
    let selection: SchemeSelection = args.scheme.into();
    let report = evaluate_predictions(&records, &predictions, &cfg.dataset.sentiment, selection)?;
    write_json(&ctx.out.join("report.json"), &report)?;
    let table = report.render();
    let txt = ctx.out.join("report.txt");
    std::fs::write(&txt, &table).map_err(io_err(&txt))?;
    print!("{table}");
    if report.entries.is_empty() {
        let reasons: Vec<String> = report
            .undefined
            .iter()
            .map(|u| format!("{}: {}", u.metric, u.reason))
            .collect();
        return Err(EvalError::UndefinedMetric(if reasons.is_empty() {
            "no scored tasks in the test set".into()
        } else {
            reasons.join("; ")
        })
        .into());
    }
    Ok(())
}

fn cmd_stats(ctx: &Context, args: &StatsArgs) -> Result<(), CliError> {
    let path = args.records.clone().unwrap_or_else(|| ctx.records_path());
    let stats = dataset_stats(&read_records(&path)?);
    for (task, n) in &stats.per_task {
        println!("{:<5} {n}", task.as_str());
    }
    println!("total {}", stats.total_records());
    println!("distinct samples {}", stats.distinct_samples);
    let shape = stats.shape_violations();
    if shape.is_empty() {
        Ok(())
    } else {
        Err(CliError::InvalidRecords(shape))
    }
}
