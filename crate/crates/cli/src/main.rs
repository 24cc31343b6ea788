//! `prism`: data generation, training, evaluation, ablations and gradient
//! checks for the refinement model.
//!
//! Exit codes: 0 success, 1 gradient check failure or internal error,
//! 2 usage or configuration error, 3 I/O or data format error,
//! 4 non-finite loss, 5 incompatible checkpoint.

use clap::{Args, Parser, Subcommand};
use prism_core::autodiff::GradCheckOptions;
use prism_core::config::RunConfig;
use prism_core::data::{
    chronological_split, convert_dtgb, generate_synthetic, load_dataset_dir, write_dataset_dir, DatasetSplits,
    DyTagDataset, Setting, Split, SyntheticConfig,
};
use prism_core::evaluation::{evaluate_link_prediction, evaluate_retrieval, EvalContext, EvalReport, ModelScorer, Task};
use prism_core::model::load_checkpoint_for;
use prism_core::training::{
    check_model_gradients, run_ablation_suite, train, Ablation, SuiteConfig, SuiteMetric, TrainData, TrainReport,
};
use prism_core::Error;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "prism", version, about = "Posterior refinement for dynamic text-attributed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.K=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic community/recency dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        nodes: usize,
        #[arg(long, default_value_t = 500)]
        events: usize,
        #[arg(long, default_value_t = 5)]
        communities: usize,
        #[arg(long, default_value_t = 0.9)]
        recency_bias: f64,
        #[arg(long, default_value_t = 3)]
        recent_window: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a DTGB dataset directory into the native CSV layout.
    ConvertDtgb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split and setting.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "transductive")]
        setting: Setting,
        #[arg(long, default_value = "link")]
        task: TaskArg,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant over several seeds and tabulate deltas.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "full,wo_semantic,wo_behavior,wo_recon,wo_margin,wo_step")]
        variants: Vec<Ablation>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "ap_transductive")]
        metrics: Vec<SuiteMetric>,
    },
    /// Compare reverse-mode gradients of the full loss with finite differences.
    GradCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Entries probed per parameter block.
        #[arg(long, default_value_t = 8)]
        max_entries: usize,
        #[arg(long, hide = true)]
        sabotage: Option<String>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TaskArg {
    Link,
    Retrieval,
}

enum Failure {
    Core(Error),
    GradCheck(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Sampling(_) => 2,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Format(_)
        | Error::Integrity { .. }
        | Error::Data { .. }
        | Error::Coverage { .. } => 3,
        Error::NonFinite { .. } => 4,
        Error::Checkpoint(_) => 5,
        _ => 1,
    }
}

fn write_text(path: &Path, body: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_text(path, &body)
}

fn split_sizes(splits: &DatasetSplits) -> Value {
    json!({
        "train": splits.train.len(),
        "val": splits.val.len(),
        "test": splits.test.len(),
        "inductive_nodes": splits.inductive_nodes.len(),
    })
}

fn load_inputs(cfg: &RunConfig, data: &Path) -> Result<(DyTagDataset, DatasetSplits), Error> {
    let ds = load_dataset_dir(data)?;
    let splits = chronological_split(&ds, cfg.data.split_ratios)?;
    Ok((ds, splits))
}

fn manifest(ds: &DyTagDataset, source: Value) -> Value {
    json!({
        "source": source,
        "num_nodes": ds.num_nodes(),
        "num_events": ds.num_events(),
        "num_edge_texts": ds.num_edge_texts(),
        "files": {
            "events": prism_core::data::io::EVENTS_FILE,
            "node_texts": prism_core::data::io::NODE_TEXTS_FILE,
            "edge_texts": prism_core::data::io::EDGE_TEXTS_FILE,
        },
    })
}

#[derive(Serialize)]
struct TrainRunReport<'a> {
    config: Value,
    splits: Value,
    param_count: usize,
    train: &'a TrainReport,
    test: Vec<EvalReport>,
}

fn cmd_train(config: &ConfigArgs, data: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = config.load()?;
    let (ds, splits) = load_inputs(&cfg, data)?;
    let features = cfg.embedding.features(&ds)?;
    let td = TrainData {
        dataset: &ds,
        splits: &splits,
        features: &features,
    };
    write_json(&out.join("config.json"), &cfg)?;
    let outcome = train(td, &cfg.model, &cfg.objectives, &cfg.train)?;
    outcome.write_artifacts(out)?;

    let ctx = EvalContext::new(&ds, &splits);
    let scorer = ModelScorer {
        model: &outcome.best,
        features: &features,
    };
    let test = cfg
        .eval
        .settings
        .iter()
        .map(|&s| evaluate_link_prediction(&scorer, &ctx, Split::Test, s, cfg.train.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let report = TrainRunReport {
        config: cfg.to_value(),
        splits: split_sizes(&splits),
        param_count: outcome.best.params.numel(),
        train: &outcome.report,
        test,
    };
    write_json(&out.join("report.json"), &report)?;
    println!(
        "trained {} epochs (best {}), val AP {}, run dir {}",
        outcome.report.epochs.len(),
        outcome.report.best_epoch,
        fmt_metric(outcome.report.best_val_ap),
        out.display()
    );
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    config: &ConfigArgs,
    data: &Path,
    split: Split,
    setting: Setting,
    task: TaskArg,
    out: Option<&Path>,
) -> Result<(), Failure> {
    // Without an explicit config, use the one saved next to the checkpoint.
    let sibling = checkpoint.parent().map(|p| p.join("config.json"));
    let cfg = match (&config.config, sibling) {
        (None, Some(s)) if s.is_file() => RunConfig::load(Some(&s), &config.overrides)?,
        _ => config.load()?,
    };
    let (ds, splits) = load_inputs(&cfg, data)?;
    let features = cfg.embedding.features(&ds)?;
    let model = load_checkpoint_for(checkpoint, features.dim())?;
    let ctx = EvalContext::new(&ds, &splits);
    let scorer = ModelScorer {
        model: &model,
        features: &features,
    };
    let seed = cfg.train.seed;
    let mut report = match task {
        TaskArg::Link => evaluate_link_prediction(&scorer, &ctx, split, setting, seed)?,
        TaskArg::Retrieval => {
            evaluate_retrieval(&scorer, &ctx, split, setting, cfg.eval.pool_size, &cfg.eval.hits_k, seed)?
        }
    };
    let mut echo = cfg.to_value();
    echo["model"] = serde_json::to_value(&model.config).map_err(Error::from)?;
    echo["checkpoint"] = Value::String(checkpoint.display().to_string());
    report.config_echo = echo;

    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let task_name = match report.task {
        Task::Link => "link",
        Task::Retrieval => "retrieval",
    };
    let stem = format!("eval_{task_name}_{split}_{setting}");
    write_json(&dir.join(format!("{stem}.json")), &report)?;
    write_text(&dir.join(format!("{stem}.csv")), &report.metrics_csv())?;

    let summary = match report.task {
        Task::Link => format!("AP {} AUC {}", fmt_metric(report.ap), fmt_metric(report.auc)),
        Task::Retrieval => cfg
            .eval
            .hits_k
            .iter()
            .map(|&k| format!("Hits@{k} {}", fmt_metric(report.hit(k))))
            .collect::<Vec<_>>()
            .join(" "),
    };
    println!("{task_name} {split} {setting}: {summary} over {} queries", report.n_queries);
    Ok(())
}

fn cmd_ablate(
    config: &ConfigArgs,
    data: &Path,
    out: &Path,
    variants: &[Ablation],
    seeds: &[u64],
    metrics: &[SuiteMetric],
) -> Result<(), Failure> {
    let cfg = config.load()?;
    let (ds, splits) = load_inputs(&cfg, data)?;
    let features = cfg.embedding.features(&ds)?;
    let suite = SuiteConfig {
        model: cfg.model.clone(),
        weights: cfg.objectives,
        train: cfg.train.clone(),
        seeds: seeds.to_vec(),
        metrics: metrics.to_vec(),
        pool_size: cfg.eval.pool_size,
    };
    let td = TrainData {
        dataset: &ds,
        splits: &splits,
        features: &features,
    };
    let table = run_ablation_suite(td, &suite, variants)?;
    write_text(&out.join("ablation.csv"), &table.to_csv())?;
    write_text(&out.join("ablation.md"), &table.to_markdown())?;
    write_json(
        &out.join("ablation.json"),
        &json!({
            "config": cfg.to_value(),
            "variants": variants,
            "table": table,
        }),
    )?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_grad_check(config: &ConfigArgs, seed: u64, max_entries: usize, sabotage: Option<String>) -> Result<(), Failure> {
    let cfg = config.load()?;
    let opts = GradCheckOptions {
        max_entries: Some(max_entries.max(1)),
        seed,
        sabotage,
        ..GradCheckOptions::default()
    };
    let report = check_model_gradients(&cfg.model, &cfg.objectives, seed, &opts)?;
    let mut failed = Vec::new();
    for b in &report.blocks {
        let ok = b.max_rel_error < GRAD_CHECK_TOLERANCE;
        println!(
            "{} {:<40} max_rel_error {:.3e} (entries {})",
            if ok { "ok  " } else { "FAIL" },
            b.name,
            b.max_rel_error,
            b.checked
        );
        if !ok {
            failed.push(b.name.clone());
        }
    }
    println!(
        "{} blocks, worst relative error {:.3e}, tolerance {GRAD_CHECK_TOLERANCE:e}",
        report.blocks.len(),
        report.max_rel_error()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::GradCheck(failed))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData {
            out,
            nodes,
            events,
            communities,
            recency_bias,
            recent_window,
            seed,
        } => {
            let mut cfg = SyntheticConfig::new(nodes, events, communities, recency_bias, seed);
            cfg.recent_window = recent_window;
            let ds = generate_synthetic(&cfg)?;
            write_dataset_dir(&ds, &out)?;
            write_json(&out.join("manifest.json"), &manifest(&ds, json!({ "synthetic": cfg })))?;
            println!("wrote {} events over {} nodes to {}", ds.num_events(), ds.num_nodes(), out.display());
        }
        Command::ConvertDtgb { input, out } => {
            let ds = convert_dtgb(&input, &out)?;
            write_json(
                &out.join("manifest.json"),
                &manifest(&ds, json!({ "dtgb": input.display().to_string() })),
            )?;
            println!("converted {} events over {} nodes to {}", ds.num_events(), ds.num_nodes(), out.display());
        }
        Command::Train { config, data, out } => cmd_train(&config, &data, &out)?,
        Command::Eval {
            checkpoint,
            config,
            data,
            split,
            setting,
            task,
            out,
        } => cmd_eval(&checkpoint, &config, &data, split, setting, task, out.as_deref())?,
        Command::Ablate {
            config,
            data,
            out,
            variants,
            seeds,
            metrics,
        } => cmd_ablate(&config, &data, &out, &variants, &seeds, &metrics)?,
        Command::GradCheck {
            config,
            seed,
            max_entries,
            sabotage,
        } => cmd_grad_check(&config, seed, max_entries, sabotage)?,
    }
    Ok(())
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("PRISM_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("PRISM_NUM_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().map_err(Failure::from).and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::GradCheck(blocks)) => {
            eprintln!("gradient check failed for blocks: {}", blocks.join(", "));
            ExitCode::from(1)
        }
    }
}
