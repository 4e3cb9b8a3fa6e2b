//! The `knobcf` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use knobcf_core::classifier::{finetune, ClassifierTrainConfig, KnobClassifier};
use knobcf_core::gmm::MIN_SAMPLES;
use knobcf_core::knob::KnobSpace;
use knobcf_core::orchestrator::{
    labeled_training_set, measure_uncertainty_latency, run_full_eval_baseline, Clock, EvalMode, NoClock, QueryEvent,
    TuningDataset, TuningOutcome, TuningParams, TuningRow,
};
use knobcf_core::sim::{generate_simulator_spec, standard_space, GeneratorParams};
use knobcf_core::tuner::tuner_by_name;
use serde::Serialize;

use crate::config::{load_run_config, LoadedConfig, TunerChoice};
use crate::external::WallClock;
use crate::formats::{
    self, config_hash, dataset_configs, log_events, read_eval_log, summarize_log, write_eval_log, write_json,
    write_label_store, write_series, ClassifierCheckpoint, ConfigsFile, EmbeddingCheckpoint, LogSummary, ReportFile,
    FORMAT_VERSION,
};
use crate::pipeline::{
    collect_samples, embed_workload, pretrain, sweep_spread, sweep_widths, tune_knobcf, FewShotConfig, PretrainConfig,
    PretrainTask, TuneFailure,
};

#[derive(Debug, Parser)]
#[command(name = "knobcf", version, about = "Uncertainty-aware knob tuning with evaluation skipping")]
pub struct Cli {
    /// Overrides the seed of every run configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for outputs; defaults to the configuration's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace an existing, non-empty run directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the query embedding and classifier on historical tasks.
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained classifier on the early rows of a tuning run.
    Finetune(FinetuneArgs),
    /// Run a tuning session and write its log, report and series.
    Tune(TuneArgs),
    /// Summarize one or more evaluation logs.
    Report(ReportArgs),
    /// Generate a simulator specification.
    SimulateSpec(SimulateSpecArgs),
    /// Pretrain and tune once per classifier output width.
    Sweep(SweepArgs),
}

/// Flags that override fields of a run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Classifier output width.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub init_count: Option<usize>,
    /// Number of tuning iterations.
    #[arg(long = "iters")]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub m_min: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Judge-off iterations before fine-tuning; 0 disables fine-tuning.
    #[arg(long)]
    pub f: Option<usize>,
    #[arg(long)]
    pub tuner: Option<TunerChoice>,
    /// LHS evaluations per pretraining task.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub time_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// One run configuration per historical task.
    #[arg(long = "config", required = true, num_args = 1..)]
    pub configs: Vec<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by `pretrain`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory written by `tune`; its initialization and first F
    /// iterations are the fine-tuning data.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Execute every query; no classifier is used.
    FullEval,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by `pretrain` or `finetune`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<Baseline>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation logs; ratios are relative to the last one.
    #[arg(required = true, num_args = 1..)]
    pub logs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateSpecArgs {
    #[arg(long, default_value_t = 10)]
    pub queries: usize,
    #[arg(long, default_value_t = 2)]
    pub min_regimes: usize,
    #[arg(long, default_value_t = 3)]
    pub max_regimes: usize,
    #[arg(long, default_value_t = 2)]
    pub max_sensitive: usize,
    #[arg(long, default_value_t = 0.03)]
    pub relative_sigma: f64,
    #[arg(long, default_value_t = 0.04)]
    pub weight_budget: f64,
    /// Knob space file; defaults to the built-in standard space.
    #[arg(long)]
    pub space: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![8, 10, 12, 14, 16])]
    pub widths: Vec<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Parses `args` (including the program name) and runs the command,
/// returning what it printed.
pub fn run_from<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(&cli)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(cli, a),
        Command::Finetune(a) => cmd_finetune(cli, a),
        Command::Tune(a) => cmd_tune(cli, a),
        Command::Report(a) => cmd_report(cli, a),
        Command::SimulateSpec(a) => cmd_simulate_spec(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
    }
}

pub fn main() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn load(cli: &Cli, path: &Path, o: &Overrides) -> Result<LoadedConfig> {
    let mut c = load_run_config(path)?;
    let r = &mut c.config;
    if let Some(s) = cli.seed {
        r.seed = s;
    }
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = o.$f { r.$f = v; } )* };
    }
    apply!(n, init_count, iterations, m_min, tau, f, tuner, time_scale);
    if let Some(s) = o.samples {
        r.pretrain_samples = s;
    }
    if o.max_epochs.is_some() {
        r.max_epochs = o.max_epochs;
    }
    r.validate(path)?;
    Ok(c)
}

/// Creates the run directory, refusing to reuse a non-empty one unless
/// forced.
fn prepare_out(cli: &Cli, fallback: Option<PathBuf>) -> Result<PathBuf> {
    let out = cli
        .out
        .clone()
        .or(fallback)
        .ok_or_else(|| anyhow!("no output directory: pass --out or set output_dir in the configuration"))?;
    if out.exists() {
        let occupied = fs::read_dir(&out).with_context(|| out.display().to_string())?.next().is_some();
        if occupied {
            if !cli.force {
                bail!("{} already exists and is not empty; pass --force to overwrite it", out.display());
            }
            fs::remove_dir_all(&out).with_context(|| out.display().to_string())?;
        }
    }
    fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
    Ok(out)
}

fn config_out(c: &LoadedConfig) -> Option<PathBuf> {
    c.config.output_dir.as_ref().map(|p| c.resolve(p))
}

fn classifier_config(c: &LoadedConfig, seed: u64) -> ClassifierTrainConfig {
    let mut cfg = ClassifierTrainConfig { seed, ..ClassifierTrainConfig::default() };
    if let Some(e) = c.config.max_epochs {
        cfg.max_epochs = e;
    }
    cfg
}

fn hash_of<T: Serialize>(value: &T) -> String {
    config_hash(&serde_json::to_vec(value).unwrap_or_default())
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(config_hash(&fs::read(path).with_context(|| path.display().to_string())?))
}

#[derive(Debug, Serialize)]
struct PretrainSummary<'a> {
    version: u32,
    config_hash: &'a str,
    tasks: Vec<String>,
    n: usize,
    samples: BTreeMap<String, usize>,
    train_rows: usize,
    holdout_rows: usize,
    holdout: knobcf_core::classifier::ClassificationMetrics,
    embedding_epochs: usize,
    embedding_final_loss: Option<f64>,
    classifier_epochs: usize,
    classifier_final_loss: Option<f64>,
    components: BTreeMap<String, BTreeMap<String, usize>>,
    importance: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

fn cmd_pretrain(cli: &Cli, a: &PretrainArgs) -> Result<String> {
    let configs: Vec<LoadedConfig> = a.configs.iter().map(|p| load(cli, p, &a.overrides)).collect::<Result<_>>()?;
    let first = &configs[0];
    let mut names: Vec<&str> = configs.iter().map(|c| c.config.task.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        bail!("task name `{}` is used by more than one configuration", w[0]);
    }
    let mut shortfalls = Vec::new();
    for c in &configs {
        if c.config.pretrain_samples < MIN_SAMPLES {
            for q in c.workload()?.ids() {
                shortfalls.push(format!(
                    "task `{}`, query `{q}`: {} samples, need at least {MIN_SAMPLES}",
                    c.config.task, c.config.pretrain_samples
                ));
            }
        }
    }
    if !shortfalls.is_empty() {
        bail!("insufficient samples:\n  {}", shortfalls.join("\n  "));
    }
    let out = prepare_out(cli, config_out(first))?;
    let hashes: Vec<String> = configs.iter().map(|c| c.hash()).collect::<Result<_, _>>()?;
    let hash = hash_of(&("pretrain", &hashes));

    let mut tasks = Vec::with_capacity(configs.len());
    for c in &configs {
        let space = c.knob_space()?;
        let workload = c.workload()?;
        let backend = c.backend(&space, &out.join("scratch"))?;
        let samples = collect_samples(&*backend, &space, &workload.ids(), c.config.pretrain_samples, c.config.seed)
            .with_context(|| format!("collecting samples for task `{}`", c.config.task))?;
        tasks.push(PretrainTask {
            name: c.config.task.clone(),
            space,
            workload,
            samples,
        });
    }
    let seed = first.config.seed;
    let cfg = PretrainConfig {
        width: first.config.n,
        tau: first.config.tau,
        seed,
        classifier: classifier_config(first, seed),
        ..PretrainConfig::default()
    };
    let result = pretrain(&tasks, &cfg)?;

    let knobs: Vec<String> = result.space.knobs().iter().map(|k| k.name.clone()).collect();
    write_json(
        &out.join("embedding.json"),
        &EmbeddingCheckpoint {
            version: FORMAT_VERSION,
            config_hash: hash.clone(),
            d: result.embedding.dim,
            knobs,
            model: result.embedding.clone(),
            head: result.head.clone(),
        },
    )?;
    write_json(&out.join("classifier.json"), &ClassifierCheckpoint::new(&result.classifier, &result.space, &hash))?;
    let mut components: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for ((t, q), m) in &result.mixtures {
        components.entry(t.clone()).or_default().insert(q.clone(), m.len());
    }
    let mut importance: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
    for ((t, q), v) in &result.importance {
        let by_knob = result.space.knobs().iter().filter_map(|k| v.get(&k.name).map(|x| (k.name.clone(), x))).collect();
        importance.entry(t.clone()).or_default().insert(q.clone(), by_knob);
    }
    let summary = PretrainSummary {
        version: FORMAT_VERSION,
        config_hash: &hash,
        tasks: tasks.iter().map(|t| t.name.clone()).collect(),
        n: cfg.width,
        samples: configs.iter().map(|c| (c.config.task.clone(), c.config.pretrain_samples)).collect(),
        train_rows: result.train_rows,
        holdout_rows: result.holdout_rows,
        holdout: result.holdout,
        embedding_epochs: result.embedding_trace.len(),
        embedding_final_loss: result.embedding_trace.last(),
        classifier_epochs: result.classifier_trace.len(),
        classifier_final_loss: result.classifier_trace.last(),
        components,
        importance,
    };
    write_json(&out.join("pretrain.json"), &summary)?;
    let h = &result.holdout;
    Ok(format!(
        "pretrained on {} task(s), {} training rows, {} holdout rows\nholdout accuracy {:.4} precision {:.4} recall {:.4}\nwrote {}\n",
        tasks.len(),
        result.train_rows,
        result.holdout_rows,
        h.accuracy,
        h.precision,
        h.recall,
        out.display()
    ))
}

/// Checkpoint loaded for tuning a given task.
struct Checkpoint {
    classifier: KnobClassifier,
    embedding: EmbeddingCheckpoint,
    hash: String,
}

fn load_checkpoint(dir: &Path, c: &LoadedConfig, task_space: &KnobSpace) -> Result<Checkpoint> {
    let emb_path = dir.join("embedding.json");
    let clf_path = dir.join("classifier.json");
    let embedding = EmbeddingCheckpoint::read(&emb_path)?;
    let clf = ClassifierCheckpoint::read(&clf_path)?;
    if clf.n != c.config.n {
        bail!("{}: classifier output width n = {} does not match the run configuration's n = {}", clf_path.display(), clf.n, c.config.n);
    }
    if clf.d != embedding.d {
        bail!("{}: classifier embedding dimension d = {} does not match the embedding checkpoint's d = {}", clf_path.display(), clf.d, embedding.d);
    }
    for k in task_space.knobs() {
        let Some(spec) = clf.knobs.get(&k.name) else {
            bail!("{}: knob `{}` of the task is not in the classifier's knob space", clf_path.display(), k.name);
        };
        if spec.width() != k.width() {
            bail!("{}: knob `{}` has encoding width {} in the checkpoint but {} in the task", clf_path.display(), k.name, spec.width(), k.width());
        }
    }
    let model = clf.model().map_err(|e| anyhow!("{}: {e}", clf_path.display()))?;
    let workload = c.workload()?;
    let embeddings = embed_workload(&embedding.model, &workload)?;
    let hash = config_hash(format!("{}{}", file_hash(&emb_path)?, file_hash(&clf_path)?).as_bytes());
    Ok(Checkpoint {
        classifier: KnobClassifier {
            model,
            space: clf.knobs,
            embeddings,
        },
        embedding,
        hash,
    })
}

fn tuning_params(c: &LoadedConfig) -> TuningParams {
    TuningParams {
        task: c.config.task.clone(),
        iterations: c.config.iterations,
        init_count: c.config.init_count,
        seed: c.config.seed,
        width: c.config.n,
        m_min: c.config.m_min,
    }
}

fn write_run(out: &Path, outcome: &TuningOutcome, space: &KnobSpace, hash: &str, task: &str, tuner: &str, baseline: bool) -> Result<()> {
    write_eval_log(&out.join("eval_log.csv"), &log_events(&outcome.dataset, space), hash)?;
    write_json(
        &out.join("configs.json"),
        &ConfigsFile {
            version: FORMAT_VERSION,
            config_hash: hash.to_string(),
            configs: dataset_configs(&outcome.dataset, space),
        },
    )?;
    write_label_store(&out.join("store.csv"), &outcome.store, hash)?;
    write_series(&out.join("series.csv"), &outcome.report.series, hash)?;
    write_json(
        &out.join("report.json"),
        &ReportFile {
            version: FORMAT_VERSION,
            config_hash: hash.to_string(),
            task: task.to_string(),
            tuner: tuner.to_string(),
            baseline,
            report: outcome.report.clone(),
        },
    )?;
    Ok(())
}

fn cmd_tune(cli: &Cli, a: &TuneArgs) -> Result<String> {
    let c = load(cli, &a.config, &a.overrides)?;
    let baseline = a.baseline == Some(Baseline::FullEval);
    if !baseline && a.checkpoint.is_none() {
        bail!("tune needs --checkpoint unless --baseline full-eval is given");
    }
    let space = c.knob_space()?;
    let checkpoint = match (&a.checkpoint, baseline) {
        (Some(dir), false) => Some(load_checkpoint(dir, &c, &space)?),
        _ => None,
    };
    let out = prepare_out(cli, config_out(&c))?;
    let hash = hash_of(&("tune", c.hash()?, baseline, checkpoint.as_ref().map(|k| k.hash.clone())));
    write_json(&out.join("run.json"), &c.config)?;

    let queries = c.workload()?.ids();
    let backend = c.backend(&space, &out.join("scratch"))?;
    let tuner_name = c.config.tuner.name();
    let mut tuner = tuner_by_name(tuner_name, space.clone(), c.config.seed).map_err(|n| anyhow!("unknown tuner `{n}`"))?;
    let wall = WallClock::new();
    let clock: &dyn Clock = if c.config.measure_overhead { &wall } else { &NoClock };
    let params = tuning_params(&c);

    let mut final_classifier = None;
    let result = match checkpoint {
        None => run_full_eval_baseline(&queries, &*backend, tuner.as_mut(), params, clock).map_err(|e| TuneFailure { error: e.into(), partial: None }),
        Some(ck) => {
            let few_shot = (c.config.f > 0).then(|| FewShotConfig {
                iterations: c.config.f,
                tau: c.config.tau,
                seed: c.config.seed,
                classifier: classifier_config(&c, c.config.seed),
            });
            let finetuned = few_shot.is_some();
            match tune_knobcf(&queries, &*backend, tuner.as_mut(), ck.classifier, params, few_shot.as_ref(), clock) {
                Ok((outcome, clf)) => {
                    if finetuned {
                        final_classifier = Some((clf, ck.embedding));
                    }
                    Ok(outcome)
                }
                Err(e) => Err(e),
            }
        }
    };
    let mut outcome = match result {
        Ok(o) => o,
        Err(failure) => {
            if let Some(partial) = &failure.partial {
                write_run(&out, partial, &space, &hash, &c.config.task, tuner_name, baseline)?;
            }
            return Err(anyhow!(failure.error)).context(format!("tuning aborted; partial artifacts are in {}", out.display()));
        }
    };
    if !outcome.dataset.rows.is_empty() {
        let p90 = measure_uncertainty_latency(&*backend, &outcome.report.best_config, &queries, c.config.p90_repeats)?;
        outcome.report.p90 = Some(p90);
    }
    write_run(&out, &outcome, &space, &hash, &c.config.task, tuner_name, baseline)?;
    if let Some((clf, embedding)) = final_classifier {
        write_json(&out.join("classifier.json"), &ClassifierCheckpoint::new(&clf.model, &clf.space, &hash))?;
        write_json(&out.join("embedding.json"), &EmbeddingCheckpoint { config_hash: hash.clone(), ..embedding })?;
    }
    let r = &outcome.report;
    Ok(format!(
        "best total {:.6} s at row {}\nexecuted {} (init {}), estimated {}\naverage iteration time {:.6} s\np90 {}\nwrote {}\n",
        r.best_total,
        r.best_row,
        r.init_executed + r.executed_queries,
        r.init_executed,
        r.estimated_queries,
        r.average_iteration_time,
        r.p90.map_or("n/a".to_string(), |p| format!("{p:.6} s")),
        out.display()
    ))
}

/// Rebuilds the rows of a run directory from its log and configurations.
fn dataset_from_run(run: &Path) -> Result<TuningDataset> {
    let log = read_eval_log(&run.join("eval_log.csv"))?;
    let configs: ConfigsFile = formats::read_json(&run.join("configs.json"))?;
    let mut rows: BTreeMap<usize, TuningRow> = BTreeMap::new();
    for e in log.events {
        let config = configs
            .configs
            .get(&e.config_id)
            .ok_or_else(|| anyhow!("{}: configuration {} is missing", run.join("configs.json").display(), e.config_id))?;
        let row = rows.entry(e.iteration).or_insert_with(|| TuningRow {
            index: e.iteration,
            phase: e.phase,
            config: config.clone(),
            total: 0.0,
            events: Vec::new(),
            iteration_time: e.iteration_seconds,
        });
        row.total += e.latency;
        row.events.push(QueryEvent {
            query: e.query,
            mode: e.mode,
            latency: e.latency,
            label: e.label,
            truth: e.truth,
        });
    }
    Ok(TuningDataset { rows: rows.into_values().collect() })
}

fn cmd_finetune(cli: &Cli, a: &FinetuneArgs) -> Result<String> {
    let c = load(cli, &a.config, &a.overrides)?;
    let space = c.knob_space()?;
    let ck = load_checkpoint(&a.checkpoint, &c, &space)?;
    let mut dataset = dataset_from_run(&a.run)?;
    let keep = c.config.init_count + c.config.f;
    dataset.rows.retain(|r| r.index < keep);
    let executed = dataset.rows.iter().flat_map(|r| &r.events).filter(|e| e.mode == EvalMode::Executed).count();
    if executed == 0 {
        bail!("{}: no executed evaluations in the first {keep} rows", a.run.display());
    }
    let out = prepare_out(cli, config_out(&c))?;
    let hash = hash_of(&("finetune", c.hash()?, &ck.hash, file_hash(&a.run.join("eval_log.csv"))?));
    let mut clf = ck.classifier;
    let set = labeled_training_set(&dataset, &clf.space, &clf.embeddings, c.config.n, c.config.tau, c.config.seed)?;
    let before = clf.evaluate(&set)?;
    let trace = finetune(&mut clf.model, &set, &classifier_config(&c, c.config.seed), &c.config.task)?;
    let after = clf.evaluate(&set)?;
    write_json(&out.join("classifier.json"), &ClassifierCheckpoint::new(&clf.model, &clf.space, &hash))?;
    write_json(&out.join("embedding.json"), &EmbeddingCheckpoint { config_hash: hash.clone(), ..ck.embedding })?;
    Ok(format!(
        "fine-tuned on {} rows for {} epochs\naccuracy on those rows {:.4} -> {:.4}\nwrote {}\n",
        set.len(),
        trace.len(),
        before.accuracy,
        after.accuracy,
        out.display()
    ))
}

#[derive(Debug, Serialize)]
struct ReportRow {
    log: String,
    summary: LogSummary,
    p90: Option<f64>,
    throughput: Option<f64>,
    executed_ratio: f64,
    best_ratio: f64,
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> Result<String> {
    let mut rows = Vec::with_capacity(a.logs.len());
    for path in &a.logs {
        let log = read_eval_log(path)?;
        let summary = summarize_log(&log);
        let sibling = path.with_file_name("report.json");
        let report: Option<ReportFile> = if sibling.is_file() { Some(formats::read_json(&sibling)?) } else { None };
        rows.push(ReportRow {
            log: path.display().to_string(),
            p90: report.as_ref().and_then(|r| r.report.p90),
            throughput: report.as_ref().map(|r| r.report.throughput),
            summary,
            executed_ratio: 1.0,
            best_ratio: 1.0,
        });
    }
    let (base_exec, base_best) = {
        let last = &rows[rows.len() - 1].summary;
        (last.executed as f64, last.best_total)
    };
    for r in &mut rows {
        r.executed_ratio = if base_exec > 0.0 { r.summary.executed as f64 / base_exec } else { 0.0 };
        r.best_ratio = r.summary.best_total / base_best;
    }
    let mut text = String::new();
    let na = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(
        text,
        "{:<40} {:>6} {:>8} {:>9} {:>8} {:>11} {:>11} {:>10} {:>8} {:>9} {:>8} {:>10} {:>10}",
        "log", "iters", "executed", "estimated", "est_frac", "avg_iter_s", "best_total", "p90", "accuracy", "precision", "recall", "exec_ratio", "best_ratio"
    );
    for r in &rows {
        let s = &r.summary;
        let m = s.metrics;
        let _ = writeln!(
            text,
            "{:<40} {:>6} {:>8} {:>9} {:>8.4} {:>11.4} {:>11.4} {:>10} {:>8} {:>9} {:>8} {:>10.4} {:>10.4}",
            r.log,
            s.iterations,
            s.executed,
            s.estimated,
            s.estimated_fraction,
            s.average_iteration_time,
            s.best_total,
            na(r.p90),
            na(m.map(|m| m.accuracy)),
            na(m.map(|m| m.precision)),
            na(m.map(|m| m.recall)),
            r.executed_ratio,
            r.best_ratio
        );
    }
    if cli.out.is_some() {
        let out = prepare_out(cli, None)?;
        write_json(&out.join("summary.json"), &rows)?;
        for (i, r) in rows.iter().enumerate() {
            write_series(&out.join(format!("series_{i}.csv")), &r.summary.series, "")?;
        }
    }
    Ok(text)
}

fn cmd_simulate_spec(cli: &Cli, a: &SimulateSpecArgs) -> Result<String> {
    let space = match &a.space {
        Some(p) => formats::read_knob_space(p)?,
        None => standard_space(),
    };
    let params = GeneratorParams {
        seed: cli.seed.unwrap_or(0),
        queries: a.queries,
        min_regimes: a.min_regimes,
        max_regimes: a.max_regimes,
        max_sensitive: a.max_sensitive,
        relative_sigma: a.relative_sigma,
        weight_budget: a.weight_budget,
    };
    let spec = generate_simulator_spec(&params, &space)?;
    let mut json = serde_json::to_string_pretty(&spec)?;
    json.push('\n');
    if cli.out.is_none() {
        return Ok(json);
    }
    let out = prepare_out(cli, None)?;
    fs::write(out.join("spec.json"), &json).with_context(|| out.display().to_string())?;
    formats::write_knob_space(&out.join("space.json"), &space)?;
    Ok(format!("wrote {} queries to {}\n", spec.queries.len(), out.join("spec.json").display()))
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<String> {
    let c = load(cli, &a.config, &a.overrides)?;
    for &w in &a.widths {
        if !(1..=knobcf_core::gmm::MAX_WIDTH).contains(&w) {
            bail!("width {w} is outside [1, {}]", knobcf_core::gmm::MAX_WIDTH);
        }
    }
    let out = prepare_out(cli, config_out(&c))?;
    let hash = hash_of(&("sweep", c.hash()?, &a.widths));
    let space = c.knob_space()?;
    let workload = c.workload()?;
    let backend = c.backend(&space, &out.join("scratch"))?;
    let samples = collect_samples(&*backend, &space, &workload.ids(), c.config.pretrain_samples, c.config.seed)?;
    let task = PretrainTask {
        name: c.config.task.clone(),
        space: space.clone(),
        workload,
        samples,
    };
    let seed = c.config.seed;
    let cfg = PretrainConfig {
        tau: c.config.tau,
        seed,
        classifier: classifier_config(&c, seed),
        ..PretrainConfig::default()
    };
    let few_shot = (c.config.f > 0).then(|| FewShotConfig {
        iterations: c.config.f,
        tau: c.config.tau,
        seed,
        classifier: classifier_config(&c, seed),
    });
    let tuner_name = c.config.tuner.name();
    let points = sweep_widths(
        &task,
        &*backend,
        &a.widths,
        &cfg,
        &tuning_params(&c),
        few_shot.as_ref(),
        || tuner_by_name(tuner_name, space.clone(), seed).expect("tuner names come from TunerChoice"),
        |_| None,
    )?;
    let mut text = String::new();
    let _ = writeln!(text, "{:>5} {:>9} {:>9} {:>8} {:>11} {:>8} {:>9}", "n", "accuracy", "precision", "recall", "best_total", "executed", "estimated");
    for p in &points {
        let _ = writeln!(
            text,
            "{:>5} {:>9.4} {:>9.4} {:>8.4} {:>11.4} {:>8} {:>9}",
            p.width, p.holdout.accuracy, p.holdout.precision, p.holdout.recall, p.best_total, p.executed_queries, p.estimated_queries
        );
        let dir = out.join(format!("n{}", p.width));
        fs::create_dir_all(&dir)?;
        write_json(
            &dir.join("report.json"),
            &ReportFile {
                version: FORMAT_VERSION,
                config_hash: hash.clone(),
                task: c.config.task.clone(),
                tuner: tuner_name.to_string(),
                baseline: false,
                report: p.report.clone(),
            },
        )?;
    }
    let spread = sweep_spread(&points);
    let _ = writeln!(text, "accuracy spread {:.4}, best-total spread {:.4}", spread.accuracy, spread.best_total);
    let mut csv_text = format!("# config_hash={hash}\nn,accuracy,precision,recall,best_total,executed,estimated\n");
    for p in &points {
        let _ = writeln!(
            csv_text,
            "{},{},{},{},{},{},{}",
            p.width, p.holdout.accuracy, p.holdout.precision, p.holdout.recall, p.best_total, p.executed_queries, p.estimated_queries
        );
    }
    fs::write(out.join("sweep.csv"), csv_text)?;
    Ok(text)
}
