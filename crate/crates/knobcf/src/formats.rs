//! On-disk formats. Structured documents are versioned JSON; logs are CSV
//! with `#` comment lines carrying the configuration hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use knobcf_core::classifier::{ClassificationMetrics, ClassifierModel, Provenance};
use knobcf_core::embedding::{EmbeddingModel, ImportanceHead};
use knobcf_core::gmm::{CategoryLabel, MAX_WIDTH};
use knobcf_core::knob::{KnobConfiguration, KnobSpace};
use knobcf_core::nn::{Dense, Mlp};
use knobcf_core::orchestrator::{average_iteration_time, EvalMode, Phase, TuningDataset, TuningReport};
use knobcf_core::plan::{parse_plan, RawPlan, Workload};
use knobcf_core::sim::SimulatorSpec;
use knobcf_core::store::LabelStore;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: line {line}: {reason}")]
    Row { path: PathBuf, line: u64, reason: String },
    #[error("{path}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

impl FormatError {
    pub fn invalid(path: &Path, reason: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Stable identifier of a configuration within a knob space.
pub fn config_id(space: &KnobSpace, config: &KnobConfiguration) -> String {
    format!("{:016x}", space.fingerprint(config))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn check_version(path: &Path, found: u32) -> Result<(), FormatError> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(FormatError::Version {
            path: path.to_path_buf(),
            found,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KnobSpaceFile {
    version: u32,
    knobs: KnobSpace,
}

pub fn read_knob_space(path: &Path) -> Result<KnobSpace, FormatError> {
    let file: KnobSpaceFile = read_json(path)?;
    check_version(path, file.version)?;
    Ok(file.knobs)
}

pub fn write_knob_space(path: &Path, space: &KnobSpace) -> Result<(), FormatError> {
    write_json(
        path,
        &KnobSpaceFile {
            version: FORMAT_VERSION,
            knobs: space.clone(),
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanFile {
    version: u32,
    #[serde(flatten)]
    plan: RawPlan,
}

pub fn read_plan(path: &Path) -> Result<RawPlan, FormatError> {
    let file: PlanFile = read_json(path)?;
    check_version(path, file.version)?;
    Ok(file.plan)
}

pub fn write_plan(path: &Path, plan: &RawPlan) -> Result<(), FormatError> {
    write_json(
        path,
        &PlanFile {
            version: FORMAT_VERSION,
            plan: plan.clone(),
        },
    )
}

/// Loads one plan file per query id.
pub fn read_workload(plans: &BTreeMap<String, PathBuf>) -> Result<Workload, FormatError> {
    let mut queries = Vec::with_capacity(plans.len());
    for (id, path) in plans {
        let raw = read_plan(path)?;
        let graph = parse_plan(&raw).map_err(|e| FormatError::invalid(path, e.to_string()))?;
        queries.push((id.clone(), graph));
    }
    Workload::new(queries).map_err(|e| FormatError::Invalid {
        path: PathBuf::from("<workload>"),
        reason: e.to_string(),
    })
}

pub fn read_simulator_spec(path: &Path) -> Result<SimulatorSpec, FormatError> {
    let spec: SimulatorSpec = read_json(path)?;
    check_version(path, spec.version)?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCheckpoint {
    pub version: u32,
    pub config_hash: String,
    pub d: usize,
    /// Knob names the importance head predicts, in order.
    pub knobs: Vec<String>,
    pub model: EmbeddingModel,
    pub head: ImportanceHead,
}

impl EmbeddingCheckpoint {
    pub fn read(path: &Path) -> Result<EmbeddingCheckpoint, FormatError> {
        let c: EmbeddingCheckpoint = read_json(path)?;
        check_version(path, c.version)?;
        if c.model.dim != c.d {
            return Err(FormatError::invalid(path, format!("model dimension {} does not match d = {}", c.model.dim, c.d)));
        }
        if c.head.knobs() != c.knobs.len() {
            return Err(FormatError::invalid(path, "importance head width does not match the knob list"));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    pub version: u32,
    pub config_hash: String,
    pub n: usize,
    pub d: usize,
    pub encoding_width: usize,
    pub provenance: Provenance,
    /// Union knob space the encoding is defined over.
    pub knobs: KnobSpace,
    pub shapes: Vec<LayerShape>,
    pub layers: Vec<LayerWeights>,
}

impl ClassifierCheckpoint {
    pub fn new(model: &ClassifierModel, space: &KnobSpace, config_hash: &str) -> ClassifierCheckpoint {
        ClassifierCheckpoint {
            version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            n: model.output_width,
            d: model.embedding_dim,
            encoding_width: model.encoding_width,
            provenance: model.provenance.clone(),
            knobs: space.clone(),
            shapes: model
                .mlp
                .layers
                .iter()
                .map(|l| LayerShape {
                    inputs: l.inputs,
                    outputs: l.outputs,
                })
                .collect(),
            layers: model
                .mlp
                .layers
                .iter()
                .map(|l| LayerWeights {
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn read(path: &Path) -> Result<ClassifierCheckpoint, FormatError> {
        let c: ClassifierCheckpoint = read_json(path)?;
        check_version(path, c.version)?;
        c.model().map_err(|reason| FormatError::invalid(path, reason))?;
        Ok(c)
    }

    /// Rebuilds the model, checking every recorded dimension.
    pub fn model(&self) -> Result<ClassifierModel, String> {
        if !(1..=MAX_WIDTH).contains(&self.n) {
            return Err(format!("n = {} is outside [1, {MAX_WIDTH}]", self.n));
        }
        if self.knobs.width() != self.encoding_width {
            return Err(format!(
                "encoding width {} does not match the knob space width {}",
                self.encoding_width,
                self.knobs.width()
            ));
        }
        if self.shapes.len() != self.layers.len() {
            return Err(format!("{} layer shapes but {} weight blocks", self.shapes.len(), self.layers.len()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, (shape, w)) in self.shapes.iter().zip(&self.layers).enumerate() {
            if w.weights.len() != shape.inputs * shape.outputs || w.bias.len() != shape.outputs {
                return Err(format!("layer {i}: weight count does not match shape {}x{}", shape.outputs, shape.inputs));
            }
            layers.push(Dense {
                inputs: shape.inputs,
                outputs: shape.outputs,
                weights: w.weights.clone(),
                bias: w.bias.clone(),
            });
        }
        let model = ClassifierModel {
            embedding_dim: self.d,
            encoding_width: self.encoding_width,
            output_width: self.n,
            mlp: Mlp { layers },
            provenance: self.provenance.clone(),
        };
        if !model.shapes_consistent() {
            return Err(format!(
                "layer shapes do not chain from d + encoding width = {} to n = {}",
                self.d + self.encoding_width,
                self.n
            ));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub version: u32,
    pub config_hash: String,
    pub task: String,
    pub tuner: String,
    pub baseline: bool,
    pub report: TuningReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigsFile {
    pub version: u32,
    pub config_hash: String,
    pub configs: BTreeMap<String, KnobConfiguration>,
}

/// One row of the evaluation log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    pub iteration: usize,
    pub phase: Phase,
    pub config_id: String,
    pub query: String,
    pub mode: EvalMode,
    pub latency: f64,
    pub label: Option<CategoryLabel>,
    pub truth: Option<CategoryLabel>,
    /// Time of the whole iteration, repeated on each of its rows.
    pub iteration_seconds: f64,
}

pub const EVAL_LOG_HEADER: [&str; 9] = [
    "iteration",
    "phase",
    "config_id",
    "query",
    "mode",
    "latency",
    "label",
    "truth",
    "iteration_seconds",
];

pub fn log_events(dataset: &TuningDataset, space: &KnobSpace) -> Vec<LogEvent> {
    let mut out = Vec::new();
    for row in &dataset.rows {
        let id = config_id(space, &row.config);
        for e in &row.events {
            out.push(LogEvent {
                iteration: row.index,
                phase: row.phase,
                config_id: id.clone(),
                query: e.query.clone(),
                mode: e.mode,
                latency: e.latency,
                label: e.label,
                truth: e.truth,
                iteration_seconds: row.iteration_time,
            });
        }
    }
    out
}

pub fn dataset_configs(dataset: &TuningDataset, space: &KnobSpace) -> BTreeMap<String, KnobConfiguration> {
    dataset.rows.iter().map(|r| (config_id(space, &r.config), r.config.clone())).collect()
}

fn phase_str(p: Phase) -> &'static str {
    match p {
        Phase::Init => "init",
        Phase::Tune => "tune",
    }
}

fn mode_str(m: EvalMode) -> &'static str {
    match m {
        EvalMode::Executed => "executed",
        EvalMode::Estimated => "estimated",
    }
}

fn label_str(l: &Option<CategoryLabel>) -> String {
    l.map(|l| l.to_string()).unwrap_or_default()
}

/// Writes `# key=value` comment lines followed by CSV records.
fn write_csv(path: &Path, comments: &[(&str, &str)], header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    for (k, v) in comments {
        writeln!(buf, "# {k}={v}").map_err(io_err(path))?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| FormatError::invalid(path, e.to_string());
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(path))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn write_eval_log(path: &Path, events: &[LogEvent], config_hash: &str) -> Result<(), FormatError> {
    let rows = events.iter().map(|e| {
        vec![
            e.iteration.to_string(),
            phase_str(e.phase).to_string(),
            e.config_id.clone(),
            e.query.clone(),
            mode_str(e.mode).to_string(),
            e.latency.to_string(),
            label_str(&e.label),
            label_str(&e.truth),
            e.iteration_seconds.to_string(),
        ]
    });
    write_csv(path, &[("config_hash", config_hash)], &EVAL_LOG_HEADER, rows)
}

/// A parsed CSV file: the `# key=value` comments and the data records with
/// their 1-based line numbers.
struct CsvFile {
    comments: BTreeMap<String, String>,
    records: Vec<(u64, csv::StringRecord)>,
}

fn read_csv(path: &Path, header: &[&str]) -> Result<CsvFile, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut comments = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
            comments.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_reader(text.as_bytes());
    let row_err = |line: u64, reason: String| FormatError::Row {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let found = reader.headers().map_err(|e| row_err(e.position().map_or(1, |p| p.line()), e.to_string()))?.clone();
    let first_line = comments.len() as u64 + 1;
    if found.iter().ne(header.iter().copied()) {
        return Err(row_err(first_line, format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(","))));
    }
    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| row_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(row_err(line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        records.push((line, record));
    }
    Ok(CsvFile { comments, records })
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, value: &str) -> Result<T, FormatError> {
    value.parse().map_err(|_| FormatError::Row {
        path: path.to_path_buf(),
        line,
        reason: format!("invalid {name} `{value}`"),
    })
}

fn parse_label(path: &Path, line: u64, name: &str, value: &str) -> Result<Option<CategoryLabel>, FormatError> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, name, value).map(Some)
    }
}

/// Evaluation log contents and the configuration hash it was written under.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLog {
    pub config_hash: Option<String>,
    pub events: Vec<LogEvent>,
}

pub fn read_eval_log(path: &Path) -> Result<EvalLog, FormatError> {
    let file = read_csv(path, &EVAL_LOG_HEADER)?;
    let mut events = Vec::with_capacity(file.records.len());
    for (line, r) in &file.records {
        let line = *line;
        let phase = match &r[1] {
            "init" => Phase::Init,
            "tune" => Phase::Tune,
            other => return Err(FormatError::Row { path: path.to_path_buf(), line, reason: format!("invalid phase `{other}`") }),
        };
        let mode = match &r[4] {
            "executed" => EvalMode::Executed,
            "estimated" => EvalMode::Estimated,
            other => return Err(FormatError::Row { path: path.to_path_buf(), line, reason: format!("invalid mode `{other}`") }),
        };
        let latency: f64 = parse_field(path, line, "latency", &r[5])?;
        if !(latency.is_finite() && latency > 0.0) {
            return Err(FormatError::Row { path: path.to_path_buf(), line, reason: format!("latency `{}` is not a positive finite number", &r[5]) });
        }
        events.push(LogEvent {
            iteration: parse_field(path, line, "iteration", &r[0])?,
            phase,
            config_id: r[2].to_string(),
            query: r[3].to_string(),
            mode,
            latency,
            label: parse_label(path, line, "label", &r[6])?,
            truth: parse_label(path, line, "truth", &r[7])?,
            iteration_seconds: parse_field(path, line, "iteration_seconds", &r[8])?,
        });
    }
    if events.is_empty() {
        return Err(FormatError::invalid(path, "evaluation log has no rows"));
    }
    Ok(EvalLog {
        config_hash: file.comments.get("config_hash").cloned(),
        events,
    })
}

pub const STORE_HEADER: [&str; 3] = ["query", "label", "latency"];

pub fn write_label_store(path: &Path, store: &LabelStore, config_hash: &str) -> Result<(), FormatError> {
    let rows = store
        .iter()
        .flat_map(|(q, l, lat)| lat.iter().map(move |x| vec![q.to_string(), l.to_string(), x.to_string()]));
    write_csv(path, &[("config_hash", config_hash), ("task", store.task())], &STORE_HEADER, rows)
}

pub fn read_label_store(path: &Path) -> Result<LabelStore, FormatError> {
    let file = read_csv(path, &STORE_HEADER)?;
    let task = file.comments.get("task").cloned().unwrap_or_default();
    let mut store = LabelStore::new(&task);
    for (line, r) in &file.records {
        let label: CategoryLabel = parse_field(path, *line, "label", &r[1])?;
        let latency: f64 = parse_field(path, *line, "latency", &r[2])?;
        store.add(&r[0], label, latency);
    }
    Ok(store)
}

pub const SERIES_HEADER: [&str; 2] = ["cumulative_seconds", "best_total"];

pub fn write_series(path: &Path, series: &[(f64, f64)], config_hash: &str) -> Result<(), FormatError> {
    let rows = series.iter().map(|(t, b)| vec![t.to_string(), b.to_string()]);
    write_csv(path, &[("config_hash", config_hash)], &SERIES_HEADER, rows)
}

pub fn read_series(path: &Path) -> Result<Vec<(f64, f64)>, FormatError> {
    let file = read_csv(path, &SERIES_HEADER)?;
    file.records
        .iter()
        .map(|(line, r)| Ok((parse_field(path, *line, "seconds", &r[0])?, parse_field(path, *line, "best total", &r[1])?)))
        .collect()
}

/// Metrics recomputed from an evaluation log alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogSummary {
    pub iterations: usize,
    pub executed: usize,
    pub estimated: usize,
    pub estimated_fraction: f64,
    pub average_iteration_time: f64,
    pub best_total: f64,
    pub best_iteration: usize,
    /// Present when at least one row carries both a label and a truth of
    /// the same width.
    pub metrics: Option<ClassificationMetrics>,
    pub series: Vec<(f64, f64)>,
}

pub fn summarize_log(log: &EvalLog) -> LogSummary {
    let mut totals: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let (mut executed, mut estimated) = (0, 0);
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for e in &log.events {
        let entry = totals.entry(e.iteration).or_insert((0.0, e.iteration_seconds));
        entry.0 += e.latency;
        match e.mode {
            EvalMode::Executed => executed += 1,
            EvalMode::Estimated => estimated += 1,
        }
        if let (Some(l), Some(t)) = (e.label, e.truth) {
            if l.width() == t.width() {
                preds.push(l);
                truths.push(t);
            }
        }
    }
    let times: Vec<f64> = totals.values().map(|(_, t)| *t).collect();
    let mut series = Vec::with_capacity(totals.len());
    let (mut clock, mut best, mut best_iteration) = (0.0, f64::INFINITY, 0);
    for (&i, &(total, t)) in &totals {
        clock += t;
        if total < best {
            best = total;
            best_iteration = i;
        }
        series.push((clock, best));
    }
    let metrics = knobcf_core::classifier::classification_metrics(&preds, &truths).ok().filter(|_| !preds.is_empty());
    let events = executed + estimated;
    LogSummary {
        iterations: totals.len(),
        executed,
        estimated,
        estimated_fraction: if events == 0 { 0.0 } else { estimated as f64 / events as f64 },
        average_iteration_time: average_iteration_time(&times),
        best_total: best,
        best_iteration,
        metrics,
        series,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use knobcf_core::orchestrator::{QueryEvent, TuningRow};
    use knobcf_core::sim::standard_space;

    fn event(query: &str, mode: EvalMode, latency: f64, label: &str, truth: &str) -> QueryEvent {
        QueryEvent {
            query: query.into(),
            mode,
            latency,
            label: Some(label.parse().unwrap()),
            truth: Some(truth.parse().unwrap()),
        }
    }

    fn dataset() -> TuningDataset {
        let space = standard_space();
        let config = space.default_configuration();
        TuningDataset {
            rows: vec![
                TuningRow {
                    index: 0,
                    phase: Phase::Init,
                    config: config.clone(),
                    total: 3.0,
                    events: vec![event("q00", EvalMode::Executed, 1.0, "10", "10"), event("q01", EvalMode::Executed, 2.0, "01", "10")],
                    iteration_time: 3.0,
                },
                TuningRow {
                    index: 1,
                    phase: Phase::Tune,
                    config,
                    total: 2.5,
                    events: vec![event("q00", EvalMode::Estimated, 0.5, "10", "10"), event("q01", EvalMode::Executed, 2.0, "01", "01")],
                    iteration_time: 2.0,
                },
            ],
        }
    }

    #[test]
    fn eval_log_round_trips_and_summarizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let events = log_events(&dataset(), &standard_space());
        write_eval_log(&path, &events, "abc").unwrap();
        let log = read_eval_log(&path).unwrap();
        assert_eq!(log.events, events);
        assert_eq!(log.config_hash.as_deref(), Some("abc"));
        let s = summarize_log(&log);
        assert_eq!((s.iterations, s.executed, s.estimated), (2, 3, 1));
        assert_eq!(s.best_total, 2.5);
        assert_eq!(s.average_iteration_time, 2.5);
        assert_eq!(s.series, vec![(3.0, 3.0), (5.0, 2.5)]);
        let m = s.metrics.unwrap();
        assert_eq!((m.true_positives, m.false_negatives, m.false_positives), (3, 1, 1));
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        fs::write(
            &path,
            "# config_hash=x\niteration,phase,config_id,query,mode,latency,label,truth,iteration_seconds\n0,init,a,q00,executed,1.5,10,,1.5\n1,tune,a,q00,sideways,1.5,10,,1.5\n",
        )
        .unwrap();
        match read_eval_log(&path) {
            Err(FormatError::Row { line, reason, .. }) => {
                assert_eq!(line, 4);
                assert!(reason.contains("sideways"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_log_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_eval_log(&path, &[], "x").unwrap();
        assert!(matches!(read_eval_log(&path), Err(FormatError::Invalid { .. })));
    }

    #[test]
    fn classifier_checkpoint_round_trips_exactly() {
        let space = standard_space();
        let mut model = ClassifierModel::with_hidden(8, space.width(), 4, [16, 8], 3);
        model.provenance.pretrain_tasks = vec!["a".into()];
        model.provenance.finetune_task = Some("b".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.json");
        write_json(&path, &ClassifierCheckpoint::new(&model, &space, "h")).unwrap();
        let back = ClassifierCheckpoint::read(&path).unwrap();
        assert_eq!(back.model().unwrap(), model);
        assert_eq!(back.knobs, space);
    }

    #[test]
    fn classifier_checkpoint_names_bad_dimension() {
        let space = standard_space();
        let model = ClassifierModel::with_hidden(8, space.width(), 4, [16, 8], 3);
        let mut c = ClassifierCheckpoint::new(&model, &space, "h");
        c.encoding_width += 1;
        assert!(c.model().unwrap_err().contains("encoding width"));
        let mut c = ClassifierCheckpoint::new(&model, &space, "h");
        c.n = 65;
        assert!(c.model().unwrap_err().contains("n = 65"));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("space.json");
        fs::write(&path, r#"{"version": 7, "knobs": []}"#).unwrap();
        assert!(matches!(read_knob_space(&path), Err(FormatError::Version { found: 7, .. })));
    }

    #[test]
    fn label_store_round_trips() {
        let mut store = LabelStore::new("t");
        store.add("q00", "01".parse().unwrap(), 1.25);
        store.add("q00", "01".parse().unwrap(), 0.1 + 0.2);
        store.add("q01", "10".parse().unwrap(), 3.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.csv");
        write_label_store(&path, &store, "h").unwrap();
        assert_eq!(read_label_store(&path).unwrap(), store);
    }

    #[test]
    fn config_hash_is_sha256_hex() {
        assert_eq!(config_hash(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
