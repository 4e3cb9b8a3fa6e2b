//! In-memory pipelines: sample collection, pretraining (importance oracle,
//! embedding, mixture labels, classifier), few-shot tuning, and the output
//! width sweep.

use std::collections::BTreeMap;

use knobcf_core::classifier::{
    finetune, train, ClassificationMetrics, ClassifierModel, ClassifierTrainConfig, KnobClassifier, TrainingRow,
    TrainingSet,
};
use knobcf_core::embedding::{train_embedding, EmbeddingModel, EmbeddingTrainConfig, ImportanceHead, QueryEmbedding, DEFAULT_HEAD_HIDDEN};
use knobcf_core::gmm::{label_dataset, GaussianMixture, DEFAULT_TAU};
use knobcf_core::importance::{fit_regressor, permutation_importance, ForestConfig, ImportanceVector};
use knobcf_core::knob::{union_space, KnobConfiguration, KnobEncoding, KnobSpace};
use knobcf_core::math::mix64;
use knobcf_core::orchestrator::{
    labeled_training_set, Clock, LabelPredictor, NoClock, TuningError, TuningOutcome, TuningParams, TuningReport, TuningSession,
};
use knobcf_core::plan::{generate_synthetic_workload, Workload};
use knobcf_core::sim::{generate_simulator_spec, standard_space, BackendError, EvaluationBackend, GeneratorParams, Simulator};
use knobcf_core::train::LossTrace;
use knobcf_core::tuner::{lhs_sample, Tuner};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no pretraining tasks given")]
    NoTasks,
    #[error("task `{task}`, query `{query}`: {reason}")]
    Query { task: String, query: String, reason: String },
    #[error("task `{task}`: {reason}")]
    Task { task: String, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Classifier(#[from] knobcf_core::classifier::ClassifierError),
    #[error(transparent)]
    Embedding(#[from] knobcf_core::embedding::EmbeddingError),
    #[error(transparent)]
    Knob(#[from] knobcf_core::knob::KnobError),
}

/// LHS configurations and the latency of every query under each.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub configs: Vec<KnobConfiguration>,
    /// Per query, latencies aligned with `configs`.
    pub latencies: BTreeMap<String, Vec<f64>>,
}

/// Evaluates `count` LHS points; the trial of each evaluation is its row.
pub fn collect_samples<B: EvaluationBackend + ?Sized>(
    backend: &B,
    space: &KnobSpace,
    queries: &[String],
    count: usize,
    seed: u64,
) -> Result<SampleSet, BackendError> {
    let configs = lhs_sample(space, count, seed);
    let mut latencies: BTreeMap<String, Vec<f64>> = queries.iter().map(|q| (q.clone(), Vec::with_capacity(count))).collect();
    for (row, config) in configs.iter().enumerate() {
        for (q, out) in latencies.iter_mut() {
            out.push(backend.evaluate(config, q, row as u64)?.latency);
        }
    }
    Ok(SampleSet { configs, latencies })
}

/// One historical task: its knob space, query plans, and evaluations.
#[derive(Debug, Clone)]
pub struct PretrainTask {
    pub name: String,
    pub space: KnobSpace,
    pub workload: Workload,
    pub samples: SampleSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub width: usize,
    pub tau: f64,
    pub embedding_dim: usize,
    pub holdout_fraction: f64,
    pub importance_repeats: usize,
    pub seed: u64,
    pub forest: ForestConfig,
    pub embedding: EmbeddingTrainConfig,
    pub classifier: ClassifierTrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            width: 16,
            tau: DEFAULT_TAU,
            embedding_dim: knobcf_core::embedding::DEFAULT_DIM,
            holdout_fraction: 0.2,
            importance_repeats: 3,
            seed: 0,
            forest: ForestConfig::default(),
            embedding: EmbeddingTrainConfig::default(),
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

impl PretrainConfig {
    fn sub_seed(&self, salt: u64) -> u64 {
        mix64(self.seed ^ mix64(salt))
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub space: KnobSpace,
    pub embedding: EmbeddingModel,
    pub head: ImportanceHead,
    pub classifier: ClassifierModel,
    pub importance: BTreeMap<(String, String), ImportanceVector>,
    pub mixtures: BTreeMap<(String, String), GaussianMixture>,
    pub embedding_trace: LossTrace,
    pub classifier_trace: LossTrace,
    pub holdout: ClassificationMetrics,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

impl PretrainOutput {
    /// Classifier ready for tuning `workload`: embeds each of its plans.
    pub fn classifier_for(&self, workload: &Workload) -> Result<KnobClassifier, PipelineError> {
        Ok(KnobClassifier {
            model: self.classifier.clone(),
            space: self.space.clone(),
            embeddings: embed_workload(&self.embedding, workload)?,
        })
    }
}

pub fn embed_workload(model: &EmbeddingModel, workload: &Workload) -> Result<BTreeMap<String, QueryEmbedding>, PipelineError> {
    let mut out = BTreeMap::new();
    for (id, plan) in workload.queries() {
        out.insert(id.clone(), model.embed(plan)?);
    }
    Ok(out)
}

fn union_encodings(union: &KnobSpace, configs: &[KnobConfiguration]) -> Result<Vec<KnobEncoding>, PipelineError> {
    configs.iter().map(|c| union.encode(c).map_err(PipelineError::from)).collect()
}

/// Importance oracle, embedding, mixture labels, then classifier training
/// with a seeded holdout split.
pub fn pretrain(tasks: &[PretrainTask], config: &PretrainConfig) -> Result<PretrainOutput, PipelineError> {
    if tasks.is_empty() {
        return Err(PipelineError::NoTasks);
    }
    let spaces: Vec<KnobSpace> = tasks.iter().map(|t| t.space.clone()).collect();
    let union = union_space(&spaces)?;

    let mut importance = BTreeMap::new();
    let mut encodings = Vec::with_capacity(tasks.len());
    let mut embed_set = Vec::new();
    for (ti, task) in tasks.iter().enumerate() {
        let enc = union_encodings(&union, &task.samples.configs)?;
        for (qi, (query, plan)) in task.workload.queries().iter().enumerate() {
            let lat = task.samples.latencies.get(query).ok_or_else(|| PipelineError::Query {
                task: task.name.clone(),
                query: query.clone(),
                reason: "no evaluations recorded".into(),
            })?;
            let samples: Vec<(KnobEncoding, f64)> = enc.iter().cloned().zip(lat.iter().copied()).collect();
            let salt = ((ti as u64) << 32) | qi as u64;
            let forest = ForestConfig {
                seed: config.sub_seed(salt ^ 0x1000),
                ..config.forest.clone()
            };
            let regressor = fit_regressor(&samples, &forest).map_err(|e| PipelineError::Query {
                task: task.name.clone(),
                query: query.clone(),
                reason: e.to_string(),
            })?;
            let vector = permutation_importance(&regressor, &union, &samples, config.importance_repeats, config.sub_seed(salt ^ 0x2000));
            embed_set.push((plan.clone(), vector.aligned(&union)));
            importance.insert((task.name.clone(), query.clone()), vector);
        }
        encodings.push(enc);
    }

    let mut embedding = EmbeddingModel::new(config.embedding_dim, config.sub_seed(1));
    let mut head = ImportanceHead::new(config.embedding_dim, DEFAULT_HEAD_HIDDEN, union.len(), config.sub_seed(2));
    let embedding_trace = train_embedding(
        &mut embedding,
        &mut head,
        &embed_set,
        &EmbeddingTrainConfig {
            seed: config.sub_seed(3),
            ..config.embedding.clone()
        },
    )?;

    let mut rows = Vec::new();
    let mut mixtures = BTreeMap::new();
    for (task, enc) in tasks.iter().zip(&encodings) {
        let labeled = label_dataset(&task.samples.latencies, config.width, config.tau, config.sub_seed(4)).map_err(|e| PipelineError::Task {
            task: task.name.clone(),
            reason: e.to_string(),
        })?;
        let embeddings = embed_workload(&embedding, &task.workload)?;
        for (query, labels) in &labeled.labels {
            let Some(emb) = embeddings.get(query) else {
                continue;
            };
            for (label, e) in labels.iter().zip(enc) {
                rows.push(TrainingRow {
                    embedding: emb.clone(),
                    encoding: e.clone(),
                    label: *label,
                });
            }
        }
        for (query, m) in labeled.mixtures {
            mixtures.insert((task.name.clone(), query), m);
        }
    }
    let all = TrainingSet::new(rows);
    let (train_set, holdout_set) = all.split(1.0 - config.holdout_fraction, config.sub_seed(5));
    let mut classifier = ClassifierModel::new(config.embedding_dim, union.width(), config.width, config.sub_seed(6));
    classifier.provenance.pretrain_tasks = tasks.iter().map(|t| t.name.clone()).collect();
    let classifier_trace = train(
        &mut classifier,
        &train_set,
        &ClassifierTrainConfig {
            seed: config.sub_seed(7),
            ..config.classifier.clone()
        },
    )?;
    let probe = KnobClassifier {
        model: classifier.clone(),
        space: union.clone(),
        embeddings: BTreeMap::new(),
    };
    let holdout = probe.evaluate(if holdout_set.is_empty() { &train_set } else { &holdout_set })?;
    Ok(PretrainOutput {
        space: union,
        embedding,
        head,
        classifier,
        importance,
        mixtures,
        embedding_trace,
        classifier_trace,
        holdout,
        train_rows: train_set.len(),
        holdout_rows: holdout_set.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotConfig {
    /// Iterations run with the judge off before fine-tuning; 0 disables
    /// fine-tuning.
    pub iterations: usize,
    pub tau: f64,
    pub seed: u64,
    pub classifier: ClassifierTrainConfig,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            iterations: knobcf_core::classifier::DEFAULT_FINETUNE_ITERATIONS,
            tau: DEFAULT_TAU,
            seed: 0,
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

/// Initialization, optional fine-tuning on the first iterations, then the
/// judged loop. Returns the outcome and the classifier as used at the end.
/// On failure, [`TuneFailure::partial`] holds what was recorded so far.
pub fn tune_knobcf<B, T>(
    queries: &[String],
    backend: &B,
    tuner: &mut T,
    mut classifier: KnobClassifier,
    params: TuningParams,
    few_shot: Option<&FewShotConfig>,
    clock: &dyn Clock,
) -> Result<(TuningOutcome, KnobClassifier), TuneFailure>
where
    B: EvaluationBackend + ?Sized,
    T: Tuner + ?Sized,
{
    let total = params.iterations;
    let width = params.width;
    let task = params.task.clone();
    let mut session = TuningSession::new(backend, tuner, queries, params, clock).map_err(TuneFailure::early)?;
    let result = (|| -> Result<(), PipelineError> {
        session.initialize(Some(&mut classifier as &mut dyn LabelPredictor))?;
        let warmup = few_shot.map_or(0, |f| f.iterations.min(total));
        if let Some(fs) = few_shot.filter(|f| f.iterations > 0) {
            for _ in 0..warmup {
                session.iterate(Some(&mut classifier), false)?;
            }
            let recent = labeled_training_set(session.dataset(), &classifier.space, &classifier.embeddings, width, fs.tau, fs.seed)?;
            let cfg = ClassifierTrainConfig {
                seed: fs.seed,
                ..fs.classifier.clone()
            };
            finetune(&mut classifier.model, &recent, &cfg, &task)?;
            session.relabel(&mut classifier)?;
        }
        for _ in warmup..total {
            session.iterate(Some(&mut classifier), true)?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok((session.finish(), classifier)),
        Err(error) => Err(TuneFailure {
            error,
            partial: Some(session.finish()),
        }),
    }
}

/// A failed tuning run and whatever it recorded before failing.
#[derive(Debug)]
pub struct TuneFailure {
    pub error: PipelineError,
    pub partial: Option<TuningOutcome>,
}

impl TuneFailure {
    fn early(e: TuningError) -> TuneFailure {
        TuneFailure {
            error: e.into(),
            partial: None,
        }
    }
}

impl std::fmt::Display for TuneFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for TuneFailure {}

/// A simulator task together with the plans of its queries.
#[derive(Debug, Clone)]
pub struct SimulatedTask {
    pub name: String,
    pub space: KnobSpace,
    pub simulator: Simulator,
    pub workload: Workload,
}

/// Generates a simulator spec and a synthetic workload with matching query
/// ids from the same seed.
pub fn simulated_task(name: &str, space: KnobSpace, params: &GeneratorParams) -> Result<SimulatedTask, PipelineError> {
    let spec = generate_simulator_spec(params, &space)?;
    let simulator = Simulator::new(spec, space.clone())?;
    let workload = generate_synthetic_workload(params.seed, params.queries, 2..=3, 1..=2);
    Ok(SimulatedTask {
        name: name.to_string(),
        space,
        simulator,
        workload,
    })
}

impl SimulatedTask {
    /// The standard ten-query suite over [`standard_space`].
    pub fn standard(seed: u64) -> Result<SimulatedTask, PipelineError> {
        let params = GeneratorParams { seed, ..GeneratorParams::default() };
        simulated_task("standard", standard_space(), &params)
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.workload.ids()
    }

    /// Evaluates `count` LHS points and packages them for [`pretrain`].
    pub fn pretrain_task(&self, count: usize, seed: u64) -> Result<PretrainTask, PipelineError> {
        let samples = collect_samples(&self.simulator, &self.space, &self.query_ids(), count, seed)?;
        Ok(PretrainTask {
            name: self.name.clone(),
            space: self.space.clone(),
            workload: self.workload.clone(),
            samples,
        })
    }
}

/// Outcome of one output width in [`sweep_widths`].
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub width: usize,
    pub holdout: ClassificationMetrics,
    pub best_total: f64,
    pub executed_queries: usize,
    pub estimated_queries: usize,
    pub report: TuningReport,
}

/// Spread of a sweep: absolute accuracy range and the best-total range
/// relative to the smallest best total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpread {
    pub accuracy: f64,
    pub best_total: f64,
}

pub fn sweep_spread(points: &[SweepPoint]) -> SweepSpread {
    let range = |values: Vec<f64>| {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (alo, ahi) = range(points.iter().map(|p| p.holdout.accuracy).collect());
    let (blo, bhi) = range(points.iter().map(|p| p.best_total).collect());
    SweepSpread {
        accuracy: if points.is_empty() { 0.0 } else { ahi - alo },
        best_total: if points.is_empty() || blo <= 0.0 { 0.0 } else { (bhi - blo) / blo },
    }
}

/// Pretrains and tunes once per output width on the same task and samples.
/// `tuner` builds a fresh tuner for each width; `pretrained` may supply an
/// already trained output for some widths.
#[allow(clippy::too_many_arguments)]
pub fn sweep_widths<B, F>(
    task: &PretrainTask,
    backend: &B,
    widths: &[usize],
    pretrain_config: &PretrainConfig,
    params: &TuningParams,
    few_shot: Option<&FewShotConfig>,
    mut tuner: F,
    mut pretrained: impl FnMut(usize) -> Option<PretrainOutput>,
) -> Result<Vec<SweepPoint>, PipelineError>
where
    B: EvaluationBackend + ?Sized,
    F: FnMut() -> Box<dyn Tuner>,
{
    let queries = task.workload.ids();
    let mut points = Vec::with_capacity(widths.len());
    for &width in widths {
        let out = match pretrained(width) {
            Some(out) => out,
            None => pretrain(core::slice::from_ref(task), &PretrainConfig { width, ..pretrain_config.clone() })?,
        };
        let classifier = out.classifier_for(&task.workload)?;
        let mut t = tuner();
        let run_params = TuningParams { width, ..params.clone() };
        let (outcome, _) = tune_knobcf(&queries, backend, t.as_mut(), classifier, run_params, few_shot, &NoClock).map_err(|f| f.error)?;
        points.push(SweepPoint {
            width,
            holdout: out.holdout,
            best_total: outcome.report.best_total,
            executed_queries: outcome.report.init_executed + outcome.report.executed_queries,
            estimated_queries: outcome.report.estimated_queries,
            report: outcome.report,
        });
    }
    Ok(points)
}
