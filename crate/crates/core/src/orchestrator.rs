//! The uncertainty-aware tuning loop.
//!
//! Initialization executes every query of every LHS point and records the
//! predicted label of each execution. Each later iteration asks the tuner for
//! a configuration, predicts a label per query, and either estimates the
//! query from the label's history (when the store holds enough records) or
//! executes it and records the new observation.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{estimate, judge, ClassifierError, KnobClassifier, TrainingRow, TrainingSet, DEFAULT_M_MIN};
use crate::embedding::QueryEmbedding;
use crate::gmm::{label_dataset, CategoryLabel, GmmError};
use crate::knob::{KnobConfiguration, KnobError, KnobSpace};
use crate::sim::{evaluate_workload, BackendError, EvaluationBackend};
use crate::store::LabelStore;
use crate::tuner::{lhs_sample, Tuner, TunerError, DEFAULT_INIT_COUNT};

/// Trial offset for repeated workload runs of one configuration, kept clear
/// of the per-row trials used during tuning.
pub const REPEAT_TRIAL_BASE: u64 = 1 << 32;
pub const DEFAULT_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Knob(#[from] KnobError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error("label store belongs to task `{found}`, expected `{expected}`")]
    Provenance { expected: String, found: String },
    #[error("invalid tuning parameters: {0}")]
    InvalidParams(&'static str),
}

/// Source of predicted labels for `(query, configuration)` pairs.
pub trait LabelPredictor {
    fn predict(&mut self, query: &str, config: &KnobConfiguration) -> Result<CategoryLabel, TuningError>;
}

impl LabelPredictor for KnobClassifier {
    fn predict(&mut self, query: &str, config: &KnobConfiguration) -> Result<CategoryLabel, TuningError> {
        Ok(self.predict_config(query, config)?)
    }
}

impl<P: LabelPredictor + ?Sized> LabelPredictor for &mut P {
    fn predict(&mut self, query: &str, config: &KnobConfiguration) -> Result<CategoryLabel, TuningError> {
        (**self).predict(query, config)
    }
}

impl<P: LabelPredictor + ?Sized> LabelPredictor for Box<P> {
    fn predict(&mut self, query: &str, config: &KnobConfiguration) -> Result<CategoryLabel, TuningError> {
        (**self).predict(query, config)
    }
}

/// Returns a label never returned before (until all `2^width - 1` non-empty
/// labels are used up), so the judge never finds history.
#[derive(Debug, Clone)]
pub struct AlwaysUnseen {
    width: usize,
    next: u64,
}

impl AlwaysUnseen {
    pub fn new(width: usize) -> AlwaysUnseen {
        AlwaysUnseen { width, next: 0 }
    }
}

impl LabelPredictor for AlwaysUnseen {
    fn predict(&mut self, _query: &str, _config: &KnobConfiguration) -> Result<CategoryLabel, TuningError> {
        let space = if self.width >= 64 { u64::MAX } else { (1u64 << self.width) - 1 };
        let mask = self.next % space + 1;
        self.next += 1;
        Ok(CategoryLabel::from_mask(self.width, mask))
    }
}

/// Adapts a closure into a predictor.
pub struct FnPredictor<F>(pub F);

impl<F> LabelPredictor for FnPredictor<F>
where
    F: FnMut(&str, &KnobConfiguration) -> CategoryLabel,
{
    fn predict(&mut self, query: &str, config: &KnobConfiguration) -> Result<CategoryLabel, TuningError> {
        Ok((self.0)(query, config))
    }
}

/// Monotone seconds source used to measure prediction overhead.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that never advances: overhead is reported as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningParams {
    pub task: String,
    pub iterations: usize,
    pub init_count: usize,
    pub seed: u64,
    pub width: usize,
    pub m_min: usize,
}

impl Default for TuningParams {
    fn default() -> Self {
        TuningParams {
            task: "task".to_string(),
            iterations: DEFAULT_ITERATIONS,
            init_count: DEFAULT_INIT_COUNT,
            seed: 0,
            width: 16,
            m_min: DEFAULT_M_MIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Tune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Executed,
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEvent {
    pub query: String,
    pub mode: EvalMode,
    pub latency: f64,
    pub label: Option<CategoryLabel>,
    /// Ground-truth label from the backend, when it knows one.
    pub truth: Option<CategoryLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningRow {
    pub index: usize,
    pub phase: Phase,
    pub config: KnobConfiguration,
    pub total: f64,
    pub events: Vec<QueryEvent>,
    /// Executed seconds plus prediction overhead.
    pub iteration_time: f64,
}

impl TuningRow {
    pub fn skipped(&self) -> usize {
        self.events.iter().filter(|e| e.mode == EvalMode::Estimated).count()
    }

    pub fn executed(&self) -> usize {
        self.events.len() - self.skipped()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TuningDataset {
    pub rows: Vec<TuningRow>,
}

impl TuningDataset {
    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total).collect()
    }

    pub fn best(&self) -> Option<&TuningRow> {
        self.rows.iter().fold(None, |best: Option<&TuningRow>, r| match best {
            Some(b) if b.total <= r.total => Some(b),
            _ => Some(r),
        })
    }

    /// Executed latencies per query, in row order.
    pub fn executed_latencies(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for row in &self.rows {
            for e in row.events.iter().filter(|e| e.mode == EvalMode::Executed) {
                out.entry(e.query.clone()).or_default().push(e.latency);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub best_config: KnobConfiguration,
    pub best_total: f64,
    pub best_row: usize,
    pub iteration_times: Vec<f64>,
    pub average_iteration_time: f64,
    pub init_executed: usize,
    pub executed_queries: usize,
    pub estimated_queries: usize,
    /// `|W|` divided by the best total.
    pub throughput: f64,
    /// `(cumulative iteration seconds, best total so far)` after each row.
    pub series: Vec<(f64, f64)>,
    pub p90: Option<f64>,
}

/// `(1/n) * sum(times)`; zero for an empty slice.
pub fn average_iteration_time(times: &[f64]) -> f64 {
    if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    }
}

/// Nearest-rank percentile: the `ceil(p * n)`-th smallest value.
pub fn nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = libm::ceil(p * sorted.len() as f64) as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Runs the workload `repeats` times on fresh trials and returns the
/// nearest-rank 90th percentile of the totals.
pub fn measure_uncertainty_latency<B: EvaluationBackend + ?Sized>(
    backend: &B,
    config: &KnobConfiguration,
    queries: &[String],
    repeats: usize,
) -> Result<f64, TuningError> {
    if repeats < 2 {
        return Err(TuningError::InvalidParams("p90 needs at least 2 repeats"));
    }
    let mut totals = Vec::with_capacity(repeats);
    for r in 0..repeats {
        totals.push(evaluate_workload(backend, config, queries, REPEAT_TRIAL_BASE + r as u64)?.total);
    }
    Ok(nearest_rank(&totals, 0.9).unwrap_or(0.0))
}

pub struct TuningSession<'a, B: ?Sized, T: ?Sized> {
    backend: &'a B,
    tuner: &'a mut T,
    clock: &'a dyn Clock,
    queries: Vec<String>,
    params: TuningParams,
    store: LabelStore,
    dataset: TuningDataset,
    tune_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub report: TuningReport,
    pub dataset: TuningDataset,
    pub store: LabelStore,
}

impl<'a, B, T> TuningSession<'a, B, T>
where
    B: EvaluationBackend + ?Sized,
    T: Tuner + ?Sized,
{
    pub fn new(backend: &'a B, tuner: &'a mut T, queries: &[String], params: TuningParams, clock: &'a dyn Clock) -> Result<Self, TuningError> {
        if queries.is_empty() {
            return Err(TuningError::InvalidParams("workload is empty"));
        }
        if params.init_count < 2 && tuner.name() == "bo" {
            return Err(TuningError::InvalidParams("BO needs at least 2 initialization points"));
        }
        if !(1..=64).contains(&params.width) {
            return Err(TuningError::InvalidParams("label width must be in 1..=64"));
        }
        let mut queries = queries.to_vec();
        queries.sort();
        let store = LabelStore::new(&params.task);
        Ok(TuningSession {
            backend,
            tuner,
            clock,
            queries,
            params,
            store,
            dataset: TuningDataset::default(),
            tune_rows: 0,
        })
    }

    pub fn dataset(&self) -> &TuningDataset {
        &self.dataset
    }

    pub fn store(&self) -> &LabelStore {
        &self.store
    }

    pub fn params(&self) -> &TuningParams {
        &self.params
    }

    pub fn tune_rows(&self) -> usize {
        self.tune_rows
    }

    fn check_provenance(&self) -> Result<(), TuningError> {
        if self.store.task() != self.params.task {
            return Err(TuningError::Provenance {
                expected: self.params.task.clone(),
                found: self.store.task().to_string(),
            });
        }
        Ok(())
    }

    /// Predicts the labels of one configuration and splits queries into
    /// estimated and to-execute, reading only the store snapshot.
    fn plan_row(
        &self,
        config: &KnobConfiguration,
        predictor: Option<&mut (dyn LabelPredictor + '_)>,
        judge_enabled: bool,
    ) -> Result<(Vec<Option<CategoryLabel>>, Vec<Option<f64>>), TuningError> {
        let mut labels = Vec::with_capacity(self.queries.len());
        let mut estimates = Vec::with_capacity(self.queries.len());
        match predictor {
            None => {
                labels.resize(self.queries.len(), None);
                estimates.resize(self.queries.len(), None);
            }
            Some(p) => {
                for q in &self.queries {
                    let label = p.predict(q, config)?;
                    let est = if judge_enabled && judge(&label, &self.store, q, self.params.m_min) {
                        Some(estimate(&label, &self.store, q, self.params.m_min)?)
                    } else {
                        None
                    };
                    labels.push(Some(label));
                    estimates.push(est);
                }
            }
        }
        Ok((labels, estimates))
    }

    fn run_row(
        &mut self,
        phase: Phase,
        config: KnobConfiguration,
        predictor: Option<&mut (dyn LabelPredictor + '_)>,
        judge_enabled: bool,
    ) -> Result<(), TuningError> {
        self.check_provenance()?;
        self.tuner.space().check(&config)?;
        let trial = self.dataset.rows.len() as u64;
        let started = self.clock.now();
        let (labels, estimates) = self.plan_row(&config, predictor, judge_enabled)?;
        let overhead = (self.clock.now() - started).max(0.0);
        let mut events = Vec::with_capacity(self.queries.len());
        let mut executed_seconds = 0.0;
        for ((q, label), est) in self.queries.iter().zip(labels).zip(estimates) {
            let truth = self.backend.true_label(&config, q, self.params.width);
            let (mode, latency) = match est {
                Some(v) => (EvalMode::Estimated, v),
                None => {
                    let r = self.backend.evaluate(&config, q, trial)?;
                    if !(r.latency.is_finite() && r.latency > 0.0) {
                        return Err(BackendError::BadLatency(r.latency).into());
                    }
                    executed_seconds += r.latency;
                    (EvalMode::Executed, r.latency)
                }
            };
            events.push(QueryEvent {
                query: q.clone(),
                mode,
                latency,
                label,
                truth,
            });
        }
        for e in &events {
            if let (EvalMode::Executed, Some(label)) = (e.mode, e.label) {
                self.store.add(&e.query, label, e.latency);
            }
        }
        let total = events.iter().map(|e| e.latency).sum();
        self.dataset.rows.push(TuningRow {
            index: self.dataset.rows.len(),
            phase,
            config,
            total,
            events,
            iteration_time: executed_seconds + overhead,
        });
        Ok(())
    }

    /// Executes every LHS point in full, records predicted labels, and
    /// primes the tuner with the totals.
    pub fn initialize(&mut self, mut predictor: Option<&mut (dyn LabelPredictor + '_)>) -> Result<(), TuningError> {
        let space = self.tuner.space().clone();
        for config in lhs_sample(&space, self.params.init_count, self.params.seed) {
            self.run_row(Phase::Init, config, predictor.as_deref_mut(), false)?;
        }
        let observations: Vec<(KnobConfiguration, f64)> =
            self.dataset.rows.iter().map(|r| (r.config.clone(), r.total)).collect();
        self.tuner.initialize(&observations)?;
        Ok(())
    }

    /// One recommend, predict, judge, estimate-or-execute, update round.
    pub fn iterate(&mut self, predictor: Option<&mut (dyn LabelPredictor + '_)>, judge_enabled: bool) -> Result<(), TuningError> {
        let config = self.tuner.recommend()?;
        self.run_row(Phase::Tune, config.clone(), predictor, judge_enabled)?;
        let total = self.dataset.rows.last().map(|r| r.total).unwrap_or(0.0);
        self.tuner.observe(config, total)?;
        self.tune_rows += 1;
        Ok(())
    }

    /// Re-predicts the label of every executed event and rebuilds the store
    /// from them.
    pub fn relabel(&mut self, predictor: &mut dyn LabelPredictor) -> Result<(), TuningError> {
        let mut store = LabelStore::new(&self.params.task);
        for row in &mut self.dataset.rows {
            for e in &mut row.events {
                if e.mode == EvalMode::Executed {
                    let label = predictor.predict(&e.query, &row.config)?;
                    e.label = Some(label);
                    store.add(&e.query, label, e.latency);
                }
            }
        }
        self.store = store;
        Ok(())
    }

    pub fn finish(self) -> TuningOutcome {
        let report = build_report(&self.dataset, self.queries.len());
        TuningOutcome {
            report,
            dataset: self.dataset,
            store: self.store,
        }
    }
}

pub fn build_report(dataset: &TuningDataset, workload_size: usize) -> TuningReport {
    let iteration_times: Vec<f64> = dataset.rows.iter().map(|r| r.iteration_time).collect();
    let (best_config, best_total, best_row) = match dataset.best() {
        Some(b) => (b.config.clone(), b.total, b.index),
        None => (KnobConfiguration::new(), f64::INFINITY, 0),
    };
    let tune = dataset.rows.iter().filter(|r| r.phase == Phase::Tune);
    let executed_queries = tune.clone().map(TuningRow::executed).sum();
    let estimated_queries = tune.map(TuningRow::skipped).sum();
    let init_executed = dataset
        .rows
        .iter()
        .filter(|r| r.phase == Phase::Init)
        .map(TuningRow::executed)
        .sum();
    let mut series = Vec::with_capacity(dataset.rows.len());
    let mut elapsed = 0.0;
    let mut best = f64::INFINITY;
    for r in &dataset.rows {
        elapsed += r.iteration_time;
        best = best.min(r.total);
        series.push((elapsed, best));
    }
    TuningReport {
        best_config,
        best_total,
        best_row,
        average_iteration_time: average_iteration_time(&iteration_times),
        iteration_times,
        init_executed,
        executed_queries,
        estimated_queries,
        throughput: if best_total > 0.0 { workload_size as f64 / best_total } else { 0.0 },
        series,
        p90: None,
    }
}

/// Initialization followed by `params.iterations` judged iterations.
pub fn run_tuning<B, T>(
    queries: &[String],
    backend: &B,
    tuner: &mut T,
    predictor: &mut dyn LabelPredictor,
    params: TuningParams,
    clock: &dyn Clock,
) -> Result<TuningOutcome, TuningError>
where
    B: EvaluationBackend + ?Sized,
    T: Tuner + ?Sized,
{
    let iterations = params.iterations;
    let mut session = TuningSession::new(backend, tuner, queries, params, clock)?;
    session.initialize(Some(&mut *predictor))?;
    for _ in 0..iterations {
        session.iterate(Some(&mut *predictor), true)?;
    }
    Ok(session.finish())
}

/// The same loop with every query executed and no label prediction.
pub fn run_full_eval_baseline<B, T>(
    queries: &[String],
    backend: &B,
    tuner: &mut T,
    params: TuningParams,
    clock: &dyn Clock,
) -> Result<TuningOutcome, TuningError>
where
    B: EvaluationBackend + ?Sized,
    T: Tuner + ?Sized,
{
    let iterations = params.iterations;
    let mut session = TuningSession::new(backend, tuner, queries, params, clock)?;
    session.initialize(None)?;
    for _ in 0..iterations {
        session.iterate(None, false)?;
    }
    Ok(session.finish())
}

/// Mixture labels for every executed event of `dataset`, paired with the
/// query embedding and the configuration's encoding in `space`.
pub fn labeled_training_set(
    dataset: &TuningDataset,
    space: &KnobSpace,
    embeddings: &BTreeMap<String, QueryEmbedding>,
    width: usize,
    tau: f64,
    seed: u64,
) -> Result<TrainingSet, TuningError> {
    let latencies = dataset.executed_latencies();
    let labeled = label_dataset(&latencies, width, tau, seed)?;
    let mut cursor: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rows = Vec::new();
    for row in &dataset.rows {
        let encoding = space.encode(&row.config)?;
        for e in row.events.iter().filter(|e| e.mode == EvalMode::Executed) {
            let i = cursor.entry(e.query.as_str()).or_insert(0);
            let label = labeled.labels[&e.query][*i];
            *i += 1;
            let embedding = embeddings
                .get(&e.query)
                .cloned()
                .ok_or_else(|| ClassifierError::UnknownQuery(e.query.clone()))?;
            rows.push(TrainingRow {
                embedding,
                encoding: encoding.clone(),
                label,
            });
        }
    }
    Ok(TrainingSet::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knob::KnobSpec;
    use crate::sim::{standard_suite, QueryModel, Regime, SensitiveKnob, Simulator, SimulatorSpec};
    use crate::tuner::{BoTuner, RandomTuner};
    use alloc::vec;

    fn suite() -> Simulator {
        let (space, spec) = standard_suite(5);
        Simulator::new(spec, space).unwrap()
    }

    fn params(iterations: usize) -> TuningParams {
        TuningParams {
            iterations,
            init_count: 10,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn nearest_rank_definition() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.9), Some(9.0));
        assert_eq!(nearest_rank(&[4.0, 1.0], 0.9), Some(4.0));
        assert_eq!(nearest_rank(&[], 0.9), None);
    }

    #[test]
    fn p90_of_deterministic_backend_is_constant() {
        let space = KnobSpace::new(vec![KnobSpec::numeric("k", 0.0, 1.0, 0.0)]).unwrap();
        let spec = SimulatorSpec {
            version: 1,
            seed: 0,
            queries: vec![QueryModel {
                id: "a".into(),
                base: 2.0,
                sensitive: vec![SensitiveKnob { knob: "k".into(), weight: 0.5 }],
                regimes: vec![Regime { mu: 1.0, sigma: 0.0 }],
                thresholds: vec![],
            }],
        };
        let sim = Simulator::new(spec, space).unwrap();
        let c = KnobConfiguration::new().with("k", 1.0);
        assert_eq!(measure_uncertainty_latency(&sim, &c, &["a".into()], 5).unwrap(), 3.0);
        assert!(measure_uncertainty_latency(&sim, &c, &["a".into()], 1).is_err());
    }

    #[test]
    fn zero_iterations_reports_initialization() {
        let sim = suite();
        let mut tuner = RandomTuner::new(sim.space().clone(), 1);
        let ids = sim.query_ids();
        let out = run_tuning(&ids, &sim, &mut tuner, &mut AlwaysUnseen::new(16), params(0), &NoClock).unwrap();
        assert_eq!(out.dataset.rows.len(), 10);
        let min = out.dataset.totals().into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(out.report.best_total, min);
        assert_eq!(out.report.executed_queries + out.report.estimated_queries, 0);
    }

    #[test]
    fn always_unseen_matches_baseline() {
        let sim = suite();
        let ids = sim.query_ids();
        let mut a = BoTuner::with_candidates(sim.space().clone(), 9, 100);
        let mut b = BoTuner::with_candidates(sim.space().clone(), 9, 100);
        let knobcf = run_tuning(&ids, &sim, &mut a, &mut AlwaysUnseen::new(16), params(8), &NoClock).unwrap();
        let base = run_full_eval_baseline(&ids, &sim, &mut b, params(8), &NoClock).unwrap();
        assert_eq!(knobcf.dataset.totals(), base.dataset.totals());
        assert_eq!(knobcf.report.estimated_queries, 0);
        assert_eq!(base.report.executed_queries, 8 * ids.len());
        assert_eq!(base.report.init_executed, 10 * ids.len());
    }

    #[test]
    fn oracle_predictor_skips_and_estimates_from_history() {
        let sim = suite();
        let ids = sim.query_ids();
        let mut tuner = RandomTuner::new(sim.space().clone(), 2);
        let oracle_sim = sim.clone();
        let mut oracle = FnPredictor(move |q: &str, c: &KnobConfiguration| oracle_sim.regime_label(c, q, 16).unwrap());
        let mut session = TuningSession::new(&sim, &mut tuner, &ids, params(0), &NoClock).unwrap();
        session.initialize(Some(&mut oracle)).unwrap();
        for _ in 0..20 {
            let before = session.store().clone();
            session.iterate(Some(&mut oracle), true).unwrap();
            let row = session.dataset().rows.last().unwrap();
            assert_eq!(row.events.len(), ids.len());
            let sum: f64 = row.events.iter().map(|e| e.latency).sum();
            assert!((row.total - sum).abs() < 1e-9);
            for e in row.events.iter().filter(|e| e.mode == EvalMode::Estimated) {
                let l = e.label.unwrap();
                assert_eq!(e.latency, crate::math::mean(before.latencies(&e.query, &l)));
            }
        }
        let out = session.finish();
        assert!(out.report.estimated_queries > out.report.executed_queries);
        assert_eq!(out.store.len(), out.dataset.rows.iter().map(TuningRow::executed).sum::<usize>());
    }

    #[test]
    fn relabel_rebuilds_store() {
        let sim = suite();
        let ids = sim.query_ids();
        let mut tuner = RandomTuner::new(sim.space().clone(), 2);
        let mut session = TuningSession::new(&sim, &mut tuner, &ids, params(0), &NoClock).unwrap();
        session.initialize(Some(&mut AlwaysUnseen::new(16))).unwrap();
        assert_eq!(session.store().iter().count(), 100);
        let mut constant = FnPredictor(|_: &str, _: &KnobConfiguration| CategoryLabel::one_hot(16, 0));
        session.relabel(&mut constant).unwrap();
        assert_eq!(session.store().iter().count(), ids.len());
        assert_eq!(session.store().len(), 100);
    }

    #[test]
    fn report_average_is_exact_mean() {
        let sim = suite();
        let ids = sim.query_ids();
        let mut tuner = RandomTuner::new(sim.space().clone(), 4);
        let out = run_full_eval_baseline(&ids, &sim, &mut tuner, params(5), &NoClock).unwrap();
        let r = &out.report;
        let expected = r.iteration_times.iter().sum::<f64>() / r.iteration_times.len() as f64;
        assert_eq!(r.average_iteration_time, expected);
        assert_eq!(r.series.len(), 15);
        assert!(r.series.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 >= w[0].0));
    }
}
