//! Workload evaluation contract and a simulated DBMS whose per-query
//! latencies follow regime-switching truncated normals.
//!
//! A query's regime is picked by thresholding the weighted mean position of
//! its sensitive knobs; within a regime the latency is
//! `Normal(base * mu * (1 + sum(weight * position)), sigma^2)`, truncated from
//! below at 1% of `base`.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::CategoryLabel;
use crate::knob::{KnobConfiguration, KnobError, KnobSpace, KnobSpec};
use crate::math::{fnv1a, mix64, FNV_OFFSET};
use crate::plan::query_id;

pub const SPEC_VERSION: u32 = 1;
const TRUNCATION_FRACTION: f64 = 0.01;
const MAX_REJECTIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error(transparent)]
    Knob(#[from] KnobError),
    #[error("invalid simulator spec: {0}")]
    InvalidSpec(String),
    #[error("external command failed: {0}")]
    Command(String),
    #[error("latency {0} is not finite and positive")]
    BadLatency(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub latency: f64,
    /// Ground-truth regime, only known to the simulator.
    pub regime: Option<usize>,
    pub wall_cost: f64,
}

pub trait EvaluationBackend {
    /// Evaluates one query. `trial` separates repeated draws of the same
    /// configuration; equal arguments give equal results.
    fn evaluate(&self, config: &KnobConfiguration, query: &str, trial: u64) -> Result<EvaluationResult, BackendError>;

    /// Ground-truth label of `(config, query)` when the backend knows it.
    fn true_label(&self, _config: &KnobConfiguration, _query: &str, _width: usize) -> Option<CategoryLabel> {
        None
    }
}

impl<B: EvaluationBackend + ?Sized> EvaluationBackend for &B {
    fn evaluate(&self, config: &KnobConfiguration, query: &str, trial: u64) -> Result<EvaluationResult, BackendError> {
        (**self).evaluate(config, query, trial)
    }

    fn true_label(&self, config: &KnobConfiguration, query: &str, width: usize) -> Option<CategoryLabel> {
        (**self).true_label(config, query, width)
    }
}

impl<B: EvaluationBackend + ?Sized> EvaluationBackend for Box<B> {
    fn evaluate(&self, config: &KnobConfiguration, query: &str, trial: u64) -> Result<EvaluationResult, BackendError> {
        (**self).evaluate(config, query, trial)
    }

    fn true_label(&self, config: &KnobConfiguration, query: &str, width: usize) -> Option<CategoryLabel> {
        (**self).true_label(config, query, width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadEvaluation {
    pub total: f64,
    /// Per-query results in query-id order.
    pub per_query: Vec<(String, EvaluationResult)>,
}

/// Evaluates every query and sums latencies in sorted query-id order, so the
/// total does not depend on the order the ids were given in.
pub fn evaluate_workload<B: EvaluationBackend + ?Sized>(
    backend: &B,
    config: &KnobConfiguration,
    queries: &[String],
    trial: u64,
) -> Result<WorkloadEvaluation, BackendError> {
    let mut ids: Vec<&String> = queries.iter().collect();
    ids.sort();
    let mut per_query = Vec::with_capacity(ids.len());
    let mut total = 0.0;
    for id in ids {
        let r = backend.evaluate(config, id, trial)?;
        total += r.latency;
        per_query.push((id.clone(), r));
    }
    Ok(WorkloadEvaluation { total, per_query })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveKnob {
    pub knob: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryModel {
    pub id: String,
    pub base: f64,
    pub sensitive: Vec<SensitiveKnob>,
    pub regimes: Vec<Regime>,
    /// Ascending cut points on the weighted mean position; one fewer than
    /// the number of regimes.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub version: u32,
    pub seed: u64,
    pub queries: Vec<QueryModel>,
}

impl SimulatorSpec {
    pub fn max_regimes(&self) -> usize {
        self.queries.iter().map(|q| q.regimes.len()).max().unwrap_or(0)
    }

    pub fn query_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.queries.iter().map(|q| q.id.clone()).collect();
        ids.sort();
        ids
    }
}

impl QueryModel {
    fn validate(&self, space: &KnobSpace) -> Result<(), BackendError> {
        let bad = |why: &str| Err(BackendError::InvalidSpec(alloc::format!("query `{}`: {why}", self.id)));
        if !(self.base > 0.0 && self.base.is_finite()) {
            return bad("base latency must be positive");
        }
        if self.regimes.is_empty() {
            return bad("needs at least one regime");
        }
        if self.thresholds.len() + 1 != self.regimes.len() {
            return bad("thresholds must number one fewer than regimes");
        }
        if self.thresholds.windows(2).any(|w| w[0] > w[1]) {
            return bad("thresholds must ascend");
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if !(r.mu > 0.0 && r.mu.is_finite()) || !(r.sigma >= 0.0 && r.sigma.is_finite()) {
                return bad("regime mu must be positive and sigma non-negative");
            }
            if self.regimes[..i].iter().any(|o| o.mu == r.mu) {
                return bad("regime multipliers must be distinct");
            }
        }
        for s in &self.sensitive {
            if space.get(&s.knob).is_none() {
                return bad("sensitive knob missing from the knob space");
            }
            if !s.weight.is_finite() {
                return bad("weights must be finite");
            }
        }
        Ok(())
    }

    /// Rank of each regime's multiplier among this query's regimes.
    fn mu_ranks(&self) -> Vec<usize> {
        self.regimes
            .iter()
            .map(|r| self.regimes.iter().filter(|o| o.mu < r.mu).count())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    spec: SimulatorSpec,
    space: KnobSpace,
    index: BTreeMap<String, usize>,
    pub time_scale: f64,
}

impl Simulator {
    pub fn new(spec: SimulatorSpec, space: KnobSpace) -> Result<Simulator, BackendError> {
        let mut index = BTreeMap::new();
        for (i, q) in spec.queries.iter().enumerate() {
            q.validate(&space)?;
            if index.insert(q.id.clone(), i).is_some() {
                return Err(BackendError::InvalidSpec(alloc::format!("duplicate query `{}`", q.id)));
            }
        }
        Ok(Simulator {
            spec,
            space,
            index,
            time_scale: 0.0,
        })
    }

    pub fn with_time_scale(mut self, time_scale: f64) -> Simulator {
        self.time_scale = time_scale;
        self
    }

    pub fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    pub fn space(&self) -> &KnobSpace {
        &self.space
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.index.keys().cloned().collect()
    }

    fn model(&self, query: &str) -> Result<&QueryModel, BackendError> {
        self.index
            .get(query)
            .map(|&i| &self.spec.queries[i])
            .ok_or_else(|| BackendError::UnknownQuery(query.to_string()))
    }

    fn positions(&self, model: &QueryModel, config: &KnobConfiguration) -> Result<Vec<f64>, BackendError> {
        model
            .sensitive
            .iter()
            .map(|s| self.space.position(config, &s.knob).map_err(BackendError::from))
            .collect()
    }

    pub fn regime_of(&self, config: &KnobConfiguration, query: &str) -> Result<usize, BackendError> {
        let model = self.model(query)?;
        self.space.check(config)?;
        let pos = self.positions(model, config)?;
        let total_weight: f64 = model.sensitive.iter().map(|s| s.weight.abs()).sum();
        let score = if total_weight > 0.0 {
            model.sensitive.iter().zip(&pos).map(|(s, p)| s.weight.abs() * p).sum::<f64>() / total_weight
        } else {
            0.0
        };
        Ok(model.thresholds.iter().filter(|&&t| t <= score).count())
    }

    /// Noise-free latency of `(config, query)` inside its regime.
    pub fn mean_latency(&self, config: &KnobConfiguration, query: &str) -> Result<f64, BackendError> {
        let model = self.model(query)?;
        let regime = self.regime_of(config, query)?;
        let pos = self.positions(model, config)?;
        let shift: f64 = model.sensitive.iter().zip(&pos).map(|(s, p)| s.weight * p).sum();
        Ok(model.base * model.regimes[regime].mu * (1.0 + shift))
    }

    /// One-hot label at the rank of the regime's multiplier.
    pub fn regime_label(&self, config: &KnobConfiguration, query: &str, width: usize) -> Result<CategoryLabel, BackendError> {
        let model = self.model(query)?;
        let regime = self.regime_of(config, query)?;
        let rank = model.mu_ranks()[regime];
        if rank >= width {
            return Err(BackendError::InvalidSpec(alloc::format!(
                "query `{query}` has more regimes than label width {width}"
            )));
        }
        Ok(CategoryLabel::one_hot(width, rank))
    }

    fn draw_seed(&self, config: &KnobConfiguration, query: &str, trial: u64) -> u64 {
        let q = fnv1a(query.as_bytes(), FNV_OFFSET);
        mix64(self.spec.seed ^ mix64(self.space.fingerprint(config) ^ mix64(q ^ mix64(trial))))
    }
}

impl EvaluationBackend for Simulator {
    fn evaluate(&self, config: &KnobConfiguration, query: &str, trial: u64) -> Result<EvaluationResult, BackendError> {
        let model = self.model(query)?;
        let regime = self.regime_of(config, query)?;
        let center = self.mean_latency(config, query)?;
        let sigma = model.regimes[regime].sigma;
        let floor = model.base * TRUNCATION_FRACTION;
        let latency = if sigma == 0.0 {
            center.max(floor)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.draw_seed(config, query, trial));
            let mut drawn = None;
            for _ in 0..MAX_REJECTIONS {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = center + sigma * z;
                if x >= floor {
                    drawn = Some(x);
                    break;
                }
            }
            drawn.unwrap_or(floor)
        };
        Ok(EvaluationResult {
            latency,
            regime: Some(regime),
            wall_cost: latency * self.time_scale,
        })
    }

    fn true_label(&self, config: &KnobConfiguration, query: &str, width: usize) -> Option<CategoryLabel> {
        self.regime_label(config, query, width).ok()
    }
}

/// Parameters for [`generate_simulator_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub seed: u64,
    pub queries: usize,
    pub min_regimes: usize,
    pub max_regimes: usize,
    pub max_sensitive: usize,
    /// Latency noise as a fraction of each regime's mean.
    pub relative_sigma: f64,
    /// Bound on the summed absolute within-regime weights.
    pub weight_budget: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            seed: 0,
            queries: 10,
            min_regimes: 2,
            max_regimes: 3,
            max_sensitive: 2,
            relative_sigma: 0.03,
            weight_budget: 0.04,
        }
    }
}

const MU_BANDS: [(f64, f64); 3] = [(1.0, 1.0), (1.7, 2.0), (2.7, 3.2)];

/// Random simulator spec over `space`: queries `q00, q01, ...`, each with
/// well-separated regime multipliers and small within-regime knob effects.
pub fn generate_simulator_spec(params: &GeneratorParams, space: &KnobSpace) -> Result<SimulatorSpec, BackendError> {
    if space.is_empty() {
        return Err(BackendError::InvalidSpec("knob space is empty".into()));
    }
    let min_r = params.min_regimes.clamp(1, MU_BANDS.len());
    let max_r = params.max_regimes.clamp(min_r, MU_BANDS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let names: Vec<&str> = space.knobs().iter().map(|k| k.name.as_str()).collect();
    let mut queries = Vec::with_capacity(params.queries);
    for i in 0..params.queries {
        let base = libm::round(rng.random_range(0.5..5.0) * 1000.0) / 1000.0;
        let count = rng.random_range(1..=params.max_sensitive.clamp(1, names.len()));
        let mut picked = names.clone();
        picked.shuffle(&mut rng);
        let per_knob = params.weight_budget / count as f64;
        let sensitive = picked[..count]
            .iter()
            .map(|k| SensitiveKnob {
                knob: k.to_string(),
                weight: rng.random_range(-per_knob..per_knob),
            })
            .collect();
        let n_regimes = rng.random_range(min_r..=max_r);
        let mut mus: Vec<f64> = MU_BANDS[..n_regimes].iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..hi) }).collect();
        mus.shuffle(&mut rng);
        let regimes = mus
            .into_iter()
            .map(|mu| Regime {
                mu,
                sigma: params.relative_sigma * base * mu,
            })
            .collect();
        let thresholds = (1..n_regimes)
            .map(|r| r as f64 / n_regimes as f64 + rng.random_range(-0.08..0.08))
            .collect();
        queries.push(QueryModel {
            id: query_id(i),
            base,
            sensitive,
            regimes,
            thresholds,
        });
    }
    Ok(SimulatorSpec {
        version: SPEC_VERSION,
        seed: params.seed,
        queries,
    })
}

/// The fixed knob space used by the bundled simulator suites.
pub fn standard_space() -> KnobSpace {
    KnobSpace::new(alloc::vec![
        KnobSpec::numeric("shared_buffers_mb", 16.0, 4096.0, 128.0),
        KnobSpec::numeric("work_mem_mb", 1.0, 512.0, 4.0),
        KnobSpec::numeric("effective_cache_size_mb", 64.0, 16384.0, 4096.0),
        KnobSpec::numeric("random_page_cost", 1.0, 8.0, 4.0),
        KnobSpec::numeric("max_parallel_workers", 0.0, 16.0, 2.0),
        KnobSpec::numeric("checkpoint_timeout_s", 30.0, 3600.0, 300.0),
        KnobSpec::categorical("enable_hashjoin", &["on", "off"], "on"),
        KnobSpec::categorical("enable_seqscan", &["on", "off"], "on"),
        KnobSpec::categorical("wal_level", &["minimal", "replica", "logical"], "replica"),
    ])
    .expect("standard space is valid")
}

/// The 10-query suite over [`standard_space`].
pub fn standard_suite(seed: u64) -> (KnobSpace, SimulatorSpec) {
    let space = standard_space();
    let spec = generate_simulator_spec(&GeneratorParams { seed, ..Default::default() }, &space)
        .expect("standard space is non-empty");
    (space, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::fit_gmm;
    use crate::tuner::lhs_sample;
    use alloc::vec;

    fn one_knob(sigma: f64) -> Simulator {
        let space = KnobSpace::new(vec![KnobSpec::numeric("k", 0.0, 1.0, 0.0)]).unwrap();
        let spec = SimulatorSpec {
            version: SPEC_VERSION,
            seed: 4,
            queries: vec![QueryModel {
                id: "q".into(),
                base: 2.0,
                sensitive: vec![SensitiveKnob { knob: "k".into(), weight: 0.1 }],
                regimes: vec![Regime { mu: 1.0, sigma }, Regime { mu: 3.0, sigma: sigma * 3.0 }],
                thresholds: vec![0.5],
            }],
        };
        Simulator::new(spec, space).unwrap()
    }

    #[test]
    fn zero_sigma_is_exact() {
        let sim = one_knob(0.0);
        let c = KnobConfiguration::new().with("k", 0.25);
        let r = sim.evaluate(&c, "q", 0).unwrap();
        assert_eq!(r.latency, 2.0 * 1.0 * (1.0 + 0.1 * 0.25));
        let c = KnobConfiguration::new().with("k", 0.75);
        let r = sim.evaluate(&c, "q", 0).unwrap();
        assert_eq!(r.latency, 2.0 * 3.0 * (1.0 + 0.1 * 0.75));
        assert_eq!(r.regime, Some(1));
    }

    #[test]
    fn draws_are_seeded() {
        let sim = one_knob(0.2);
        let c = KnobConfiguration::new().with("k", 0.3);
        assert_eq!(sim.evaluate(&c, "q", 7), sim.evaluate(&c, "q", 7));
        assert_ne!(sim.evaluate(&c, "q", 7), sim.evaluate(&c, "q", 8));
        assert!(matches!(sim.evaluate(&c, "nope", 0), Err(BackendError::UnknownQuery(_))));
    }

    #[test]
    fn regime_means_follow_multiplier_ratio() {
        let sim = one_knob(0.2);
        let lo = KnobConfiguration::new().with("k", 0.4);
        let hi = KnobConfiguration::new().with("k", 0.6);
        let mean = |c: &KnobConfiguration| (0..200).map(|t| sim.evaluate(c, "q", t).unwrap().latency).sum::<f64>() / 200.0;
        let ratio = mean(&hi) / mean(&lo);
        let expected = (3.0 * 1.06) / (1.0 * 1.04);
        assert!((ratio / expected - 1.0).abs() < 0.05, "{ratio} vs {expected}");
    }

    #[test]
    fn truncation_floor_holds() {
        let sim = one_knob(50.0);
        let c = KnobConfiguration::new().with("k", 0.1);
        for t in 0..200 {
            assert!(sim.evaluate(&c, "q", t).unwrap().latency >= 0.02);
        }
    }

    #[test]
    fn gmm_recovers_two_regimes() {
        let space = KnobSpace::new(vec![KnobSpec::numeric("k", 0.0, 1.0, 0.0)]).unwrap();
        let spec = SimulatorSpec {
            version: SPEC_VERSION,
            seed: 1,
            queries: vec![QueryModel {
                id: "q".into(),
                base: 1.0,
                sensitive: vec![SensitiveKnob { knob: "k".into(), weight: 0.01 }],
                regimes: vec![Regime { mu: 1.0, sigma: 0.03 }, Regime { mu: 2.0, sigma: 0.06 }],
                thresholds: vec![0.5],
            }],
        };
        let sim = Simulator::new(spec, space.clone()).unwrap();
        let lat: Vec<f64> = lhs_sample(&space, 300, 2)
            .iter()
            .enumerate()
            .map(|(i, c)| sim.evaluate(c, "q", i as u64).unwrap().latency)
            .collect();
        let m = fit_gmm(&lat, 4, 0).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m.components[0].mean / 1.005 - 1.0).abs() < 0.1);
        assert!((m.components[1].mean / 2.01 - 1.0).abs() < 0.1);
    }

    #[test]
    fn workload_total_is_order_free() {
        let space = KnobSpace::new(vec![KnobSpec::numeric("k", 0.0, 1.0, 0.0)]).unwrap();
        let q = |id: &str, base: f64| QueryModel {
            id: id.into(),
            base,
            sensitive: vec![],
            regimes: vec![Regime { mu: 1.0, sigma: 0.0 }],
            thresholds: vec![],
        };
        let sim = Simulator::new(SimulatorSpec { version: 1, seed: 0, queries: vec![q("a", 2.0), q("b", 3.0)] }, space).unwrap();
        let c = KnobConfiguration::new();
        let ab = evaluate_workload(&sim, &c, &["a".into(), "b".into()], 0).unwrap();
        let ba = evaluate_workload(&sim, &c, &["b".into(), "a".into()], 0).unwrap();
        assert_eq!(ab.total, 5.0);
        assert_eq!(ab, ba);
        assert_eq!(evaluate_workload(&sim, &c, &["a".into()], 0).unwrap().total, 2.0);
    }

    #[test]
    fn spec_validation() {
        let space = standard_space();
        let (_, mut spec) = standard_suite(3);
        assert!(Simulator::new(spec.clone(), space.clone()).is_ok());
        spec.queries[0].thresholds.push(0.9);
        assert!(Simulator::new(spec.clone(), space.clone()).is_err());
        let (_, mut spec) = standard_suite(3);
        spec.queries[0].sensitive.push(SensitiveKnob { knob: "nope".into(), weight: 0.0 });
        assert!(Simulator::new(spec, space).is_err());
    }

    #[test]
    fn standard_suite_shape() {
        let (space, spec) = standard_suite(0);
        assert_eq!(spec.queries.len(), 10);
        assert!(spec.max_regimes() <= 3);
        let sim = Simulator::new(spec, space.clone()).unwrap();
        let c = space.default_configuration();
        for q in sim.query_ids() {
            let l = sim.regime_label(&c, &q, 4).unwrap();
            assert_eq!(l.count_ones(), 1);
        }
    }
}
