//! Configuration recommenders: Latin hypercube initialization, GP-based
//! Bayesian optimization, and random search.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gp::{expected_improvement, GaussianProcess, Hyperparameters};
use crate::knob::{KnobConfiguration, KnobEncoding, KnobError, KnobKind, KnobSpace, KnobSpec, KnobValue};

pub const DEFAULT_CANDIDATES: usize = 1000;
/// Share of BO candidates drawn around the best observations instead of
/// uniformly over the space.
pub const DEFAULT_LOCAL_FRACTION: f64 = 0.0;
pub const DEFAULT_LOCAL_SCALE: f64 = 0.2;
const REFINED_LOCAL_FRACTION: f64 = 0.5;
const LOCAL_PARENTS: usize = 5;
const AXIS_STEPS: usize = 8;
pub const DEFAULT_INIT_COUNT: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TunerError {
    #[error("the tuner needs at least {need} observations, has {have}")]
    TooFewObservations { need: usize, have: usize },
    #[error("Gaussian process fit failed")]
    GpFit,
    #[error("observed total {0} is not finite")]
    NonFinite(f64),
    #[error(transparent)]
    Knob(#[from] KnobError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: KnobConfiguration,
    pub encoding: KnobEncoding,
    pub total: f64,
}

/// Append-only observation history shared by every tuner.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TunerState {
    pub observations: Vec<Observation>,
    pub hyperparameters: Option<Hyperparameters>,
    pub seed: u64,
}

impl TunerState {
    pub fn best(&self) -> Option<&Observation> {
        self.observations
            .iter()
            .fold(None, |best: Option<&Observation>, o| match best {
                Some(b) if b.total <= o.total => Some(b),
                _ => Some(o),
            })
    }
}

pub trait Tuner {
    fn name(&self) -> &str;
    fn space(&self) -> &KnobSpace;
    fn state(&self) -> &TunerState;
    fn observe(&mut self, config: KnobConfiguration, total: f64) -> Result<(), TunerError>;
    fn recommend(&mut self) -> Result<KnobConfiguration, TunerError>;

    fn initialize(&mut self, observations: &[(KnobConfiguration, f64)]) -> Result<(), TunerError> {
        for (config, total) in observations {
            self.observe(config.clone(), *total)?;
        }
        Ok(())
    }
}

fn record(space: &KnobSpace, state: &mut TunerState, config: KnobConfiguration, total: f64) -> Result<(), TunerError> {
    if !total.is_finite() {
        return Err(TunerError::NonFinite(total));
    }
    let encoding = space.encode(&config)?;
    state.observations.push(Observation { config, encoding, total });
    Ok(())
}

fn uniform_value<R: Rng + ?Sized>(spec: &KnobSpec, rng: &mut R) -> KnobValue {
    match spec.kind {
        KnobKind::Numeric => {
            let (min, max) = spec.bounds();
            let u: f64 = rng.random_range(0.0..1.0);
            KnobValue::Numeric((min + u * (max - min)).clamp(min, max))
        }
        KnobKind::Categorical => {
            let i = rng.random_range(0..spec.levels.len());
            KnobValue::Level(spec.levels[i].clone())
        }
    }
}

/// Gaussian step of scale `scale` (in normalized units) on every numeric
/// knob and a uniform re-draw of each categorical knob with probability
/// `scale * 2`.
pub fn perturb_configuration<R: Rng + ?Sized>(space: &KnobSpace, base: &KnobConfiguration, scale: f64, rng: &mut R) -> KnobConfiguration {
    let mut config = KnobConfiguration::new();
    for spec in space.knobs() {
        let current = base.get(&spec.name).unwrap_or(&spec.default);
        let value = match (spec.kind, current) {
            (KnobKind::Numeric, KnobValue::Numeric(x)) => {
                let (min, max) = spec.bounds();
                let z: f64 = StandardNormal.sample(rng);
                KnobValue::Numeric((x + z * scale * (max - min)).clamp(min, max))
            }
            (KnobKind::Categorical, _) if rng.random_range(0.0..1.0) < 2.0 * scale => uniform_value(spec, rng),
            _ => current.clone(),
        };
        config.values.insert(spec.name.clone(), value);
    }
    config
}

/// Every configuration that differs from `base` in the level of exactly one
/// categorical knob.
pub fn categorical_neighbors(space: &KnobSpace, base: &KnobConfiguration) -> Vec<KnobConfiguration> {
    let mut out = Vec::new();
    for spec in space.knobs().iter().filter(|s| s.kind == KnobKind::Categorical) {
        let current = base.get(&spec.name).unwrap_or(&spec.default);
        for level in &spec.levels {
            if matches!(current, KnobValue::Level(l) if l == level) {
                continue;
            }
            let mut next = base.clone();
            next.values.insert(spec.name.clone(), KnobValue::Level(level.clone()));
            out.push(next);
        }
    }
    out
}

/// `per_knob` copies of `base` for each numeric knob, with that knob moved to
/// a random point of its own stratum of the range.
pub fn axis_neighbors<R: Rng + ?Sized>(space: &KnobSpace, base: &KnobConfiguration, per_knob: usize, rng: &mut R) -> Vec<KnobConfiguration> {
    let mut out = Vec::new();
    for spec in space.knobs().iter().filter(|s| s.kind == KnobKind::Numeric) {
        let (min, max) = spec.bounds();
        if max <= min {
            continue;
        }
        for i in 0..per_knob {
            let u = (i as f64 + rng.random_range(0.0..1.0)) / per_knob as f64;
            let mut next = base.clone();
            next.values.insert(spec.name.clone(), KnobValue::Numeric(min + u * (max - min)));
            out.push(next);
        }
    }
    out
}

/// One uniform draw per knob.
pub fn random_configuration<R: Rng + ?Sized>(space: &KnobSpace, rng: &mut R) -> KnobConfiguration {
    let mut config = KnobConfiguration::new();
    for spec in space.knobs() {
        config.values.insert(spec.name.clone(), uniform_value(spec, rng));
    }
    config
}

/// Stratum of a numeric value among `count` equal-width bins of `[min, max]`.
pub fn stratum_of(value: f64, min: f64, max: f64, count: usize) -> usize {
    if max <= min {
        return 0;
    }
    let s = ((value - min) / (max - min) * count as f64) as usize;
    s.min(count - 1)
}

/// Latin hypercube sample: every numeric knob has exactly one value in each
/// of `count` equal-width strata; categorical knobs are drawn uniformly.
pub fn lhs_sample(space: &KnobSpace, count: usize, seed: u64) -> Vec<KnobConfiguration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut configs = alloc::vec![KnobConfiguration::new(); count];
    for spec in space.knobs() {
        match spec.kind {
            KnobKind::Numeric => {
                let (min, max) = spec.bounds();
                let mut strata: Vec<usize> = (0..count).collect();
                strata.shuffle(&mut rng);
                for (config, &s) in configs.iter_mut().zip(&strata) {
                    let u: f64 = rng.random_range(0.0..1.0);
                    let width = (max - min) / count as f64;
                    let lo = min + s as f64 * width;
                    let mut x = (lo + u * width).clamp(min, max);
                    // Rounding can land a value on the next stratum's lower edge.
                    while x > min && stratum_of(x, min, max, count) > s {
                        x = x.next_down();
                    }
                    while x < max && stratum_of(x, min, max, count) < s {
                        x = x.next_up();
                    }
                    config.values.insert(spec.name.clone(), KnobValue::Numeric(x));
                }
            }
            KnobKind::Categorical => {
                for config in configs.iter_mut() {
                    config.values.insert(spec.name.clone(), uniform_value(spec, &mut rng));
                }
            }
        }
    }
    configs
}

/// Uniform random search.
#[derive(Debug, Clone)]
pub struct RandomTuner {
    space: KnobSpace,
    state: TunerState,
    rng: ChaCha8Rng,
}

impl RandomTuner {
    pub fn new(space: KnobSpace, seed: u64) -> RandomTuner {
        RandomTuner {
            space,
            state: TunerState { seed, ..Default::default() },
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Tuner for RandomTuner {
    fn name(&self) -> &str {
        "random"
    }

    fn space(&self) -> &KnobSpace {
        &self.space
    }

    fn state(&self) -> &TunerState {
        &self.state
    }

    fn observe(&mut self, config: KnobConfiguration, total: f64) -> Result<(), TunerError> {
        record(&self.space, &mut self.state, config, total)
    }

    fn recommend(&mut self) -> Result<KnobConfiguration, TunerError> {
        Ok(random_configuration(&self.space, &mut self.rng))
    }
}

/// GP regression on `encoding -> total` with expected improvement over a
/// fresh batch of uniform candidates each round.
///
/// [`BoTuner::refined`] turns on a stronger search: part of the batch is
/// spent on perturbations, single-categorical changes, and single-axis moves
/// of the best observations, and the GP fits per-dimension length scales and
/// observation noise on log totals.
#[derive(Debug, Clone)]
pub struct BoTuner {
    space: KnobSpace,
    state: TunerState,
    rng: ChaCha8Rng,
    candidates: usize,
    pub local_fraction: f64,
    pub local_scale: f64,
    /// Fit per-dimension length scales and observation noise.
    pub ard: bool,
    /// Model the logarithm of the totals.
    pub log_target: bool,
}

impl BoTuner {
    pub fn new(space: KnobSpace, seed: u64) -> BoTuner {
        Self::with_candidates(space, seed, DEFAULT_CANDIDATES)
    }

    pub fn with_candidates(space: KnobSpace, seed: u64, candidates: usize) -> BoTuner {
        BoTuner {
            space,
            state: TunerState { seed, ..Default::default() },
            rng: ChaCha8Rng::seed_from_u64(seed),
            candidates: candidates.max(1),
            local_fraction: DEFAULT_LOCAL_FRACTION,
            local_scale: DEFAULT_LOCAL_SCALE,
            ard: false,
            log_target: false,
        }
    }

    /// The stronger search described on [`BoTuner`].
    pub fn refined(space: KnobSpace, seed: u64) -> BoTuner {
        BoTuner {
            local_fraction: REFINED_LOCAL_FRACTION,
            ard: true,
            log_target: true,
            ..Self::new(space, seed)
        }
    }

    fn candidate_pool(&mut self) -> Vec<KnobConfiguration> {
        let local = libm::round(self.candidates as f64 * self.local_fraction.clamp(0.0, 1.0)) as usize;
        let mut ranked: Vec<&Observation> = self.state.observations.iter().collect();
        ranked.sort_by(|a, b| a.total.total_cmp(&b.total));
        let parents: Vec<KnobConfiguration> = ranked.iter().take(LOCAL_PARENTS).map(|o| o.config.clone()).collect();
        let mut pool = Vec::with_capacity(self.candidates);
        for _ in 0..self.candidates - local {
            pool.push(random_configuration(&self.space, &mut self.rng));
        }
        for i in 0..local {
            let parent = &parents[i % parents.len()];
            pool.push(perturb_configuration(&self.space, parent, self.local_scale, &mut self.rng));
        }
        if local > 0 {
            for parent in &parents {
                pool.extend(categorical_neighbors(&self.space, parent));
                pool.extend(axis_neighbors(&self.space, parent, AXIS_STEPS, &mut self.rng));
            }
        }
        pool
    }

    fn target(&self, total: f64) -> f64 {
        if self.log_target {
            libm::log(total.max(1e-12))
        } else {
            total
        }
    }

    pub fn fit(&self) -> Result<GaussianProcess, TunerError> {
        let have = self.state.observations.len();
        if have < 2 {
            return Err(TunerError::TooFewObservations { need: 2, have });
        }
        let xs: Vec<Vec<f64>> = self.state.observations.iter().map(|o| o.encoding.0.clone()).collect();
        let ys: Vec<f64> = self.state.observations.iter().map(|o| self.target(o.total)).collect();
        if self.ard {
            GaussianProcess::fit_ard(&xs, &ys)
        } else {
            GaussianProcess::fit_ml(&xs, &ys)
        }
        .ok_or(TunerError::GpFit)
    }
}

impl Tuner for BoTuner {
    fn name(&self) -> &str {
        if self.ard || self.local_fraction > 0.0 {
            "bo-refined"
        } else {
            "bo"
        }
    }

    fn space(&self) -> &KnobSpace {
        &self.space
    }

    fn state(&self) -> &TunerState {
        &self.state
    }

    fn observe(&mut self, config: KnobConfiguration, total: f64) -> Result<(), TunerError> {
        record(&self.space, &mut self.state, config, total)
    }

    fn recommend(&mut self) -> Result<KnobConfiguration, TunerError> {
        let gp = self.fit()?;
        self.state.hyperparameters = Some(gp.hyper.clone());
        let incumbent = gp.standardize_target(self.target(self.state.best().map(|o| o.total).unwrap_or(1.0)));
        let mut best: Option<(f64, KnobConfiguration)> = None;
        for config in self.candidate_pool() {
            let encoding = self.space.encode(&config)?;
            let ei = expected_improvement(gp.posterior_standardized(&encoding.0), incumbent);
            if best.as_ref().is_none_or(|(b, _)| ei > *b) {
                best = Some((ei, config));
            }
        }
        Ok(best.map(|(_, c)| c).unwrap_or_else(|| self.space.default_configuration()))
    }
}

/// Tuner selection by name.
pub fn tuner_by_name(name: &str, space: KnobSpace, seed: u64) -> Result<alloc::boxed::Box<dyn Tuner>, String> {
    match name {
        "bo" => Ok(alloc::boxed::Box::new(BoTuner::new(space, seed))),
        "bo-refined" => Ok(alloc::boxed::Box::new(BoTuner::refined(space, seed))),
        "random" => Ok(alloc::boxed::Box::new(RandomTuner::new(space, seed))),
        other => Err(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn unit(names: &[&str]) -> KnobSpace {
        KnobSpace::new(names.iter().map(|n| KnobSpec::numeric(n, 0.0, 1.0, 0.5)).collect()).unwrap()
    }

    fn num(c: &KnobConfiguration, k: &str) -> f64 {
        match c.get(k) {
            Some(KnobValue::Numeric(x)) => *x,
            _ => panic!("missing {k}"),
        }
    }

    #[test]
    fn lhs_four_strata() {
        let s = unit(&["x"]);
        let configs = lhs_sample(&s, 4, 3);
        let mut strata: Vec<usize> = configs.iter().map(|c| stratum_of(num(c, "x"), 0.0, 1.0, 4)).collect();
        strata.sort();
        assert_eq!(strata, vec![0, 1, 2, 3]);
        assert_eq!(configs, lhs_sample(&s, 4, 3));
    }

    proptest! {
        #[test]
        fn lhs_stratifies_every_dimension(count in 1usize..60, seed in 0u64..1000, lo in -50.0f64..50.0, span in 0.001f64..100.0) {
            let space = KnobSpace::new(vec![
                KnobSpec::numeric("a", lo, lo + span, lo),
                KnobSpec::numeric("b", 0.0, 1.0, 0.0),
                KnobSpec::categorical("c", &["x", "y"], "x"),
            ]).unwrap();
            let configs = lhs_sample(&space, count, seed);
            for (k, min, max) in [("a", lo, lo + span), ("b", 0.0, 1.0)] {
                let mut hist = vec![0; count];
                for c in &configs {
                    let x = num(c, k);
                    prop_assert!(x >= min && x <= max);
                    hist[stratum_of(x, min, max, count)] += 1;
                }
                prop_assert!(hist.iter().all(|&h| h == 1));
            }
            for c in &configs {
                prop_assert!(space.check(c).is_ok());
            }
        }
    }

    #[test]
    fn random_draws_respect_bounds_and_uniformity() {
        let space = KnobSpace::new(vec![
            KnobSpec::numeric("n", 2.0, 10.0, 4.0),
            KnobSpec::categorical("c", &["on", "off"], "on"),
        ])
        .unwrap();
        let mut t = RandomTuner::new(space.clone(), 5);
        let mut on = 0;
        for _ in 0..1000 {
            let c = t.recommend().unwrap();
            let x = num(&c, "n");
            assert!((2.0..=10.0).contains(&x));
            if c.get("c") == Some(&KnobValue::from("on")) {
                on += 1;
            }
        }
        assert!((400..=600).contains(&on), "{on}");
        let mut a = RandomTuner::new(space.clone(), 9);
        let mut b = RandomTuner::new(space, 9);
        assert_eq!(a.recommend(), b.recommend());
    }

    #[test]
    fn bo_needs_two_observations() {
        let mut t = BoTuner::new(unit(&["x"]), 0);
        assert!(matches!(t.recommend(), Err(TunerError::TooFewObservations { need: 2, have: 0 })));
        t.observe(KnobConfiguration::new().with("x", 0.2), 1.0).unwrap();
        assert!(t.recommend().is_err());
    }

    #[test]
    fn bo_identical_observations_recommend_valid() {
        let space = unit(&["x"]);
        let mut t = BoTuner::with_candidates(space.clone(), 1, 50);
        let c = KnobConfiguration::new().with("x", 0.4);
        t.observe(c.clone(), 3.0).unwrap();
        t.observe(c, 3.0).unwrap();
        let r = t.recommend().unwrap();
        assert!(space.check(&r).is_ok());
    }

    #[test]
    fn bo_finds_quadratic_minimum() {
        let space = unit(&["x"]);
        let f = |x: f64| (x - 0.5) * (x - 0.5) + 1.0;
        let mut t = BoTuner::new(space.clone(), 11);
        t.initialize(
            &lhs_sample(&space, 10, 4)
                .into_iter()
                .map(|c| {
                    let y = f(num(&c, "x"));
                    (c, y)
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mut last = 0.0;
        for _ in 0..10 {
            let c = t.recommend().unwrap();
            last = num(&c, "x");
            t.observe(c, f(last)).unwrap();
        }
        let best = num(&t.state().best().unwrap().config, "x");
        assert!((best - 0.5).abs() < 0.2, "best {best}, last {last}");
        assert!((last - 0.5).abs() < 0.2, "last {last}");
    }

    #[test]
    fn refined_bo_finds_a_minimum_that_depends_on_one_knob() {
        let space = KnobSpace::new(vec![
            KnobSpec::numeric("x", 0.0, 1.0, 0.0),
            KnobSpec::numeric("noise", 0.0, 1.0, 0.0),
            KnobSpec::categorical("mode", &["a", "b", "c"], "a"),
        ])
        .unwrap();
        let f = |c: &KnobConfiguration| {
            let penalty = if matches!(c.get("mode"), Some(KnobValue::Level(l)) if l == "c") { 0.0 } else { 2.0 };
            (num(c, "x") - 0.3).powi(2) + penalty + 1.0
        };
        let mut t = BoTuner::refined(space.clone(), 5);
        assert_eq!(t.name(), "bo-refined");
        t.initialize(&lhs_sample(&space, 8, 1).into_iter().map(|c| { let y = f(&c); (c, y) }).collect::<Vec<_>>()).unwrap();
        for _ in 0..15 {
            let c = t.recommend().unwrap();
            assert!(space.check(&c).is_ok());
            let y = f(&c);
            t.observe(c, y).unwrap();
        }
        let best = &t.state().best().unwrap().config;
        assert!(f(best) < 1.05, "best {best:?}");
        assert!(t.state().hyperparameters.as_ref().is_some_and(|h| h.relevance.len() == space.width()));
    }

    #[test]
    fn neighbors_change_exactly_one_knob() {
        let space = KnobSpace::new(vec![
            KnobSpec::numeric("x", 0.0, 10.0, 5.0),
            KnobSpec::categorical("mode", &["a", "b", "c"], "a"),
            KnobSpec::categorical("flag", &["on", "off"], "on"),
        ])
        .unwrap();
        let base = space.default_configuration();
        let cats = categorical_neighbors(&space, &base);
        assert_eq!(cats.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let axes = axis_neighbors(&space, &base, 4, &mut rng);
        assert_eq!(axes.len(), 4);
        let strata: Vec<usize> = axes.iter().map(|c| stratum_of(num(c, "x"), 0.0, 10.0, 4)).collect();
        assert_eq!(strata, vec![0, 1, 2, 3]);
        for c in cats.iter().chain(&axes) {
            let changed = space.knobs().iter().filter(|k| c.get(&k.name) != base.get(&k.name)).count();
            assert_eq!(changed, 1, "{c:?}");
        }
    }
}
