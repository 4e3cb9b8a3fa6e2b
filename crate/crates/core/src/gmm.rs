//! One-dimensional Gaussian mixtures over per-query latencies and the
//! n-bit category labels minted from mixture membership.
//!
//! Components are kept sorted by ascending mean, and component `j` owns bit
//! `j` of a label, so labels stay comparable across refits of similar data.
//! A latency sets every bit whose posterior responsibility reaches the
//! threshold `tau`; when none does, the most responsible component's bit is
//! set.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, exp, ln, log_sum_exp, normal_ln_pdf};

pub const MIN_SAMPLES: usize = 8;
pub const DEFAULT_TAU: f64 = 0.2;
pub const MAX_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GmmError {
    #[error("need at least {MIN_SAMPLES} latencies, got {0}")]
    TooFewSamples(usize),
    #[error("latency {0} is not a positive finite number")]
    NonPositive(f64),
    #[error("label width {width} is smaller than the {components} mixture components")]
    WidthTooSmall { width: usize, components: usize },
    #[error("label width {0} outside 1..=64")]
    InvalidWidth(usize),
    #[error("query `{query}`: {source}")]
    Query { query: String, source: alloc::boxed::Box<GmmError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(mut components: Vec<Component>) -> GaussianMixture {
        components.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        GaussianMixture { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    fn log_joint(&self, x: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = ln(c.weight) + normal_ln_pdf(x, c.mean, c.variance);
        }
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.len()];
        data.iter()
            .map(|&x| {
                self.log_joint(x, &mut buf);
                log_sum_exp(&buf)
            })
            .sum()
    }

    /// Posterior probability of each component at `x`.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let mut buf = vec![0.0; self.len()];
        self.log_joint(x, &mut buf);
        let total = log_sum_exp(&buf);
        buf.iter().map(|l| exp(l - total)).collect()
    }

    /// Means multiplied by `c`, variances by `c^2`.
    pub fn scaled(&self, c: f64) -> GaussianMixture {
        GaussianMixture {
            components: self
                .components
                .iter()
                .map(|k| Component {
                    weight: k.weight,
                    mean: k.mean * c,
                    variance: k.variance * c * c,
                })
                .collect(),
        }
    }

    pub fn bic(&self, data: &[f64]) -> f64 {
        bic(self.log_likelihood(data), self.len(), data.len())
    }
}

fn bic(log_likelihood: f64, k: usize, n: usize) -> f64 {
    let params = (3 * k - 1) as f64;
    -2.0 * log_likelihood + params * ln(n as f64)
}

/// Fixed-width bit label; bit `j` is printed at position `j` from the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CategoryLabel {
    bits: u64,
    width: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelParseError {
    #[error("label must be 1..=64 characters of 0/1")]
    Malformed,
}

impl CategoryLabel {
    pub fn empty(width: usize) -> CategoryLabel {
        assert!((1..=MAX_WIDTH).contains(&width), "label width must be in 1..=64");
        CategoryLabel { bits: 0, width: width as u8 }
    }

    pub fn from_bits(bits: &[bool]) -> CategoryLabel {
        let mut l = CategoryLabel::empty(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            l.set(i, b);
        }
        l
    }

    pub fn one_hot(width: usize, bit: usize) -> CategoryLabel {
        let mut l = CategoryLabel::empty(width);
        l.set(bit, true);
        l
    }

    /// Raw mask; bit `j` is `1 << j`.
    pub fn from_mask(width: usize, mask: u64) -> CategoryLabel {
        let keep = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        CategoryLabel { bits: mask & keep, ..CategoryLabel::empty(width) }
    }

    pub fn mask(&self) -> u64 {
        self.bits
    }

    pub fn width(&self) -> usize {
        usize::from(self.width)
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.width() && self.bits & (1 << bit) != 0
    }

    pub fn set(&mut self, bit: usize, on: bool) {
        assert!(bit < self.width(), "bit {bit} outside label width {}", self.width);
        if on {
            self.bits |= 1 << bit;
        } else {
            self.bits &= !(1 << bit);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.width()).map(|i| self.get(i)).collect()
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.width() {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for CategoryLabel {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || s.len() > MAX_WIDTH {
            return Err(LabelParseError::Malformed);
        }
        let mut l = CategoryLabel::empty(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => l.set(i, true),
                _ => return Err(LabelParseError::Malformed),
            }
        }
        Ok(l)
    }
}

impl From<CategoryLabel> for String {
    fn from(l: CategoryLabel) -> String {
        alloc::format!("{l}")
    }
}

impl TryFrom<String> for CategoryLabel {
    type Error = LabelParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub max_components: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the per-sample log-likelihood gain.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl GmmConfig {
    pub fn new(max_components: usize, seed: u64) -> GmmConfig {
        GmmConfig {
            max_components,
            max_iterations: 200,
            tolerance: 1e-6,
            restarts: 5,
            seed,
        }
    }
}

/// Result of one EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    pub mixture: GaussianMixture,
    pub log_likelihood: f64,
    /// Log-likelihood before each M-step.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// BIC of the best run for each `k = 1..`.
    pub bic: Vec<f64>,
    /// Every EM run performed, grouped by `k`.
    pub runs: Vec<Vec<EmRun>>,
}

fn validate(latencies: &[f64]) -> Result<(), GmmError> {
    if latencies.len() < MIN_SAMPLES {
        return Err(GmmError::TooFewSamples(latencies.len()));
    }
    if let Some(&bad) = latencies.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
        return Err(GmmError::NonPositive(bad));
    }
    Ok(())
}

pub fn variance_floor(latencies: &[f64]) -> f64 {
    1e-6 * (math::variance(latencies) + 1e-12)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// EM for a fixed `k`, starting from the given means.
fn em(data: &[f64], mut means: Vec<f64>, floor: f64, config: &GmmConfig) -> EmRun {
    let n = data.len();
    let k = means.len();
    // pooled within-cluster variance around the nearest initial mean
    let pooled = data
        .iter()
        .map(|&x| {
            means
                .iter()
                .map(|&m| (x - m) * (x - m))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / n as f64;
    let mut vars = vec![pooled.max(floor); k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![0.0; n * k];
    let mut buf = vec![0.0; k];
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut last = (means.clone(), vars.clone(), weights.clone());
    for _ in 0..config.max_iterations {
        // E-step
        let mut ll = 0.0;
        for (i, &x) in data.iter().enumerate() {
            for j in 0..k {
                buf[j] = ln(weights[j]) + normal_ln_pdf(x, means[j], vars[j]);
            }
            let total = log_sum_exp(&buf);
            ll += total;
            for j in 0..k {
                resp[i * k + j] = exp(buf[j] - total);
            }
        }
        if ll < prev {
            // round-off at a fixed point: keep the parameters that scored `prev`
            (means, vars, weights) = last;
            break;
        }
        trace.push(ll);
        if (ll - prev) / n as f64 <= config.tolerance && trace.len() > 1 {
            break;
        }
        prev = ll;
        last = (means.clone(), vars.clone(), weights.clone());
        // M-step
        for j in 0..k {
            let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            weights[j] = nj / n as f64;
            if nj <= 1e-300 {
                continue;
            }
            let mu = (0..n).map(|i| resp[i * k + j] * data[i]).sum::<f64>() / nj;
            let var = (0..n)
                .map(|i| resp[i * k + j] * (data[i] - mu) * (data[i] - mu))
                .sum::<f64>()
                / nj;
            means[j] = mu;
            vars[j] = var.max(floor);
        }
    }
    let mixture = GaussianMixture::new(
        (0..k)
            .map(|j| Component {
                weight: weights[j],
                mean: means[j],
                variance: vars[j],
            })
            .collect(),
    );
    let log_likelihood = mixture.log_likelihood(data);
    EmRun {
        mixture,
        log_likelihood,
        trace,
    }
}

/// EM for each `k` up to `max_components` (best of several seeded restarts),
/// then the `k` with minimum BIC.
pub fn fit_gmm_detailed(latencies: &[f64], config: &GmmConfig) -> Result<GmmFit, GmmError> {
    validate(latencies)?;
    let floor = variance_floor(latencies);
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spread = math::sqrt(math::variance(latencies));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k_max = config.max_components.clamp(1, latencies.len());

    let mut best: Option<(f64, GaussianMixture)> = None;
    let mut bics = Vec::with_capacity(k_max);
    let mut runs = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let base: Vec<f64> = (0..k).map(|j| quantile(&sorted, (j as f64 + 0.5) / k as f64)).collect();
        let mut k_runs = Vec::with_capacity(config.restarts.max(1));
        for r in 0..config.restarts.max(1) {
            let means = if r == 0 {
                base.clone()
            } else {
                base.iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + 0.25 * spread / k as f64 * z
                    })
                    .collect()
            };
            k_runs.push(em(latencies, means, floor, config));
        }
        let winner = k_runs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.log_likelihood.total_cmp(&b.1.log_likelihood).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("at least one restart");
        let score = bic(k_runs[winner].log_likelihood, k, latencies.len());
        bics.push(score);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, k_runs[winner].mixture.clone()));
        }
        runs.push(k_runs);
    }
    Ok(GmmFit {
        mixture: best.expect("k_max >= 1").1,
        bic: bics,
        runs,
    })
}

pub fn fit_gmm(latencies: &[f64], max_components: usize, seed: u64) -> Result<GaussianMixture, GmmError> {
    fit_gmm_detailed(latencies, &GmmConfig::new(max_components, seed)).map(|f| f.mixture)
}

pub fn assign_label(mixture: &GaussianMixture, latency: f64, width: usize, tau: f64) -> Result<CategoryLabel, GmmError> {
    if !(1..=MAX_WIDTH).contains(&width) {
        return Err(GmmError::InvalidWidth(width));
    }
    if width < mixture.len() {
        return Err(GmmError::WidthTooSmall {
            width,
            components: mixture.len(),
        });
    }
    let resp = mixture.responsibilities(latency);
    let mut label = CategoryLabel::empty(width);
    let mut argmax = 0;
    for (j, &r) in resp.iter().enumerate() {
        if r >= tau {
            label.set(j, true);
        }
        if r > resp[argmax] {
            argmax = j;
        }
    }
    if label.count_ones() == 0 {
        label.set(argmax, true);
    }
    Ok(label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub mixtures: BTreeMap<String, GaussianMixture>,
    /// Labels aligned with each query's input latencies.
    pub labels: BTreeMap<String, Vec<CategoryLabel>>,
}

/// Fits one mixture per query (up to `width` components) and labels every
/// observation against its own query's mixture.
pub fn label_dataset(
    records: &BTreeMap<String, Vec<f64>>,
    width: usize,
    tau: f64,
    seed: u64,
) -> Result<LabeledDataset, GmmError> {
    if !(1..=MAX_WIDTH).contains(&width) {
        return Err(GmmError::InvalidWidth(width));
    }
    let mut mixtures = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for (query, latencies) in records {
        let wrap = |e| GmmError::Query {
            query: query.clone(),
            source: alloc::boxed::Box::new(e),
        };
        let query_seed = math::mix64(seed ^ math::fnv1a(query.as_bytes(), math::FNV_OFFSET));
        let mixture = fit_gmm(latencies, width, query_seed).map_err(wrap)?;
        let row = latencies
            .iter()
            .map(|&x| assign_label(&mixture, x, width, tau))
            .collect::<Result<Vec<_>, _>>()
            .map_err(wrap)?;
        mixtures.insert(query.clone(), mixture);
        labels.insert(query.clone(), row);
    }
    Ok(LabeledDataset { mixtures, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use rand_distr::Normal;

    fn draws(parts: &[(f64, f64, usize)], seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for &(mu, sd, n) in parts {
            let d = Normal::new(mu, sd).unwrap();
            out.extend((0..n).map(|_| d.sample(&mut rng)));
        }
        out
    }

    #[test]
    fn single_component_recovery() {
        let data = draws(&[(10.0, 1.0, 100)], 1);
        let m = fit_gmm(&data, 4, 1).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.components[0].mean - 10.0).abs() <= 0.5);
        assert!((m.components[0].variance - 1.0).abs() <= 0.5);
    }

    #[test]
    fn separated_pair_recovery() {
        let data = draws(&[(5.0, 0.5, 50), (20.0, 0.5, 50)], 12);
        let fit = fit_gmm_detailed(&data, &GmmConfig::new(4, 2)).unwrap();
        let m = &fit.mixture;
        assert_eq!(m.len(), 2);
        assert!((m.components[0].mean - 5.0).abs() <= 0.5);
        assert!((m.components[1].mean - 20.0).abs() <= 0.5);
        for c in &m.components {
            assert!((c.weight - 0.5).abs() <= 0.1);
        }
        for k_runs in &fit.runs {
            for run in k_runs {
                for w in run.trace.windows(2) {
                    assert!(w[1] >= w[0], "{} -> {}", w[0], w[1]);
                }
            }
        }
        assert!(fit.bic.iter().all(|&b| b >= fit.bic[1]));
    }

    #[test]
    fn constant_data_hits_floor() {
        let data = vec![7.0; 20];
        let m = fit_gmm(&data, 3, 0).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.components[0].mean, 7.0);
        assert_eq!(m.components[0].variance, variance_floor(&data));
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_gmm(&[1.0; 7], 2, 0), Err(GmmError::TooFewSamples(7)));
        let mut data = vec![1.0; 10];
        data[3] = -2.0;
        assert_eq!(fit_gmm(&data, 2, 0), Err(GmmError::NonPositive(-2.0)));
    }

    fn pair(var: f64) -> GaussianMixture {
        GaussianMixture::new(vec![
            Component { weight: 0.5, mean: 20.0, variance: var },
            Component { weight: 0.5, mean: 5.0, variance: var },
        ])
    }

    #[test]
    fn labels_from_membership() {
        let m = pair(0.25);
        assert_eq!(assign_label(&m, 5.0, 2, DEFAULT_TAU).unwrap().to_string(), "10");
        assert_eq!(assign_label(&m, 20.0, 2, DEFAULT_TAU).unwrap().to_string(), "01");
        let wide = pair(9.0);
        let r = wide.responsibilities(12.5);
        assert!(r.iter().all(|&v| v >= DEFAULT_TAU));
        assert_eq!(assign_label(&wide, 12.5, 2, DEFAULT_TAU).unwrap().to_string(), "11");
        assert_eq!(assign_label(&m, 5.0, 4, DEFAULT_TAU).unwrap().to_string(), "1000");
        assert_eq!(
            assign_label(&m, 5.0, 1, DEFAULT_TAU),
            Err(GmmError::WidthTooSmall { width: 1, components: 2 })
        );
    }

    #[test]
    fn argmax_fallback_when_no_bit_reaches_tau() {
        let m = GaussianMixture::new(vec![
            Component { weight: 0.3, mean: 1.0, variance: 100.0 },
            Component { weight: 0.35, mean: 2.0, variance: 100.0 },
            Component { weight: 0.35, mean: 3.0, variance: 100.0 },
        ]);
        let l = assign_label(&m, 2.0, 3, 0.9).unwrap();
        assert_eq!(l.to_string(), "010");
    }

    #[test]
    fn label_text_round_trip() {
        let l: CategoryLabel = "0110".parse().unwrap();
        assert_eq!(l.bits(), vec![false, true, true, false]);
        assert_eq!(l.to_string(), "0110");
        assert!("01x".parse::<CategoryLabel>().is_err());
        assert_eq!(CategoryLabel::from_mask(3, 0b101).to_string(), "101");
    }

    #[test]
    fn per_query_isolation() {
        let mut records = BTreeMap::new();
        records.insert("a".into(), draws(&[(3.0, 0.1, 60)], 1));
        records.insert("b".into(), draws(&[(3.0, 0.1, 30), (9.0, 0.2, 30)], 2));
        let out = label_dataset(&records, 8, DEFAULT_TAU, 4).unwrap();
        assert_eq!(out.mixtures["a"].len(), 1);
        assert_eq!(out.mixtures["b"].len(), 2);
        assert!(out.labels["a"].iter().all(|l| l.count_ones() == 1 && l.get(0)));
        assert_eq!(out.labels["b"].len(), 60);
    }

    #[test]
    fn label_dataset_names_failing_query() {
        let mut records = BTreeMap::new();
        records.insert("short".into(), vec![1.0; 3]);
        let err = label_dataset(&records, 4, DEFAULT_TAU, 0).unwrap_err();
        assert!(matches!(err, GmmError::Query { ref query, .. } if query == "short"));
    }

    proptest::proptest! {
        #[test]
        fn label_is_scale_consistent(c in 0.01f64..100.0, x in 1.0f64..25.0, v in 0.1f64..10.0) {
            let m = pair(v);
            let a = assign_label(&m, x, 2, DEFAULT_TAU).unwrap();
            let b = assign_label(&m.scaled(c), x * c, 2, DEFAULT_TAU).unwrap();
            let argmax = |m: &GaussianMixture, x: f64| {
                let r = m.responsibilities(x);
                (0..r.len()).max_by(|&i, &j| r[i].total_cmp(&r[j])).unwrap()
            };
            proptest::prop_assert_eq!(argmax(&m, x), argmax(&m.scaled(c), x * c));
            let ra = m.responsibilities(x);
            if ra.iter().all(|r| (r - DEFAULT_TAU).abs() > 1e-9) {
                proptest::prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn fitted_weights_on_simplex(seed in 0u64..50) {
            let data = draws(&[(2.0, 0.3, 20), (6.0, 0.5, 20)], seed);
            let m = fit_gmm(&data, 3, seed).unwrap();
            let sum: f64 = m.components.iter().map(|c| c.weight).sum();
            proptest::prop_assert!((sum - 1.0).abs() <= 1e-9);
            let floor = variance_floor(&data);
            proptest::prop_assert!(m.components.iter().all(|c| c.variance >= floor));
            proptest::prop_assert!(m.components.windows(2).all(|w| w[0].mean <= w[1].mean));
        }
    }
}
