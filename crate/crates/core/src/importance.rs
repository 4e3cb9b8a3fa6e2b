//! Per-query knob importance from evaluation samples: a bagged ensemble of
//! depth-bounded regression trees is fitted on `(encoding, latency)` pairs and
//! each knob's encoding segment is scored by how much shuffling it degrades
//! the fit.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knob::{KnobEncoding, KnobSpace};

pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImportanceError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has width {got}, expected {expected}")]
    InconsistentWidth { index: usize, expected: usize, got: usize },
    #[error("sample {0} has a non-finite latency")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub bootstrap_fraction: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 25,
            max_depth: 6,
            bootstrap_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Features this tree splits on.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf(_) => None,
        })
    }

    fn fit(xs: &[&[f64]], ys: &[f64], idx: &mut [usize], max_depth: usize) -> RegressionTree {
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow(xs, ys, idx, max_depth);
        tree
    }

    fn grow(&mut self, xs: &[&[f64]], ys: &[f64], idx: &mut [usize], depth: usize) -> usize {
        let at = self.nodes.len();
        let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(TreeNode::Leaf(mean));
        if depth == 0 || idx.len() < 2 {
            return at;
        }
        let Some((feature, threshold)) = best_split(xs, ys, idx) else {
            return at;
        };
        let mut mid = 0;
        for k in 0..idx.len() {
            if xs[idx[k]][feature] <= threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(xs, ys, l, depth - 1);
        let right = self.grow(xs, ys, r, depth - 1);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

/// Split that minimizes the summed squared error of the two children, if any
/// split reduces it.
fn best_split(xs: &[&[f64]], ys: &[f64], idx: &[usize]) -> Option<(usize, f64)> {
    let n = idx.len() as f64;
    let total: f64 = idx.iter().map(|&i| ys[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| ys[i] * ys[i]).sum();
    let parent_sse = total_sq - total * total / n;
    if parent_sse <= 1e-12 * (1.0 + total_sq) {
        return None;
    }
    let width = xs[idx[0]].len();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted: Vec<usize> = idx.to_vec();
    for f in 0..width {
        sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        let (mut s, mut sq) = (0.0, 0.0);
        for k in 0..sorted.len() - 1 {
            let y = ys[sorted[k]];
            s += y;
            sq += y * y;
            let (lo, hi) = (xs[sorted[k]][f], xs[sorted[k + 1]][f]);
            if lo == hi {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let sse = (sq - s * s / nl) + ((total_sq - sq) - (total - s) * (total - s) / nr);
            if best.is_none_or(|(b, _, _)| sse < b) {
                best = Some((sse, f, 0.5 * (lo + hi)));
            }
        }
    }
    match best {
        Some((sse, f, t)) if sse < parent_sse - 1e-12 * (1.0 + parent_sse) => Some((f, t)),
        _ => None,
    }
}

/// Bagged regression trees mapping a knob encoding to latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRegressor {
    width: usize,
    trees: Vec<RegressionTree>,
}

impl LatencyRegressor {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Coefficient of determination on the given samples.
    pub fn r_squared(&self, samples: &[(KnobEncoding, f64)]) -> f64 {
        let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let mean = crate::math::mean(&ys);
        let ss_tot: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
        let ss_res: f64 = samples
            .iter()
            .map(|(x, y)| {
                let e = self.predict(x.as_slice()) - y;
                e * e
            })
            .sum();
        if ss_tot == 0.0 {
            return if ss_res == 0.0 { 1.0 } else { 0.0 };
        }
        1.0 - ss_res / ss_tot
    }
}

pub fn fit_regressor(samples: &[(KnobEncoding, f64)], config: &ForestConfig) -> Result<LatencyRegressor, ImportanceError> {
    if samples.len() < MIN_SAMPLES {
        return Err(ImportanceError::TooFewSamples(samples.len()));
    }
    let width = samples[0].0.len();
    for (index, (x, y)) in samples.iter().enumerate() {
        if x.len() != width {
            return Err(ImportanceError::InconsistentWidth {
                index,
                expected: width,
                got: x.len(),
            });
        }
        if !y.is_finite() {
            return Err(ImportanceError::NonFinite(index));
        }
    }
    let xs: Vec<&[f64]> = samples.iter().map(|s| s.0.as_slice()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draw = ((samples.len() as f64 * config.bootstrap_fraction).ceil() as usize).max(1);
    let trees = (0..config.trees.max(1))
        .map(|_| {
            let mut idx: Vec<usize> = (0..draw).map(|_| rng.random_range(0..samples.len())).collect();
            RegressionTree::fit(&xs, &ys, &mut idx, config.max_depth)
        })
        .collect();
    Ok(LatencyRegressor { width, trees })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    /// `(knob, score)` in knob-space order.
    pub scores: Vec<(String, f64)>,
    pub normalized: bool,
}

impl ImportanceVector {
    pub fn get(&self, knob: &str) -> Option<f64> {
        self.scores.iter().find(|(k, _)| k == knob).map(|(_, s)| *s)
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|(_, s)| *s).collect()
    }

    /// Scores laid out over `space`'s knobs, zero where absent.
    pub fn aligned(&self, space: &KnobSpace) -> Vec<f64> {
        space.knobs().iter().map(|k| self.get(&k.name).unwrap_or(0.0)).collect()
    }

    /// Normalized copy. An all-zero vector becomes uniform.
    pub fn normalize(&self) -> ImportanceVector {
        let sum: f64 = self.scores.iter().map(|(_, s)| s).sum();
        let n = self.scores.len().max(1) as f64;
        let scores = self
            .scores
            .iter()
            .map(|(k, s)| (k.clone(), if sum > 0.0 { s / sum } else { 1.0 / n }))
            .collect();
        ImportanceVector {
            scores,
            normalized: true,
        }
    }
}

/// Mean increase in squared error after shuffling each knob's segment,
/// clipped at zero. Returned unnormalized; see [`permutation_importance`].
pub fn raw_permutation_importance(
    regressor: &LatencyRegressor,
    space: &KnobSpace,
    samples: &[(KnobEncoding, f64)],
    repeats: usize,
    seed: u64,
) -> ImportanceVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mse = |rows: &[Vec<f64>]| {
        rows.iter()
            .zip(samples)
            .map(|(x, (_, y))| {
                let e = regressor.predict(x) - y;
                e * e
            })
            .sum::<f64>()
            / samples.len().max(1) as f64
    };
    let base_rows: Vec<Vec<f64>> = samples.iter().map(|s| s.0 .0.clone()).collect();
    let baseline = mse(&base_rows);
    let mut scores = Vec::with_capacity(space.len());
    let mut perm: Vec<usize> = (0..samples.len()).collect();
    for (spec, seg) in space.knobs().iter().zip(space.segments()) {
        let mut total = 0.0;
        for _ in 0..repeats.max(1) {
            perm.shuffle(&mut rng);
            let mut rows = base_rows.clone();
            for (row, &src) in rows.iter_mut().zip(&perm) {
                row[seg.clone()].copy_from_slice(&base_rows[src][seg.clone()]);
            }
            total += mse(&rows) - baseline;
        }
        let mean = total / repeats.max(1) as f64;
        scores.push((spec.name.clone(), mean.max(0.0)));
    }
    ImportanceVector {
        scores,
        normalized: false,
    }
}

pub fn permutation_importance(
    regressor: &LatencyRegressor,
    space: &KnobSpace,
    samples: &[(KnobEncoding, f64)],
    repeats: usize,
    seed: u64,
) -> ImportanceVector {
    raw_permutation_importance(regressor, space, samples, repeats, seed).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knob::KnobSpec;

    fn space(n: usize) -> KnobSpace {
        let names = ["a", "b", "c", "d"];
        KnobSpace::new(names[..n].iter().map(|k| KnobSpec::numeric(k, 0.0, 1.0, 0.0)).collect()).unwrap()
    }

    fn samples(n: usize, width: usize, seed: u64, f: impl Fn(&[f64], &mut ChaCha8Rng) -> f64) -> Vec<(KnobEncoding, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..width).map(|_| rng.random_range(0.0..1.0)).collect();
                let y = f(&x, &mut rng);
                (KnobEncoding(x), y)
            })
            .collect()
    }

    #[test]
    fn linear_target_generalizes() {
        let data = samples(50, 2, 1, |x, _| 10.0 * x[0]);
        let held = samples(100, 2, 2, |x, _| 10.0 * x[0]);
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        let close = held
            .iter()
            .filter(|(x, y)| (reg.predict(x.as_slice()) - y).abs() <= 0.1 * y.abs())
            .count();
        assert!(close >= 80, "{close} of 100 within 10%");
    }

    #[test]
    fn constant_and_duplicate_targets() {
        let data = samples(30, 3, 3, |_, _| 4.25);
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        for (x, _) in &data {
            assert!((reg.predict(x.as_slice()) - 4.25).abs() <= 1e-9);
        }
        let dup: Vec<_> = (0..25).map(|_| (KnobEncoding(alloc::vec![0.3, 0.7]), 2.5)).collect();
        let reg = fit_regressor(&dup, &ForestConfig::default()).unwrap();
        assert!((reg.predict(&[0.3, 0.7]) - 2.5).abs() <= 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let few = samples(19, 2, 0, |x, _| x[0]);
        assert_eq!(fit_regressor(&few, &ForestConfig::default()), Err(ImportanceError::TooFewSamples(19)));
        let mut bad = samples(20, 2, 0, |x, _| x[0]);
        bad[5].0 = KnobEncoding(alloc::vec![0.1]);
        assert!(matches!(
            fit_regressor(&bad, &ForestConfig::default()),
            Err(ImportanceError::InconsistentWidth { index: 5, .. })
        ));
    }

    #[test]
    fn training_fit_is_good_for_low_dimensional_targets() {
        let data = samples(200, 4, 4, |x, r| 3.0 * x[0] + 2.0 * x[1] * x[2] + r.random_range(-0.1..0.1));
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        assert!(reg.r_squared(&data) >= 0.5);
    }

    #[test]
    fn single_knob_dominates() {
        let s = space(3);
        let data = samples(150, 3, 5, |x, _| 1.0 + 10.0 * x[0]);
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        let imp = permutation_importance(&reg, &s, &data, 5, 9);
        assert!(imp.get("a").unwrap() >= 0.9, "{imp:?}");
        assert!((imp.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_knobs_share_importance() {
        let s = space(2);
        let data = samples(200, 2, 6, |x, _| 1.0 + 5.0 * x[0] + 5.0 * x[1]);
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        let imp = permutation_importance(&reg, &s, &data, 5, 1);
        assert!((imp.get("a").unwrap() - imp.get("b").unwrap()).abs() <= 0.15, "{imp:?}");
    }

    #[test]
    fn noise_only_spreads_importance() {
        let s = space(4);
        let data = samples(150, 4, 7, |_, r| 5.0 + r.random_range(-1.0..1.0));
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        let imp = permutation_importance(&reg, &s, &data, 5, 2);
        let max = imp.values().into_iter().fold(0.0, f64::max);
        assert!(max <= 0.5, "{imp:?}");
    }

    #[test]
    fn unused_knob_scores_zero() {
        let s = space(2);
        let data = samples(60, 2, 8, |x, _| if x[0] > 0.5 { 2.0 } else { 1.0 });
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        assert!(reg.trees().iter().all(|t| t.split_features().all(|f| f == 0)));
        let raw = raw_permutation_importance(&reg, &s, &data, 5, 3);
        assert_eq!(raw.get("b"), Some(0.0));
    }

    #[test]
    fn importance_is_deterministic() {
        let s = space(3);
        let data = samples(40, 3, 9, |x, _| x[1]);
        let reg = fit_regressor(&data, &ForestConfig::default()).unwrap();
        assert_eq!(
            permutation_importance(&reg, &s, &data, 5, 4),
            permutation_importance(&reg, &s, &data, 5, 4)
        );
    }
}
