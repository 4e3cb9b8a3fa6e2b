//! Gaussian-process regression with a squared-exponential kernel and
//! optional per-dimension length scales.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{exp, ln, sqrt, std_normal_cdf, std_normal_pdf};

pub const JITTER: f64 = 1e-6;
pub const LENGTH_SCALES: [f64; 4] = [0.1, 0.3, 1.0, 3.0];
pub const SIGNAL_VARIANCES: [f64; 3] = [0.5, 1.0, 2.0];
/// Observation noise in standardized units.
pub const NOISE_VARIANCES: [f64; 3] = [1e-6, 0.01, 0.1];

/// Per-dimension multipliers tried on the shared length scale.
pub const RELEVANCE_STEPS: [f64; 4] = [0.3, 1.0, 3.0, 10.0];
const RELEVANCE_SWEEPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Length-scale multiplier per input dimension; empty means all ones.
    #[serde(default)]
    pub relevance: Vec<f64>,
}

impl Hyperparameters {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(d, (x, y))| {
                let r = self.relevance.get(d).copied().unwrap_or(1.0);
                (x - y) * (x - y) / (r * r)
            })
            .sum();
        self.signal_variance * exp(-d2 / (2.0 * self.length_scale * self.length_scale))
    }
}

/// Lower-triangular Cholesky factor of a row-major `n x n` matrix, or `None`
/// when the matrix is not numerically positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` in place.
fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place.
fn backward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// A fitted GP over standardized targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    pub hyper: Hyperparameters,
    inputs: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    log_marginal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub std_dev: f64,
}

fn standardize(targets: &[f64]) -> (Vec<f64>, f64, f64) {
    let mean = crate::math::mean(targets);
    let sd = sqrt(crate::math::variance(targets));
    let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    (targets.iter().map(|t| (t - mean) / scale).collect(), mean, scale)
}

impl GaussianProcess {
    /// Fits with fixed hyperparameters. Jitter grows tenfold until the kernel
    /// matrix factors.
    pub fn fit(inputs: &[Vec<f64>], targets: &[f64], hyper: Hyperparameters) -> Option<GaussianProcess> {
        let n = inputs.len();
        if n == 0 || targets.len() != n {
            return None;
        }
        let (y, y_mean, y_scale) = standardize(targets);
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = hyper.kernel(&inputs[i], &inputs[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let mut jitter = JITTER;
        let chol = loop {
            let mut kj = k.clone();
            for i in 0..n {
                kj[i * n + i] += hyper.noise_variance + jitter;
            }
            if let Some(l) = cholesky(&kj, n) {
                break l;
            }
            jitter *= 10.0;
            if jitter > 1.0 {
                return None;
            }
        };
        let mut alpha = y.clone();
        forward_substitute(&chol, n, &mut alpha);
        let data_fit: f64 = alpha.iter().map(|a| a * a).sum();
        let log_det: f64 = (0..n).map(|i| ln(chol[i * n + i])).sum();
        backward_substitute(&chol, n, &mut alpha);
        let log_marginal = -0.5 * data_fit - log_det - 0.5 * n as f64 * ln(2.0 * core::f64::consts::PI);
        Some(GaussianProcess {
            hyper,
            inputs: inputs.to_vec(),
            chol,
            alpha,
            y_mean,
            y_scale,
            log_marginal,
        })
    }

    /// Noiseless grid search over [`LENGTH_SCALES`] x [`SIGNAL_VARIANCES`]
    /// by marginal likelihood; the first grid point wins ties.
    pub fn fit_ml(inputs: &[Vec<f64>], targets: &[f64]) -> Option<GaussianProcess> {
        Self::fit_grid(inputs, targets, &[0.0])
    }

    fn fit_grid(inputs: &[Vec<f64>], targets: &[f64], noises: &[f64]) -> Option<GaussianProcess> {
        let mut best: Option<GaussianProcess> = None;
        for &length_scale in &LENGTH_SCALES {
            for &signal_variance in &SIGNAL_VARIANCES {
                for &noise_variance in noises {
                    let hyper = Hyperparameters {
                        length_scale,
                        signal_variance,
                        noise_variance,
                        relevance: Vec::new(),
                    };
                    if let Some(gp) = Self::fit(inputs, targets, hyper) {
                        if best.as_ref().is_none_or(|b| gp.log_marginal > b.log_marginal) {
                            best = Some(gp);
                        }
                    }
                }
            }
        }
        best
    }

    /// Grid search that also covers [`NOISE_VARIANCES`], followed by
    /// coordinate search over a length-scale multiplier per input dimension
    /// from [`RELEVANCE_STEPS`].
    pub fn fit_ard(inputs: &[Vec<f64>], targets: &[f64]) -> Option<GaussianProcess> {
        let mut best = Self::fit_grid(inputs, targets, &NOISE_VARIANCES)?;
        let dims = inputs.first().map_or(0, Vec::len);
        if dims < 2 {
            return Some(best);
        }
        best.hyper.relevance = vec![1.0; dims];
        for _ in 0..RELEVANCE_SWEEPS {
            let mut changed = false;
            for d in 0..dims {
                for &step in &RELEVANCE_STEPS {
                    if best.hyper.relevance[d] == step {
                        continue;
                    }
                    let mut hyper = best.hyper.clone();
                    hyper.relevance[d] = step;
                    if let Some(gp) = Self::fit(inputs, targets, hyper) {
                        if gp.log_marginal > best.log_marginal {
                            best = gp;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Some(best)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    /// Posterior in standardized units.
    pub fn posterior_standardized(&self, x: &[f64]) -> Posterior {
        let n = self.inputs.len();
        let mut kx: Vec<f64> = self.inputs.iter().map(|xi| self.hyper.kernel(xi, x)).collect();
        let mean: f64 = kx.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        forward_substitute(&self.chol, n, &mut kx);
        let explained: f64 = kx.iter().map(|v| v * v).sum();
        let var = (self.hyper.signal_variance - explained).max(0.0);
        Posterior { mean, std_dev: sqrt(var) }
    }

    /// Posterior in the original target units.
    pub fn posterior(&self, x: &[f64]) -> Posterior {
        let p = self.posterior_standardized(x);
        Posterior {
            mean: self.y_mean + self.y_scale * p.mean,
            std_dev: self.y_scale * p.std_dev,
        }
    }

    /// Standardized value of a raw target.
    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }
}

/// Expected improvement below `incumbent` for minimization; never negative.
pub fn expected_improvement(posterior: Posterior, incumbent: f64) -> f64 {
    let improvement = incumbent - posterior.mean;
    if posterior.std_dev <= 1e-12 {
        return improvement.max(0.0);
    }
    let z = improvement / posterior.std_dev;
    (improvement * std_normal_cdf(z) + posterior.std_dev * std_normal_pdf(z)).max(0.0)
}
