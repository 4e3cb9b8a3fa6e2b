//! Shared training bookkeeping.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<f64>,
}

impl LossTrace {
    pub fn push(&mut self, loss: f64) {
        self.epochs.push(loss);
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn first(&self) -> Option<f64> {
        self.epochs.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epochs.last().copied()
    }

    /// Running minimum; non-increasing by construction.
    pub fn smoothed(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.epochs
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }
}

/// Early stop once the best loss has improved by less than `min_improvement`
/// over the last `patience` epochs.
#[derive(Debug, Clone)]
pub struct Plateau {
    patience: usize,
    min_improvement: f64,
    best: Vec<f64>,
}

impl Plateau {
    pub fn new(patience: usize, min_improvement: f64) -> Plateau {
        Plateau {
            patience,
            min_improvement,
            best: Vec::new(),
        }
    }

    pub fn stalled(&mut self, loss: f64) -> bool {
        let best = self.best.last().map_or(loss, |&b| b.min(loss));
        self.best.push(best);
        let n = self.best.len();
        if self.patience == 0 || n <= self.patience {
            return false;
        }
        self.best[n - 1 - self.patience] - best < self.min_improvement
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_waits_for_patience() {
        let mut p = Plateau::new(3, 1e-6);
        assert!(!p.stalled(1.0));
        assert!(!p.stalled(1.0));
        assert!(!p.stalled(1.0));
        assert!(p.stalled(1.0));
    }

    #[test]
    fn plateau_resets_on_progress() {
        let mut p = Plateau::new(2, 1e-6);
        for l in [1.0, 0.9, 0.8, 0.7] {
            assert!(!p.stalled(l));
        }
    }

    #[test]
    fn smoothed_is_monotone() {
        let t = LossTrace { epochs: alloc::vec![3.0, 2.0, 2.5, 1.0] };
        assert_eq!(t.smoothed(), alloc::vec![3.0, 2.0, 2.0, 1.0]);
    }
}
