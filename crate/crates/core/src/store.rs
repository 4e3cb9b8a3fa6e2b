//! Per-task label history: latencies observed for each `(query, label)` key.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::gmm::CategoryLabel;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelStore {
    task: String,
    records: BTreeMap<(String, CategoryLabel), Vec<f64>>,
}

impl LabelStore {
    pub fn new(task: &str) -> LabelStore {
        LabelStore {
            task: task.to_string(),
            records: BTreeMap::new(),
        }
    }

    /// Provenance tag: the tuning task these records belong to.
    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn add(&mut self, query: &str, label: CategoryLabel, latency: f64) {
        self.records
            .entry((query.to_string(), label))
            .or_default()
            .push(latency);
    }

    pub fn latencies(&self, query: &str, label: &CategoryLabel) -> &[f64] {
        // BTreeMap lookups need an owned key of the same shape.
        self.records
            .get(&(query.to_string(), *label))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn count(&self, query: &str, label: &CategoryLabel) -> usize {
        self.latencies(query, label).len()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(query, label, latencies)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &CategoryLabel, &[f64])> {
        self.records
            .iter()
            .map(|((q, l), v)| (q.as_str(), l, v.as_slice()))
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_keyed_by_query_and_label() {
        let mut s = LabelStore::new("t1");
        let a: CategoryLabel = "10".parse().unwrap();
        let b: CategoryLabel = "01".parse().unwrap();
        s.add("q1", a, 1.0);
        s.add("q1", a, 3.0);
        s.add("q2", a, 5.0);
        assert_eq!(s.latencies("q1", &a), &[1.0, 3.0]);
        assert_eq!(s.count("q1", &b), 0);
        assert_eq!(s.len(), 3);
        assert_eq!(s.task(), "t1");
    }
}
