//! Transferable query-plan DAGs.
//!
//! Nodes carry kind-specific feature vectors built from fixed vocabularies,
//! so plans from different workloads share one feature schema. Counts and
//! costs are scaled with `log10(1 + x)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::log10_1p;

pub const OPERATORS: [&str; 12] = [
    "SeqScan",
    "IndexScan",
    "IndexOnlyScan",
    "BitmapHeapScan",
    "NestedLoop",
    "HashJoin",
    "MergeJoin",
    "Hash",
    "Sort",
    "Aggregate",
    "Limit",
    "Materialize",
];
const SCAN_OPERATORS: usize = 4;

pub const DATA_TYPES: [&str; 6] = ["int", "bigint", "float", "text", "date", "bool"];
pub const COMPARISONS: [&str; 6] = ["=", "<", ">", "<=", ">=", "LIKE"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    PlanOp,
    Table,
    Column,
    Predicate,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [
        NodeKind::PlanOp,
        NodeKind::Table,
        NodeKind::Column,
        NodeKind::Predicate,
    ];

    pub fn feature_len(self) -> usize {
        match self {
            NodeKind::PlanOp => OPERATORS.len() + 2,
            NodeKind::Table => 2,
            NodeKind::Column => DATA_TYPES.len() + 3,
            NodeKind::Predicate => COMPARISONS.len() + 1,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::PlanOp => "PLAN_OP",
            NodeKind::Table => "TABLE",
            NodeKind::Column => "COLUMN",
            NodeKind::Predicate => "PREDICATE",
        }
    }

    pub fn parse(s: &str) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Feature positions that must lie in `[0, 1]`.
    fn unit_interval(self) -> RangeInclusive<usize> {
        match self {
            NodeKind::PlanOp => 0..=OPERATORS.len() - 1,
            NodeKind::Table => 1..=0,
            NodeKind::Column => 0..=DATA_TYPES.len() + 1,
            NodeKind::Predicate => 0..=COMPARISONS.len(),
        }
    }
}

fn one_hot(len: usize, hot: usize) -> Vec<f64> {
    (0..len).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
}

pub fn plan_op_features(operator: usize, est_rows: f64, est_cost: f64) -> Vec<f64> {
    let mut f = one_hot(OPERATORS.len(), operator);
    f.push(log10_1p(est_rows));
    f.push(log10_1p(est_cost));
    f
}

pub fn table_features(rows: f64, pages: f64) -> Vec<f64> {
    vec![log10_1p(rows), log10_1p(pages)]
}

pub fn column_features(data_type: usize, distinct_fraction: f64, null_fraction: f64, avg_width: f64) -> Vec<f64> {
    let mut f = one_hot(DATA_TYPES.len(), data_type);
    f.extend([distinct_fraction, null_fraction, log10_1p(avg_width)]);
    f
}

pub fn predicate_features(comparison: usize, selectivity: f64) -> Vec<f64> {
    let mut f = one_hot(COMPARISONS.len(), comparison);
    f.push(selectivity);
    f
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan has no nodes")]
    Empty,
    #[error("unknown node kind `{0}`")]
    UnknownKind(String),
    #[error("duplicate node id {0}")]
    DuplicateId(i64),
    #[error("edge references unknown node id {0}")]
    DanglingEdge(i64),
    #[error("node {node} ({kind}) has {got} features, expected {expected}")]
    FeatureLength {
        node: i64,
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("node {node} feature {index} is out of range")]
    FeatureOutOfRange { node: i64, index: usize },
    #[error("cycle detected through node {0}")]
    Cycle(i64),
    #[error("plan has multiple roots: {0:?}")]
    MultipleRoots(Vec<i64>),
    #[error("declared root {declared} but the only node without a parent is {actual}")]
    RootMismatch { declared: i64, actual: i64 },
    #[error("root node {0} is not a PLAN_OP")]
    RootNotOperator(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: usize,
    pub kind: NodeKind,
    pub features: Vec<f64>,
}

/// Plan as it appears on disk, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPlan {
    pub root: i64,
    pub nodes: Vec<RawNode>,
    pub edges: Vec<[i64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNode {
    pub id: i64,
    pub kind: String,
    pub features: Vec<f64>,
}

/// Validated DAG. Edges point from child to parent; the root is the unique
/// node without a parent.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanGraph {
    nodes: Vec<PlanNode>,
    edges: Vec<(usize, usize)>,
    root: usize,
    children: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl PlanGraph {
    /// Validates a raw plan; node ids are re-indexed densely in storage order.
    pub fn from_raw(raw: &RawPlan) -> Result<PlanGraph, PlanError> {
        if raw.nodes.is_empty() {
            return Err(PlanError::Empty);
        }
        let mut index: BTreeMap<i64, usize> = BTreeMap::new();
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for (i, n) in raw.nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(PlanError::DuplicateId(n.id));
            }
            let kind = NodeKind::parse(&n.kind).ok_or_else(|| PlanError::UnknownKind(n.kind.clone()))?;
            check_features(n.id, kind, &n.features)?;
            nodes.push(PlanNode {
                id: i,
                kind,
                features: n.features.clone(),
            });
        }
        let lookup = |id: i64| index.get(&id).copied().ok_or(PlanError::DanglingEdge(id));
        let mut edges = Vec::with_capacity(raw.edges.len());
        for [child, parent] in &raw.edges {
            edges.push((lookup(*child)?, lookup(*parent)?));
        }
        let original: Vec<i64> = raw.nodes.iter().map(|n| n.id).collect();
        let declared = lookup(raw.root)?;
        Self::assemble(nodes, edges, declared, &original)
    }

    /// Builds from already dense ids (`nodes[i].id == i`).
    pub fn new(nodes: Vec<PlanNode>, edges: Vec<(usize, usize)>, root: usize) -> Result<PlanGraph, PlanError> {
        let raw_ids: Vec<i64> = (0..nodes.len() as i64).collect();
        if nodes.is_empty() {
            return Err(PlanError::Empty);
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(PlanError::DuplicateId(n.id as i64));
            }
            check_features(i as i64, n.kind, &n.features)?;
        }
        for &(c, p) in &edges {
            for v in [c, p] {
                if v >= nodes.len() {
                    return Err(PlanError::DanglingEdge(v as i64));
                }
            }
        }
        if root >= nodes.len() {
            return Err(PlanError::DanglingEdge(root as i64));
        }
        Self::assemble(nodes, edges, root, &raw_ids)
    }

    fn assemble(
        nodes: Vec<PlanNode>,
        edges: Vec<(usize, usize)>,
        declared_root: usize,
        original_ids: &[i64],
    ) -> Result<PlanGraph, PlanError> {
        let n = nodes.len();
        let mut children = vec![Vec::new(); n];
        let mut out_degree = vec![0usize; n];
        for &(c, p) in &edges {
            children[p].push(c);
            out_degree[c] += 1;
        }
        // Kahn pass from the leaves upwards.
        let mut pending: Vec<usize> = children.iter().map(Vec::len).collect();
        let mut parents = vec![Vec::new(); n];
        for &(c, p) in &edges {
            parents[c].push(p);
        }
        let mut ready: Vec<usize> = (0..n).filter(|&v| pending[v] == 0).collect();
        ready.reverse();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            topo.push(v);
            for &p in &parents[v] {
                pending[p] -= 1;
                if pending[p] == 0 {
                    ready.push(p);
                }
            }
        }
        if topo.len() != n {
            let stuck = (0..n).find(|&v| pending[v] > 0).unwrap_or(0);
            return Err(PlanError::Cycle(original_ids[stuck]));
        }
        let roots: Vec<usize> = (0..n).filter(|&v| out_degree[v] == 0).collect();
        if roots.len() != 1 {
            return Err(PlanError::MultipleRoots(roots.iter().map(|&r| original_ids[r]).collect()));
        }
        let root = roots[0];
        if root != declared_root {
            return Err(PlanError::RootMismatch {
                declared: original_ids[declared_root],
                actual: original_ids[root],
            });
        }
        if nodes[root].kind != NodeKind::PlanOp {
            return Err(PlanError::RootNotOperator(original_ids[root]));
        }
        Ok(PlanGraph {
            nodes,
            edges,
            root,
            children,
            topo,
        })
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Children before parents; the root is last.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn to_raw(&self) -> RawPlan {
        RawPlan {
            root: self.root as i64,
            nodes: self
                .nodes
                .iter()
                .map(|n| RawNode {
                    id: n.id as i64,
                    kind: n.kind.as_str().to_string(),
                    features: n.features.clone(),
                })
                .collect(),
            edges: self.edges.iter().map(|&(c, p)| [c as i64, p as i64]).collect(),
        }
    }

    /// Structural signature (kinds and nesting, ignoring feature values).
    pub fn shape_signature(&self) -> String {
        fn walk(g: &PlanGraph, v: usize, out: &mut String) {
            let n = &g.nodes[v];
            match n.kind {
                NodeKind::PlanOp => {
                    let op = n.features[..OPERATORS.len()].iter().position(|&x| x == 1.0).unwrap_or(0);
                    out.push_str(OPERATORS[op]);
                }
                k => out.push_str(k.as_str()),
            }
            if !g.children[v].is_empty() {
                out.push('(');
                for (i, &c) in g.children[v].iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    walk(g, c, out);
                }
                out.push(')');
            }
        }
        let mut s = String::new();
        walk(self, self.root, &mut s);
        s
    }
}

fn check_features(id: i64, kind: NodeKind, features: &[f64]) -> Result<(), PlanError> {
    if features.len() != kind.feature_len() {
        return Err(PlanError::FeatureLength {
            node: id,
            kind: kind.as_str(),
            expected: kind.feature_len(),
            got: features.len(),
        });
    }
    let unit = kind.unit_interval();
    for (i, &x) in features.iter().enumerate() {
        let ok = if unit.contains(&i) {
            (0.0..=1.0).contains(&x)
        } else {
            x.is_finite() && x >= 0.0
        };
        if !ok {
            return Err(PlanError::FeatureOutOfRange { node: id, index: i });
        }
    }
    Ok(())
}

pub fn parse_plan(raw: &RawPlan) -> Result<PlanGraph, PlanError> {
    PlanGraph::from_raw(raw)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("duplicate query id `{0}`")]
    DuplicateQuery(String),
}

/// Queries keyed by id, kept sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Workload {
    queries: Vec<(String, PlanGraph)>,
}

impl Workload {
    pub fn new(mut queries: Vec<(String, PlanGraph)>) -> Result<Workload, WorkloadError> {
        queries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in queries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(WorkloadError::DuplicateQuery(w[0].0.clone()));
            }
        }
        Ok(Workload { queries })
    }

    pub fn queries(&self) -> &[(String, PlanGraph)] {
        &self.queries
    }

    pub fn ids(&self) -> Vec<String> {
        self.queries.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&PlanGraph> {
        self.queries.iter().find(|(q, _)| q == id).map(|(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

pub fn query_id(index: usize) -> String {
    format!("q{index:02}")
}

struct PlanBuilder<'r> {
    rng: &'r mut ChaCha8Rng,
    nodes: Vec<PlanNode>,
    edges: Vec<(usize, usize)>,
}

impl PlanBuilder<'_> {
    fn push(&mut self, kind: NodeKind, features: Vec<f64>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(PlanNode { id, kind, features });
        id
    }

    fn leaf(&mut self) -> usize {
        match self.rng.random_range(0..3) {
            0 => {
                let rows = libm::pow(10.0, self.rng.random_range(2.0..7.0));
                let pages = rows / self.rng.random_range(20.0..120.0);
                self.push(NodeKind::Table, table_features(rows, pages))
            }
            1 => {
                let dtype = self.rng.random_range(0..DATA_TYPES.len());
                let distinct = self.rng.random_range(0.0..=1.0);
                let nulls = self.rng.random_range(0.0..0.3);
                let width = self.rng.random_range(1.0..64.0);
                self.push(NodeKind::Column, column_features(dtype, distinct, nulls, width))
            }
            _ => {
                let op = self.rng.random_range(0..COMPARISONS.len());
                let sel = self.rng.random_range(0.0..=1.0);
                self.push(NodeKind::Predicate, predicate_features(op, sel))
            }
        }
    }

    fn operator(&mut self, levels: usize, fanout: &RangeInclusive<usize>) -> usize {
        let rows = libm::pow(10.0, self.rng.random_range(1.0..7.0));
        let cost = rows * self.rng.random_range(0.5..5.0);
        if levels <= 1 {
            let op = self.rng.random_range(0..SCAN_OPERATORS);
            let id = self.push(NodeKind::PlanOp, plan_op_features(op, rows, cost));
            for _ in 0..self.rng.random_range(1..=2) {
                let leaf = self.leaf();
                self.edges.push((leaf, id));
            }
            id
        } else {
            let op = self.rng.random_range(SCAN_OPERATORS..OPERATORS.len());
            let id = self.push(NodeKind::PlanOp, plan_op_features(op, rows, cost));
            for _ in 0..self.rng.random_range(fanout.clone()) {
                let child = self.operator(levels - 1, fanout);
                self.edges.push((child, id));
            }
            id
        }
    }
}

/// Random plan trees: `depth` operator levels (scans at the bottom, each with
/// 1-2 TABLE/COLUMN/PREDICATE leaves) and `fanout` children per operator.
pub fn generate_synthetic_workload(
    seed: u64,
    count: usize,
    depth: RangeInclusive<usize>,
    fanout: RangeInclusive<usize>,
) -> Workload {
    assert!(count >= 1, "count must be at least 1");
    assert!(!depth.is_empty() && *depth.start() >= 1, "depth range must be non-empty and start at 1 or more");
    assert!(!fanout.is_empty() && *fanout.start() >= 1, "fanout range must be non-empty and start at 1 or more");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = Vec::with_capacity(count);
    for i in 0..count {
        let levels = rng.random_range(depth.clone());
        let mut b = PlanBuilder {
            rng: &mut rng,
            nodes: Vec::new(),
            edges: Vec::new(),
        };
        let root = b.operator(levels, &fanout);
        let (nodes, edges) = (b.nodes, b.edges);
        let plan = PlanGraph::new(nodes, edges, root).expect("generator emits valid plans");
        queries.push((query_id(i), plan));
    }
    Workload::new(queries).expect("generated ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn op(id: i64, opi: usize) -> RawNode {
        RawNode {
            id,
            kind: "PLAN_OP".into(),
            features: plan_op_features(opi, 100.0, 250.0),
        }
    }

    #[test]
    fn single_node_plan() {
        let raw = RawPlan {
            root: 7,
            nodes: vec![op(7, 0)],
            edges: vec![],
        };
        let g = parse_plan(&raw).unwrap();
        assert_eq!(g.root(), 0);
        assert_eq!(g.nodes().len(), 1);
    }

    #[test]
    fn two_cycle_rejected() {
        let raw = RawPlan {
            root: 0,
            nodes: vec![op(0, 0), op(1, 1)],
            edges: vec![[0, 1], [1, 0]],
        };
        assert!(matches!(parse_plan(&raw), Err(PlanError::Cycle(_))));
    }

    fn chain_fixture() -> RawPlan {
        // table, column -> scan -> join (root) ; predicate -> join
        RawPlan {
            root: 40,
            nodes: vec![
                RawNode { id: 10, kind: "TABLE".into(), features: table_features(1e5, 900.0) },
                RawNode { id: 11, kind: "COLUMN".into(), features: column_features(0, 0.5, 0.0, 4.0) },
                op(20, 0),
                RawNode { id: 30, kind: "PREDICATE".into(), features: predicate_features(1, 0.1) },
                op(40, 5),
            ],
            edges: vec![[10, 20], [11, 20], [20, 40], [30, 40]],
        }
    }

    #[test]
    fn chain_fixture_is_reindexed() {
        let g = parse_plan(&chain_fixture()).unwrap();
        assert_eq!(g.nodes().len(), 5);
        assert_eq!(g.root(), 4);
        assert_eq!(g.nodes()[g.root()].kind, NodeKind::PlanOp);
        assert!(g.nodes().iter().enumerate().all(|(i, n)| n.id == i));
        let topo = g.topological_order();
        assert_eq!(*topo.last().unwrap(), 4);
        let pos = |v: usize| topo.iter().position(|&x| x == v).unwrap();
        for &(c, p) in g.edges() {
            assert!(pos(c) < pos(p));
        }
    }

    #[test]
    fn structural_errors_are_named() {
        let mut raw = chain_fixture();
        raw.edges.pop();
        assert!(matches!(parse_plan(&raw), Err(PlanError::MultipleRoots(ids)) if ids == vec![30, 40]));

        let mut raw = chain_fixture();
        raw.nodes[0].features.push(1.0);
        assert!(matches!(
            parse_plan(&raw),
            Err(PlanError::FeatureLength { node: 10, expected: 2, got: 3, .. })
        ));

        let mut raw = chain_fixture();
        raw.nodes[1].kind = "INDEX".into();
        assert_eq!(parse_plan(&raw), Err(PlanError::UnknownKind("INDEX".into())));

        let mut raw = chain_fixture();
        raw.root = 20;
        assert!(matches!(parse_plan(&raw), Err(PlanError::RootMismatch { declared: 20, actual: 40 })));

        let raw = RawPlan {
            root: 1,
            nodes: vec![op(0, 0), RawNode { id: 1, kind: "TABLE".into(), features: table_features(1.0, 1.0) }],
            edges: vec![[0, 1]],
        };
        assert_eq!(parse_plan(&raw), Err(PlanError::RootNotOperator(1)));

        let mut raw = chain_fixture();
        raw.nodes[1].features[6] = 1.5;
        assert!(matches!(parse_plan(&raw), Err(PlanError::FeatureOutOfRange { node: 11, .. })));
    }

    #[test]
    fn raw_round_trip_preserves_structure() {
        let g = parse_plan(&chain_fixture()).unwrap();
        let again = parse_plan(&g.to_raw()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn synthetic_workload_is_deterministic_and_valid() {
        let a = generate_synthetic_workload(7, 20, 2..=4, 1..=3);
        let b = generate_synthetic_workload(7, 20, 2..=4, 1..=3);
        assert_eq!(a, b);
        let c = generate_synthetic_workload(8, 20, 2..=4, 1..=3);
        let ra: Vec<RawPlan> = a.queries().iter().map(|(_, p)| p.to_raw()).collect();
        let rc: Vec<RawPlan> = c.queries().iter().map(|(_, p)| p.to_raw()).collect();
        assert!(ra.iter().zip(&rc).any(|(x, y)| x != y));
        for (_, p) in a.queries() {
            assert_eq!(&parse_plan(&p.to_raw()).unwrap(), p);
        }
        let shapes: BTreeSet<String> = a.queries().iter().map(|(_, p)| p.shape_signature()).collect();
        assert!(shapes.len() >= 5);
        let one = generate_synthetic_workload(7, 1, 2..=4, 1..=3);
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn duplicate_query_ids_rejected() {
        let g = parse_plan(&chain_fixture()).unwrap();
        let err = Workload::new(vec![("a".into(), g.clone()), ("a".into(), g)]).unwrap_err();
        assert_eq!(err, WorkloadError::DuplicateQuery("a".into()));
    }
}
