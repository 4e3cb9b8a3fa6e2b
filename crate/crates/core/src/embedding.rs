//! Bottom-up plan encoder and the knob-importance head it is trained through.
//!
//! Every node computes `h = leaky(W_kind [features ; mean(children h)] + b)`
//! in one topological pass; the root's hidden vector is the query embedding.
//! The encoder is fitted by regressing a three-layer head on per-query knob
//! importance distributions.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{leaky_relu, leaky_relu_grad, softmax_in_place};
use crate::nn::{Dense, DenseGrad, Mlp, MlpTrace, Momentum};
use crate::plan::{NodeKind, PlanGraph};
use crate::train::{LossTrace, Plateau};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_HEAD_HIDDEN: [usize; 2] = [128, 64];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("{kind} transform expects {expected} inputs, plan supplies {got}")]
    FeatureLength {
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("importance target {index} is not a distribution")]
    NonSimplexTarget { index: usize },
    #[error("target {index} has {got} entries, head produces {expected}")]
    TargetWidth { index: usize, expected: usize, got: usize },
    #[error("head input {got} does not match embedding width {expected}")]
    HeadWidth { expected: usize, got: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryEmbedding(pub Vec<f64>);

impl QueryEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub dim: usize,
    /// One transform per [`NodeKind`], indexed by `NodeKind::index`.
    pub transforms: Vec<Dense>,
}

struct NodeTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl EmbeddingModel {
    pub fn new(dim: usize, seed: u64) -> EmbeddingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transforms = NodeKind::ALL
            .iter()
            .map(|k| Dense::init(k.feature_len() + dim, dim, &mut rng))
            .collect();
        EmbeddingModel { dim, transforms }
    }

    pub fn zeros(dim: usize) -> EmbeddingModel {
        let transforms = NodeKind::ALL
            .iter()
            .map(|k| Dense::zeros(k.feature_len() + dim, dim))
            .collect();
        EmbeddingModel { dim, transforms }
    }

    pub fn is_finite(&self) -> bool {
        self.transforms.iter().all(Dense::is_finite)
    }

    pub fn embed(&self, plan: &PlanGraph) -> Result<QueryEmbedding, EmbeddingError> {
        let traces = self.forward(plan)?;
        Ok(QueryEmbedding(traces[plan.root()].hidden.clone()))
    }

    fn check(&self, plan: &PlanGraph) -> Result<(), EmbeddingError> {
        for kind in NodeKind::ALL {
            let t = &self.transforms[kind.index()];
            if t.outputs != self.dim || t.inputs != kind.feature_len() + self.dim {
                return Err(EmbeddingError::FeatureLength {
                    kind: kind.as_str(),
                    expected: t.inputs,
                    got: kind.feature_len() + self.dim,
                });
            }
        }
        for node in plan.nodes() {
            let t = &self.transforms[node.kind.index()];
            if node.features.len() + self.dim != t.inputs {
                return Err(EmbeddingError::FeatureLength {
                    kind: node.kind.as_str(),
                    expected: t.inputs,
                    got: node.features.len() + self.dim,
                });
            }
        }
        Ok(())
    }

    fn forward(&self, plan: &PlanGraph) -> Result<Vec<NodeTrace>, EmbeddingError> {
        self.check(plan)?;
        let d = self.dim;
        let mut traces: Vec<Option<NodeTrace>> = (0..plan.nodes().len()).map(|_| None).collect();
        let mut column = Vec::new();
        for &v in plan.topological_order() {
            let node = &plan.nodes()[v];
            let mut input = Vec::with_capacity(node.features.len() + d);
            input.extend_from_slice(&node.features);
            let children = plan.children(v);
            if children.is_empty() {
                input.resize(node.features.len() + d, 0.0);
            } else {
                // Sum each coordinate in sorted order so the mean does not
                // depend on how siblings are stored.
                let inv = 1.0 / children.len() as f64;
                for j in 0..d {
                    column.clear();
                    column.extend(children.iter().map(|&c| traces[c].as_ref().expect("topological").hidden[j]));
                    column.sort_by(f64::total_cmp);
                    input.push(column.iter().sum::<f64>() * inv);
                }
            }
            let t = &self.transforms[node.kind.index()];
            let pre = t.forward(&input);
            let hidden = pre.iter().map(|&x| leaky_relu(x)).collect();
            traces[v] = Some(NodeTrace { input, pre, hidden });
        }
        Ok(traces.into_iter().map(|t| t.expect("every node visited")).collect())
    }

    /// Accumulates transform gradients for `d_root` (gradient w.r.t. the root
    /// hidden vector) into `grads`.
    fn backward(&self, plan: &PlanGraph, traces: &[NodeTrace], d_root: &[f64], grads: &mut [DenseGrad]) {
        let d = self.dim;
        let n = plan.nodes().len();
        let mut d_hidden = vec![vec![0.0; d]; n];
        d_hidden[plan.root()].copy_from_slice(d_root);
        for &v in plan.topological_order().iter().rev() {
            let node = &plan.nodes()[v];
            let tr = &traces[v];
            let d_pre: Vec<f64> = d_hidden[v]
                .iter()
                .zip(&tr.pre)
                .map(|(g, &p)| g * leaky_relu_grad(p))
                .collect();
            let t = &self.transforms[node.kind.index()];
            let children = plan.children(v);
            if children.is_empty() {
                t.backward(&tr.input, &d_pre, &mut grads[node.kind.index()], None);
                continue;
            }
            let mut dx = vec![0.0; t.inputs];
            t.backward(&tr.input, &d_pre, &mut grads[node.kind.index()], Some(&mut dx));
            let inv = 1.0 / children.len() as f64;
            let f = node.features.len();
            for &c in children {
                for j in 0..d {
                    d_hidden[c][j] += dx[f + j] * inv;
                }
            }
        }
    }

    pub fn zero_grads(&self) -> Vec<DenseGrad> {
        self.transforms.iter().map(DenseGrad::for_layer).collect()
    }
}

/// `d -> h1 -> h2 -> knobs` with leaky activations and a softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceHead {
    pub mlp: Mlp,
}

impl ImportanceHead {
    pub fn new(dim: usize, hidden: [usize; 2], knobs: usize, seed: u64) -> ImportanceHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImportanceHead {
            mlp: Mlp::init(&[dim, hidden[0], hidden[1], knobs], &mut rng),
        }
    }

    pub fn knobs(&self) -> usize {
        self.mlp.output_width()
    }

    pub fn predict(&self, embedding: &QueryEmbedding) -> Vec<f64> {
        let mut out = self.mlp.forward(embedding.as_slice());
        softmax_in_place(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for EmbeddingTrainConfig {
    fn default() -> Self {
        EmbeddingTrainConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 2000,
            patience: 50,
            min_improvement: 1e-6,
            seed: 0,
        }
    }
}

/// Gradients for one (encoder, head) pair, layer order: the four transforms
/// then the head's layers.
#[derive(Debug, Clone)]
pub struct EmbeddingGrads {
    pub transforms: Vec<DenseGrad>,
    pub head: Vec<DenseGrad>,
}

impl EmbeddingGrads {
    pub fn layers(&self) -> impl Iterator<Item = &DenseGrad> {
        self.transforms.iter().chain(self.head.iter())
    }
}

/// All trainable layers, in the same order as [`EmbeddingGrads::layers`].
pub fn trainable_layers<'a>(model: &'a mut EmbeddingModel, head: &'a mut ImportanceHead) -> Vec<&'a mut Dense> {
    model.transforms.iter_mut().chain(head.mlp.layers.iter_mut()).collect()
}

/// Per-sample MSE between the head distribution and the target.
pub fn importance_loss(model: &EmbeddingModel, head: &ImportanceHead, plan: &PlanGraph, target: &[f64]) -> Result<f64, EmbeddingError> {
    let p = head.predict(&model.embed(plan)?);
    Ok(mse(&p, target))
}

fn mse(p: &[f64], t: &[f64]) -> f64 {
    p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
}

/// Mean loss over `batch` and its gradient.
pub fn loss_and_gradients(
    model: &EmbeddingModel,
    head: &ImportanceHead,
    batch: &[(&PlanGraph, &[f64])],
) -> Result<(f64, EmbeddingGrads), EmbeddingError> {
    let mut grads = EmbeddingGrads {
        transforms: model.zero_grads(),
        head: head.mlp.zero_grads(),
    };
    let mut total = 0.0;
    let mut trace = MlpTrace::default();
    let scale = 1.0 / batch.len() as f64;
    for (plan, target) in batch {
        let traces = model.forward(plan)?;
        let root = &traces[plan.root()].hidden;
        head.mlp.forward_trace(root, &mut trace);
        let mut p = trace.output().to_vec();
        softmax_in_place(&mut p);
        total += mse(&p, target);
        let k = p.len() as f64;
        let dp: Vec<f64> = p.iter().zip(target.iter()).map(|(a, b)| 2.0 * (a - b) / k * scale).collect();
        let dot: f64 = dp.iter().zip(&p).map(|(g, q)| g * q).sum();
        let dz: Vec<f64> = p.iter().zip(&dp).map(|(q, g)| q * (g - dot)).collect();
        let d_root = head.mlp.backward(&trace, &dz, &mut grads.head);
        model.backward(plan, &traces, &d_root, &mut grads.transforms);
    }
    Ok((total * scale, grads))
}

/// Projects a non-negative score vector onto the simplex.
pub fn normalize_target(target: &[f64]) -> Option<Vec<f64>> {
    if target.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return None;
    }
    let sum: f64 = target.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    Some(target.iter().map(|v| v / sum).collect())
}

/// Fits encoder and head jointly by mini-batch momentum SGD on the
/// importance MSE.
pub fn train_embedding(
    model: &mut EmbeddingModel,
    head: &mut ImportanceHead,
    dataset: &[(PlanGraph, Vec<f64>)],
    config: &EmbeddingTrainConfig,
) -> Result<LossTrace, EmbeddingError> {
    if dataset.is_empty() {
        return Err(EmbeddingError::EmptyDataset);
    }
    if head.mlp.input_width() != model.dim {
        return Err(EmbeddingError::HeadWidth {
            expected: model.dim,
            got: head.mlp.input_width(),
        });
    }
    let mut targets = Vec::with_capacity(dataset.len());
    for (index, (plan, target)) in dataset.iter().enumerate() {
        if target.len() != head.knobs() {
            return Err(EmbeddingError::TargetWidth {
                index,
                expected: head.knobs(),
                got: target.len(),
            });
        }
        model.check(plan)?;
        targets.push(normalize_target(target).ok_or(EmbeddingError::NonSimplexTarget { index })?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = {
        let layers: Vec<&Dense> = model.transforms.iter().chain(head.mlp.layers.iter()).collect();
        Momentum::new(config.learning_rate, config.momentum, &layers)
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = LossTrace::default();
    let mut plateau = Plateau::new(config.patience, config.min_improvement);
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<(&PlanGraph, &[f64])> =
                chunk.iter().map(|&i| (&dataset[i].0, targets[i].as_slice())).collect();
            let (loss, grads) = loss_and_gradients(model, head, &batch)?;
            epoch_loss += loss * chunk.len() as f64;
            let all: Vec<DenseGrad> = grads.layers().cloned().collect();
            opt.step(&mut trainable_layers(model, head), &all);
        }
        let epoch_loss = epoch_loss / dataset.len() as f64;
        trace.push(epoch_loss);
        if plateau.stalled(epoch_loss) {
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{column_features, plan_op_features, predicate_features, table_features, PlanNode};
    use alloc::vec;

    fn star(order: [usize; 3]) -> PlanGraph {
        let leaves = [
            (NodeKind::Table, table_features(1e4, 80.0)),
            (NodeKind::Column, column_features(2, 0.3, 0.1, 8.0)),
            (NodeKind::Predicate, predicate_features(4, 0.2)),
        ];
        let mut nodes = Vec::new();
        for (i, &o) in order.iter().enumerate() {
            let (kind, features) = leaves[o].clone();
            nodes.push(PlanNode { id: i, kind, features });
        }
        nodes.push(PlanNode { id: 3, kind: NodeKind::PlanOp, features: plan_op_features(0, 1e3, 4e3) });
        PlanGraph::new(nodes, vec![(0, 3), (1, 3), (2, 3)], 3).unwrap()
    }

    #[test]
    fn zero_model_embeds_to_zero() {
        let model = EmbeddingModel::zeros(8);
        let plan = PlanGraph::new(
            vec![PlanNode { id: 0, kind: NodeKind::PlanOp, features: plan_op_features(3, 10.0, 10.0) }],
            vec![],
            0,
        )
        .unwrap();
        assert_eq!(model.embed(&plan).unwrap().0, vec![0.0; 8]);
    }

    #[test]
    fn sibling_order_does_not_matter() {
        let model = EmbeddingModel::new(16, 5);
        let a = model.embed(&star([0, 1, 2])).unwrap();
        let b = model.embed(&star([2, 0, 1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, model.embed(&star([0, 1, 2])).unwrap());
    }

    #[test]
    fn head_outputs_distribution() {
        let head = ImportanceHead::new(8, [6, 5], 4, 1);
        let p = head.predict(&QueryEmbedding(vec![3.0, -40.0, 0.5, 9.0, 1.0, 0.0, -2.0, 100.0]));
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_targets() {
        let mut model = EmbeddingModel::new(8, 0);
        let mut head = ImportanceHead::new(8, [6, 5], 2, 0);
        let cfg = EmbeddingTrainConfig::default();
        assert_eq!(train_embedding(&mut model, &mut head, &[], &cfg), Err(EmbeddingError::EmptyDataset));
        let bad = vec![(star([0, 1, 2]), vec![-0.5, 1.5])];
        assert_eq!(
            train_embedding(&mut model, &mut head, &bad, &cfg),
            Err(EmbeddingError::NonSimplexTarget { index: 0 })
        );
    }

    #[test]
    fn memorizes_single_uniform_target() {
        let mut model = EmbeddingModel::new(DEFAULT_DIM, 1);
        let mut head = ImportanceHead::new(DEFAULT_DIM, DEFAULT_HEAD_HIDDEN, 4, 2);
        let data = vec![(star([0, 1, 2]), vec![0.25; 4])];
        let cfg = EmbeddingTrainConfig { max_epochs: 500, ..Default::default() };
        train_embedding(&mut model, &mut head, &data, &cfg).unwrap();
        assert!(importance_loss(&model, &head, &data[0].0, &data[0].1).unwrap() < 1e-3);
    }
}
