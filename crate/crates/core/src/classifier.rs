//! The knob classifier: `[query embedding ; knob encoding]` through three
//! dense layers to `n` independent logistic outputs, trained with per-bit
//! binary cross-entropy. Also the judge/estimate rules that let a tuning run
//! reuse history instead of executing a query, and the micro-averaged
//! accuracy/precision/recall used to score predicted labels.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::QueryEmbedding;
use crate::gmm::CategoryLabel;
use crate::knob::{KnobConfiguration, KnobEncoding, KnobError, KnobSpace};
use crate::math::{sigmoid, softplus};
use crate::nn::{BatchTrace, Dense, DenseGrad, Mlp, Momentum};
use crate::store::LabelStore;
use crate::train::{LossTrace, Plateau};

pub const DEFAULT_HIDDEN: [usize; 2] = [256, 64];
pub const DEFAULT_M_MIN: usize = 2;
pub const DEFAULT_FINETUNE_ITERATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptySet,
    #[error("{what} mismatch: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("estimate requested but the store holds {have} of the {need} records required")]
    NotJudged { have: usize, need: usize },
    #[error("no embedding for query `{0}`")]
    UnknownQuery(String),
    #[error(transparent)]
    Knob(#[from] KnobError),
    #[error("{predictions} predictions against {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
}

/// Which tasks a model was trained on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub pretrain_tasks: Vec<String>,
    pub finetune_task: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub embedding_dim: usize,
    pub encoding_width: usize,
    pub output_width: usize,
    pub mlp: Mlp,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub embedding: QueryEmbedding,
    pub encoding: KnobEncoding,
    pub label: CategoryLabel,
}

impl TrainingRow {
    fn input(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.embedding.0.len() + self.encoding.len());
        x.extend_from_slice(&self.embedding.0);
        x.extend_from_slice(self.encoding.as_slice());
        x
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
}

impl TrainingSet {
    pub fn new(rows: Vec<TrainingRow>) -> TrainingSet {
        TrainingSet { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Deterministic split: a seeded shuffle, then the first `train_fraction`
    /// of rows for training.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (TrainingSet, TrainingSet) {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = libm::round(self.rows.len() as f64 * train_fraction) as usize;
        let pick = |ids: &[usize]| TrainingSet::new(ids.iter().map(|&i| self.rows[i].clone()).collect());
        (pick(&idx[..cut]), pick(&idx[cut..]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 1000,
            patience: 50,
            min_improvement: 1e-6,
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    /// Fine-tuning schedule: a tenth of the learning rate, at most 200 epochs.
    pub fn finetune(&self) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            learning_rate: self.learning_rate / 10.0,
            max_epochs: self.max_epochs.min(200),
            ..self.clone()
        }
    }
}

impl ClassifierModel {
    pub fn new(embedding_dim: usize, encoding_width: usize, output_width: usize, seed: u64) -> ClassifierModel {
        Self::with_hidden(embedding_dim, encoding_width, output_width, DEFAULT_HIDDEN, seed)
    }

    pub fn with_hidden(
        embedding_dim: usize,
        encoding_width: usize,
        output_width: usize,
        hidden: [usize; 2],
        seed: u64,
    ) -> ClassifierModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClassifierModel {
            embedding_dim,
            encoding_width,
            output_width,
            mlp: Mlp::init(
                &[embedding_dim + encoding_width, hidden[0], hidden[1], output_width],
                &mut rng,
            ),
            provenance: Provenance::default(),
        }
    }

    pub fn shapes_consistent(&self) -> bool {
        self.mlp.shapes_consistent()
            && self.mlp.layers.len() == 3
            && self.mlp.input_width() == self.embedding_dim + self.encoding_width
            && self.mlp.output_width() == self.output_width
    }

    fn check_inputs(&self, embedding: &QueryEmbedding, encoding: &KnobEncoding) -> Result<(), ClassifierError> {
        if embedding.0.len() != self.embedding_dim {
            return Err(ClassifierError::Shape {
                what: "embedding width",
                expected: self.embedding_dim,
                got: embedding.0.len(),
            });
        }
        if encoding.len() != self.encoding_width {
            return Err(ClassifierError::Shape {
                what: "encoding width",
                expected: self.encoding_width,
                got: encoding.len(),
            });
        }
        Ok(())
    }

    fn check_row(&self, row: &TrainingRow) -> Result<(), ClassifierError> {
        self.check_inputs(&row.embedding, &row.encoding)?;
        if row.label.width() != self.output_width {
            return Err(ClassifierError::Shape {
                what: "label width",
                expected: self.output_width,
                got: row.label.width(),
            });
        }
        Ok(())
    }

    /// Per-bit probabilities in `(0, 1)`.
    pub fn probabilities(&self, embedding: &QueryEmbedding, encoding: &KnobEncoding) -> Result<Vec<f64>, ClassifierError> {
        self.check_inputs(embedding, encoding)?;
        let mut x = Vec::with_capacity(self.mlp.input_width());
        x.extend_from_slice(&embedding.0);
        x.extend_from_slice(encoding.as_slice());
        Ok(self.mlp.forward(&x).into_iter().map(sigmoid).collect())
    }

    pub fn predict(&self, embedding: &QueryEmbedding, encoding: &KnobEncoding) -> Result<CategoryLabel, ClassifierError> {
        Ok(threshold_label(&self.probabilities(embedding, encoding)?))
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.mlp.layers.iter_mut().collect()
    }
}

/// Bits at or above 0.5; the argmax bit when none is.
pub fn threshold_label(probabilities: &[f64]) -> CategoryLabel {
    let mut label = CategoryLabel::empty(probabilities.len());
    let mut argmax = 0;
    for (j, &p) in probabilities.iter().enumerate() {
        if p >= 0.5 {
            label.set(j, true);
        }
        if p > probabilities[argmax] {
            argmax = j;
        }
    }
    if label.count_ones() == 0 {
        label.set(argmax, true);
    }
    label
}

fn bce(logits: &[f64], label: &CategoryLabel) -> f64 {
    logits
        .iter()
        .enumerate()
        .map(|(j, &z)| softplus(z) - if label.get(j) { z } else { 0.0 })
        .sum()
}

/// Summed per-bit cross-entropy of one row.
pub fn row_loss(model: &ClassifierModel, row: &TrainingRow) -> Result<f64, ClassifierError> {
    model.check_row(row)?;
    Ok(bce(&model.mlp.forward(&row.input()), &row.label))
}

/// Mean row loss over `rows` and its gradient, one entry per layer.
pub fn loss_and_gradients(model: &ClassifierModel, rows: &[&TrainingRow]) -> Result<(f64, Vec<DenseGrad>), ClassifierError> {
    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| r.input()).collect();
    let labels: Vec<CategoryLabel> = rows.iter().map(|r| r.label).collect();
    for r in rows {
        model.check_row(r)?;
    }
    Ok(batch_gradients(model, &inputs, &labels))
}

fn batch_gradients(model: &ClassifierModel, inputs: &[Vec<f64>], labels: &[CategoryLabel]) -> (f64, Vec<DenseGrad>) {
    let batch = inputs.len();
    let mut flat = Vec::with_capacity(batch * model.mlp.input_width());
    for x in inputs {
        flat.extend_from_slice(x);
    }
    let mut trace = BatchTrace::default();
    model.mlp.forward_batch(&flat, batch, &mut trace);
    let scale = 1.0 / batch as f64;
    let n = model.output_width;
    let mut total = 0.0;
    let mut dz = Vec::with_capacity(batch * n);
    for (logits, label) in trace.output().chunks_exact(n).zip(labels) {
        total += bce(logits, label);
        dz.extend(
            logits
                .iter()
                .enumerate()
                .map(|(j, &z)| (sigmoid(z) - if label.get(j) { 1.0 } else { 0.0 }) * scale),
        );
    }
    let mut grads = model.mlp.zero_grads();
    model.mlp.accumulate_batch_gradients(&trace, &dz, &mut grads);
    (total * scale, grads)
}

/// Mini-batch momentum SGD on the per-bit cross-entropy.
pub fn train(model: &mut ClassifierModel, set: &TrainingSet, config: &ClassifierTrainConfig) -> Result<LossTrace, ClassifierError> {
    if set.is_empty() {
        return Err(ClassifierError::EmptySet);
    }
    if !model.shapes_consistent() {
        return Err(ClassifierError::Shape {
            what: "layer shapes",
            expected: model.embedding_dim + model.encoding_width,
            got: model.mlp.input_width(),
        });
    }
    for row in &set.rows {
        model.check_row(row)?;
    }
    let inputs: Vec<Vec<f64>> = set.rows.iter().map(TrainingRow::input).collect();
    let labels: Vec<CategoryLabel> = set.rows.iter().map(|r| r.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = {
        let layers: Vec<&Dense> = model.mlp.layers.iter().collect();
        Momentum::new(config.learning_rate, config.momentum, &layers)
    };
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut trace = LossTrace::default();
    let mut plateau = Plateau::new(config.patience, config.min_improvement);
    let mut batch_x: Vec<Vec<f64>> = Vec::new();
    let mut batch_y: Vec<CategoryLabel> = Vec::new();
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| inputs[i].clone()));
            batch_y.extend(chunk.iter().map(|&i| labels[i]));
            let (loss, grads) = batch_gradients(model, &batch_x, &batch_y);
            epoch += loss * chunk.len() as f64;
            opt.step(&mut model.layers_mut(), &grads);
        }
        let epoch = epoch / set.len() as f64;
        trace.push(epoch);
        if plateau.stalled(epoch) {
            break;
        }
    }
    Ok(trace)
}

/// Continues training on the current task's recent rows only.
pub fn finetune(
    model: &mut ClassifierModel,
    recent: &TrainingSet,
    pretrain_config: &ClassifierTrainConfig,
    task: &str,
) -> Result<LossTrace, ClassifierError> {
    let trace = train(model, recent, &pretrain_config.finetune())?;
    model.provenance.finetune_task = Some(String::from(task));
    Ok(trace)
}

/// True when the store holds at least `m_min` records for `(query, label)`.
pub fn judge(label: &CategoryLabel, store: &LabelStore, query: &str, m_min: usize) -> bool {
    store.count(query, label) >= m_min.max(1)
}

/// Mean of the stored latencies for `(query, label)`.
pub fn estimate(label: &CategoryLabel, store: &LabelStore, query: &str, m_min: usize) -> Result<f64, ClassifierError> {
    if !judge(label, store, query, m_min) {
        return Err(ClassifierError::NotJudged {
            have: store.count(query, label),
            need: m_min.max(1),
        });
    }
    Ok(crate::math::mean(store.latencies(query, label)))
}

/// Micro-averaged counts across every bit of every row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub true_positives: u64,
    pub true_negatives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when a ratio had a zero denominator and was reported as 1.0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl ClassificationMetrics {
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fneg: u64) -> ClassificationMetrics {
        let ratio = |num: u64, den: u64| if den == 0 { (1.0, true) } else { (num as f64 / den as f64, false) };
        let (accuracy, _) = ratio(tp + tn, tp + tn + fp + fneg);
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fneg);
        ClassificationMetrics {
            true_positives: tp,
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fneg,
            accuracy,
            precision,
            recall,
            precision_undefined,
            recall_undefined,
        }
    }
}

pub fn classification_metrics(
    predictions: &[CategoryLabel],
    truths: &[CategoryLabel],
) -> Result<ClassificationMetrics, ClassifierError> {
    if predictions.len() != truths.len() {
        return Err(ClassifierError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for (p, t) in predictions.iter().zip(truths) {
        if p.width() != t.width() {
            return Err(ClassifierError::Shape {
                what: "label width",
                expected: t.width(),
                got: p.width(),
            });
        }
        for j in 0..t.width() {
            match (p.get(j), t.get(j)) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
            }
        }
    }
    Ok(ClassificationMetrics::from_counts(tp, tn, fp, fneg))
}

/// A frozen classifier, the knob space its encodings live in, and the
/// embedding of every workload query.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobClassifier {
    pub model: ClassifierModel,
    pub space: KnobSpace,
    pub embeddings: BTreeMap<String, QueryEmbedding>,
}

impl KnobClassifier {
    pub fn predict(&self, query: &str, encoding: &KnobEncoding) -> Result<CategoryLabel, ClassifierError> {
        let embedding = self
            .embeddings
            .get(query)
            .ok_or_else(|| ClassifierError::UnknownQuery(String::from(query)))?;
        self.model.predict(embedding, encoding)
    }

    /// Encodes `config` in the classifier's own space, then predicts.
    pub fn predict_config(&self, query: &str, config: &KnobConfiguration) -> Result<CategoryLabel, ClassifierError> {
        let encoding = self.space.encode(config)?;
        self.predict(query, &encoding)
    }

    pub fn evaluate(&self, set: &TrainingSet) -> Result<ClassificationMetrics, ClassifierError> {
        let mut preds = Vec::with_capacity(set.len());
        let mut truths = Vec::with_capacity(set.len());
        for row in &set.rows {
            preds.push(self.model.predict(&row.embedding, &row.encoding)?);
            truths.push(row.label);
        }
        classification_metrics(&preds, &truths)
    }
}
