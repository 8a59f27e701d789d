//! Multitask cross-entropy training through the unfolded inference network,
//! for both the identification and labeling modules.
//!
//! The loss is the summed negative log posterior probability of every gold
//! node and edge label; in high-order mode the posteriors are the MFVI
//! outputs, so gradients flow through the inference iterations. Training is
//! single-threaded and fully determined by the seed: shuffling, dropout
//! masks and update order all come from seeded streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetRecord;
use crate::encoder::ExternalEmbeddings;
use crate::error::{Error, Result};
use crate::inference::PosteriorState;
use crate::model::{
    bind_gold, gold_nodes, GoldAssignment, IdentifyModel, LabelingModel, Prediction,
};
use crate::numerics::{Graph, NodeId, RunMode, Tensor};
use crate::schema::NULL_LABEL;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr_encoder")]
    pub lr_encoder: f64,
    #[serde(default = "default_wd_encoder")]
    pub wd_encoder: f64,
    #[serde(default = "default_lr_other")]
    pub lr_other: f64,
    #[serde(default = "default_wd_other")]
    pub wd_other: f64,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: usize,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
}

fn default_epochs() -> usize {
    80
}
fn default_batch_size() -> usize {
    10
}
fn default_lr_encoder() -> f64 {
    1e-5
}
fn default_wd_encoder() -> f64 {
    1e-5
}
fn default_lr_other() -> f64 {
    1e-3
}
fn default_wd_other() -> f64 {
    1e-3
}
fn default_warmup_epochs() -> usize {
    5
}
fn default_clip_norm() -> f64 {
    5.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are total")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.lr_encoder <= 0.0 || self.lr_other <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        Ok(())
    }
}

/// Per-task loss components for one batch; total is their sum and the
/// gradient norm is taken before clipping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub node_loss: f64,
    pub edge_loss: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_edge_label_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_dev_edge_label_f1: f64,
}

/// The multitask cross-entropy for one sentence: minus the sum of log
/// posterior probabilities of the gold labels. Returns (node term,
/// edge term, total); nodes without a gold label are skipped.
pub fn joint_loss(
    graph: &mut Graph,
    state: &PosteriorState,
    gold: &GoldAssignment,
) -> Result<(Option<NodeId>, Option<NodeId>, NodeId)> {
    let mut node_sum: Option<NodeId> = None;
    for (i, label) in gold.node_labels.iter().enumerate() {
        let label = match label {
            Some(l) => *l,
            None => continue,
        };
        let picked = log_prob_of(graph, state.node_logits[i], label)?;
        node_sum = add_into(graph, node_sum, picked)?;
    }
    let mut edge_sum: Option<NodeId> = None;
    for (e, &label) in gold.edge_labels.iter().enumerate() {
        let picked = log_prob_of(graph, state.edge_logits[e], label)?;
        edge_sum = add_into(graph, edge_sum, picked)?;
    }
    let node_loss = node_sum.map(|n| graph.scale(n, -1.0)).transpose()?;
    let edge_loss = edge_sum.map(|n| graph.scale(n, -1.0)).transpose()?;
    let total = match (node_loss, edge_loss) {
        (Some(n), Some(e)) => graph.add(n, e)?,
        (Some(n), None) => n,
        (None, Some(e)) => e,
        (None, None) => graph.scalar(0.0)?,
    };
    Ok((node_loss, edge_loss, total))
}

fn log_prob_of(graph: &mut Graph, logits: NodeId, label: usize) -> Result<NodeId> {
    let n = graph.value(logits).len();
    if label >= n {
        return Err(Error::Training(format!(
            "gold label {} out of range for {} labels",
            label, n
        )));
    }
    let ls = graph.log_softmax(logits)?;
    let mut one_hot = Tensor::zeros(&[n]);
    one_hot.set(&[label], 1.0);
    let oh = graph.constant(one_hot)?;
    let picked = graph.mul(ls, oh)?;
    graph.sum_all(picked)
}

fn add_into(graph: &mut Graph, acc: Option<NodeId>, x: NodeId) -> Result<Option<NodeId>> {
    Ok(Some(match acc {
        Some(a) => graph.add(a, x)?,
        None => x,
    }))
}

fn warmup_scale(step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        1.0
    } else {
        ((step + 1) as f64 / warmup_steps as f64).min(1.0)
    }
}

fn shuffled_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Where the labeling module's node candidates come from at evaluation
/// time: the gold annotation or the frozen identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeSource {
    Gold,
    Identified,
}

impl Default for NodeSource {
    fn default() -> Self {
        NodeSource::Gold
    }
}

/// Trains the labeling module. The identification model, when given, is
/// frozen and only supplies candidate spans for dev evaluation in
/// `NodeSource::Identified` mode; the labeling loss itself is always
/// computed on gold spans. Selects the epoch with the best dev edge-label
/// F1 and restores its parameters.
pub fn train_labeling(
    model: &mut LabelingModel,
    train: &[DatasetRecord],
    dev: &[DatasetRecord],
    config: &TrainConfig,
    seed: u64,
    identify: Option<&IdentifyModel>,
    eval_source: NodeSource,
    external: Option<&ExternalEmbeddings>,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if eval_source == NodeSource::Identified && identify.is_none() {
        return Err(Error::Training(
            "identified-span evaluation needs an identification model".into(),
        ));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_BA5E);
    let dropout = model.settings.dropout;
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup_epochs * steps_per_epoch;

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_edge_label_f1: f64::NEG_INFINITY,
    };
    let mut best_params = model.store.export();
    let mut step = 0usize;
    let mut sentence_counter = 0u64;

    for epoch in 0..config.epochs {
        let order = shuffled_indices(&mut shuffle_rng, train.len());
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            model.store.zero_grads();
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let record = &train[i];
                let nodes = gold_nodes(record);
                if nodes.is_empty() {
                    continue;
                }
                sentence_counter += 1;
                let pass = model.forward(
                    &record.tokens,
                    &record.id,
                    nodes,
                    RunMode::Train { dropout },
                    seed ^ sentence_counter,
                    external,
                )?;
                let gold = bind_gold(record, &model.schema, &pass.nodes, &pass.edges)?;
                let mut graph = pass.graph;
                let (_, _, total) = joint_loss(&mut graph, &pass.state, &gold)?;
                let value = graph.value(total).scalar_value()?;
                if !value.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss on sentence `{}` at epoch {}",
                        record.id, epoch
                    )));
                }
                batch_loss += value * scale;
                graph.accumulate_param_grads(total, &mut model.store, scale)?;
            }
            model.store.clip_grads(config.clip_norm);
            let lr_scale = warmup_scale(step, warmup_steps);
            apply_adamw(&mut model.store, step + 1, config, lr_scale);
            step += 1;
            epoch_loss += batch_loss;
            epoch_batches += 1;
        }
        let dev_f1 = evaluate_edge_label_f1(model, dev, identify, eval_source, external)?;
        let mean_loss = if epoch_batches > 0 {
            epoch_loss / epoch_batches as f64
        } else {
            0.0
        };
        report.epochs.push(EpochReport {
            epoch,
            mean_loss,
            dev_edge_label_f1: dev_f1,
        });
        if dev_f1 > report.best_dev_edge_label_f1 {
            report.best_dev_edge_label_f1 = dev_f1;
            report.best_epoch = epoch;
            best_params = model.store.export();
        }
    }
    model.store.load_values(&best_params)?;
    Ok(report)
}

fn apply_adamw(
    store: &mut crate::numerics::ParameterStore,
    t: usize,
    config: &TrainConfig,
    lr_scale: f64,
) {
    store.adamw_step(t, |name| {
        if name.starts_with("enc.") {
            (config.lr_encoder * lr_scale, config.wd_encoder)
        } else {
            (config.lr_other * lr_scale, config.wd_other)
        }
    });
}

/// One batched update on the given records; returns the loss report.
/// Exposed for the overfit sanity checks.
pub fn labeling_step(
    model: &mut LabelingModel,
    records: &[&DatasetRecord],
    config: &TrainConfig,
    t: usize,
    dropout_seed: u64,
) -> Result<LossReport> {
    model.store.zero_grads();
    let scale = 1.0 / records.len() as f64;
    let mut node_loss = 0.0;
    let mut edge_loss = 0.0;
    let mut total_loss = 0.0;
    for (k, record) in records.iter().enumerate() {
        let nodes = gold_nodes(record);
        let pass = model.forward(
            &record.tokens,
            &record.id,
            nodes,
            RunMode::Train {
                dropout: model.settings.dropout,
            },
            dropout_seed ^ k as u64,
            None,
        )?;
        let gold = bind_gold(record, &model.schema, &pass.nodes, &pass.edges)?;
        let mut graph = pass.graph;
        let (n, e, total) = joint_loss(&mut graph, &pass.state, &gold)?;
        node_loss += n.map(|id| graph.value(id).data()[0]).unwrap_or(0.0) * scale;
        edge_loss += e.map(|id| graph.value(id).data()[0]).unwrap_or(0.0) * scale;
        total_loss += graph.value(total).scalar_value()? * scale;
        graph.accumulate_param_grads(total, &mut model.store, scale)?;
    }
    let grad_norm = model.store.clip_grads(config.clip_norm);
    apply_adamw(&mut model.store, t, config, 1.0);
    Ok(LossReport {
        node_loss,
        edge_loss,
        total: total_loss,
        grad_norm,
    })
}

/// Micro F1 over non-NULL edge label assignments, the dev selection
/// metric: a predicted non-NULL edge counts as correct when the gold label
/// of the same candidate edge matches exactly.
pub fn evaluate_edge_label_f1(
    model: &LabelingModel,
    dev: &[DatasetRecord],
    identify: Option<&IdentifyModel>,
    source: NodeSource,
    external: Option<&ExternalEmbeddings>,
) -> Result<f64> {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut gold_count = 0usize;
    for record in dev {
        let nodes = match source {
            NodeSource::Gold => gold_nodes(record),
            NodeSource::Identified => identify
                .expect("checked by caller")
                .identify(&record.tokens, &record.id, external)?
                .to_nodes(),
        };
        if nodes.is_empty() {
            gold_count += record.relations.len()
                + record.events.iter().map(|e| e.args.len()).sum::<usize>();
            continue;
        }
        let pred = model.predict(&record.tokens, &record.id, nodes, external)?;
        let gold = bind_gold(record, &model.schema, &pred.nodes, &pred.edges)?;
        // count gold items from the record itself so missed spans still
        // count as recall misses
        gold_count += record.relations.len()
            + record.events.iter().map(|e| e.args.len()).sum::<usize>();
        for (e, &p) in pred.edge_labels.iter().enumerate() {
            if p != NULL_LABEL {
                predicted += 1;
                if gold.edge_labels[e] == p {
                    tp += 1;
                }
            }
        }
    }
    Ok(f1(tp, predicted, gold_count))
}

pub fn f1(tp: usize, predicted: usize, gold: usize) -> f64 {
    let p = if predicted > 0 {
        tp as f64 / predicted as f64
    } else {
        0.0
    };
    let r = if gold > 0 { tp as f64 / gold as f64 } else { 0.0 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// First-order prediction: posterior argmax of the unary softmax for every
/// variable, independent of any high-order configuration.
pub fn first_order_predict(
    model: &LabelingModel,
    record: &DatasetRecord,
    nodes: Vec<crate::schema::NodeInstance>,
    external: Option<&ExternalEmbeddings>,
) -> Result<Prediction> {
    let mut first = model.clone();
    first.settings.order = crate::model::InferenceOrder::First;
    first.predict(&record.tokens, &record.id, nodes, external)
}

/// Trains the identification module (both taggers jointly), selecting the
/// epoch with the best dev span F1 (triggers and entities pooled).
pub fn train_identify(
    model: &mut IdentifyModel,
    train: &[DatasetRecord],
    dev: &[DatasetRecord],
    config: &TrainConfig,
    seed: u64,
    external: Option<&ExternalEmbeddings>,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1D3F_F00D);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup_epochs * steps_per_epoch;
    let dropout = model.settings.dropout;

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_edge_label_f1: f64::NEG_INFINITY,
    };
    let mut best_params = model.store.export();
    let mut step = 0usize;
    let mut sentence_counter = 0u64;

    for epoch in 0..config.epochs {
        let order = shuffled_indices(&mut shuffle_rng, train.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let record = &train[i];
                if record.tokens.is_empty() {
                    continue;
                }
                sentence_counter += 1;
                let mut graph =
                    Graph::with_seed(RunMode::Train { dropout }, seed ^ sentence_counter);
                let loss = model.sentence_loss(&mut graph, record, external)?;
                let value = graph.value(loss).scalar_value()?;
                if !value.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite identification loss on `{}`",
                        record.id
                    )));
                }
                batch_loss += value * scale;
                graph.accumulate_param_grads(loss, &mut model.store, scale)?;
            }
            model.store.clip_grads(config.clip_norm);
            let lr_scale = warmup_scale(step, warmup_steps);
            model.store.adamw_step(step + 1, |name| {
                if name.starts_with("enc.") {
                    (config.lr_encoder * lr_scale, config.wd_encoder)
                } else {
                    (config.lr_other * lr_scale, config.wd_other)
                }
            });
            model.pin_transitions()?;
            step += 1;
            epoch_loss += batch_loss;
            batches += 1;
        }
        let dev_f1 = evaluate_identification_f1(model, dev, external)?;
        report.epochs.push(EpochReport {
            epoch,
            mean_loss: if batches > 0 { epoch_loss / batches as f64 } else { 0.0 },
            dev_edge_label_f1: dev_f1,
        });
        if dev_f1 > report.best_dev_edge_label_f1 {
            report.best_dev_edge_label_f1 = dev_f1;
            report.best_epoch = epoch;
            best_params = model.store.export();
        }
    }
    model.store.load_values(&best_params)?;
    model.pin_transitions()?;
    Ok(report)
}

/// Micro span-identification F1 pooled over triggers and entities
/// (offsets only, types ignored).
pub fn evaluate_identification_f1(
    model: &IdentifyModel,
    dev: &[DatasetRecord],
    external: Option<&ExternalEmbeddings>,
) -> Result<f64> {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut gold_count = 0usize;
    for record in dev {
        let found = model.identify(&record.tokens, &record.id, external)?;
        let gold_trig: std::collections::HashSet<(usize, usize)> = record
            .triggers
            .iter()
            .map(|t| (t.start, t.end))
            .collect();
        let gold_ent: std::collections::HashSet<(usize, usize)> = record
            .entities
            .iter()
            .map(|e| (e.start, e.end))
            .collect();
        gold_count += gold_trig.len() + gold_ent.len();
        predicted += found.triggers.len() + found.entities.len();
        tp += found
            .triggers
            .iter()
            .filter(|(s, _)| gold_trig.contains(&(s.start, s.end)))
            .count();
        tp += found
            .entities
            .iter()
            .filter(|(s, _)| gold_ent.contains(&(s.start, s.end)))
            .count();
    }
    Ok(f1(tp, predicted, gold_count))
}
