//! Node identification: linear-chain CRF taggers over BIO tags.
//!
//! Triggers and entities are tagged by two independent taggers that share
//! nothing but the encoder output. A sequence scores as the sum of per-token
//! emissions plus learned transitions; decoding is Viterbi, the partition
//! function comes from the forward recursion in log space, and training
//! minimizes the negative log likelihood of the gold sequence. Transitions
//! that break BIO validity are pinned to -1e4 rather than forbidden outright
//! so every quantity stays differentiable.

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{logsumexp_slice, Graph, NodeId, ParameterStore, Tensor};
use crate::schema::Span;

use rand_chacha::ChaCha8Rng;

pub const BANNED_TRANSITION: f64 = -1e4;

/// O plus B-X/I-X per type. O is id 0; type k owns ids 2k+1 (B) and
/// 2k+2 (I).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioTagSet {
    types: Vec<String>,
}

impl BioTagSet {
    pub fn new(types: Vec<String>) -> Self {
        Self { types }
    }

    pub fn len(&self) -> usize {
        2 * self.types.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn begin(&self, type_id: usize) -> usize {
        2 * type_id + 1
    }

    pub fn inside(&self, type_id: usize) -> usize {
        2 * type_id + 2
    }

    /// The type id a B/I tag refers to; None for O.
    pub fn type_of(&self, tag: usize) -> Option<usize> {
        if tag == 0 {
            None
        } else {
            Some((tag - 1) / 2)
        }
    }

    pub fn is_begin(&self, tag: usize) -> bool {
        tag != 0 && (tag - 1) % 2 == 0
    }

    pub fn is_inside(&self, tag: usize) -> bool {
        tag != 0 && (tag - 1) % 2 == 1
    }

    pub fn type_name(&self, type_id: usize) -> &str {
        &self.types[type_id]
    }

    /// Whether `from -> to` respects BIO validity: I-X may only follow
    /// B-X or I-X of the same type.
    pub fn transition_allowed(&self, from: usize, to: usize) -> bool {
        if !self.is_inside(to) {
            return true;
        }
        let t = self.type_of(to);
        (self.is_begin(from) || self.is_inside(from)) && self.type_of(from) == t
    }

    /// Encodes non-overlapping spans as a BIO tag sequence.
    pub fn encode_tags(&self, spans: &[(Span, usize)], sentence_len: usize) -> Result<Vec<usize>> {
        let mut tags = vec![0usize; sentence_len];
        for &(span, type_id) in spans {
            if !span.in_range(sentence_len) {
                return Err(Error::Tagging(format!(
                    "span {}..{} out of range for {} tokens",
                    span.start, span.end, sentence_len
                )));
            }
            for i in span.start..=span.end {
                if tags[i] != 0 {
                    return Err(Error::Tagging(format!(
                        "overlapping spans at token {}",
                        i
                    )));
                }
                tags[i] = if i == span.start {
                    self.begin(type_id)
                } else {
                    self.inside(type_id)
                };
            }
        }
        Ok(tags)
    }

    pub fn is_valid_sequence(&self, tags: &[usize]) -> bool {
        if tags.iter().any(|&t| t >= self.len()) {
            return false;
        }
        if let Some(&first) = tags.first() {
            if self.is_inside(first) {
                return false;
            }
        }
        tags.windows(2).all(|w| self.transition_allowed(w[0], w[1]))
    }
}

/// Decodes a tag sequence to spans. Maximal runs `B-X (I-X)*` become spans
/// of type X; a stray I-X (no preceding B-X/I-X of the same type) opens a
/// new span of type X.
pub fn decode_spans(tags: &[usize], tag_set: &BioTagSet) -> Vec<(Span, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (start, type)
    for (i, &tag) in tags.iter().enumerate() {
        let continues = match (open, tag_set.type_of(tag)) {
            (Some((_, t)), Some(cur)) => tag_set.is_inside(tag) && cur == t,
            _ => false,
        };
        if continues {
            continue;
        }
        if let Some((start, t)) = open.take() {
            spans.push((Span { start, end: i - 1 }, t));
        }
        if let Some(t) = tag_set.type_of(tag) {
            open = Some((i, t));
        }
    }
    if let Some((start, t)) = open {
        spans.push((
            Span {
                start,
                end: tags.len() - 1,
            },
            t,
        ));
    }
    spans
}

/// One linear-chain CRF tagger: an emission feed-forward from token
/// representations plus a transition matrix, owned under a parameter
/// name prefix.
#[derive(Debug, Clone)]
pub struct ChainCrf {
    pub prefix: String,
    pub tags: BioTagSet,
}

impl ChainCrf {
    pub fn new(prefix: &str, tags: BioTagSet) -> Self {
        Self {
            prefix: prefix.to_string(),
            tags,
        }
    }

    pub fn define_params(
        &self,
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        input_width: usize,
        hidden: usize,
    ) -> Result<()> {
        nn::define_ffn2(
            store,
            rng,
            &format!("{}.emit", self.prefix),
            input_width,
            hidden,
            self.tags.len(),
        )?;
        store.define(
            &format!("{}.trans", self.prefix),
            Tensor::zeros(&[self.tags.len(), self.tags.len()]),
        )?;
        self.pin_banned_transitions(store)?;
        Ok(())
    }

    /// Rewrites BIO-invalid transition entries to the -1e4 pin. Called
    /// after initialization and after every optimizer step.
    pub fn pin_banned_transitions(&self, store: &mut ParameterStore) -> Result<()> {
        let n = self.tags.len();
        let trans = store.value_mut(&format!("{}.trans", self.prefix))?;
        for from in 0..n {
            for to in 0..n {
                if !self.tags.transition_allowed(from, to) {
                    trans.set(&[from, to], BANNED_TRANSITION);
                }
            }
        }
        Ok(())
    }

    /// Emission scores [n, |tags|] from token representations [n, w],
    /// with input dropout in training mode.
    pub fn emissions(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        token_reprs: NodeId,
    ) -> Result<NodeId> {
        let x = graph.dropout(token_reprs)?;
        nn::ffn2(graph, store, &format!("{}.emit", self.prefix), x)
    }

    pub fn transitions(&self, graph: &mut Graph, store: &ParameterStore) -> Result<NodeId> {
        graph.param(store, &format!("{}.trans", self.prefix))
    }

    /// Negative log likelihood of the gold tag sequence, as a graph node.
    pub fn nll(
        &self,
        graph: &mut Graph,
        emissions: NodeId,
        transitions: NodeId,
        gold: &[usize],
    ) -> Result<NodeId> {
        if !self.tags.is_valid_sequence(gold) {
            return Err(Error::Tagging("gold sequence is not BIO-valid".into()));
        }
        let log_z = log_partition_node(graph, emissions, transitions)?;
        let score = sequence_score_node(graph, emissions, transitions, gold)?;
        let neg = graph.scale(score, -1.0)?;
        graph.add(log_z, neg)
    }
}

/// Sum of emissions along `tags` plus transitions between consecutive tags;
/// the first position has no transition term. Plain-value form.
pub fn sequence_score(tags: &[usize], emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let n_tags = emissions.shape()[1];
    if tags.len() != emissions.shape()[0] {
        return Err(Error::Tagging(format!(
            "{} tags for {} emission rows",
            tags.len(),
            emissions.shape()[0]
        )));
    }
    let mut score = 0.0;
    for (i, &t) in tags.iter().enumerate() {
        if t >= n_tags {
            return Err(Error::Tagging(format!("tag id {} out of range", t)));
        }
        score += emissions.get(&[i, t]);
        if i > 0 {
            score += transitions.get(&[tags[i - 1], t]);
        }
    }
    Ok(score)
}

/// Graph form of [`sequence_score`], differentiable in emissions and
/// transitions.
pub fn sequence_score_node(
    graph: &mut Graph,
    emissions: NodeId,
    transitions: NodeId,
    tags: &[usize],
) -> Result<NodeId> {
    let (n, n_tags) = {
        let s = graph.value(emissions).shape();
        (s[0], s[1])
    };
    if tags.len() != n {
        return Err(Error::Tagging(format!("{} tags for {} emission rows", tags.len(), n)));
    }
    let mut one_hot = Tensor::zeros(&[n, n_tags]);
    for (i, &t) in tags.iter().enumerate() {
        if t >= n_tags {
            return Err(Error::Tagging(format!("tag id {} out of range", t)));
        }
        one_hot.set(&[i, t], 1.0);
    }
    let mut trans_count = Tensor::zeros(&[n_tags, n_tags]);
    for w in tags.windows(2) {
        let c = trans_count.get(&[w[0], w[1]]) + 1.0;
        trans_count.set(&[w[0], w[1]], c);
    }
    let oh = graph.constant(one_hot)?;
    let picked = graph.mul(emissions, oh)?;
    let emit_sum = graph.sum_all(picked)?;
    let tc = graph.constant(trans_count)?;
    let tpicked = graph.mul(transitions, tc)?;
    let trans_sum = graph.sum_all(tpicked)?;
    graph.add(emit_sum, trans_sum)
}

/// Highest-scoring tag sequence. Ties resolve to the lowest tag id at the
/// latest position where candidates differ.
pub fn viterbi_decode(emissions: &Tensor, transitions: &Tensor) -> Vec<usize> {
    let (n, n_tags) = (emissions.shape()[0], emissions.shape()[1]);
    if n == 0 {
        return Vec::new();
    }
    let mut delta: Vec<f64> = emissions.row(0).to_vec();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 1..n {
        let mut next = vec![f64::NEG_INFINITY; n_tags];
        let mut ptr = vec![0usize; n_tags];
        for (to, slot) in next.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut best_from = 0;
            for from in 0..n_tags {
                let s = delta[from] + transitions.get(&[from, to]);
                if s > best {
                    best = s;
                    best_from = from;
                }
            }
            *slot = best + emissions.get(&[i, to]);
            ptr[to] = best_from;
        }
        back.push(ptr);
        delta = next;
    }
    let mut best_tag = 0;
    for t in 1..n_tags {
        if delta[t] > delta[best_tag] {
            best_tag = t;
        }
    }
    let mut tags = vec![best_tag];
    for ptr in back.iter().rev() {
        best_tag = ptr[best_tag];
        tags.push(best_tag);
    }
    tags.reverse();
    tags
}

/// log Z by the forward recursion, plain-value form.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let (n, n_tags) = (emissions.shape()[0], emissions.shape()[1]);
    if n == 0 {
        return Err(Error::Tagging("empty sentence".into()));
    }
    let mut alpha: Vec<f64> = emissions.row(0).to_vec();
    let mut lane = vec![0.0; n_tags];
    for i in 1..n {
        let mut next = vec![0.0; n_tags];
        for (to, slot) in next.iter_mut().enumerate() {
            for from in 0..n_tags {
                lane[from] = alpha[from] + transitions.get(&[from, to]);
            }
            *slot = logsumexp_slice(&lane)? + emissions.get(&[i, to]);
        }
        alpha = next;
    }
    logsumexp_slice(&alpha)
}

/// Graph form of [`log_partition`], differentiable in emissions and
/// transitions.
pub fn log_partition_node(
    graph: &mut Graph,
    emissions: NodeId,
    transitions: NodeId,
) -> Result<NodeId> {
    let (n, n_tags) = {
        let s = graph.value(emissions).shape();
        (s[0], s[1])
    };
    if n == 0 {
        return Err(Error::Tagging("empty sentence".into()));
    }
    let mut alpha = emission_row(graph, emissions, 0, n_tags)?;
    for i in 1..n {
        let col = graph.reshape(alpha, vec![n_tags, 1])?;
        let scores = graph.add(transitions, col)?; // [from, to] + alpha[from]
        let reduced = graph.logsumexp(scores, 0)?;
        let u = emission_row(graph, emissions, i, n_tags)?;
        alpha = graph.add(reduced, u)?;
    }
    graph.logsumexp(alpha, 0)
}

fn emission_row(
    graph: &mut Graph,
    emissions: NodeId,
    row: usize,
    n_tags: usize,
) -> Result<NodeId> {
    let picked = graph.lookup(emissions, &[row])?;
    graph.reshape(picked, vec![n_tags])
}
