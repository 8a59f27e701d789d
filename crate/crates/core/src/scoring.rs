//! Potential construction: unary node/edge scores, binary sib/cop/gp
//! scores and ternary node-edge-node scores.
//!
//! Node scores come from a two-layer task-specific feed-forward over the
//! span representation. Edge scores use a decomposed biaffine form: two
//! single-layer projections of the endpoint representations, multiplied
//! elementwise and mapped through a label matrix that includes the NULL
//! column. Binary and ternary scores are five-way elementwise products of
//! node projections and label embeddings, materialized as full label
//! tensors per factor.
//!
//! Sib factors use one label table for both edge slots and cop factors
//! likewise (hete cop keys the table by each edge's task instead), so the
//! tensors are symmetric under swapping the two edges by construction; gp
//! keeps two positional tables because the chain is directed.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{init_embedding, Graph, NodeId, ParameterStore, Tensor};
use crate::schema::{
    BinaryFactor, BinaryKind, EdgeInstance, EdgeTask, FactorCase, FactorIndex, LabelSchema,
    NodeInstance, NodeKind, TernaryFactor,
};

/// Hidden and interaction widths. Defaults follow the standard setting:
/// 150 for entity/relation scoring, 600 for trigger/role scoring, 150 for
/// binary and ternary interactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringDims {
    #[serde(default = "d150")]
    pub unary_entity_hidden: usize,
    #[serde(default = "d600")]
    pub unary_trigger_hidden: usize,
    #[serde(default = "d150")]
    pub unary_relation: usize,
    #[serde(default = "d600")]
    pub unary_role: usize,
    #[serde(default = "d150")]
    pub binary: usize,
    #[serde(default = "d150")]
    pub ternary: usize,
}

fn d150() -> usize {
    150
}
fn d600() -> usize {
    600
}

impl Default for ScoringDims {
    fn default() -> Self {
        Self {
            unary_entity_hidden: 150,
            unary_trigger_hidden: 600,
            unary_relation: 150,
            unary_role: 600,
            binary: 150,
            ternary: 150,
        }
    }
}

impl ScoringDims {
    pub fn edge_dim(&self, task: EdgeTask) -> usize {
        match task {
            EdgeTask::Role => self.unary_role,
            EdgeTask::Relation => self.unary_relation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoringSettings {
    #[serde(default)]
    pub dims: ScoringDims,
    /// Active high-order factor cases; empty means first-order only.
    #[serde(default)]
    pub cases: Vec<FactorCase>,
    /// Reuse the unary label representations in high-order scoring instead
    /// of dedicated tables.
    #[serde(default)]
    pub share_labels: bool,
    /// Take node representations into account in high-order scores; when
    /// false the projections are replaced by all-ones vectors.
    #[serde(default = "default_true")]
    pub node_reps: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ScoringSettings {
    fn default() -> Self {
        Self {
            dims: ScoringDims::default(),
            cases: Vec::new(),
            share_labels: false,
            node_reps: true,
        }
    }
}

/// All potential tensors for one sentence, as graph nodes so training can
/// differentiate through them. Unary entries are vectors over the
/// variable's label set; binary tensors are [|R1|, |R2|] oriented
/// (first, second); ternary tensors are [|Ls|, |Le|, |R|].
pub struct PotentialSet {
    pub node_unary: Vec<NodeId>,
    pub edge_unary: Vec<NodeId>,
    pub binary: Vec<(BinaryFactor, NodeId)>,
    pub ternary: Vec<(TernaryFactor, NodeId)>,
}

/// The labeling module's scorer bank. Parameters live under the `score.`
/// prefix in the labeling parameter store.
#[derive(Debug, Clone)]
pub struct Scorers {
    pub schema: LabelSchema,
    pub settings: ScoringSettings,
    input_width: usize,
}

impl Scorers {
    pub fn new(schema: LabelSchema, settings: ScoringSettings, input_width: usize) -> Result<Self> {
        let s = Self {
            schema,
            settings,
            input_width,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !self.settings.share_labels {
            return Ok(());
        }
        let dims = &self.settings.dims;
        for &case in &self.settings.cases {
            match case {
                FactorCase::HomoI if dims.binary != dims.unary_role => {
                    return Err(Error::Config(
                        "share_labels needs binary dim == unary role dim for homo-i".into(),
                    ))
                }
                FactorCase::HomoII | FactorCase::HeteI
                    if dims.binary != dims.unary_relation
                        || (case == FactorCase::HeteI && dims.binary != dims.unary_role) =>
                {
                    return Err(Error::Config(format!(
                        "share_labels needs matching binary and unary edge dims for {}",
                        case
                    )))
                }
                FactorCase::HeteII
                    if dims.ternary != dims.unary_role
                        || dims.ternary != dims.unary_trigger_hidden
                        || dims.ternary != dims.unary_entity_hidden =>
                {
                    return Err(Error::Config(
                        "share_labels needs ternary dim == role and node hidden dims for hete-ii"
                            .into(),
                    ))
                }
                FactorCase::HeteIII
                    if dims.ternary != dims.unary_relation
                        || dims.ternary != dims.unary_entity_hidden =>
                {
                    return Err(Error::Config(
                        "share_labels needs ternary dim == relation and entity hidden dims for hete-iii"
                            .into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn define_params(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let w = self.input_width;
        let dims = &self.settings.dims;
        // unary node scorers (two-layer)
        nn::define_ffn2(
            store,
            rng,
            "score.u-node.trigger",
            w,
            dims.unary_trigger_hidden,
            self.schema.event_types.len().max(1),
        )?;
        nn::define_ffn2(
            store,
            rng,
            "score.u-node.entity",
            w,
            dims.unary_entity_hidden,
            self.schema.entity_types.len().max(1),
        )?;
        // unary edge scorers (decomposed biaffine)
        for task in [EdgeTask::Role, EdgeTask::Relation] {
            let d = dims.edge_dim(task);
            let labels = self.schema.edge_label_count(task);
            let p = unary_edge_prefix(task);
            nn::define_linear(store, rng, &format!("{}.s", p), w, d)?;
            nn::define_linear(store, rng, &format!("{}.e", p), w, d)?;
            store.define(&format!("{}.h", p), init_embedding(rng, d, labels))?;
        }
        // high-order scorers
        for &case in &self.settings.cases {
            match case {
                FactorCase::HomoI => {
                    self.define_binary_kind(store, rng, case, BinaryKind::Sib)?;
                    self.define_binary_kind(store, rng, case, BinaryKind::Cop)?;
                }
                FactorCase::HomoII => {
                    self.define_binary_kind(store, rng, case, BinaryKind::Sib)?;
                    self.define_binary_kind(store, rng, case, BinaryKind::Cop)?;
                    self.define_binary_kind(store, rng, case, BinaryKind::Gp)?;
                }
                FactorCase::HeteI => {
                    self.define_binary_kind(store, rng, case, BinaryKind::Cop)?;
                    self.define_binary_kind(store, rng, case, BinaryKind::Gp)?;
                }
                FactorCase::HeteII | FactorCase::HeteIII => {
                    self.define_ternary(store, rng, case)?;
                }
            }
        }
        Ok(())
    }

    fn define_binary_kind(
        &self,
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        case: FactorCase,
        kind: BinaryKind,
    ) -> Result<()> {
        let w = self.input_width;
        let d = self.settings.dims.binary;
        let p = binary_prefix(case, kind);
        if self.settings.node_reps {
            nn::define_linear(store, rng, &format!("{}.s", p), w, d)?;
            nn::define_linear(store, rng, &format!("{}.e", p), w, d)?;
            if kind == BinaryKind::Gp {
                nn::define_linear(store, rng, &format!("{}.mid", p), w, d)?;
            }
        }
        if self.settings.share_labels {
            return Ok(());
        }
        match case {
            FactorCase::HomoI | FactorCase::HomoII => {
                let labels = self.schema.edge_label_count(case_edge_task(case));
                if kind == BinaryKind::Gp {
                    store.define(&format!("{}.labels1", p), init_embedding(rng, labels, d))?;
                    store.define(&format!("{}.labels2", p), init_embedding(rng, labels, d))?;
                } else {
                    store.define(&format!("{}.labels", p), init_embedding(rng, labels, d))?;
                }
            }
            FactorCase::HeteI => {
                store.define(
                    &format!("{}.role_labels", p),
                    init_embedding(rng, self.schema.edge_label_count(EdgeTask::Role), d),
                )?;
                store.define(
                    &format!("{}.rel_labels", p),
                    init_embedding(rng, self.schema.edge_label_count(EdgeTask::Relation), d),
                )?;
            }
            _ => unreachable!("ternary cases have no binary scorers"),
        }
        Ok(())
    }

    fn define_ternary(
        &self,
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        case: FactorCase,
    ) -> Result<()> {
        let w = self.input_width;
        let d = self.settings.dims.ternary;
        let p = ternary_prefix(case);
        if self.settings.node_reps {
            nn::define_linear(store, rng, &format!("{}.s", p), w, d)?;
            nn::define_linear(store, rng, &format!("{}.e", p), w, d)?;
        }
        if self.settings.share_labels {
            return Ok(());
        }
        let (head_labels, tail_labels, edge_labels) = ternary_label_counts(&self.schema, case);
        store.define(
            &format!("{}.head_labels", p),
            init_embedding(rng, head_labels, d),
        )?;
        store.define(
            &format!("{}.tail_labels", p),
            init_embedding(rng, tail_labels, d),
        )?;
        store.define(
            &format!("{}.edge_labels", p),
            init_embedding(rng, edge_labels, d),
        )?;
        Ok(())
    }

    /// Scores a whole sentence: unary vectors for every node and edge plus
    /// one tensor per enumerated factor.
    pub fn score_sentence(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        span_reprs: &[NodeId],
        nodes: &[NodeInstance],
        edges: &[EdgeInstance],
        factors: &FactorIndex,
    ) -> Result<PotentialSet> {
        let mut ctx = ScoreContext {
            projections: HashMap::new(),
            tables: HashMap::new(),
        };
        let mut node_unary = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            node_unary.push(self.unary_node_scores(graph, store, span_reprs[i], node.kind)?);
        }
        let mut edge_unary = Vec::with_capacity(edges.len());
        for edge in edges {
            edge_unary.push(self.unary_edge_scores(
                graph,
                store,
                &mut ctx,
                span_reprs,
                edge.head,
                edge.tail,
                edge.task,
            )?);
        }
        let mut binary = Vec::with_capacity(factors.binary.len());
        for &f in &factors.binary {
            let tensor = self.binary_tensor(graph, store, &mut ctx, span_reprs, edges, f)?;
            binary.push((f, tensor));
        }
        let mut ternary = Vec::with_capacity(factors.ternary.len());
        for &f in &factors.ternary {
            let tensor = self.ternary_tensor(graph, store, &mut ctx, span_reprs, edges, f)?;
            ternary.push((f, tensor));
        }
        Ok(PotentialSet {
            node_unary,
            edge_unary,
            binary,
            ternary,
        })
    }

    /// Unary node scores, a [|L|] vector.
    pub fn unary_node_scores(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        span_repr: NodeId,
        kind: NodeKind,
    ) -> Result<NodeId> {
        let prefix = match kind {
            NodeKind::Trigger => "score.u-node.trigger",
            NodeKind::Entity => "score.u-node.entity",
        };
        let x = graph.dropout(span_repr)?;
        let scores = nn::ffn2(graph, store, prefix, x)?;
        let labels = graph.value(scores).shape()[1];
        graph.reshape(scores, vec![labels])
    }

    /// Unary edge scores, a [|R|] vector including the NULL entry.
    #[allow(clippy::too_many_arguments)]
    pub fn unary_edge_scores(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        ctx: &mut ScoreContext,
        span_reprs: &[NodeId],
        head: usize,
        tail: usize,
        task: EdgeTask,
    ) -> Result<NodeId> {
        let p = unary_edge_prefix(task);
        let hs = ctx.projection(graph, store, &format!("{}.s", p), head, span_reprs[head], true)?;
        let te = ctx.projection(graph, store, &format!("{}.e", p), tail, span_reprs[tail], true)?;
        let prod = graph.mul(hs, te)?;
        let h = graph.param(store, &format!("{}.h", p))?;
        let scores = graph.matmul(prod, h)?;
        let labels = graph.value(scores).shape()[1];
        graph.reshape(scores, vec![labels])
    }

    fn binary_tensor(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        ctx: &mut ScoreContext,
        span_reprs: &[NodeId],
        edges: &[EdgeInstance],
        f: BinaryFactor,
    ) -> Result<NodeId> {
        let d = self.settings.dims.binary;
        let (ea, eb) = (edges[f.first], edges[f.second]);
        let p = binary_prefix(f.case, f.kind);
        // Shared-endpoint product of node projections, ordered canonically
        // (by node index for the two symmetric slots) so listing order
        // cannot perturb the result.
        let c = if self.settings.node_reps {
            let combined = match f.kind {
                BinaryKind::Sib => {
                    debug_assert_eq!(ea.head, eb.head);
                    let s =
                        ctx.projection(graph, store, &format!("{}.s", p), ea.head, span_reprs[ea.head], true)?;
                    let (lo, hi) = ordered(ea.tail, eb.tail);
                    let e1 = ctx.projection(graph, store, &format!("{}.e", p), lo, span_reprs[lo], true)?;
                    let e2 = ctx.projection(graph, store, &format!("{}.e", p), hi, span_reprs[hi], true)?;
                    let se = graph.mul(s, e1)?;
                    graph.mul(se, e2)?
                }
                BinaryKind::Cop => {
                    debug_assert_eq!(ea.tail, eb.tail);
                    let (lo, hi) = ordered(ea.head, eb.head);
                    let s1 = ctx.projection(graph, store, &format!("{}.s", p), lo, span_reprs[lo], true)?;
                    let s2 = ctx.projection(graph, store, &format!("{}.s", p), hi, span_reprs[hi], true)?;
                    let e = ctx.projection(graph, store, &format!("{}.e", p), ea.tail, span_reprs[ea.tail], true)?;
                    let ss = graph.mul(s1, s2)?;
                    graph.mul(ss, e)?
                }
                BinaryKind::Gp => {
                    debug_assert_eq!(ea.tail, eb.head);
                    let s = ctx.projection(graph, store, &format!("{}.s", p), ea.head, span_reprs[ea.head], true)?;
                    let mid =
                        ctx.projection(graph, store, &format!("{}.mid", p), ea.tail, span_reprs[ea.tail], true)?;
                    let e = ctx.projection(graph, store, &format!("{}.e", p), eb.tail, span_reprs[eb.tail], true)?;
                    let sm = graph.mul(s, mid)?;
                    graph.mul(sm, e)?
                }
            };
            combined
        } else {
            graph.constant(Tensor::full(&[1, d], 1.0))?
        };
        let t1 = self.binary_table(graph, store, ctx, f, Slot::First, ea.task)?;
        let t2 = self.binary_table(graph, store, ctx, f, Slot::Second, eb.task)?;
        let r1 = graph.value(t1).shape()[0];
        let r2 = graph.value(t2).shape()[0];
        // tensor[m][n] = sum_a t1[m,a] * t2[n,a] * c[a]
        let t1r = graph.reshape(t1, vec![r1, 1, d])?;
        let t2r = graph.reshape(t2, vec![1, r2, d])?;
        let pair = graph.mul(t1r, t2r)?;
        let scaled = graph.mul(pair, c)?;
        graph.sum_axis(scaled, 2)
    }

    /// The label table for one slot of a binary factor, [labels, d].
    fn binary_table(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        ctx: &mut ScoreContext,
        f: BinaryFactor,
        slot: Slot,
        task: EdgeTask,
    ) -> Result<NodeId> {
        let p = binary_prefix(f.case, f.kind);
        if self.settings.share_labels {
            // reuse the unary biaffine label matrix, transposed to [R, d]
            return ctx.shared_edge_table(graph, store, task);
        }
        let name = match f.case {
            FactorCase::HomoI | FactorCase::HomoII => {
                if f.kind == BinaryKind::Gp {
                    match slot {
                        Slot::First => format!("{}.labels1", p),
                        Slot::Second => format!("{}.labels2", p),
                    }
                } else {
                    format!("{}.labels", p)
                }
            }
            FactorCase::HeteI => match task {
                EdgeTask::Role => format!("{}.role_labels", p),
                EdgeTask::Relation => format!("{}.rel_labels", p),
            },
            _ => unreachable!("ternary cases have no binary tables"),
        };
        graph.param(store, &name)
    }

    fn ternary_tensor(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        ctx: &mut ScoreContext,
        span_reprs: &[NodeId],
        edges: &[EdgeInstance],
        f: TernaryFactor,
    ) -> Result<NodeId> {
        let d = self.settings.dims.ternary;
        let edge = edges[f.edge];
        let p = ternary_prefix(f.case);
        let c = if self.settings.node_reps {
            let s = ctx.projection(graph, store, &format!("{}.s", p), edge.head, span_reprs[edge.head], true)?;
            let e = ctx.projection(graph, store, &format!("{}.e", p), edge.tail, span_reprs[edge.tail], true)?;
            graph.mul(s, e)?
        } else {
            graph.constant(Tensor::full(&[1, d], 1.0))?
        };
        let (head_t, tail_t, edge_t) = self.ternary_tables(graph, store, ctx, f.case)?;
        let np = graph.value(head_t).shape()[0];
        let nq = graph.value(tail_t).shape()[0];
        // tensor[p][q][m] = sum_a head[p,a] * tail[q,a] * edge[m,a] * c[a]
        let hp = graph.reshape(head_t, vec![np, 1, 1, d])?;
        let tq = graph.reshape(tail_t, vec![1, nq, 1, d])?;
        let ht = graph.mul(hp, tq)?;
        let hte = graph.mul(ht, edge_t)?; // [np, nq, nm, d] via trailing broadcast
        let scaled = graph.mul(hte, c)?;
        graph.sum_axis(scaled, 3)
    }

    fn ternary_tables(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        ctx: &mut ScoreContext,
        case: FactorCase,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let p = ternary_prefix(case);
        if self.settings.share_labels {
            let (head_kind, edge_task) = match case {
                FactorCase::HeteII => (NodeKind::Trigger, EdgeTask::Role),
                FactorCase::HeteIII => (NodeKind::Entity, EdgeTask::Relation),
                _ => unreachable!(),
            };
            let head = ctx.shared_node_table(graph, store, head_kind)?;
            let tail = ctx.shared_node_table(graph, store, NodeKind::Entity)?;
            let edge = ctx.shared_edge_table(graph, store, edge_task)?;
            return Ok((head, tail, edge));
        }
        Ok((
            graph.param(store, &format!("{}.head_labels", p))?,
            graph.param(store, &format!("{}.tail_labels", p))?,
            graph.param(store, &format!("{}.edge_labels", p))?,
        ))
    }
}

enum Slot {
    First,
    Second,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn case_edge_task(case: FactorCase) -> EdgeTask {
    match case {
        FactorCase::HomoI | FactorCase::HeteII => EdgeTask::Role,
        FactorCase::HomoII | FactorCase::HeteIII => EdgeTask::Relation,
        FactorCase::HeteI => unreachable!("hete-i spans both tasks"),
    }
}

fn ternary_label_counts(schema: &LabelSchema, case: FactorCase) -> (usize, usize, usize) {
    match case {
        FactorCase::HeteII => (
            schema.event_types.len().max(1),
            schema.entity_types.len().max(1),
            schema.edge_label_count(EdgeTask::Role),
        ),
        FactorCase::HeteIII => (
            schema.entity_types.len().max(1),
            schema.entity_types.len().max(1),
            schema.edge_label_count(EdgeTask::Relation),
        ),
        _ => unreachable!(),
    }
}

fn unary_edge_prefix(task: EdgeTask) -> &'static str {
    match task {
        EdgeTask::Role => "score.u-edge.role",
        EdgeTask::Relation => "score.u-edge.relation",
    }
}

fn binary_prefix(case: FactorCase, kind: BinaryKind) -> String {
    let k = match kind {
        BinaryKind::Sib => "sib",
        BinaryKind::Cop => "cop",
        BinaryKind::Gp => "gp",
    };
    format!("score.bi.{}.{}", case, k)
}

fn ternary_prefix(case: FactorCase) -> String {
    format!("score.ter.{}", case)
}

/// Per-sentence caches: node projections (so a node's head/tail vectors are
/// computed once per scorer) and shared label tables for the Share variant.
pub struct ScoreContext {
    projections: HashMap<(usize, String), NodeId>,
    tables: HashMap<String, NodeId>,
}

impl ScoreContext {
    pub fn new() -> Self {
        Self {
            projections: HashMap::new(),
            tables: HashMap::new(),
        }
    }

    fn projection(
        &mut self,
        graph: &mut Graph,
        store: &ParameterStore,
        prefix: &str,
        node_idx: usize,
        span_repr: NodeId,
        with_dropout: bool,
    ) -> Result<NodeId> {
        let key = (node_idx, prefix.to_string());
        if let Some(&id) = self.projections.get(&key) {
            return Ok(id);
        }
        let x = if with_dropout {
            graph.dropout(span_repr)?
        } else {
            span_repr
        };
        let id = nn::linear(graph, store, prefix, x)?;
        self.projections.insert(key, id);
        Ok(id)
    }

    fn shared_edge_table(
        &mut self,
        graph: &mut Graph,
        store: &ParameterStore,
        task: EdgeTask,
    ) -> Result<NodeId> {
        let key = format!("edge:{:?}", task);
        if let Some(&id) = self.tables.get(&key) {
            return Ok(id);
        }
        let h = graph.param(store, &format!("{}.h", unary_edge_prefix(task)))?;
        let id = graph.transpose2(h)?;
        self.tables.insert(key, id);
        Ok(id)
    }

    fn shared_node_table(
        &mut self,
        graph: &mut Graph,
        store: &ParameterStore,
        kind: NodeKind,
    ) -> Result<NodeId> {
        let key = format!("node:{:?}", kind);
        if let Some(&id) = self.tables.get(&key) {
            return Ok(id);
        }
        let name = match kind {
            NodeKind::Trigger => "score.u-node.trigger.l2.w",
            NodeKind::Entity => "score.u-node.entity.l2.w",
        };
        let w = graph.param(store, name)?;
        let id = graph.transpose2(w)?;
        self.tables.insert(key, id);
        Ok(id)
    }
}

impl Default for ScoreContext {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RunMode;
    use crate::schema::{candidate_edges, enumerate_factors, NodeInstance, Span};
    use rand_chacha::rand_core::SeedableRng;

    fn tiny_schema() -> LabelSchema {
        LabelSchema::new(
            vec!["Attack".into(), "Move".into()],
            vec!["PER".into(), "ORG".into()],
            vec!["Agent".into(), "Target".into()],
            vec!["Part".into(), "Soc".into()],
        )
        .unwrap()
    }

    fn tiny_dims() -> ScoringDims {
        ScoringDims {
            unary_entity_hidden: 6,
            unary_trigger_hidden: 6,
            unary_relation: 5,
            unary_role: 5,
            binary: 4,
            ternary: 4,
        }
    }

    fn nodes_1t2e() -> Vec<NodeInstance> {
        vec![
            NodeInstance::new(Span::new(0, 0).unwrap(), NodeKind::Trigger),
            NodeInstance::new(Span::new(1, 1).unwrap(), NodeKind::Entity),
            NodeInstance::new(Span::new(2, 2).unwrap(), NodeKind::Entity),
        ]
    }

    fn score_fixture(settings: ScoringSettings) -> (Graph, PotentialSet, LabelSchema) {
        let schema = tiny_schema();
        let scorers = Scorers::new(schema.clone(), settings, 3).unwrap();
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        scorers.define_params(&mut store, &mut rng).unwrap();
        let mut graph = Graph::new(RunMode::Eval);
        let nodes = nodes_1t2e();
        let edges = candidate_edges(&nodes);
        let cases = scorers.settings.cases.clone();
        let factors = enumerate_factors(&edges, &cases).unwrap();
        let reprs: Vec<NodeId> = (0..nodes.len())
            .map(|i| {
                graph
                    .constant(
                        Tensor::matrix(1, 3, vec![0.3 * i as f64 + 0.1, -0.2, 0.5]).unwrap(),
                    )
                    .unwrap()
            })
            .collect();
        let pots = scorers
            .score_sentence(&mut graph, &store, &reprs, &nodes, &edges, &factors)
            .unwrap();
        (graph, pots, schema)
    }

    #[test]
    fn unary_shapes_match_label_sets() {
        let settings = ScoringSettings {
            dims: tiny_dims(),
            ..Default::default()
        };
        let (graph, pots, schema) = score_fixture(settings);
        assert_eq!(graph.value(pots.node_unary[0]).shape(), &[2]); // events
        assert_eq!(graph.value(pots.node_unary[1]).shape(), &[2]); // entities
        // first two edges are roles (3 labels with NULL), rest relations
        assert_eq!(
            graph.value(pots.edge_unary[0]).shape(),
            &[schema.role_labels.len()]
        );
        assert_eq!(
            graph.value(pots.edge_unary[2]).shape(),
            &[schema.relation_labels.len()]
        );
    }

    #[test]
    fn zero_head_projection_zeroes_edge_scores() {
        let schema = tiny_schema();
        let scorers = Scorers::new(
            schema.clone(),
            ScoringSettings {
                dims: tiny_dims(),
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        scorers.define_params(&mut store, &mut rng).unwrap();
        // zero the head projection of the relation scorer
        for suffix in ["w", "b"] {
            let t = store
                .value_mut(&format!("score.u-edge.relation.s.{}", suffix))
                .unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let mut graph = Graph::new(RunMode::Eval);
        let reprs = vec![
            graph
                .constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap())
                .unwrap(),
            graph
                .constant(Tensor::matrix(1, 3, vec![-1.0, 0.5, 2.0]).unwrap())
                .unwrap(),
        ];
        let mut ctx = ScoreContext::new();
        let scores = scorers
            .unary_edge_scores(&mut graph, &store, &mut ctx, &reprs, 0, 1, EdgeTask::Relation)
            .unwrap();
        assert!(graph.value(scores).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_biaffine_case() {
        // d=1: projections 2 and 3, H = [[1, -1]] -> scores [6, -6]
        let mut graph = Graph::new(RunMode::Eval);
        let s = graph.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap()).unwrap();
        let e = graph.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let h = graph
            .constant(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap())
            .unwrap();
        let prod = graph.mul(s, e).unwrap();
        let scores = graph.matmul(prod, h).unwrap();
        assert_eq!(graph.value(scores).data(), &[6.0, -6.0]);
    }

    #[test]
    fn zero_highorder_parameters_zero_tensors() {
        let settings = ScoringSettings {
            dims: tiny_dims(),
            cases: vec![FactorCase::HomoI, FactorCase::HeteIII],
            ..Default::default()
        };
        let schema = tiny_schema();
        let scorers = Scorers::new(schema, settings, 3).unwrap();
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        scorers.define_params(&mut store, &mut rng).unwrap();
        // zero every high-order parameter
        let names: Vec<String> = store
            .names()
            .filter(|n| n.starts_with("score.bi.") || n.starts_with("score.ter."))
            .map(String::from)
            .collect();
        for n in names {
            let t = store.value_mut(&n).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let mut graph = Graph::new(RunMode::Eval);
        let nodes = nodes_1t2e();
        let edges = candidate_edges(&nodes);
        let factors =
            enumerate_factors(&edges, &[FactorCase::HomoI, FactorCase::HeteIII]).unwrap();
        let reprs: Vec<NodeId> = (0..3)
            .map(|i| {
                graph
                    .constant(Tensor::matrix(1, 3, vec![i as f64, 1.0, -1.0]).unwrap())
                    .unwrap()
            })
            .collect();
        let pots = scorers
            .score_sentence(&mut graph, &store, &reprs, &nodes, &edges, &factors)
            .unwrap();
        assert!(!pots.binary.is_empty());
        assert!(!pots.ternary.is_empty());
        let tensors = pots
            .binary
            .iter()
            .map(|(_, t)| *t)
            .chain(pots.ternary.iter().map(|(_, t)| *t));
        for t in tensors {
            assert!(graph.value(t).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn sib_tensor_is_bitwise_symmetric() {
        let settings = ScoringSettings {
            dims: tiny_dims(),
            cases: vec![FactorCase::HomoI],
            ..Default::default()
        };
        let (graph, pots, _) = score_fixture(settings);
        let sibs: Vec<&(BinaryFactor, NodeId)> = pots
            .binary
            .iter()
            .filter(|(f, _)| f.kind == BinaryKind::Sib)
            .collect();
        assert!(!sibs.is_empty());
        for (_, t) in sibs {
            let v = graph.value(*t);
            let r = v.shape()[0];
            assert_eq!(v.shape()[0], v.shape()[1]);
            for m in 0..r {
                for n in 0..r {
                    assert_eq!(
                        v.get(&[m, n]).to_bits(),
                        v.get(&[n, m]).to_bits(),
                        "sib tensor must be symmetric"
                    );
                }
            }
        }
    }

    #[test]
    fn ternary_scalar_product_case() {
        // d4=1: components (1,2,3,1,1) -> 6
        let mut graph = Graph::new(RunMode::Eval);
        let c = graph.constant(Tensor::matrix(1, 1, vec![1.0 * 2.0]).unwrap()).unwrap();
        let head = graph.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let tail = graph.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let edge = graph.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let hp = graph.reshape(head, vec![1, 1, 1, 1]).unwrap();
        let tq = graph.reshape(tail, vec![1, 1, 1, 1]).unwrap();
        let ht = graph.mul(hp, tq).unwrap();
        let hte = graph.mul(ht, edge).unwrap();
        let scaled = graph.mul(hte, c).unwrap();
        let t = graph.sum_axis(scaled, 3).unwrap();
        assert_eq!(graph.value(t).data(), &[6.0]);
    }

    #[test]
    fn without_node_reps_tensors_ignore_spans() {
        let settings = ScoringSettings {
            dims: tiny_dims(),
            cases: vec![FactorCase::HeteIII],
            node_reps: false,
            ..Default::default()
        };
        let schema = tiny_schema();
        let scorers = Scorers::new(schema, settings, 3).unwrap();
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        scorers.define_params(&mut store, &mut rng).unwrap();
        let nodes = nodes_1t2e();
        let edges = candidate_edges(&nodes);
        let factors = enumerate_factors(&edges, &[FactorCase::HeteIII]).unwrap();
        let run = |offset: f64| {
            let mut graph = Graph::new(RunMode::Eval);
            let reprs: Vec<NodeId> = (0..3)
                .map(|i| {
                    graph
                        .constant(
                            Tensor::matrix(1, 3, vec![offset + i as f64, 0.5, -0.5]).unwrap(),
                        )
                        .unwrap()
                })
                .collect();
            let pots = scorers
                .score_sentence(&mut graph, &store, &reprs, &nodes, &edges, &factors)
                .unwrap();
            let (_, t) = pots.ternary[0];
            graph.value(t).data().to_vec()
        };
        assert_eq!(run(0.0), run(10.0));
    }

    #[test]
    fn share_variant_rejects_mismatched_dims() {
        let schema = tiny_schema();
        let settings = ScoringSettings {
            dims: ScoringDims {
                unary_relation: 5,
                ternary: 4,
                unary_entity_hidden: 4,
                ..tiny_dims()
            },
            cases: vec![FactorCase::HeteIII],
            share_labels: true,
            ..Default::default()
        };
        assert!(Scorers::new(schema, settings, 3).is_err());
    }

    #[test]
    fn share_variant_reuses_unary_tables() {
        let schema = tiny_schema();
        let dims = ScoringDims {
            unary_entity_hidden: 4,
            unary_trigger_hidden: 4,
            unary_relation: 4,
            unary_role: 4,
            binary: 4,
            ternary: 4,
        };
        let settings = ScoringSettings {
            dims,
            cases: vec![FactorCase::HeteIII],
            share_labels: true,
            node_reps: true,
        };
        let scorers = Scorers::new(schema, settings, 3).unwrap();
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        scorers.define_params(&mut store, &mut rng).unwrap();
        assert!(!store.names().any(|n| n.contains("edge_labels")));
        assert!(store.contains("score.ter.hete-iii.s.w"));
    }
}
