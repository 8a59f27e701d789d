//! Mean-field variational inference over the factor graph, plus exact
//! enumeration oracles for small instances.
//!
//! Posteriors start from normalized exponentiated unary potentials. Each
//! iteration aggregates messages — binary factors send label-expectation
//! sums to their two member edges (scaled by the per-kind alphas), ternary
//! factors send messages to their edge and to both endpoint nodes — and
//! renormalizes every variable. The whole update is built from graph ops,
//! so unfolding T iterations yields a differentiable inference network and
//! training backpropagates through it.
//!
//! The synchronous schedule updates everything from the previous step's
//! posteriors; the asynchronous schedule updates edge variables first and
//! lets node variables see the fresh edge posteriors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax_slice, Graph, NodeId, Tensor};
use crate::schema::{BinaryFactor, BinaryKind, EdgeInstance, TernaryFactor};
use crate::scoring::PotentialSet;

/// Message scale knobs, all in [0, 1]. When a single factor kind is active
/// its scale is 1; with several kinds active they may be learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaConfig {
    pub sib: f64,
    pub cop: f64,
    pub gp: f64,
    pub edge_binary: f64,
    pub edge_ternary: f64,
    pub node_head: f64,
    pub node_tail: f64,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self::all(1.0)
    }
}

impl AlphaConfig {
    pub fn all(v: f64) -> Self {
        Self {
            sib: v,
            cop: v,
            gp: v,
            edge_binary: v,
            edge_ternary: v,
            node_head: v,
            node_tail: v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sib", self.sib),
            ("cop", self.cop),
            ("gp", self.gp),
            ("edge_binary", self.edge_binary),
            ("edge_ternary", self.edge_ternary),
            ("node_head", self.node_head),
            ("node_tail", self.node_tail),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Inference(format!(
                    "alpha {} = {} outside [0, 1]",
                    name, v
                )));
            }
        }
        Ok(())
    }
}

/// One message scale: a fixed constant or a graph node (a squashed learned
/// parameter). Fixed 0 drops the term entirely and fixed 1 passes it
/// unscaled, which keeps the all-zero configuration bitwise equal to the
/// first-order path.
#[derive(Debug, Clone, Copy)]
pub enum AlphaTerm {
    Fixed(f64),
    Learned(NodeId),
}

impl AlphaTerm {
    fn apply(&self, graph: &mut Graph, x: NodeId) -> Result<Option<NodeId>> {
        match *self {
            AlphaTerm::Fixed(v) if v == 0.0 => Ok(None),
            AlphaTerm::Fixed(v) if v == 1.0 => Ok(Some(x)),
            AlphaTerm::Fixed(v) => Ok(Some(graph.scale(x, v)?)),
            AlphaTerm::Learned(id) => Ok(Some(graph.mul(x, id)?)),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, AlphaTerm::Fixed(v) if *v == 0.0)
    }
}

/// Alphas as used inside the unfolded inference network.
#[derive(Debug, Clone, Copy)]
pub struct MfviAlphas {
    pub sib: AlphaTerm,
    pub cop: AlphaTerm,
    pub gp: AlphaTerm,
    pub edge_binary: AlphaTerm,
    pub edge_ternary: AlphaTerm,
    pub node_head: AlphaTerm,
    pub node_tail: AlphaTerm,
}

impl MfviAlphas {
    pub fn fixed(a: &AlphaConfig) -> Self {
        Self {
            sib: AlphaTerm::Fixed(a.sib),
            cop: AlphaTerm::Fixed(a.cop),
            gp: AlphaTerm::Fixed(a.gp),
            edge_binary: AlphaTerm::Fixed(a.edge_binary),
            edge_ternary: AlphaTerm::Fixed(a.edge_ternary),
            node_head: AlphaTerm::Fixed(a.node_head),
            node_tail: AlphaTerm::Fixed(a.node_tail),
        }
    }

    fn kind_term(&self, kind: BinaryKind) -> AlphaTerm {
        match kind {
            BinaryKind::Sib => self.sib,
            BinaryKind::Cop => self.cop,
            BinaryKind::Gp => self.gp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Synchronous,
    Asynchronous,
}

/// Per-variable categorical posteriors, kept as graph nodes. `logits` are
/// the pre-normalization scores of the same step; the cross-entropy loss
/// reads log-probabilities from them via log-softmax.
pub struct PosteriorState {
    pub node_q: Vec<NodeId>,
    pub edge_q: Vec<NodeId>,
    pub node_logits: Vec<NodeId>,
    pub edge_logits: Vec<NodeId>,
}

impl PosteriorState {
    pub fn node_values(&self, graph: &Graph) -> Vec<Vec<f64>> {
        self.node_q
            .iter()
            .map(|&q| graph.value(q).data().to_vec())
            .collect()
    }

    pub fn edge_values(&self, graph: &Graph) -> Vec<Vec<f64>> {
        self.edge_q
            .iter()
            .map(|&q| graph.value(q).data().to_vec())
            .collect()
    }
}

/// Q(0): softmax of every unary potential.
pub fn init_posteriors(graph: &mut Graph, pots: &PotentialSet) -> Result<PosteriorState> {
    let mut node_q = Vec::with_capacity(pots.node_unary.len());
    for &u in &pots.node_unary {
        node_q.push(graph.softmax(u)?);
    }
    let mut edge_q = Vec::with_capacity(pots.edge_unary.len());
    for &u in &pots.edge_unary {
        edge_q.push(graph.softmax(u)?);
    }
    Ok(PosteriorState {
        node_q,
        edge_q,
        node_logits: pots.node_unary.clone(),
        edge_logits: pots.edge_unary.clone(),
    })
}

fn add_opt(
    graph: &mut Graph,
    slot: &mut Option<NodeId>,
    contribution: NodeId,
) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(acc) => graph.add(acc, contribution)?,
        None => contribution,
    });
    Ok(())
}

/// Binary-factor messages for every edge variable: each factor sends its
/// label tensor contracted with the partner edge's posterior, scaled by the
/// factor kind's alpha.
pub fn binary_messages(
    graph: &mut Graph,
    pots: &PotentialSet,
    edge_q: &[NodeId],
    alphas: &MfviAlphas,
) -> Result<Vec<Option<NodeId>>> {
    let mut messages: Vec<Option<NodeId>> = vec![None; edge_q.len()];
    for &(f, tensor) in &pots.binary {
        let term = alphas.kind_term(f.kind);
        if term.is_zero() {
            continue;
        }
        let (r1, r2) = {
            let s = graph.value(tensor).shape();
            (s[0], s[1])
        };
        // message to the first edge: tensor . q_second
        let q2 = graph.reshape(edge_q[f.second], vec![r2, 1])?;
        let to_first = graph.matmul(tensor, q2)?;
        let to_first = graph.reshape(to_first, vec![r1])?;
        if let Some(scaled) = term.apply(graph, to_first)? {
            add_opt(graph, &mut messages[f.first], scaled)?;
        }
        // message to the second edge: q_first . tensor
        let q1 = graph.reshape(edge_q[f.first], vec![1, r1])?;
        let to_second = graph.matmul(q1, tensor)?;
        let to_second = graph.reshape(to_second, vec![r2])?;
        if let Some(scaled) = term.apply(graph, to_second)? {
            add_opt(graph, &mut messages[f.second], scaled)?;
        }
    }
    Ok(messages)
}

/// Ternary-factor messages. Edge messages contract the tensor with both
/// endpoint posteriors. Node messages sum over every ternary factor the
/// node participates in; head-side and tail-side sums stay separate because
/// they are scaled by different alphas at update time.
pub struct TernaryMessages {
    pub edge: Vec<Option<NodeId>>,
    pub node_head: Vec<Option<NodeId>>,
    pub node_tail: Vec<Option<NodeId>>,
}

pub fn ternary_messages(
    graph: &mut Graph,
    pots: &PotentialSet,
    edges: &[EdgeInstance],
    node_q: &[NodeId],
    edge_q: &[NodeId],
    want_edge: bool,
    want_nodes: bool,
) -> Result<TernaryMessages> {
    let mut out = TernaryMessages {
        edge: vec![None; edge_q.len()],
        node_head: vec![None; node_q.len()],
        node_tail: vec![None; node_q.len()],
    };
    for &(f, tensor) in &pots.ternary {
        let e = edges[f.edge];
        let (np, nq, nm) = {
            let s = graph.value(tensor).shape();
            (s[0], s[1], s[2])
        };
        let flat = graph.reshape(tensor, vec![np, nq * nm])?;
        if want_edge {
            // F(edge = m) = sum_pq T[p,q,m] Qhead(p) Qtail(q)
            let qh = graph.reshape(node_q[e.head], vec![1, np])?;
            let tmp = graph.matmul(qh, flat)?; // [1, nq*nm]
            let tmp = graph.reshape(tmp, vec![nq, nm])?;
            let qt = graph.reshape(node_q[e.tail], vec![1, nq])?;
            let msg = graph.matmul(qt, tmp)?;
            let msg = graph.reshape(msg, vec![nm])?;
            add_opt(graph, &mut out.edge[f.edge], msg)?;
        }
        if want_nodes {
            // F(head = p) = sum_qm T[p,q,m] Qtail(q) Qedge(m)
            let qt_col = graph.reshape(node_q[e.tail], vec![nq, 1])?;
            let qe_row = graph.reshape(edge_q[f.edge], vec![1, nm])?;
            let outer = graph.matmul(qt_col, qe_row)?; // [nq, nm]
            let outer_col = graph.reshape(outer, vec![nq * nm, 1])?;
            let head_msg = graph.matmul(flat, outer_col)?; // [np, 1]
            let head_msg = graph.reshape(head_msg, vec![np])?;
            add_opt(graph, &mut out.node_head[e.head], head_msg)?;
            // F(tail = q) = sum_pm T[p,q,m] Qhead(p) Qedge(m)
            let qh_row = graph.reshape(node_q[e.head], vec![1, np])?;
            let tmp = graph.matmul(qh_row, flat)?; // [1, nq*nm]
            let tmp = graph.reshape(tmp, vec![nq, nm])?;
            let qe_col = graph.reshape(edge_q[f.edge], vec![nm, 1])?;
            let tail_msg = graph.matmul(tmp, qe_col)?; // [nq, 1]
            let tail_msg = graph.reshape(tail_msg, vec![nq])?;
            add_opt(graph, &mut out.node_tail[e.tail], tail_msg)?;
        }
    }
    Ok(out)
}

fn renormalize(
    graph: &mut Graph,
    unary: NodeId,
    terms: Vec<NodeId>,
) -> Result<(NodeId, NodeId)> {
    let mut logits = unary;
    for t in terms {
        logits = graph.add(logits, t)?;
    }
    let q = graph.softmax(logits)?;
    Ok((q, logits))
}

fn update_edges(
    graph: &mut Graph,
    pots: &PotentialSet,
    edges: &[EdgeInstance],
    state: &PosteriorState,
    alphas: &MfviAlphas,
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    let has_binary = !pots.binary.is_empty() && !alphas.edge_binary.is_zero();
    let has_ternary = !pots.ternary.is_empty() && !alphas.edge_ternary.is_zero();
    let bi = if has_binary {
        binary_messages(graph, pots, &state.edge_q, alphas)?
    } else {
        vec![None; state.edge_q.len()]
    };
    let ter = if has_ternary {
        ternary_messages(graph, pots, edges, &state.node_q, &state.edge_q, true, false)?.edge
    } else {
        vec![None; state.edge_q.len()]
    };
    let mut qs = Vec::with_capacity(state.edge_q.len());
    let mut logits_out = Vec::with_capacity(state.edge_q.len());
    for (i, &u) in pots.edge_unary.iter().enumerate() {
        let mut terms = Vec::new();
        if let Some(m) = bi[i] {
            if let Some(t) = alphas.edge_binary.apply(graph, m)? {
                terms.push(t);
            }
        }
        if let Some(m) = ter[i] {
            if let Some(t) = alphas.edge_ternary.apply(graph, m)? {
                terms.push(t);
            }
        }
        let (q, logits) = renormalize(graph, u, terms)?;
        qs.push(q);
        logits_out.push(logits);
    }
    Ok((qs, logits_out))
}

fn update_nodes(
    graph: &mut Graph,
    pots: &PotentialSet,
    edges: &[EdgeInstance],
    node_q: &[NodeId],
    edge_q: &[NodeId],
    alphas: &MfviAlphas,
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    let want = !pots.ternary.is_empty()
        && !(alphas.node_head.is_zero() && alphas.node_tail.is_zero());
    let ter = if want {
        ternary_messages(graph, pots, edges, node_q, edge_q, false, true)?
    } else {
        TernaryMessages {
            edge: vec![None; edge_q.len()],
            node_head: vec![None; node_q.len()],
            node_tail: vec![None; node_q.len()],
        }
    };
    let mut qs = Vec::with_capacity(node_q.len());
    let mut logits_out = Vec::with_capacity(node_q.len());
    for (i, &u) in pots.node_unary.iter().enumerate() {
        let mut terms = Vec::new();
        if let Some(m) = ter.node_head[i] {
            if let Some(t) = alphas.node_head.apply(graph, m)? {
                terms.push(t);
            }
        }
        if let Some(m) = ter.node_tail[i] {
            if let Some(t) = alphas.node_tail.apply(graph, m)? {
                terms.push(t);
            }
        }
        let (q, logits) = renormalize(graph, u, terms)?;
        qs.push(q);
        logits_out.push(logits);
    }
    Ok((qs, logits_out))
}

/// One MFVI iteration.
pub fn mfvi_step(
    graph: &mut Graph,
    pots: &PotentialSet,
    edges: &[EdgeInstance],
    state: &PosteriorState,
    alphas: &MfviAlphas,
    schedule: Schedule,
) -> Result<PosteriorState> {
    match schedule {
        Schedule::Synchronous => {
            let (edge_q, edge_logits) = update_edges(graph, pots, edges, state, alphas)?;
            let (node_q, node_logits) =
                update_nodes(graph, pots, edges, &state.node_q, &state.edge_q, alphas)?;
            Ok(PosteriorState {
                node_q,
                edge_q,
                node_logits,
                edge_logits,
            })
        }
        Schedule::Asynchronous => {
            // edges first, then nodes read the fresh edge posteriors
            let (edge_q, edge_logits) = update_edges(graph, pots, edges, state, alphas)?;
            let (node_q, node_logits) =
                update_nodes(graph, pots, edges, &state.node_q, &edge_q, alphas)?;
            Ok(PosteriorState {
                node_q,
                edge_q,
                node_logits,
                edge_logits,
            })
        }
    }
}

/// T unfolded iterations from the unary initialization.
pub fn run_mfvi(
    graph: &mut Graph,
    pots: &PotentialSet,
    edges: &[EdgeInstance],
    alphas: &MfviAlphas,
    iterations: usize,
    schedule: Schedule,
) -> Result<PosteriorState> {
    let mut state = init_posteriors(graph, pots)?;
    for _ in 0..iterations {
        state = mfvi_step(graph, pots, edges, &state, alphas, schedule)?;
    }
    Ok(state)
}

/// Per-variable argmax; ties go to the lowest label id.
pub fn decode(distributions: &[Vec<f64>]) -> Vec<usize> {
    distributions.iter().map(|d| argmax_slice(d)).collect()
}

// ---- exact enumeration oracles ----

const MAX_JOINT_STATES: u128 = 1_000_000;

/// Exact marginals and MAP of the alpha-weighted Gibbs distribution over
/// the same factor graph MFVI runs on, by exhaustive enumeration. Binary
/// factors are weighted by `edge_binary * kind_alpha`; ternary factors
/// require equal edge/head/tail scales and use that common weight, so both
/// procedures target the same distribution.
pub struct ExactResult {
    pub node_marginals: Vec<Vec<f64>>,
    pub edge_marginals: Vec<Vec<f64>>,
    pub map_nodes: Vec<usize>,
    pub map_edges: Vec<usize>,
    pub log_partition: f64,
}

pub struct ValuePotentials {
    pub node_unary: Vec<Vec<f64>>,
    pub edge_unary: Vec<Vec<f64>>,
    pub binary: Vec<(BinaryFactor, Tensor)>,
    pub ternary: Vec<(TernaryFactor, Tensor)>,
}

impl ValuePotentials {
    /// Snapshots graph-node potentials into plain values.
    pub fn from_graph(graph: &Graph, pots: &PotentialSet) -> Self {
        Self {
            node_unary: pots
                .node_unary
                .iter()
                .map(|&n| graph.value(n).data().to_vec())
                .collect(),
            edge_unary: pots
                .edge_unary
                .iter()
                .map(|&n| graph.value(n).data().to_vec())
                .collect(),
            binary: pots
                .binary
                .iter()
                .map(|&(f, n)| (f, graph.value(n).clone()))
                .collect(),
            ternary: pots
                .ternary
                .iter()
                .map(|&(f, n)| (f, graph.value(n).clone()))
                .collect(),
        }
    }
}

pub fn exact_inference(
    pots: &ValuePotentials,
    edges: &[EdgeInstance],
    alphas: &AlphaConfig,
) -> Result<ExactResult> {
    let ternary_weight = alphas.edge_ternary;
    if !pots.ternary.is_empty()
        && (alphas.node_head != ternary_weight || alphas.node_tail != ternary_weight)
    {
        return Err(Error::Inference(
            "exact oracle needs equal edge/head/tail ternary scales".into(),
        ));
    }
    let n_nodes = pots.node_unary.len();
    let sizes: Vec<usize> = pots
        .node_unary
        .iter()
        .chain(pots.edge_unary.iter())
        .map(|u| u.len())
        .collect();
    let mut total: u128 = 1;
    for &s in &sizes {
        if s == 0 {
            return Err(Error::Inference("variable with empty label set".into()));
        }
        total = total.saturating_mul(s as u128);
        if total > MAX_JOINT_STATES {
            return Err(Error::Inference(format!(
                "joint state space exceeds {} assignments",
                MAX_JOINT_STATES
            )));
        }
    }

    let mut assignment = vec![0usize; sizes.len()];
    let mut log_z = f64::NEG_INFINITY;
    let mut marg: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![f64::NEG_INFINITY; s]).collect();
    let mut best_score = f64::NEG_INFINITY;
    let mut best = assignment.clone();

    loop {
        let score = assignment_score(pots, edges, alphas, ternary_weight, n_nodes, &assignment);
        log_z = log_add(log_z, score);
        for (v, &l) in assignment.iter().enumerate() {
            marg[v][l] = log_add(marg[v][l], score);
        }
        if score > best_score {
            best_score = score;
            best.copy_from_slice(&assignment);
        }
        // odometer: lowest-index variable cycles fastest so the first
        // maximum found is the lexicographically smallest MAP
        let mut pos = 0;
        loop {
            if pos == sizes.len() {
                let node_marginals = marg[..n_nodes]
                    .iter()
                    .map(|m| m.iter().map(|&x| (x - log_z).exp()).collect())
                    .collect();
                let edge_marginals = marg[n_nodes..]
                    .iter()
                    .map(|m| m.iter().map(|&x| (x - log_z).exp()).collect())
                    .collect();
                return Ok(ExactResult {
                    node_marginals,
                    edge_marginals,
                    map_nodes: best[..n_nodes].to_vec(),
                    map_edges: best[n_nodes..].to_vec(),
                    log_partition: log_z,
                });
            }
            assignment[pos] += 1;
            if assignment[pos] < sizes[pos] {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

fn assignment_score(
    pots: &ValuePotentials,
    edges: &[EdgeInstance],
    alphas: &AlphaConfig,
    ternary_weight: f64,
    n_nodes: usize,
    assignment: &[usize],
) -> f64 {
    let mut score = 0.0;
    for (i, u) in pots.node_unary.iter().enumerate() {
        score += u[assignment[i]];
    }
    for (e, u) in pots.edge_unary.iter().enumerate() {
        score += u[assignment[n_nodes + e]];
    }
    for (f, tensor) in &pots.binary {
        let kind_alpha = match f.kind {
            BinaryKind::Sib => alphas.sib,
            BinaryKind::Cop => alphas.cop,
            BinaryKind::Gp => alphas.gp,
        };
        let w = alphas.edge_binary * kind_alpha;
        if w == 0.0 {
            continue;
        }
        let m = assignment[n_nodes + f.first];
        let n = assignment[n_nodes + f.second];
        score += w * tensor.get(&[m, n]);
    }
    for (f, tensor) in &pots.ternary {
        if ternary_weight == 0.0 {
            continue;
        }
        let e = edges[f.edge];
        let p = assignment[e.head];
        let q = assignment[e.tail];
        let m = assignment[n_nodes + f.edge];
        score += ternary_weight * tensor.get(&[p, q, m]);
    }
    score
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
