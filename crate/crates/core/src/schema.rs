//! Label schemas, spans, instance graphs and high-order factor enumeration.
//!
//! Nodes are trigger or entity spans; edges are directed role candidates
//! (trigger to entity) or relation candidates (entity to entity). Binary
//! factors join two edges sharing an endpoint — sibling (shared head),
//! co-parent (shared tail), grandparent (tail-to-head chain) — and ternary
//! factors join an edge with its two endpoint nodes. Which combinations are
//! enumerated is governed by the factor case:
//!
//! * `HomoI`   — sib + cop over role-edge pairs (no gp: a trigger is never
//!   an argument of another trigger's edge chain)
//! * `HomoII`  — sib + cop + gp over relation-edge pairs
//! * `HeteI`   — cop + gp over mixed relation/role pairs (no sib: a role
//!   edge and a relation edge cannot share a head node)
//! * `HeteII`  — one ternary factor per role edge
//! * `HeteIII` — one ternary factor per relation edge

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NULL_LABEL: usize = 0;

/// Task-specific label inventories. Edge label sets carry NULL at index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub event_types: Vec<String>,
    pub entity_types: Vec<String>,
    /// Role labels including NULL at index 0.
    pub role_labels: Vec<String>,
    /// Relation labels including NULL at index 0.
    pub relation_labels: Vec<String>,
    /// Relation type names whose two arguments are interchangeable for
    /// evaluation purposes.
    #[serde(default)]
    pub symmetric_relations: Vec<String>,
}

impl LabelSchema {
    /// Builds a schema from bare type inventories, prepending NULL to the
    /// edge label sets.
    pub fn new(
        event_types: Vec<String>,
        entity_types: Vec<String>,
        role_types: Vec<String>,
        relation_types: Vec<String>,
    ) -> Result<Self> {
        let mut role_labels = vec!["NULL".to_string()];
        role_labels.extend(role_types);
        let mut relation_labels = vec!["NULL".to_string()];
        relation_labels.extend(relation_types);
        let schema = Self {
            event_types,
            entity_types,
            role_labels,
            relation_labels,
            symmetric_relations: Vec::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in [
            ("event", &self.event_types),
            ("entity", &self.entity_types),
            ("role", &self.role_labels),
            ("relation", &self.relation_labels),
        ] {
            let mut seen = std::collections::HashSet::new();
            for label in set {
                if !seen.insert(label) {
                    return Err(Error::Schema(format!(
                        "duplicate {} label `{}`",
                        name, label
                    )));
                }
            }
        }
        for (name, set) in [
            ("role", &self.role_labels),
            ("relation", &self.relation_labels),
        ] {
            if set.first().map(String::as_str) != Some("NULL") {
                return Err(Error::Schema(format!(
                    "{} label set must contain NULL at index 0",
                    name
                )));
            }
        }
        for s in &self.symmetric_relations {
            if !self.relation_labels.contains(s) {
                return Err(Error::Schema(format!(
                    "symmetric relation `{}` is not a declared relation label",
                    s
                )));
            }
        }
        Ok(())
    }

    pub fn node_label_count(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Trigger => self.event_types.len(),
            NodeKind::Entity => self.entity_types.len(),
        }
    }

    pub fn edge_label_count(&self, task: EdgeTask) -> usize {
        match task {
            EdgeTask::Role => self.role_labels.len(),
            EdgeTask::Relation => self.relation_labels.len(),
        }
    }

    pub fn node_label_id(&self, kind: NodeKind, name: &str) -> Option<usize> {
        match kind {
            NodeKind::Trigger => self.event_types.iter().position(|l| l == name),
            NodeKind::Entity => self.entity_types.iter().position(|l| l == name),
        }
    }

    pub fn edge_label_id(&self, task: EdgeTask, name: &str) -> Option<usize> {
        match task {
            EdgeTask::Role => self.role_labels.iter().position(|l| l == name),
            EdgeTask::Relation => self.relation_labels.iter().position(|l| l == name),
        }
    }

    pub fn is_symmetric_relation(&self, label_id: usize) -> bool {
        self.relation_labels
            .get(label_id)
            .map(|name| self.symmetric_relations.contains(name))
            .unwrap_or(false)
    }
}

/// Inclusive token span `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end < start {
            return Err(Error::Schema(format!(
                "span end {} precedes start {}",
                end, start
            )));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn in_range(&self, sentence_len: usize) -> bool {
        self.end < sentence_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Trigger,
    Entity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeTask {
    Role,
    Relation,
}

/// A graph node: a span with a kind and (possibly unset) label id into the
/// kind's label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeInstance {
    pub span: Span,
    pub kind: NodeKind,
    pub label: Option<usize>,
}

impl NodeInstance {
    pub fn new(span: Span, kind: NodeKind) -> Self {
        Self {
            span,
            kind,
            label: None,
        }
    }
}

/// A directed candidate edge between node indices, with a (possibly unset)
/// label id into the task's label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeInstance {
    pub head: usize,
    pub tail: usize,
    pub task: EdgeTask,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryKind {
    Sib,
    Cop,
    Gp,
}

/// Factor cases, split by whether the joined variables belong to the same
/// task (homo) or different tasks (hete).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorCase {
    #[serde(rename = "homo-i")]
    HomoI,
    #[serde(rename = "homo-ii")]
    HomoII,
    #[serde(rename = "hete-i")]
    HeteI,
    #[serde(rename = "hete-ii")]
    HeteII,
    #[serde(rename = "hete-iii")]
    HeteIII,
}

impl FactorCase {
    pub fn is_binary(&self) -> bool {
        matches!(self, FactorCase::HomoI | FactorCase::HomoII | FactorCase::HeteI)
    }

    pub fn is_ternary(&self) -> bool {
        !self.is_binary()
    }
}

impl std::fmt::Display for FactorCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FactorCase::HomoI => "homo-i",
            FactorCase::HomoII => "homo-ii",
            FactorCase::HeteI => "hete-i",
            FactorCase::HeteII => "hete-ii",
            FactorCase::HeteIII => "hete-iii",
        };
        write!(f, "{}", s)
    }
}

impl std::str::FromStr for FactorCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homo-i" => Ok(FactorCase::HomoI),
            "homo-ii" => Ok(FactorCase::HomoII),
            "hete-i" => Ok(FactorCase::HeteI),
            "hete-ii" => Ok(FactorCase::HeteII),
            "hete-iii" => Ok(FactorCase::HeteIII),
            other => Err(Error::Schema(format!("unknown factor case `{}`", other))),
        }
    }
}

/// A binary factor over two edges. `first`/`second` index into the edge
/// list; for gp the chain order is `first` then `second`
/// (tail(first) == head(second)). For sib and cop the listing order is
/// normalized to lowest edge index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryFactor {
    pub kind: BinaryKind,
    pub case: FactorCase,
    pub first: usize,
    pub second: usize,
}

/// A ternary factor: one candidate edge joined with its head and tail node
/// variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TernaryFactor {
    pub case: FactorCase,
    pub edge: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FactorIndex {
    pub binary: Vec<BinaryFactor>,
    pub ternary: Vec<TernaryFactor>,
}

impl FactorIndex {
    pub fn merge(&mut self, other: FactorIndex) {
        self.binary.extend(other.binary);
        self.ternary.extend(other.ternary);
    }
}

/// Enumerates candidate edges for the given nodes: every ordered
/// (trigger, entity) pair as a role candidate and every ordered
/// (entity, entity) pair with distinct endpoints as a relation candidate,
/// sorted by head index then tail index within each task.
pub fn candidate_edges(nodes: &[NodeInstance]) -> Vec<EdgeInstance> {
    let mut edges = Vec::new();
    for (i, head) in nodes.iter().enumerate() {
        if head.kind != NodeKind::Trigger {
            continue;
        }
        for (j, tail) in nodes.iter().enumerate() {
            if tail.kind == NodeKind::Entity {
                edges.push(EdgeInstance {
                    head: i,
                    tail: j,
                    task: EdgeTask::Role,
                    label: None,
                });
            }
        }
    }
    for (i, head) in nodes.iter().enumerate() {
        if head.kind != NodeKind::Entity {
            continue;
        }
        for (j, tail) in nodes.iter().enumerate() {
            if i != j && tail.kind == NodeKind::Entity {
                edges.push(EdgeInstance {
                    head: i,
                    tail: j,
                    task: EdgeTask::Relation,
                    label: None,
                });
            }
        }
    }
    edges
}

fn pair_case_ok(case: FactorCase, a: EdgeTask, b: EdgeTask) -> bool {
    match case {
        FactorCase::HomoI => a == EdgeTask::Role && b == EdgeTask::Role,
        FactorCase::HomoII => a == EdgeTask::Relation && b == EdgeTask::Relation,
        FactorCase::HeteI => a != b,
        _ => false,
    }
}

/// Enumerates the binary factors of one case over the candidate edges.
/// Each unordered sib/cop pair appears once; gp chains appear once per
/// directed chain. All three participating nodes are distinct.
pub fn enumerate_binary_factors(edges: &[EdgeInstance], case: FactorCase) -> Result<FactorIndex> {
    if !case.is_binary() {
        return Err(Error::Schema(format!(
            "case {} does not define binary factors",
            case
        )));
    }
    let mut index = FactorIndex::default();
    for a in 0..edges.len() {
        for b in (a + 1)..edges.len() {
            let (ea, eb) = (edges[a], edges[b]);
            if !pair_case_ok(case, ea.task, eb.task) {
                continue;
            }
            // sib: shared head, distinct tails
            if case != FactorCase::HeteI && ea.head == eb.head && ea.tail != eb.tail {
                index.binary.push(BinaryFactor {
                    kind: BinaryKind::Sib,
                    case,
                    first: a,
                    second: b,
                });
            }
            // cop: shared tail, distinct heads
            if ea.tail == eb.tail && ea.head != eb.head {
                index.binary.push(BinaryFactor {
                    kind: BinaryKind::Cop,
                    case,
                    first: a,
                    second: b,
                });
            }
        }
    }
    if case != FactorCase::HomoI {
        // gp: directed chains i -> j -> k over three distinct nodes
        for a in 0..edges.len() {
            for b in 0..edges.len() {
                if a == b {
                    continue;
                }
                let (ea, eb) = (edges[a], edges[b]);
                if !pair_case_ok(case, ea.task, eb.task) && !pair_case_ok(case, eb.task, ea.task) {
                    continue;
                }
                if ea.tail == eb.head && ea.head != eb.tail {
                    index.binary.push(BinaryFactor {
                        kind: BinaryKind::Gp,
                        case,
                        first: a,
                        second: b,
                    });
                }
            }
        }
    }
    Ok(index)
}

/// Enumerates ternary factors: one per candidate edge of the case's task.
pub fn enumerate_ternary_factors(edges: &[EdgeInstance], case: FactorCase) -> Result<FactorIndex> {
    let task = match case {
        FactorCase::HeteII => EdgeTask::Role,
        FactorCase::HeteIII => EdgeTask::Relation,
        other => {
            return Err(Error::Schema(format!(
                "case {} does not define ternary factors",
                other
            )))
        }
    };
    let mut index = FactorIndex::default();
    for (e, edge) in edges.iter().enumerate() {
        if edge.task == task {
            index.ternary.push(TernaryFactor { case, edge: e });
        }
    }
    Ok(index)
}

/// Enumerates all factors for a set of active cases.
pub fn enumerate_factors(edges: &[EdgeInstance], cases: &[FactorCase]) -> Result<FactorIndex> {
    let mut index = FactorIndex::default();
    for &case in cases {
        if case.is_binary() {
            index.merge(enumerate_binary_factors(edges, case)?);
        } else {
            index.merge(enumerate_ternary_factors(edges, case)?);
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(kind: NodeKind, pos: usize) -> NodeInstance {
        NodeInstance::new(Span::new(pos, pos).unwrap(), kind)
    }

    fn graph(triggers: usize, entities: usize) -> Vec<NodeInstance> {
        let mut nodes = Vec::new();
        for i in 0..triggers {
            nodes.push(node(NodeKind::Trigger, i));
        }
        for i in 0..entities {
            nodes.push(node(NodeKind::Entity, triggers + i));
        }
        nodes
    }

    #[test]
    fn candidate_counts_one_trigger_two_entities() {
        let edges = candidate_edges(&graph(1, 2));
        let roles = edges.iter().filter(|e| e.task == EdgeTask::Role).count();
        let rels = edges.iter().filter(|e| e.task == EdgeTask::Relation).count();
        assert_eq!(roles, 2);
        assert_eq!(rels, 2);
    }

    #[test]
    fn candidate_counts_three_entities() {
        let edges = candidate_edges(&graph(0, 3));
        assert_eq!(edges.len(), 6); // 3x2 ordered pairs, relations only
        assert!(edges.iter().all(|e| e.task == EdgeTask::Relation));
    }

    #[test]
    fn no_candidates_without_entities() {
        assert!(candidate_edges(&graph(1, 0)).is_empty());
    }

    #[test]
    fn relation_candidates_cover_both_orientations() {
        let edges = candidate_edges(&graph(0, 3));
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(edges.iter().any(|e| e.head == i && e.tail == j));
                }
            }
        }
    }

    #[test]
    fn ordering_is_head_then_tail() {
        let edges = candidate_edges(&graph(2, 2));
        let roles: Vec<(usize, usize)> = edges
            .iter()
            .filter(|e| e.task == EdgeTask::Role)
            .map(|e| (e.head, e.tail))
            .collect();
        assert_eq!(roles, vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
    }

    #[test]
    fn homo_i_three_shared_head_roles() {
        // 3 role edges sharing one trigger head: C(3,2) = 3 sib, no cop/gp
        let edges = candidate_edges(&graph(1, 3));
        let roles: Vec<EdgeInstance> = edges
            .into_iter()
            .filter(|e| e.task == EdgeTask::Role)
            .collect();
        let idx = enumerate_binary_factors(&roles, FactorCase::HomoI).unwrap();
        assert_eq!(
            idx.binary
                .iter()
                .filter(|f| f.kind == BinaryKind::Sib)
                .count(),
            3
        );
        assert_eq!(
            idx.binary
                .iter()
                .filter(|f| f.kind != BinaryKind::Sib)
                .count(),
            0
        );
    }

    #[test]
    fn homo_ii_chain_produces_one_gp() {
        // relation edges e12 and e23 chain through node 2
        let edges = vec![
            EdgeInstance {
                head: 1,
                tail: 2,
                task: EdgeTask::Relation,
                label: None,
            },
            EdgeInstance {
                head: 2,
                tail: 3,
                task: EdgeTask::Relation,
                label: None,
            },
        ];
        let idx = enumerate_binary_factors(&edges, FactorCase::HomoII).unwrap();
        let gps: Vec<&BinaryFactor> = idx
            .binary
            .iter()
            .filter(|f| f.kind == BinaryKind::Gp)
            .collect();
        assert_eq!(gps.len(), 1);
        assert_eq!((gps[0].first, gps[0].second), (0, 1));
        assert_eq!(
            idx.binary
                .iter()
                .filter(|f| f.kind != BinaryKind::Gp)
                .count(),
            0
        );
    }

    #[test]
    fn hete_i_shared_tail_produces_cop_only() {
        // role edge t->e2 (nodes 0->2) and relation edge e1->e2 (1->2)
        let edges = vec![
            EdgeInstance {
                head: 0,
                tail: 2,
                task: EdgeTask::Role,
                label: None,
            },
            EdgeInstance {
                head: 1,
                tail: 2,
                task: EdgeTask::Relation,
                label: None,
            },
        ];
        let idx = enumerate_binary_factors(&edges, FactorCase::HeteI).unwrap();
        assert_eq!(idx.binary.len(), 1);
        assert_eq!(idx.binary[0].kind, BinaryKind::Cop);
    }

    #[test]
    fn hete_i_produces_no_sib() {
        // a role edge and a relation edge can never share a head node, and
        // the enumeration must not emit hete sib factors regardless
        let nodes = graph(1, 3);
        let edges = candidate_edges(&nodes);
        let idx = enumerate_binary_factors(&edges, FactorCase::HeteI).unwrap();
        assert!(idx.binary.iter().all(|f| f.kind != BinaryKind::Sib));
        // role t->e1 chains into relation e1->e2: gp factors exist
        assert!(idx.binary.iter().any(|f| f.kind == BinaryKind::Gp));
    }

    #[test]
    fn gp_excludes_two_cycles() {
        // e12 and e21 chain back onto themselves and must not pair
        let edges = vec![
            EdgeInstance {
                head: 1,
                tail: 2,
                task: EdgeTask::Relation,
                label: None,
            },
            EdgeInstance {
                head: 2,
                tail: 1,
                task: EdgeTask::Relation,
                label: None,
            },
        ];
        let idx = enumerate_binary_factors(&edges, FactorCase::HomoII).unwrap();
        assert!(idx.binary.is_empty());
    }

    #[test]
    fn ternary_one_per_matching_edge() {
        let nodes = graph(1, 3);
        let edges = candidate_edges(&nodes);
        let roles = enumerate_ternary_factors(&edges, FactorCase::HeteII).unwrap();
        assert_eq!(roles.ternary.len(), 3);
        let rels = enumerate_ternary_factors(&edges, FactorCase::HeteIII).unwrap();
        assert_eq!(rels.ternary.len(), 6);
        let none = enumerate_ternary_factors(&[], FactorCase::HeteII).unwrap();
        assert!(none.ternary.is_empty());
    }

    #[test]
    fn factor_structure_invariants_hold() {
        let nodes = graph(2, 3);
        let edges = candidate_edges(&nodes);
        for case in [FactorCase::HomoI, FactorCase::HomoII, FactorCase::HeteI] {
            let idx = enumerate_binary_factors(&edges, case).unwrap();
            for f in &idx.binary {
                let (a, b) = (edges[f.first], edges[f.second]);
                match f.kind {
                    BinaryKind::Sib => {
                        assert_eq!(a.head, b.head);
                        assert_ne!(a.tail, b.tail);
                    }
                    BinaryKind::Cop => {
                        assert_eq!(a.tail, b.tail);
                        assert_ne!(a.head, b.head);
                    }
                    BinaryKind::Gp => {
                        assert_eq!(a.tail, b.head);
                        assert_ne!(a.head, b.tail);
                    }
                }
            }
        }
    }

    #[test]
    fn schema_requires_null_first() {
        let schema = LabelSchema {
            event_types: vec![],
            entity_types: vec!["PER".into()],
            role_labels: vec!["Victim".into()],
            relation_labels: vec!["NULL".into()],
            symmetric_relations: vec![],
        };
        assert!(schema.validate().is_err());
    }

    #[test]
    fn schema_rejects_duplicates() {
        let schema = LabelSchema::new(
            vec!["Attack".into(), "Attack".into()],
            vec![],
            vec![],
            vec![],
        );
        assert!(schema.is_err());
    }

    #[test]
    fn span_rejects_reversed_bounds() {
        assert!(Span::new(3, 2).is_err());
    }
}
