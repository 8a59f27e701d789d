//! Model assembly: the identification module (two chain-CRF taggers over a
//! shared encoder) and the node/edge labeling module (scorers plus unfolded
//! MFVI), with gold binding and prediction emission.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::data::{ArgAnn, DatasetRecord, EntityAnn, EventAnn, RelationAnn, TriggerAnn};
use crate::encoder::{Encoder, EncoderConfig, ExternalEmbeddings};
use crate::error::{Error, Result};
use crate::identify::{decode_spans, viterbi_decode, BioTagSet, ChainCrf};
use crate::inference::{
    decode, init_posteriors, run_mfvi, AlphaConfig, AlphaTerm, MfviAlphas, PosteriorState,
    Schedule,
};
use crate::numerics::{Graph, NodeId, ParameterStore, RunMode, Tensor};
use crate::schema::{
    candidate_edges, enumerate_factors, EdgeInstance, EdgeTask, FactorIndex, LabelSchema,
    NodeInstance, NodeKind, Span, NULL_LABEL,
};
use crate::scoring::{PotentialSet, Scorers, ScoringSettings};

// ---- identification ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifySettings {
    pub encoder: EncoderConfig,
    #[serde(default = "default_ident_hidden")]
    pub hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_ident_hidden() -> usize {
    150
}

fn default_dropout() -> f64 {
    0.4
}

pub struct IdentifyModel {
    pub schema: LabelSchema,
    pub settings: IdentifySettings,
    pub encoder: Encoder,
    pub trigger_crf: ChainCrf,
    pub entity_crf: ChainCrf,
    pub store: ParameterStore,
}

impl IdentifyModel {
    pub fn new(schema: LabelSchema, settings: IdentifySettings, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(settings.encoder.clone(), "enc")?;
        let trigger_crf = ChainCrf::new("trig", BioTagSet::new(schema.event_types.clone()));
        let entity_crf = ChainCrf::new("ent", BioTagSet::new(schema.entity_types.clone()));
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        encoder.define_params(&mut store, &mut rng)?;
        let w = settings.encoder.embed_width;
        trigger_crf.define_params(&mut store, &mut rng, w, settings.hidden)?;
        entity_crf.define_params(&mut store, &mut rng, w, settings.hidden)?;
        Ok(Self {
            schema,
            settings,
            encoder,
            trigger_crf,
            entity_crf,
            store,
        })
    }

    /// Decodes trigger and entity spans for one sentence.
    pub fn identify(
        &self,
        tokens: &[String],
        sentence_id: &str,
        external: Option<&ExternalEmbeddings>,
    ) -> Result<IdentifiedSpans> {
        if tokens.is_empty() {
            return Ok(IdentifiedSpans::default());
        }
        let mut graph = Graph::new(RunMode::Eval);
        let reprs = self
            .encoder
            .encode_tokens(&mut graph, &self.store, tokens, sentence_id, external)?;
        let mut out = IdentifiedSpans::default();
        for (crf, sink) in [
            (&self.trigger_crf, &mut out.triggers),
            (&self.entity_crf, &mut out.entities),
        ] {
            let emissions = crf.emissions(&mut graph, &self.store, reprs)?;
            let transitions = crf.transitions(&mut graph, &self.store)?;
            let tags = viterbi_decode(graph.value(emissions), graph.value(transitions));
            *sink = decode_spans(&tags, &crf.tags);
        }
        Ok(out)
    }

    /// Sum of the two taggers' NLL for one sentence, as a graph node.
    pub fn sentence_loss(
        &self,
        graph: &mut Graph,
        record: &DatasetRecord,
        external: Option<&ExternalEmbeddings>,
    ) -> Result<NodeId> {
        let reprs = self.encoder.encode_tokens(
            graph,
            &self.store,
            &record.tokens,
            &record.id,
            external,
        )?;
        let trig_gold: Vec<(Span, usize)> = record
            .triggers
            .iter()
            .map(|t| {
                self.schema
                    .node_label_id(NodeKind::Trigger, &t.event_type)
                    .map(|id| (Span { start: t.start, end: t.end }, id))
                    .ok_or_else(|| Error::Schema(format!("unknown event type `{}`", t.event_type)))
            })
            .collect::<Result<_>>()?;
        let ent_gold: Vec<(Span, usize)> = record
            .entities
            .iter()
            .map(|e| {
                self.schema
                    .node_label_id(NodeKind::Entity, &e.entity_type)
                    .map(|id| (Span { start: e.start, end: e.end }, id))
                    .ok_or_else(|| Error::Schema(format!("unknown entity type `{}`", e.entity_type)))
            })
            .collect::<Result<_>>()?;
        let mut total: Option<NodeId> = None;
        for (crf, gold) in [(&self.trigger_crf, trig_gold), (&self.entity_crf, ent_gold)] {
            let tags = crf.tags.encode_tags(&gold, record.tokens.len())?;
            let emissions = crf.emissions(graph, &self.store, reprs)?;
            let transitions = crf.transitions(graph, &self.store)?;
            let nll = crf.nll(graph, emissions, transitions, &tags)?;
            total = Some(match total {
                Some(t) => graph.add(t, nll)?,
                None => nll,
            });
        }
        total.ok_or_else(|| Error::Training("empty sentence".into()))
    }

    pub fn pin_transitions(&mut self) -> Result<()> {
        self.trigger_crf.pin_banned_transitions(&mut self.store)?;
        self.entity_crf.pin_banned_transitions(&mut self.store)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct IdentifiedSpans {
    pub triggers: Vec<(Span, usize)>,
    pub entities: Vec<(Span, usize)>,
}

impl IdentifiedSpans {
    /// Graph nodes in canonical order: triggers first, then entities.
    pub fn to_nodes(&self) -> Vec<NodeInstance> {
        let mut nodes = Vec::with_capacity(self.triggers.len() + self.entities.len());
        for &(span, _) in &self.triggers {
            nodes.push(NodeInstance::new(span, NodeKind::Trigger));
        }
        for &(span, _) in &self.entities {
            nodes.push(NodeInstance::new(span, NodeKind::Entity));
        }
        nodes
    }
}

// ---- labeling ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceOrder {
    First,
    High,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AlphaSetting {
    /// Fixed message scales (1 for every active factor kind by default).
    Fixed { values: AlphaConfig },
    /// Unconstrained parameters squashed into [0, 1] by a logistic map.
    Learned,
}

impl Default for AlphaSetting {
    fn default() -> Self {
        AlphaSetting::Fixed {
            values: AlphaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelingSettings {
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub scoring: ScoringSettings,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_order")]
    pub order: InferenceOrder,
    #[serde(default)]
    pub alphas: AlphaSetting,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_iterations() -> usize {
    2
}

fn default_schedule() -> Schedule {
    Schedule::Asynchronous
}

fn default_order() -> InferenceOrder {
    InferenceOrder::High
}

const LEARNED_ALPHA_NAMES: [&str; 7] = [
    "alpha.sib",
    "alpha.cop",
    "alpha.gp",
    "alpha.edge_binary",
    "alpha.edge_ternary",
    "alpha.node_head",
    "alpha.node_tail",
];

#[derive(Clone)]
pub struct LabelingModel {
    pub schema: LabelSchema,
    pub settings: LabelingSettings,
    pub encoder: Encoder,
    pub scorers: Scorers,
    pub store: ParameterStore,
}

impl LabelingModel {
    pub fn new(schema: LabelSchema, settings: LabelingSettings, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(settings.encoder.clone(), "enc")?;
        let scorers = Scorers::new(
            schema.clone(),
            settings.scoring.clone(),
            settings.encoder.embed_width,
        )?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        encoder.define_params(&mut store, &mut rng)?;
        scorers.define_params(&mut store, &mut rng)?;
        if let AlphaSetting::Learned = settings.alphas {
            for name in LEARNED_ALPHA_NAMES {
                // logistic(2) ~ 0.88: start near full message strength
                store.define(name, Tensor::vector(vec![2.0]))?;
            }
        }
        if let AlphaSetting::Fixed { values } = &settings.alphas {
            values.validate()?;
        }
        Ok(Self {
            schema,
            settings,
            encoder,
            scorers,
            store,
        })
    }

    fn resolve_alphas(&self, graph: &mut Graph) -> Result<MfviAlphas> {
        match &self.settings.alphas {
            AlphaSetting::Fixed { values } => Ok(MfviAlphas::fixed(values)),
            AlphaSetting::Learned => {
                let mut terms = Vec::with_capacity(7);
                for name in LEARNED_ALPHA_NAMES {
                    let raw = graph.param(&self.store, name)?;
                    // logistic(x) = (tanh(x/2) + 1) / 2, composed from core ops
                    let half = graph.scale(raw, 0.5)?;
                    let t = graph.tanh(half)?;
                    let one = graph.scalar(1.0)?;
                    let shifted = graph.add(t, one)?;
                    terms.push(AlphaTerm::Learned(graph.scale(shifted, 0.5)?));
                }
                Ok(MfviAlphas {
                    sib: terms[0],
                    cop: terms[1],
                    gp: terms[2],
                    edge_binary: terms[3],
                    edge_ternary: terms[4],
                    node_head: terms[5],
                    node_tail: terms[6],
                })
            }
        }
    }

    /// Current message scales as plain values (squashing applied).
    pub fn alpha_values(&self) -> Result<AlphaConfig> {
        match &self.settings.alphas {
            AlphaSetting::Fixed { values } => Ok(*values),
            AlphaSetting::Learned => {
                let logistic = |x: f64| 0.5 * ((0.5 * x).tanh() + 1.0);
                let read = |name: &str| -> Result<f64> {
                    Ok(logistic(self.store.value(name)?.data()[0]))
                };
                Ok(AlphaConfig {
                    sib: read("alpha.sib")?,
                    cop: read("alpha.cop")?,
                    gp: read("alpha.gp")?,
                    edge_binary: read("alpha.edge_binary")?,
                    edge_ternary: read("alpha.edge_ternary")?,
                    node_head: read("alpha.node_head")?,
                    node_tail: read("alpha.node_tail")?,
                })
            }
        }
    }

    /// Runs the full scoring-and-inference pass for one sentence.
    pub fn forward(
        &self,
        tokens: &[String],
        sentence_id: &str,
        nodes: Vec<NodeInstance>,
        mode: RunMode,
        dropout_seed: u64,
        external: Option<&ExternalEmbeddings>,
    ) -> Result<SentencePass> {
        let mut graph = Graph::with_seed(mode, dropout_seed);
        let edges = candidate_edges(&nodes);
        let factors = enumerate_factors(&edges, &self.scorers.settings.cases)?;
        let reprs =
            self.encoder
                .encode_tokens(&mut graph, &self.store, tokens, sentence_id, external)?;
        let mut span_reprs = Vec::with_capacity(nodes.len());
        for node in &nodes {
            span_reprs.push(self.encoder.span_representation(&mut graph, reprs, node.span)?);
        }
        let pots =
            self.scorers
                .score_sentence(&mut graph, &self.store, &span_reprs, &nodes, &edges, &factors)?;
        let state = match self.settings.order {
            InferenceOrder::First => init_posteriors(&mut graph, &pots)?,
            InferenceOrder::High => {
                let alphas = self.resolve_alphas(&mut graph)?;
                run_mfvi(
                    &mut graph,
                    &pots,
                    &edges,
                    &alphas,
                    self.settings.iterations,
                    self.settings.schedule,
                )?
            }
        };
        Ok(SentencePass {
            graph,
            nodes,
            edges,
            factors,
            pots,
            state,
        })
    }

    /// Labels for every variable by posterior argmax.
    pub fn predict(
        &self,
        tokens: &[String],
        sentence_id: &str,
        nodes: Vec<NodeInstance>,
        external: Option<&ExternalEmbeddings>,
    ) -> Result<Prediction> {
        let pass = self.forward(tokens, sentence_id, nodes, RunMode::Eval, 0, external)?;
        Ok(pass.into_prediction())
    }
}

/// One sentence's bound compute graph with everything downstream of the
/// encoder: candidate edges, factors, potentials and posteriors.
pub struct SentencePass {
    pub graph: Graph,
    pub nodes: Vec<NodeInstance>,
    pub edges: Vec<EdgeInstance>,
    pub factors: FactorIndex,
    pub pots: PotentialSet,
    pub state: PosteriorState,
}

impl SentencePass {
    pub fn into_prediction(self) -> Prediction {
        let node_labels = decode(&self.state.node_values(&self.graph));
        let edge_labels = decode(&self.state.edge_values(&self.graph));
        Prediction {
            nodes: self.nodes,
            edges: self.edges,
            node_labels,
            edge_labels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub nodes: Vec<NodeInstance>,
    pub edges: Vec<EdgeInstance>,
    pub node_labels: Vec<usize>,
    pub edge_labels: Vec<usize>,
}

impl Prediction {
    /// Serializes the prediction as a dataset record. NULL-labeled edges
    /// are absent.
    pub fn to_record(&self, schema: &LabelSchema, id: &str, tokens: &[String]) -> DatasetRecord {
        let mut entity_index = HashMap::new();
        let mut trigger_index = HashMap::new();
        let mut entities = Vec::new();
        let mut triggers = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Entity => {
                    entity_index.insert(i, entities.len());
                    entities.push(EntityAnn {
                        start: node.span.start,
                        end: node.span.end,
                        entity_type: schema.entity_types[self.node_labels[i]].clone(),
                    });
                }
                NodeKind::Trigger => {
                    trigger_index.insert(i, triggers.len());
                    triggers.push(TriggerAnn {
                        start: node.span.start,
                        end: node.span.end,
                        event_type: schema.event_types[self.node_labels[i]].clone(),
                    });
                }
            }
        }
        let mut relations = Vec::new();
        let mut events: Vec<EventAnn> = triggers
            .iter()
            .enumerate()
            .map(|(t, _)| EventAnn {
                trigger_index: t,
                args: Vec::new(),
            })
            .collect();
        for (e, edge) in self.edges.iter().enumerate() {
            let label = self.edge_labels[e];
            if label == NULL_LABEL {
                continue;
            }
            match edge.task {
                EdgeTask::Relation => relations.push(RelationAnn {
                    head_entity_index: entity_index[&edge.head],
                    tail_entity_index: entity_index[&edge.tail],
                    relation_type: schema.relation_labels[label].clone(),
                }),
                EdgeTask::Role => {
                    let t = trigger_index[&edge.head];
                    events[t].args.push(ArgAnn {
                        entity_index: entity_index[&edge.tail],
                        role: schema.role_labels[label].clone(),
                    });
                }
            }
        }
        DatasetRecord {
            id: id.to_string(),
            tokens: tokens.to_vec(),
            entities,
            triggers,
            relations,
            events,
        }
    }
}

// ---- gold binding ----

/// Gold labels for every variable of a candidate graph. Nodes that match
/// no gold span by exact offsets carry None and are skipped by the loss;
/// candidate edges not in the annotation are NULL.
#[derive(Debug, Clone)]
pub struct GoldAssignment {
    pub node_labels: Vec<Option<usize>>,
    pub edge_labels: Vec<usize>,
}

pub fn bind_gold(
    record: &DatasetRecord,
    schema: &LabelSchema,
    nodes: &[NodeInstance],
    edges: &[EdgeInstance],
) -> Result<GoldAssignment> {
    record.validate_labels(schema)?;
    let mut trigger_types: HashMap<Span, usize> = HashMap::new();
    for t in &record.triggers {
        let id = schema
            .node_label_id(NodeKind::Trigger, &t.event_type)
            .expect("validated");
        trigger_types.insert(Span { start: t.start, end: t.end }, id);
    }
    let mut entity_types: HashMap<Span, usize> = HashMap::new();
    for e in &record.entities {
        let id = schema
            .node_label_id(NodeKind::Entity, &e.entity_type)
            .expect("validated");
        entity_types.insert(Span { start: e.start, end: e.end }, id);
    }
    let mut role_map: HashMap<(Span, Span), usize> = HashMap::new();
    for ev in &record.events {
        let tspan = record.trigger_span(ev.trigger_index);
        for a in &ev.args {
            let espan = record.entity_span(a.entity_index);
            let id = schema
                .edge_label_id(EdgeTask::Role, &a.role)
                .expect("validated");
            role_map.insert((tspan, espan), id);
        }
    }
    let mut rel_map: HashMap<(Span, Span), usize> = HashMap::new();
    for r in &record.relations {
        let h = record.entity_span(r.head_entity_index);
        let t = record.entity_span(r.tail_entity_index);
        let id = schema
            .edge_label_id(EdgeTask::Relation, &r.relation_type)
            .expect("validated");
        rel_map.insert((h, t), id);
    }

    let node_labels = nodes
        .iter()
        .map(|n| match n.kind {
            NodeKind::Trigger => trigger_types.get(&n.span).copied(),
            NodeKind::Entity => entity_types.get(&n.span).copied(),
        })
        .collect();
    let edge_labels = edges
        .iter()
        .map(|e| {
            let key = (nodes[e.head].span, nodes[e.tail].span);
            match e.task {
                EdgeTask::Role => role_map.get(&key).copied().unwrap_or(NULL_LABEL),
                EdgeTask::Relation => rel_map.get(&key).copied().unwrap_or(NULL_LABEL),
            }
        })
        .collect();
    Ok(GoldAssignment {
        node_labels,
        edge_labels,
    })
}

/// Gold spans as graph nodes: triggers first, then entities.
pub fn gold_nodes(record: &DatasetRecord) -> Vec<NodeInstance> {
    let mut nodes = Vec::with_capacity(record.triggers.len() + record.entities.len());
    for t in &record.triggers {
        nodes.push(NodeInstance::new(
            Span { start: t.start, end: t.end },
            NodeKind::Trigger,
        ));
    }
    for e in &record.entities {
        nodes.push(NodeInstance::new(
            Span { start: e.start, end: e.end },
            NodeKind::Entity,
        ));
    }
    nodes
}
