//! Reverse-mode gradients against central finite differences: individual
//! ops, the chain CRF loss, and the full joint loss through scorers,
//! encoder and unfolded MFVI.

mod common;

use common::*;
use hocrf::data::{ArgAnn, DatasetRecord, EntityAnn, EventAnn, RelationAnn, TriggerAnn};
use hocrf::encoder::{EncoderConfig, EncoderMode};
use hocrf::identify::ChainCrf;
use hocrf::inference::{AlphaConfig, Schedule};
use hocrf::model::{bind_gold, gold_nodes, AlphaSetting, InferenceOrder, LabelingModel, LabelingSettings};
use hocrf::numerics::{Graph, ParameterStore, RunMode, Tensor};
use hocrf::schema::{FactorCase, LabelSchema};
use hocrf::scoring::{ScoringDims, ScoringSettings};
use hocrf::training::joint_loss;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn elementary_op_gradients_match_finite_differences() {
    // a pile of composed ops: softmax, log, exp, tanh, relu, matmul,
    // logsumexp, concat, lookup
    let mut rng = seeded(3);
    let mut store = ParameterStore::new();
    store.define("w", random_tensor(&mut rng, &[3, 4], 0.8)).unwrap();
    store.define("v", random_tensor(&mut rng, &[4], 0.8)).unwrap();
    store.define("t", random_tensor(&mut rng, &[5, 3], 0.8)).unwrap();

    let build = |store: &ParameterStore| -> (f64, Option<Graph>, Option<hocrf::numerics::NodeId>) {
        let mut g = Graph::new(RunMode::Eval);
        let w = g.param(store, "w").unwrap();
        let v = g.param(store, "v").unwrap();
        let t = g.param(store, "t").unwrap();
        let rows = g.lookup(t, &[0, 2, 4]).unwrap(); // [3,3]
        let prod = g.matmul(rows, w).unwrap(); // [3,4]
        let biased = g.add(prod, v).unwrap();
        let th = g.tanh(biased).unwrap();
        let re = g.relu(th).unwrap();
        let sm = g.softmax(re).unwrap();
        let lg = g.log(sm).unwrap();
        let ls = g.logsumexp(lg, 1).unwrap(); // [3]
        let ex = g.exp(ls).unwrap();
        let cat = g.concat(&[ls, ex], 0).unwrap();
        let root = g.sum_all(cat).unwrap();
        let val = g.value(root).scalar_value().unwrap();
        (val, Some(g), Some(root))
    };

    let (_, graph, root) = build(&store);
    let graph = graph.unwrap();
    let grads = graph.backward(root.unwrap()).unwrap();
    let analytic = |name: &str| {
        graph
            .param_leaf(name)
            .and_then(|id| grads.get(id))
            .cloned()
    };
    let max_rel = finite_difference_check(&mut store, |s| build(s).0, analytic, STEP);
    assert!(max_rel <= TOL, "max relative error {}", max_rel);
}

#[test]
fn chain_crf_nll_gradients_match_finite_differences() {
    let mut rng = seeded(17);
    let crf = ChainCrf::new("t", hocrf::identify::BioTagSet::new(vec!["PER".into()]));
    let mut store = ParameterStore::new();
    crf.define_params(&mut store, &mut rng, 4, 6).unwrap();
    let tokens = random_tensor(&mut rng, &[5, 4], 1.0);
    let gold = vec![0, 1, 2, 0, 1];

    let build = |store: &ParameterStore| {
        let mut g = Graph::new(RunMode::Eval);
        let reprs = g.constant(tokens.clone()).unwrap();
        let emissions = crf.emissions(&mut g, store, reprs).unwrap();
        let transitions = crf.transitions(&mut g, store).unwrap();
        let loss = crf.nll(&mut g, emissions, transitions, &gold).unwrap();
        (g.value(loss).scalar_value().unwrap(), g, loss)
    };
    let (_, graph, root) = build(&store);
    let grads = graph.backward(root).unwrap();
    let analytic =
        |name: &str| graph.param_leaf(name).and_then(|id| grads.get(id)).cloned();
    let max_rel = finite_difference_check(&mut store, |s| build(s).0, analytic, STEP);
    assert!(max_rel <= TOL, "max relative error {}", max_rel);
}

fn fixture_schema() -> LabelSchema {
    LabelSchema::new(
        vec!["Attack".into()],
        vec!["PER".into(), "GPE".into()],
        vec!["Agent".into(), "Place".into()],
        vec!["Located".into(), "Near".into()],
    )
    .unwrap()
}

fn fixture_record() -> DatasetRecord {
    DatasetRecord {
        id: "fx".into(),
        tokens: vec![
            "troops".into(),
            "attacked".into(),
            "the".into(),
            "city".into(),
            "yesterday".into(),
        ],
        entities: vec![
            EntityAnn { start: 0, end: 0, entity_type: "PER".into() },
            EntityAnn { start: 3, end: 3, entity_type: "GPE".into() },
        ],
        triggers: vec![TriggerAnn { start: 1, end: 1, event_type: "Attack".into() }],
        relations: vec![RelationAnn {
            head_entity_index: 0,
            tail_entity_index: 1,
            relation_type: "Located".into(),
        }],
        events: vec![EventAnn {
            trigger_index: 0,
            args: vec![
                ArgAnn { entity_index: 0, role: "Agent".into() },
                ArgAnn { entity_index: 1, role: "Place".into() },
            ],
        }],
    }
}

fn fixture_model(iterations: usize, schedule: Schedule, cases: Vec<FactorCase>) -> LabelingModel {
    let settings = LabelingSettings {
        encoder: EncoderConfig {
            mode: EncoderMode::Trainable,
            vocab: vec![
                "troops".into(),
                "attacked".into(),
                "the".into(),
                "city".into(),
                "yesterday".into(),
            ],
            embed_width: 5,
            context_layers: 1,
            window_radius: 2,
        },
        scoring: ScoringSettings {
            dims: ScoringDims {
                unary_entity_hidden: 4,
                unary_trigger_hidden: 4,
                unary_relation: 4,
                unary_role: 4,
                binary: 3,
                ternary: 3,
            },
            cases,
            share_labels: false,
            node_reps: true,
        },
        iterations,
        schedule,
        order: InferenceOrder::High,
        alphas: AlphaSetting::Fixed {
            values: AlphaConfig::default(),
        },
        dropout: 0.0,
    };
    LabelingModel::new(fixture_schema(), settings, 23).unwrap()
}

fn full_loss_gradcheck(iterations: usize, schedule: Schedule, cases: Vec<FactorCase>) {
    let mut model = fixture_model(iterations, schedule, cases);
    let record = fixture_record();
    let build = |model: &LabelingModel| {
        let nodes = gold_nodes(&record);
        let pass = model
            .forward(&record.tokens, &record.id, nodes, RunMode::Eval, 0, None)
            .unwrap();
        let gold = bind_gold(&record, &model.schema, &pass.nodes, &pass.edges).unwrap();
        let mut graph = pass.graph;
        let (_, _, total) = joint_loss(&mut graph, &pass.state, &gold).unwrap();
        (graph.value(total).scalar_value().unwrap(), graph, total)
    };
    let (_, graph, root) = build(&model);
    let grads = graph.backward(root).unwrap();
    let analytic =
        |name: &str| graph.param_leaf(name).and_then(|id| grads.get(id)).cloned();
    let mut store = std::mem::take(&mut model.store);
    let max_rel = finite_difference_check(
        &mut store,
        |s| {
            let mut m = model.clone();
            m.store = s.clone();
            let nodes = gold_nodes(&record);
            let pass = m
                .forward(&record.tokens, &record.id, nodes, RunMode::Eval, 0, None)
                .unwrap();
            let gold = bind_gold(&record, &m.schema, &pass.nodes, &pass.edges).unwrap();
            let mut graph = pass.graph;
            let (_, _, total) = joint_loss(&mut graph, &pass.state, &gold).unwrap();
            graph.value(total).scalar_value().unwrap()
        },
        analytic,
        STEP,
    );
    assert!(
        max_rel <= TOL,
        "max relative gradient error {} for T={} {:?}",
        max_rel,
        iterations,
        schedule
    );
}

#[test]
fn joint_loss_gradients_t1_sync_all_binary_cases() {
    full_loss_gradcheck(
        1,
        Schedule::Synchronous,
        vec![FactorCase::HomoI, FactorCase::HomoII, FactorCase::HeteI],
    );
}

#[test]
fn joint_loss_gradients_t2_sync_with_ternary() {
    full_loss_gradcheck(
        2,
        Schedule::Synchronous,
        vec![FactorCase::HeteII, FactorCase::HeteIII],
    );
}

#[test]
fn joint_loss_gradients_t2_async_all_cases() {
    full_loss_gradcheck(
        2,
        Schedule::Asynchronous,
        vec![
            FactorCase::HomoI,
            FactorCase::HomoII,
            FactorCase::HeteI,
            FactorCase::HeteII,
            FactorCase::HeteIII,
        ],
    );
}

#[test]
fn joint_loss_gradients_with_learned_alphas() {
    let mut model = fixture_model(1, Schedule::Asynchronous, vec![FactorCase::HeteIII]);
    model.settings.alphas = AlphaSetting::Learned;
    // rebuild with learned alphas so the parameters exist
    let mut model = LabelingModel::new(model.schema.clone(), model.settings.clone(), 29).unwrap();
    let record = fixture_record();
    let build = |m: &LabelingModel| {
        let nodes = gold_nodes(&record);
        let pass = m
            .forward(&record.tokens, &record.id, nodes, RunMode::Eval, 0, None)
            .unwrap();
        let gold = bind_gold(&record, &m.schema, &pass.nodes, &pass.edges).unwrap();
        let mut graph = pass.graph;
        let (_, _, total) = joint_loss(&mut graph, &pass.state, &gold).unwrap();
        (graph.value(total).scalar_value().unwrap(), graph, total)
    };
    let (_, graph, root) = build(&model);
    let grads = graph.backward(root).unwrap();
    let analytic =
        |name: &str| graph.param_leaf(name).and_then(|id| grads.get(id)).cloned();
    // alpha parameters must receive gradient
    let alpha_grad = analytic("alpha.edge_ternary").expect("alpha leaf bound");
    assert!(alpha_grad.data()[0].abs() > 0.0);
    let mut store = std::mem::take(&mut model.store);
    let max_rel = finite_difference_check(
        &mut store,
        |s| {
            let mut m = model.clone();
            m.store = s.clone();
            build(&m).0
        },
        analytic,
        STEP,
    );
    assert!(max_rel <= TOL, "max relative error {}", max_rel);
}
