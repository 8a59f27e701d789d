//! Shared test utilities: random factor graphs for the inference oracle
//! checks, brute-force chain-CRF enumeration, and a finite-difference
//! gradient checker.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hocrf::inference::ValuePotentials;
use hocrf::numerics::{logsumexp_slice, Graph, ParameterStore, RunMode, Tensor};
use hocrf::schema::{BinaryFactor, BinaryKind, EdgeInstance, EdgeTask, FactorCase, TernaryFactor};

/// Standard-normal-ish sampler (Box-Muller) so tests do not need an extra
/// distribution crate.
pub fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub struct RandomFactorGraph {
    pub edges: Vec<EdgeInstance>,
    pub pots: ValuePotentials,
}

/// A random small factor graph: up to `max_nodes` node variables, up to
/// `max_edges` edge variables over distinct ordered pairs, sib/cop/gp
/// factors derived from the edge topology and one ternary factor per edge,
/// every potential sampled N(0, std).
pub fn random_factor_graph(
    rng: &mut ChaCha8Rng,
    max_nodes: usize,
    max_edges: usize,
    max_labels: usize,
    std: f64,
) -> RandomFactorGraph {
    let n_nodes = rng.gen_range(2..=max_nodes);
    let node_labels: Vec<usize> = (0..n_nodes).map(|_| rng.gen_range(2..=max_labels)).collect();

    let mut pairs = Vec::new();
    for i in 0..n_nodes {
        for j in 0..n_nodes {
            if i != j {
                pairs.push((i, j));
            }
        }
    }
    // sample a subset of ordered pairs as edge variables
    for i in (1..pairs.len()).rev() {
        let j = rng.gen_range(0..=i);
        pairs.swap(i, j);
    }
    let n_edges = rng.gen_range(1..=max_edges.min(pairs.len()));
    let mut chosen: Vec<(usize, usize)> = pairs[..n_edges].to_vec();
    chosen.sort_unstable();
    let edges: Vec<EdgeInstance> = chosen
        .iter()
        .map(|&(h, t)| EdgeInstance {
            head: h,
            tail: t,
            task: EdgeTask::Relation,
            label: None,
        })
        .collect();
    let edge_labels: Vec<usize> = (0..edges.len())
        .map(|_| rng.gen_range(2..=max_labels))
        .collect();

    let node_unary: Vec<Vec<f64>> = node_labels
        .iter()
        .map(|&l| (0..l).map(|_| normal(rng, std)).collect())
        .collect();
    let edge_unary: Vec<Vec<f64>> = edge_labels
        .iter()
        .map(|&l| (0..l).map(|_| normal(rng, std)).collect())
        .collect();

    let mut binary = Vec::new();
    for a in 0..edges.len() {
        for b in (a + 1)..edges.len() {
            let (ea, eb) = (edges[a], edges[b]);
            let kind = if ea.head == eb.head && ea.tail != eb.tail {
                Some(BinaryKind::Sib)
            } else if ea.tail == eb.tail && ea.head != eb.head {
                Some(BinaryKind::Cop)
            } else if ea.tail == eb.head && ea.head != eb.tail {
                Some(BinaryKind::Gp)
            } else if eb.tail == ea.head && eb.head != ea.tail {
                None // reversed chain handled below
            } else {
                None
            };
            if let Some(kind) = kind {
                let t = random_tensor(rng, &[edge_labels[a], edge_labels[b]], std);
                binary.push((
                    BinaryFactor {
                        kind,
                        case: FactorCase::HomoII,
                        first: a,
                        second: b,
                    },
                    t,
                ));
            }
            if eb.tail == ea.head && eb.head != ea.tail {
                let t = random_tensor(rng, &[edge_labels[b], edge_labels[a]], std);
                binary.push((
                    BinaryFactor {
                        kind: BinaryKind::Gp,
                        case: FactorCase::HomoII,
                        first: b,
                        second: a,
                    },
                    t,
                ));
            }
        }
    }
    let mut ternary = Vec::new();
    for (e, edge) in edges.iter().enumerate() {
        let t = random_tensor(
            rng,
            &[node_labels[edge.head], node_labels[edge.tail], edge_labels[e]],
            std,
        );
        ternary.push((
            TernaryFactor {
                case: FactorCase::HeteIII,
                edge: e,
            },
            t,
        ));
    }

    RandomFactorGraph {
        edges,
        pots: ValuePotentials {
            node_unary,
            edge_unary,
            binary,
            ternary,
        },
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal(rng, std)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds a graph-backed PotentialSet from plain values.
pub fn graph_potentials(
    graph: &mut Graph,
    pots: &ValuePotentials,
) -> hocrf::scoring::PotentialSet {
    hocrf::scoring::PotentialSet {
        node_unary: pots
            .node_unary
            .iter()
            .map(|u| graph.vector(u.clone()).unwrap())
            .collect(),
        edge_unary: pots
            .edge_unary
            .iter()
            .map(|u| graph.vector(u.clone()).unwrap())
            .collect(),
        binary: pots
            .binary
            .iter()
            .map(|(f, t)| (*f, graph.constant(t.clone()).unwrap()))
            .collect(),
        ternary: pots
            .ternary
            .iter()
            .map(|(f, t)| (*f, graph.constant(t.clone()).unwrap()))
            .collect(),
    }
}

// ---- chain CRF enumeration oracle ----

/// Every tag sequence of length `n` over `k` tags.
pub fn all_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * k);
        for seq in &out {
            for t in 0..k {
                let mut s = seq.clone();
                s.push(t);
                next.push(s);
            }
        }
        out = next;
    }
    out
}

/// Brute-force argmax over all sequences, using the same tie rule as the
/// decoder: prefer the lower tag id at the latest differing position.
pub fn enumerate_argmax(emissions: &Tensor, transitions: &Tensor) -> (Vec<usize>, f64) {
    let n = emissions.shape()[0];
    let k = emissions.shape()[1];
    let mut best: Option<(Vec<usize>, f64)> = None;
    for seq in all_sequences(n, k) {
        let score = hocrf::identify::sequence_score(&seq, emissions, transitions).unwrap();
        best = match best {
            None => Some((seq, score)),
            Some((bseq, bscore)) => {
                if score > bscore || (score == bscore && reversed_lex_less(&seq, &bseq)) {
                    Some((seq, score))
                } else {
                    Some((bseq, bscore))
                }
            }
        };
    }
    best.unwrap()
}

fn reversed_lex_less(a: &[usize], b: &[usize]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Brute-force log partition over all sequences.
pub fn enumerate_log_partition(emissions: &Tensor, transitions: &Tensor) -> f64 {
    let n = emissions.shape()[0];
    let k = emissions.shape()[1];
    let scores: Vec<f64> = all_sequences(n, k)
        .into_iter()
        .map(|seq| hocrf::identify::sequence_score(&seq, emissions, transitions).unwrap())
        .collect();
    logsumexp_slice(&scores).unwrap()
}

// ---- finite-difference gradient oracle ----

/// Central finite differences over every scalar of every parameter in
/// `store`, compared against reverse-mode gradients of `loss_fn`.
/// `loss_fn` must rebuild the loss from scratch (the forward path only) at
/// the store's current values. Returns the max relative error.
pub fn finite_difference_check(
    store: &mut ParameterStore,
    mut loss_fn: impl FnMut(&ParameterStore) -> f64,
    analytic: impl Fn(&str) -> Option<Tensor>,
    step: f64,
) -> f64 {
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut max_rel = 0.0f64;
    for name in names {
        let grad = match analytic(&name) {
            Some(g) => g,
            None => Tensor::zeros(store.value(&name).unwrap().shape()),
        };
        let len = store.value(&name).unwrap().len();
        for i in 0..len {
            let orig = store.value(&name).unwrap().data()[i];
            store.value_mut(&name).unwrap().data_mut()[i] = orig + step;
            let fp = loss_fn(store);
            store.value_mut(&name).unwrap().data_mut()[i] = orig - step;
            let fm = loss_fn(store);
            store.value_mut(&name).unwrap().data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * step);
            let g = grad.data()[i];
            let denom = g.abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max((g - fd).abs() / denom);
        }
    }
    max_rel
}

pub fn eval_graph() -> Graph {
    Graph::new(RunMode::Eval)
}
