//! Small layer helpers over the compute graph: affine maps and two-layer
//! feed-forward blocks, with their parameter registration.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{init_matrix, Graph, NodeId, ParameterStore, Tensor};

/// Registers `{prefix}.w` ([in, out]) and `{prefix}.b` ([out]).
pub fn define_linear(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
) -> Result<()> {
    store.define(&format!("{}.w", prefix), init_matrix(rng, in_dim, out_dim))?;
    store.define(&format!("{}.b", prefix), Tensor::zeros(&[out_dim]))?;
    Ok(())
}

/// `x W + b` for `x` of shape [n, in].
pub fn linear(
    graph: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = graph.param(store, &format!("{}.w", prefix))?;
    let b = graph.param(store, &format!("{}.b", prefix))?;
    let xw = graph.matmul(x, w)?;
    graph.add(xw, b)
}

/// Registers a two-layer block `{prefix}.l1` / `{prefix}.l2`.
pub fn define_ffn2(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
) -> Result<()> {
    define_linear(store, rng, &format!("{}.l1", prefix), in_dim, hidden)?;
    define_linear(store, rng, &format!("{}.l2", prefix), hidden, out_dim)?;
    Ok(())
}

/// Two-layer feed-forward with ReLU in between. Input dropout is the
/// caller's responsibility.
pub fn ffn2(graph: &mut Graph, store: &ParameterStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = linear(graph, store, &format!("{}.l1", prefix), x)?;
    let h = graph.relu(h)?;
    linear(graph, store, &format!("{}.l2", prefix), h)
}
