//! Token and span representations.
//!
//! Two modes: a trainable encoder (embedding lookup plus a few layers of
//! window-averaged context mixing with residual, affine map and tanh) and an
//! external mode that reads per-sentence vectors from an NDJSON file keyed
//! by sentence id. Span representations average the token vectors inside
//! the span. The identification and labeling modules each own a separate
//! parameter set, distinguished by the parameter name prefix.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{init_embedding, Graph, NodeId, ParameterStore, Tensor};
use crate::schema::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Trainable,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    /// Vocabulary for trainable mode; token ids are positions in this list.
    #[serde(default)]
    pub vocab: Vec<String>,
    pub embed_width: usize,
    #[serde(default = "default_context_layers")]
    pub context_layers: usize,
    #[serde(default = "default_window_radius")]
    pub window_radius: usize,
}

fn default_context_layers() -> usize {
    1
}

fn default_window_radius() -> usize {
    2
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_width == 0 {
            return Err(Error::Encoder("embedding width must be positive".into()));
        }
        if self.mode == EncoderMode::Trainable && self.vocab.is_empty() {
            return Err(Error::Encoder(
                "trainable mode requires a vocabulary".into(),
            ));
        }
        Ok(())
    }

    pub fn token_id(&self, token: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| Error::Encoder(format!("unknown token `{}`", token)))
    }
}

/// Per-sentence external vectors: NDJSON records
/// `{"id": string, "vectors": [[f64, ...], ...]}` with one inner list per
/// token.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    by_id: HashMap<String, Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    vectors: Vec<Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut by_id = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord =
                serde_json::from_str(&line).map_err(|e| Error::Dataset {
                    line: lineno + 1,
                    message: format!("bad embedding record: {}", e),
                })?;
            by_id.insert(rec.id, rec.vectors);
        }
        Ok(Self { by_id })
    }

    pub fn insert(&mut self, id: String, vectors: Vec<Vec<f64>>) {
        self.by_id.insert(id, vectors);
    }

    pub fn get(&self, id: &str) -> Option<&Vec<Vec<f64>>> {
        self.by_id.get(id)
    }
}

/// The encoder for one module (identification or labeling), owning its
/// parameter name prefix.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub prefix: String,
}

impl Encoder {
    pub fn new(config: EncoderConfig, prefix: &str) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            prefix: prefix.to_string(),
        })
    }

    /// Registers this encoder's parameters (trainable mode only).
    pub fn define_params(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.config.mode != EncoderMode::Trainable {
            return Ok(());
        }
        let w = self.config.embed_width;
        store.define(
            &format!("{}.embed", self.prefix),
            init_embedding(rng, self.config.vocab.len(), w),
        )?;
        for layer in 0..self.config.context_layers {
            nn::define_linear(store, rng, &format!("{}.mix{}", self.prefix, layer), w, w)?;
        }
        Ok(())
    }

    /// Per-token representations, shape [n, width].
    pub fn encode_tokens(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        tokens: &[String],
        sentence_id: &str,
        external: Option<&ExternalEmbeddings>,
    ) -> Result<NodeId> {
        match self.config.mode {
            EncoderMode::External => {
                let store = external.ok_or_else(|| {
                    Error::Encoder("external mode requires an embedding file".into())
                })?;
                let vectors = store.get(sentence_id).ok_or_else(|| {
                    Error::Encoder(format!("no external vectors for sentence `{}`", sentence_id))
                })?;
                if vectors.len() != tokens.len() {
                    return Err(Error::Encoder(format!(
                        "sentence `{}` has {} tokens but {} external vectors",
                        sentence_id,
                        tokens.len(),
                        vectors.len()
                    )));
                }
                let w = self.config.embed_width;
                let mut data = Vec::with_capacity(tokens.len() * w);
                for v in vectors {
                    if v.len() != w {
                        return Err(Error::Encoder(format!(
                            "external vector width {} does not match configured width {}",
                            v.len(),
                            w
                        )));
                    }
                    data.extend_from_slice(v);
                }
                graph.constant(Tensor::new(vec![tokens.len(), w], data)?)
            }
            EncoderMode::Trainable => {
                let ids: Vec<usize> = tokens
                    .iter()
                    .map(|t| self.config.token_id(t))
                    .collect::<Result<_>>()?;
                let table = graph.param(store, &format!("{}.embed", self.prefix))?;
                let mut h = graph.lookup(table, &ids)?;
                let n = tokens.len();
                if n > 0 {
                    let avg = graph.constant(window_average_matrix(n, self.config.window_radius))?;
                    for layer in 0..self.config.context_layers {
                        let context = graph.matmul(avg, h)?;
                        let mixed = graph.add(h, context)?;
                        let mapped = nn::linear(
                            graph,
                            store,
                            &format!("{}.mix{}", self.prefix, layer),
                            mixed,
                        )?;
                        h = graph.tanh(mapped)?;
                    }
                }
                Ok(h)
            }
        }
    }

    /// Mean of the token vectors inside `span`, shape [1, width].
    pub fn span_representation(
        &self,
        graph: &mut Graph,
        token_reprs: NodeId,
        span: Span,
    ) -> Result<NodeId> {
        span_mean(graph, token_reprs, span)
    }
}

/// Row-stochastic matrix averaging each position's window [i-r, i+r]
/// clipped to the sentence.
fn window_average_matrix(n: usize, radius: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let w = 1.0 / (hi - lo + 1) as f64;
        for j in lo..=hi {
            data[i * n + j] = w;
        }
    }
    Tensor::new(vec![n, n], data).expect("square matrix")
}

/// Mean over the rows [span.start, span.end] of `token_reprs` ([n, w]),
/// as a [1, w] selector matmul so gradients flow to the tokens.
pub fn span_mean(graph: &mut Graph, token_reprs: NodeId, span: Span) -> Result<NodeId> {
    let n = graph.value(token_reprs).shape()[0];
    if !span.in_range(n) {
        return Err(Error::Encoder(format!(
            "span {}..{} out of range for {} tokens",
            span.start, span.end, n
        )));
    }
    let mut sel = vec![0.0; n];
    let w = 1.0 / span.len() as f64;
    for cell in sel.iter_mut().take(span.end + 1).skip(span.start) {
        *cell = w;
    }
    let sel = graph.constant(Tensor::new(vec![1, n], sel)?)?;
    graph.matmul(sel, token_reprs)
}
