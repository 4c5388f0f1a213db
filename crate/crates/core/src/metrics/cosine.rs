use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::http::{EndpointConfig, JsonEndpoint};
use crate::textcore::{detokenize, TokenSeq};

/// Inverse document frequencies fitted on a set of documents.
///
/// `idf(w) = ln((N + 1) / (df(w) + 1))`, so a word present in every document
/// weighs nothing and an unseen word weighs `ln(N + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl TfIdf {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a TokenSeq>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            let distinct: HashSet<&str> = doc.iter().map(|t| t.norm()).collect();
            for w in distinct {
                *df.entry(w.to_string()).or_insert(0) += 1;
            }
        }
        TfIdf { n_docs, df }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn idf(&self, norm: &str) -> f64 {
        let df = self.df.get(norm).copied().unwrap_or(0);
        ((self.n_docs + 1) as f64 / (df + 1) as f64).ln()
    }

    /// Raw term frequency times idf, keyed by normalized form.
    pub fn embed(&self, seq: &TokenSeq) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in seq {
            *tf.entry(t.norm().to_string()).or_insert(0.0) += 1.0;
        }
        for (w, v) in tf.iter_mut() {
            *v *= self.idf(w);
        }
        tf
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// Client for an embedding service: POST `{"text": ...}`, answer `{"vector": [...]}`.
pub struct ExternalEmbedder {
    endpoint: JsonEndpoint,
}

impl ExternalEmbedder {
    pub fn new(config: EndpointConfig) -> Self {
        ExternalEmbedder {
            endpoint: JsonEndpoint::new(config),
        }
    }

    pub fn embed(&self, seq: &TokenSeq) -> Result<Vec<f64>, MetricError> {
        let text = detokenize(seq);
        let resp: EmbedResponse = self.endpoint.post(&EmbedRequest { text: &text }, &[])?;
        Ok(resp.vector)
    }
}

pub enum Embedder {
    TfIdf(TfIdf),
    External(ExternalEmbedder),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineScore {
    pub pct: f64,
    /// Set when either embedding is all zeros; `pct` is then 0.
    pub zero_vector: bool,
}

fn from_parts(dot: f64, na: f64, nb: f64) -> CosineScore {
    if na == 0.0 || nb == 0.0 {
        return CosineScore {
            pct: 0.0,
            zero_vector: true,
        };
    }
    CosineScore {
        pct: (100.0 * (dot / (na * nb).sqrt())).clamp(0.0, 100.0),
        zero_vector: false,
    }
}

fn sparse_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> CosineScore {
    let dot = a.iter().map(|(w, x)| x * b.get(w).copied().unwrap_or(0.0)).sum();
    let na = a.values().map(|x| x * x).sum();
    let nb = b.values().map(|x| x * x).sum();
    from_parts(dot, na, nb)
}

fn dense_cosine(a: &[f64], b: &[f64]) -> Result<CosineScore, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let dot = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum();
    let nb = b.iter().map(|x| x * x).sum();
    Ok(from_parts(dot, na, nb))
}

/// Cosine similarity of the two embeddings, in percent. Negative cosines clamp to 0.
pub fn cosine_similarity(a: &TokenSeq, b: &TokenSeq, embedder: &Embedder) -> Result<CosineScore, MetricError> {
    match embedder {
        Embedder::TfIdf(model) => Ok(sparse_cosine(&model.embed(a), &model.embed(b))),
        Embedder::External(client) => dense_cosine(&client.embed(a)?, &client.embed(b)?),
    }
}
