//! Embedding providers, vector index, and cosine-similarity search.
//!
//! Search is exact brute force: at catalog scale an approximate structure
//! buys nothing and exactness keeps results oracle-checkable. The shipped
//! [`HashEmbedder`] is a deterministic hashed bag-of-tokens embedder so the
//! whole pipeline runs offline; real embedding services plug in through
//! [`Embedder`], e.g. the [`RemoteEmbedder`] HTTP adapter.

use crate::catalog::Catalog;
use crate::pipeline::{PathSource, ScoredCandidate};
use crate::textproc::tokenize;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors surfaced by embedding providers.
#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider transport failure: {0}")]
    Transport(String),
    #[error("embedding provider returned a bad response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("nothing to index: catalog is empty")]
    EmptyCatalog,
    #[error("embedding failed for record {id:?}: {source}")]
    Embed {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error("query embedding failed: {0}")]
    QueryEmbed(#[from] EmbedError),
    #[error("dimension mismatch: index has {index}, embedder has {embedder}")]
    DimensionMismatch { index: usize, embedder: usize },
}

/// Deterministic text-to-vector contract. Implementations must return the
/// same vector for the same input, always of length `dimension()`.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// 64-bit FNV-1a hash. Fixed here so hashed-bucket vectors are bit-stable
/// across platforms and reimplementations.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Hashed bag-of-tokens embedder: each token of `tokenize(text)` increments
/// bucket `fnv1a64(token) % D`; the count vector is then L2-normalized.
/// Empty text embeds to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    dimension: usize,
}

pub const DEFAULT_HASH_DIMENSION: usize = 256;

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dimension: DEFAULT_HASH_DIMENSION,
        }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashEmbedder { dimension }
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut vector = vec![0.0f64; self.dimension];
        for token in &tokenize(text) {
            let bucket = (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize;
            vector[bucket] += 1.0;
        }
        l2_normalize(&mut vector);
        Ok(vector)
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l2_normalize(v: &mut [f64]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// HTTP adapter for a remote embedding service.
///
/// Wire contract: `POST endpoint` with JSON body `{"input": [texts]}`
/// (plus `"model"` when configured), expecting
/// `{"data": [{"embedding": [...]}, ...]}` with one entry per input, each
/// of the configured dimension. Credentials ride in an
/// `Authorization: Bearer` header when an API key is set.
pub struct RemoteEmbedder {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    dimension: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: Option<String>,
        api_key: Option<String>,
        dimension: usize,
    ) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.into(),
            model,
            api_key,
            dimension,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let batch = self.embed_batch(std::slice::from_ref(&text.to_string()))?;
        Ok(batch.into_iter().next().expect("one embedding per input"))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let body = EmbedRequest {
            input: texts,
            model: self.model.as_deref(),
        };
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::Transport(format!(
                "endpoint returned HTTP {}",
                response.status()
            )));
        }
        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::BadResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.dimension {
                    Err(EmbedError::BadResponse(format!(
                        "embedding of length {} does not match configured dimension {}",
                        item.embedding.len(),
                        self.dimension
                    )))
                } else {
                    Ok(item.embedding)
                }
            })
            .collect()
    }
}

/// Matrix of per-record vectors in catalog order. Rows are unit vectors or
/// all-zero (for records whose indexed text is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecIndex {
    dimension: usize,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl VecIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.rows.get(i).map(Vec::as_slice)
    }
}

const EMBED_BATCH: usize = 64;

/// Embed every record's indexed text (with abbreviation expansion) in
/// catalog order. A provider failure aborts the build and names the record
/// it failed on.
pub fn build_vector_index(
    catalog: &Catalog,
    embedder: &dyn Embedder,
    dict: &crate::textproc::AbbrDict,
) -> Result<VecIndex, SemanticError> {
    if catalog.is_empty() {
        return Err(SemanticError::EmptyCatalog);
    }
    let texts: Vec<String> = catalog
        .records()
        .iter()
        .map(|r| crate::textproc::expand_abbreviations(&r.indexed_text(), dict))
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
    for (chunk_start, chunk) in texts.chunks(EMBED_BATCH).enumerate().map(|(i, c)| (i * EMBED_BATCH, c)) {
        match embedder.embed_batch(chunk) {
            Ok(batch) => rows.extend(batch),
            Err(_) => {
                // Re-embed one by one to attribute the failure to a record.
                for (offset, text) in chunk.iter().enumerate() {
                    match embedder.embed(text) {
                        Ok(v) => rows.push(v),
                        Err(source) => {
                            let id = catalog.records()[chunk_start + offset].id.clone();
                            return Err(SemanticError::Embed { id, source });
                        }
                    }
                }
            }
        }
    }

    // Embedders like HashEmbedder already emit unit vectors; renormalizing
    // those would perturb the last bit for nothing. Only fix rows whose
    // norm genuinely deviates (e.g. a remote provider's raw vectors).
    for row in &mut rows {
        let norm = l2_norm(row);
        if norm > 0.0 && (norm - 1.0).abs() > 1e-12 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }
    Ok(VecIndex {
        dimension: embedder.dimension(),
        ids: catalog.ids().map(str::to_string).collect(),
        rows,
    })
}

/// Exact cosine search of the embedded query against every row. Returns the
/// top `k` by descending similarity, ties broken by ascending record id.
/// Zero-vector rows are never returned; a zero-vector query returns nothing.
pub fn vector_search(
    index: &VecIndex,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
) -> Result<Vec<ScoredCandidate>, SemanticError> {
    if embedder.dimension() != index.dimension {
        return Err(SemanticError::DimensionMismatch {
            index: index.dimension,
            embedder: embedder.dimension(),
        });
    }
    let query_vec = embedder.embed(query)?;
    if l2_norm(&query_vec) == 0.0 {
        return Ok(Vec::new());
    }

    let mut scored: Vec<(usize, f64)> = index
        .rows
        .iter()
        .enumerate()
        .filter(|(_, row)| l2_norm(row) > 0.0)
        .map(|(i, row)| (i, cosine(&query_vec, row)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine scores are finite")
            .then_with(|| index.ids[a.0].cmp(&index.ids[b.0]))
    });
    scored.truncate(k);

    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (i, score))| {
            ScoredCandidate::from_path(index.ids[i].clone(), score, PathSource::Semantic, rank + 1)
        })
        .collect())
}
