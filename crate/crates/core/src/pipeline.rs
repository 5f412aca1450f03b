//! Hybrid recall, constraint filtering, rank fusion, reranking, and the
//! end-to-end search entry point.
//!
//! A query flows understand -> recall -> filter -> fuse -> rerank. Recall
//! runs the lexical and semantic paths at pool size `N` on the rewritten
//! query and unions the hits; reciprocal rank fusion merges the two rank
//! lists without any cross-source score normalization; the reranker then
//! reorders the head of the fused list against the user's original query.
//! Scores are ordering keys only — nothing downstream may interpret their
//! magnitude.
//!
//! Constraint filtering defaults to SOFT: failing candidates are demoted
//! behind all passing ones instead of dropped, keeping recall intact.
//! Demotion is honored by every later stage, so a demoted candidate can
//! never outrank a passing one regardless of its fused or reranked score.

use crate::catalog::Catalog;
use crate::lexical::{build_lexical_index, lexical_search, Bm25Params, IndexError, LexIndex};
use crate::semantic::{build_vector_index, vector_search, Embedder, SemanticError, VecIndex};
use crate::textproc::{expand_abbreviations, tokenize, AbbrDict};
use crate::understanding::{
    LlmProvider, ProviderError, QueryConstraints, QueryUnderstander, UnderstandError,
    UnderstoodQuery,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Which retrieval path produced a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PathSource {
    Lexical,
    Semantic,
}

/// One candidate in a ranked list: record id, ordering score, the paths
/// that found it, and its rank within each path (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: String,
    pub score: f64,
    pub provenance: BTreeSet<PathSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexical_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic_rank: Option<usize>,
    /// Set when the candidate failed a soft constraint check.
    #[serde(default)]
    pub demoted: bool,
}

impl ScoredCandidate {
    /// Candidate produced by a single retrieval path.
    pub fn from_path(id: String, score: f64, source: PathSource, rank: usize) -> Self {
        let mut provenance = BTreeSet::new();
        provenance.insert(source);
        let (lexical_rank, semantic_rank) = match source {
            PathSource::Lexical => (Some(rank), None),
            PathSource::Semantic => (None, Some(rank)),
        };
        ScoredCandidate {
            id,
            score,
            provenance,
            lexical_rank,
            semantic_rank,
            demoted: false,
        }
    }
}

/// Rank-fusion parameters: the RRF constant and the per-source pool size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub rrf_k: f64,
    pub pool_size: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            rrf_k: 60.0,
            pool_size: 100,
        }
    }
}

impl FusionParams {
    pub fn new(rrf_k: f64, pool_size: usize) -> Result<Self, PipelineError> {
        if rrf_k.is_nan() || rrf_k <= 0.0 {
            return Err(PipelineError::BadParams(format!(
                "rrf_k must be > 0, got {rrf_k}"
            )));
        }
        if pool_size == 0 {
            return Err(PipelineError::BadParams("pool_size must be >= 1".into()));
        }
        Ok(FusionParams { rrf_k, pool_size })
    }
}

/// Constraint filtering behavior. SOFT demotes, HARD drops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    #[default]
    Soft,
    Hard,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Understand(#[from] UnderstandError),
    #[error("index/catalog mismatch: {0}")]
    IndexMismatch(String),
    #[error("top_m must be >= 1")]
    BadTopM,
    #[error("invalid pipeline parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Lexical(#[from] IndexError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
}

/// Recall output: the unioned candidate pool plus any degradation warnings.
#[derive(Debug, Clone)]
pub struct Recalled {
    pub candidates: Vec<ScoredCandidate>,
    pub warnings: Vec<String>,
}

/// Run both retrieval paths at pool size on the rewritten query and union
/// the hits by record id, merging provenance and per-source ranks.
///
/// A query-time embedding failure degrades to lexical-only recall with a
/// warning; a dimension mismatch or misaligned indexes is a hard error.
pub fn recall(
    uq: &UnderstoodQuery,
    lex: &LexIndex,
    vec: &VecIndex,
    embedder: &dyn Embedder,
    dict: &AbbrDict,
    params: &FusionParams,
    expand_queries: bool,
) -> Result<Recalled, PipelineError> {
    if lex.doc_ids() != vec.ids() {
        return Err(PipelineError::IndexMismatch(format!(
            "lexical index holds {} docs, vector index {} (or different ids)",
            lex.doc_count(),
            vec.len()
        )));
    }
    let mut warnings = Vec::new();

    let lexical_hits = lexical_search(lex, &uq.rewritten, dict, expand_queries, params.pool_size);

    let semantic_query = if expand_queries {
        expand_abbreviations(&uq.rewritten, dict)
    } else {
        uq.rewritten.clone()
    };
    let semantic_hits = match vector_search(vec, embedder, &semantic_query, params.pool_size) {
        Ok(hits) => hits,
        Err(SemanticError::QueryEmbed(e)) => {
            let warning = format!("semantic path unavailable ({e}); continuing lexical-only");
            log::warn!("{warning}");
            warnings.push(warning);
            Vec::new()
        }
        Err(other) => return Err(other.into()),
    };

    let mut union: BTreeMap<String, ScoredCandidate> = BTreeMap::new();
    for hit in lexical_hits {
        union.insert(hit.id.clone(), hit);
    }
    for hit in semantic_hits {
        match union.get_mut(&hit.id) {
            Some(existing) => {
                existing.provenance.insert(PathSource::Semantic);
                existing.semantic_rank = hit.semantic_rank;
            }
            None => {
                union.insert(hit.id.clone(), hit);
            }
        }
    }

    let mut candidates: Vec<ScoredCandidate> = union.into_values().collect();
    candidates.sort_by(|a, b| {
        let a_lex = a.lexical_rank.unwrap_or(usize::MAX);
        let b_lex = b.lexical_rank.unwrap_or(usize::MAX);
        let a_sem = a.semantic_rank.unwrap_or(usize::MAX);
        let b_sem = b.semantic_rank.unwrap_or(usize::MAX);
        a_lex
            .cmp(&b_lex)
            .then(a_sem.cmp(&b_sem))
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(Recalled {
        candidates,
        warnings,
    })
}

fn record_passes(
    record: &crate::catalog::CatalogRecord,
    constraints: &QueryConstraints,
) -> bool {
    if let Some(t) = constraints.temporal {
        let has_temporal = record.temporal_start.is_some() || record.temporal_end.is_some();
        if has_temporal {
            // open-ended record ranges: a missing bound never excludes
            let start_ok = record.temporal_start.is_none_or(|s| s <= t.end);
            let end_ok = record.temporal_end.is_none_or(|e| t.start <= e);
            if !(start_ok && end_ok) {
                return false;
            }
        }
    }
    if let Some(query_box) = constraints.spatial {
        if let Some(record_box) = record.bbox {
            if !record_box.intersects(&query_box) {
                return false;
            }
        }
    }
    true
}

/// Apply spatiotemporal constraints to a candidate list.
///
/// Records missing the relevant metadata always pass. HARD drops failing
/// candidates; SOFT keeps them but flags and moves them after all passing
/// candidates, preserving relative order inside each block. Empty
/// constraints are the identity.
pub fn filter_constraints(
    candidates: Vec<ScoredCandidate>,
    constraints: &QueryConstraints,
    catalog: &Catalog,
    mode: FilterMode,
) -> Vec<ScoredCandidate> {
    if constraints.is_empty() {
        return candidates;
    }
    let mut passing = Vec::with_capacity(candidates.len());
    let mut failing = Vec::new();
    for candidate in candidates {
        let passes = catalog
            .by_id(&candidate.id)
            .is_none_or(|record| record_passes(record, constraints));
        if passes {
            passing.push(candidate);
        } else {
            failing.push(candidate);
        }
    }
    match mode {
        FilterMode::Hard => passing,
        FilterMode::Soft => {
            for candidate in &mut failing {
                candidate.demoted = true;
            }
            passing.extend(failing);
            passing
        }
    }
}

/// Reciprocal rank fusion: each candidate scores the sum over the paths
/// that ranked it of `1 / (rrf_k + rank)`, then the list sorts by score
/// descending with ties broken by ascending record id. Fusion never drops
/// or duplicates candidates.
///
/// Demoted candidates sort after all passing ones whatever their fused
/// score; within each block the score ordering applies.
pub fn fuse(mut candidates: Vec<ScoredCandidate>, params: &FusionParams) -> Vec<ScoredCandidate> {
    for candidate in &mut candidates {
        let mut score = 0.0;
        if let Some(rank) = candidate.lexical_rank {
            score += 1.0 / (params.rrf_k + rank as f64);
        }
        if let Some(rank) = candidate.semantic_rank {
            score += 1.0 / (params.rrf_k + rank as f64);
        }
        candidate.score = score;
    }
    candidates.sort_by(|a, b| {
        a.demoted
            .cmp(&b.demoted)
            .then_with(|| b.score.partial_cmp(&a.score).expect("finite fused scores"))
            .then_with(|| a.id.cmp(&b.id))
    });
    candidates
}

/// What the reranker sees per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDoc {
    pub id: String,
    pub title: String,
    pub summary: String,
    pub fused_score: f64,
}

#[derive(Debug, Error)]
pub enum RerankError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("bad score vector: {0}")]
    BadScores(String),
}

/// Assigns one relevance score per candidate given the original query.
pub trait Reranker: Send + Sync {
    fn rerank(&self, query: &str, candidates: &[CandidateDoc]) -> Result<Vec<f64>, RerankError>;
}

/// Deterministic reranker over the same inputs an LLM reranker reads:
/// `alpha * minmax(fused) + beta * jaccard(query, title) +
/// gamma * jaccard(query, summary)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineReranker {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for BaselineReranker {
    fn default() -> Self {
        BaselineReranker {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
        }
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_vec().into_iter().collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

impl Reranker for BaselineReranker {
    fn rerank(&self, query: &str, candidates: &[CandidateDoc]) -> Result<Vec<f64>, RerankError> {
        let query_tokens = token_set(query);
        let min = candidates
            .iter()
            .map(|c| c.fused_score)
            .fold(f64::INFINITY, f64::min);
        let max = candidates
            .iter()
            .map(|c| c.fused_score)
            .fold(f64::NEG_INFINITY, f64::max);
        let spread = max - min;
        Ok(candidates
            .iter()
            .map(|c| {
                let normalized = if spread > 0.0 {
                    (c.fused_score - min) / spread
                } else {
                    0.0
                };
                self.alpha * normalized
                    + self.beta * jaccard(&query_tokens, &token_set(&c.title))
                    + self.gamma * jaccard(&query_tokens, &token_set(&c.summary))
            })
            .collect())
    }
}

pub const RERANK_PROMPT_TEMPLATE: &str = include_str!("../assets/rerank_prompt.txt");

/// Batch size for LLM reranking prompts.
pub const RERANK_BATCH: usize = 20;

/// Render the rerank prompt for one candidate batch.
pub fn render_rerank_prompt(query: &str, candidates: &[CandidateDoc]) -> String {
    let listing = candidates
        .iter()
        .map(|c| format!("- id: {}\n  title: {}\n  summary: {}", c.id, c.title, c.summary))
        .collect::<Vec<_>>()
        .join("\n");
    RERANK_PROMPT_TEMPLATE
        .replace("{query}", query)
        .replace("{candidates}", &listing)
}

/// LLM-backed reranker: one prompt per batch of at most [`RERANK_BATCH`]
/// candidates listing id/title/summary, expecting a JSON array of
/// `{"id", "score"}` with scores 0-10. A parse failure is retried once;
/// persistent failure surfaces as an error and the pipeline keeps the
/// fused order.
pub struct LlmReranker {
    provider: Box<dyn LlmProvider>,
}

#[derive(Deserialize)]
struct RerankReplyItem {
    id: String,
    score: f64,
}

impl LlmReranker {
    pub fn new(provider: Box<dyn LlmProvider>) -> Self {
        LlmReranker { provider }
    }

    fn score_batch(&self, query: &str, batch: &[CandidateDoc]) -> Result<Vec<f64>, RerankError> {
        let prompt = render_rerank_prompt(query, batch);
        let mut last_error = RerankError::BadScores("no attempt made".into());
        for _attempt in 0..2 {
            match self.provider.complete(&prompt) {
                Ok(reply) => match serde_json::from_str::<Vec<RerankReplyItem>>(reply.trim()) {
                    Ok(items) => {
                        let by_id: BTreeMap<String, f64> =
                            items.into_iter().map(|i| (i.id, i.score)).collect();
                        // a candidate the provider skipped scores zero
                        return Ok(batch
                            .iter()
                            .map(|c| by_id.get(&c.id).copied().unwrap_or(0.0))
                            .collect());
                    }
                    Err(e) => last_error = RerankError::BadScores(e.to_string()),
                },
                Err(e) => last_error = RerankError::Provider(e),
            }
        }
        Err(last_error)
    }
}

impl Reranker for LlmReranker {
    fn rerank(&self, query: &str, candidates: &[CandidateDoc]) -> Result<Vec<f64>, RerankError> {
        let mut scores = Vec::with_capacity(candidates.len());
        for batch in candidates.chunks(RERANK_BATCH) {
            scores.extend(self.score_batch(query, batch)?);
        }
        Ok(scores)
    }
}

/// Rerank output; `reranker_fallback` marks a reranker failure where the
/// fused order was kept.
#[derive(Debug, Clone)]
pub struct Reranked {
    pub candidates: Vec<ScoredCandidate>,
    pub reranker_fallback: bool,
}

/// Apply the reranker to the top `top_m` fused candidates and reorder that
/// block by reranker score descending (ties keep fused order; demoted
/// candidates stay behind passing ones). Candidates beyond `top_m` keep
/// their fused order after the block. A reranker failure returns the fused
/// order unchanged with the fallback flag set.
pub fn rerank(
    query: &str,
    fused: Vec<ScoredCandidate>,
    catalog: &Catalog,
    reranker: &dyn Reranker,
    top_m: usize,
) -> Result<Reranked, PipelineError> {
    if top_m == 0 {
        return Err(PipelineError::BadTopM);
    }
    let head_len = top_m.min(fused.len());
    if head_len <= 1 {
        return Ok(Reranked {
            candidates: fused,
            reranker_fallback: false,
        });
    }

    let docs: Vec<CandidateDoc> = fused[..head_len]
        .iter()
        .map(|c| {
            let record = catalog.by_id(&c.id);
            CandidateDoc {
                id: c.id.clone(),
                title: record.map(|r| r.title.clone()).unwrap_or_default(),
                summary: record.map(|r| r.summary.clone()).unwrap_or_default(),
                fused_score: c.score,
            }
        })
        .collect();

    let scores = match reranker.rerank(query, &docs) {
        Ok(scores) if scores.len() == docs.len() => scores,
        Ok(scores) => {
            log::warn!(
                "reranker returned {} scores for {} candidates; keeping fused order",
                scores.len(),
                docs.len()
            );
            return Ok(Reranked {
                candidates: fused,
                reranker_fallback: true,
            });
        }
        Err(e) => {
            log::warn!("reranker failed ({e}); keeping fused order");
            return Ok(Reranked {
                candidates: fused,
                reranker_fallback: true,
            });
        }
    };

    let mut head: Vec<(usize, ScoredCandidate)> = fused[..head_len]
        .iter()
        .cloned()
        .enumerate()
        .collect();
    head.sort_by(|(ia, a), (ib, b)| {
        a.demoted
            .cmp(&b.demoted)
            .then_with(|| scores[*ib].partial_cmp(&scores[*ia]).expect("finite scores"))
            .then_with(|| ia.cmp(ib)) // ties keep fused order
    });

    let mut candidates: Vec<ScoredCandidate> = head
        .into_iter()
        .map(|(i, mut c)| {
            c.score = scores[i];
            c
        })
        .collect();
    candidates.extend_from_slice(&fused[head_len..]);
    Ok(Reranked {
        candidates,
        reranker_fallback: false,
    })
}

/// One row of the final ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub id: String,
    pub score: f64,
    pub rank: usize,
    pub provenance: BTreeSet<PathSource>,
    pub demoted: bool,
}

/// Candidate counts per pipeline stage, for `--explain` output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub lexical: usize,
    pub semantic: usize,
    pub union: usize,
    pub passing: usize,
    pub demoted: usize,
    pub dropped: usize,
    pub reranked: usize,
}

/// Diagnostic view of one search: the understood query and per-stage
/// candidate counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchExplain {
    pub understood: UnderstoodQuery,
    pub stage_counts: StageCounts,
}

/// Full result of one search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutput {
    pub results: Vec<RankedResult>,
    pub explain: SearchExplain,
    pub warnings: Vec<String>,
}

/// Engine-wide knobs. All defaults follow the shipped configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub bm25: Bm25Params,
    pub fusion: FusionParams,
    pub filter_mode: FilterMode,
    pub top_m: usize,
    pub result_k: usize,
    /// Apply abbreviation expansion to queries too (indexing always
    /// expands). Off by default.
    pub expand_queries: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            bm25: Bm25Params::default(),
            fusion: FusionParams::default(),
            filter_mode: FilterMode::Soft,
            top_m: 50,
            result_k: 100,
            expand_queries: false,
        }
    }
}

/// Immutable engine state: catalog, both indexes, and the pluggable
/// understanding/embedding/reranking components. Shareable across threads;
/// concurrent searches are independent.
pub struct SearchEngine {
    catalog: Catalog,
    lex: LexIndex,
    vec: VecIndex,
    embedder: Box<dyn Embedder>,
    dict: AbbrDict,
    understander: QueryUnderstander,
    reranker: Box<dyn Reranker>,
    options: EngineOptions,
}

impl SearchEngine {
    /// Build both indexes over `catalog` and assemble an engine.
    pub fn build(
        catalog: Catalog,
        dict: AbbrDict,
        embedder: Box<dyn Embedder>,
        understander: QueryUnderstander,
        reranker: Box<dyn Reranker>,
        options: EngineOptions,
    ) -> Result<Self, PipelineError> {
        let lex = build_lexical_index(&catalog, &dict, options.bm25)?;
        let vec = build_vector_index(&catalog, embedder.as_ref(), &dict)?;
        Self::from_parts(catalog, lex, vec, dict, embedder, understander, reranker, options)
    }

    /// Assemble an engine from pre-built indexes, verifying they align
    /// with the catalog.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        catalog: Catalog,
        lex: LexIndex,
        vec: VecIndex,
        dict: AbbrDict,
        embedder: Box<dyn Embedder>,
        understander: QueryUnderstander,
        reranker: Box<dyn Reranker>,
        options: EngineOptions,
    ) -> Result<Self, PipelineError> {
        if options.top_m == 0 {
            return Err(PipelineError::BadTopM);
        }
        if options.result_k == 0 {
            return Err(PipelineError::BadParams("result_k must be >= 1".into()));
        }
        FusionParams::new(options.fusion.rrf_k, options.fusion.pool_size)?;
        let catalog_ids: Vec<&str> = catalog.ids().collect();
        if lex.doc_ids() != catalog_ids.as_slice() || vec.ids() != catalog_ids.as_slice() {
            return Err(PipelineError::IndexMismatch(
                "index record ids do not match catalog order".into(),
            ));
        }
        if embedder.dimension() != vec.dimension() {
            return Err(PipelineError::IndexMismatch(format!(
                "vector index dimension {} does not match embedder dimension {}",
                vec.dimension(),
                embedder.dimension()
            )));
        }
        Ok(SearchEngine {
            catalog,
            lex,
            vec,
            embedder,
            dict,
            understander,
            reranker,
            options,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn lexical_index(&self) -> &LexIndex {
        &self.lex
    }

    pub fn vector_index(&self) -> &VecIndex {
        &self.vec
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    /// Full pipeline at the configured result depth.
    pub fn search(&self, query: &str) -> Result<SearchOutput, PipelineError> {
        self.search_to_depth(query, self.options.result_k)
    }

    /// Full pipeline, returning at most `depth` results. Provider failures
    /// degrade to deterministic fallbacks; only an empty query or broken
    /// engine state aborts.
    pub fn search_to_depth(&self, query: &str, depth: usize) -> Result<SearchOutput, PipelineError> {
        let understood = self.understander.understand(query)?;
        let mut warnings = understood.warnings;
        let uq = understood.query;

        let recalled = recall(
            &uq,
            &self.lex,
            &self.vec,
            self.embedder.as_ref(),
            &self.dict,
            &self.options.fusion,
            self.options.expand_queries,
        )?;
        warnings.extend(recalled.warnings);

        let mut counts = StageCounts {
            lexical: recalled
                .candidates
                .iter()
                .filter(|c| c.lexical_rank.is_some())
                .count(),
            semantic: recalled
                .candidates
                .iter()
                .filter(|c| c.semantic_rank.is_some())
                .count(),
            union: recalled.candidates.len(),
            ..StageCounts::default()
        };

        let filtered = filter_constraints(
            recalled.candidates,
            &uq.constraints,
            &self.catalog,
            self.options.filter_mode,
        );
        counts.demoted = filtered.iter().filter(|c| c.demoted).count();
        counts.passing = filtered.len() - counts.demoted;
        counts.dropped = counts.union - filtered.len();

        let fused = fuse(filtered, &self.options.fusion);
        let reranked = rerank(
            &uq.original,
            fused,
            &self.catalog,
            self.reranker.as_ref(),
            self.options.top_m,
        )?;
        if reranked.reranker_fallback {
            warnings.push("reranker unavailable; fused order returned".to_string());
        }
        counts.reranked = self.options.top_m.min(reranked.candidates.len());

        let results = reranked
            .candidates
            .into_iter()
            .take(depth)
            .enumerate()
            .map(|(i, c)| RankedResult {
                id: c.id,
                score: c.score,
                rank: i + 1,
                provenance: c.provenance,
                demoted: c.demoted,
            })
            .collect();

        Ok(SearchOutput {
            results,
            explain: SearchExplain {
                understood: uq,
                stage_counts: counts,
            },
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{BBox, CatalogRecord, Source};
    use crate::semantic::HashEmbedder;
    use crate::understanding::{StageMode, TemporalRange};
    use chrono::NaiveDate;

    fn record(id: &str, title: &str) -> CatalogRecord {
        CatalogRecord {
            id: id.to_string(),
            title: title.to_string(),
            summary: String::new(),
            variables: Vec::new(),
            keywords: Vec::new(),
            source: Source::Other,
            temporal_start: None,
            temporal_end: None,
            bbox: None,
            urls: Vec::new(),
        }
    }

    fn catalog(entries: &[(&str, &str)]) -> Catalog {
        Catalog::from_records(entries.iter().map(|(id, t)| record(id, t))).unwrap()
    }

    fn engine(entries: &[(&str, &str)]) -> SearchEngine {
        SearchEngine::build(
            catalog(entries),
            AbbrDict::builtin(),
            Box::new(HashEmbedder::default()),
            QueryUnderstander::default(),
            Box::new(BaselineReranker::default()),
            EngineOptions::default(),
        )
        .unwrap()
    }

    fn candidate(id: &str, lex: Option<usize>, sem: Option<usize>) -> ScoredCandidate {
        let mut provenance = BTreeSet::new();
        if lex.is_some() {
            provenance.insert(PathSource::Lexical);
        }
        if sem.is_some() {
            provenance.insert(PathSource::Semantic);
        }
        ScoredCandidate {
            id: id.to_string(),
            score: 0.0,
            provenance,
            lexical_rank: lex,
            semantic_rank: sem,
            demoted: false,
        }
    }

    fn understood(query: &str) -> UnderstoodQuery {
        QueryUnderstander::default()
            .understand(query)
            .unwrap()
            .query
    }

    #[test]
    fn recall_merges_provenance_for_shared_hits() {
        let cat = catalog(&[("a", "rain rain"), ("b", "snow")]);
        let dict = AbbrDict::empty();
        let lex = build_lexical_index(&cat, &dict, Bm25Params::default()).unwrap();
        let embedder = HashEmbedder::default();
        let vec = build_vector_index(&cat, &embedder, &dict).unwrap();

        let uq = understood("rain");
        let recalled = recall(&uq, &lex, &vec, &embedder, &dict, &FusionParams::default(), false)
            .unwrap();
        let a = recalled.candidates.iter().find(|c| c.id == "a").unwrap();
        assert!(a.provenance.contains(&PathSource::Lexical));
        assert!(a.provenance.contains(&PathSource::Semantic));
        assert!(a.lexical_rank.is_some() && a.semantic_rank.is_some());
        // union at least as large as each path
        assert!(!recalled.candidates.is_empty());
    }

    #[test]
    fn recall_rejects_mismatched_indexes() {
        let cat_a = catalog(&[("a", "rain")]);
        let cat_b = catalog(&[("b", "snow")]);
        let dict = AbbrDict::empty();
        let lex = build_lexical_index(&cat_a, &dict, Bm25Params::default()).unwrap();
        let embedder = HashEmbedder::default();
        let vec = build_vector_index(&cat_b, &embedder, &dict).unwrap();
        let uq = understood("rain");
        let err = recall(&uq, &lex, &vec, &embedder, &dict, &FusionParams::default(), false)
            .unwrap_err();
        assert!(matches!(err, PipelineError::IndexMismatch(_)));
    }

    #[test]
    fn fuse_scores_match_hand_evaluated_rrf() {
        let fused = fuse(
            vec![candidate("both", Some(1), Some(1)), candidate("one", Some(1), None)],
            &FusionParams::default(),
        );
        let both = fused.iter().find(|c| c.id == "both").unwrap();
        let one = fused.iter().find(|c| c.id == "one").unwrap();
        assert!((both.score - 2.0 / 61.0).abs() < 1e-12);
        assert!((one.score - 1.0 / 61.0).abs() < 1e-12);
        assert_eq!(fused[0].id, "both");
    }

    #[test]
    fn fuse_breaks_ties_by_ascending_id() {
        let fused = fuse(
            vec![candidate("zed", Some(2), None), candidate("abc", None, Some(2))],
            &FusionParams::default(),
        );
        assert_eq!(fused[0].id, "abc");
        assert_eq!(fused[1].id, "zed");
        assert_eq!(fused[0].score, fused[1].score);
    }

    #[test]
    fn fuse_is_a_permutation() {
        let input = vec![
            candidate("a", Some(3), None),
            candidate("b", Some(1), Some(4)),
            candidate("c", None, Some(1)),
        ];
        let mut in_ids: Vec<String> = input.iter().map(|c| c.id.clone()).collect();
        let fused = fuse(input, &FusionParams::default());
        let mut out_ids: Vec<String> = fused.iter().map(|c| c.id.clone()).collect();
        in_ids.sort();
        out_ids.sort();
        assert_eq!(in_ids, out_ids);
    }

    fn dated_record(id: &str, start: (i32, u32, u32), end: (i32, u32, u32)) -> CatalogRecord {
        let mut r = record(id, "dated");
        r.temporal_start = NaiveDate::from_ymd_opt(start.0, start.1, start.2);
        r.temporal_end = NaiveDate::from_ymd_opt(end.0, end.1, end.2);
        r
    }

    fn temporal_2020() -> QueryConstraints {
        QueryConstraints {
            temporal: Some(TemporalRange {
                start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
                end: NaiveDate::from_ymd_opt(2020, 12, 31).unwrap(),
            }),
            spatial: None,
        }
    }

    #[test]
    fn filter_with_empty_constraints_is_identity() {
        let cat = catalog(&[("a", "x"), ("b", "y")]);
        let cands = vec![candidate("a", Some(1), None), candidate("b", Some(2), None)];
        let out = filter_constraints(cands.clone(), &QueryConstraints::default(), &cat, FilterMode::Soft);
        assert_eq!(out, cands);
    }

    #[test]
    fn hard_filter_drops_disjoint_temporal_ranges() {
        let cat = Catalog::from_records(vec![
            dated_record("old", (1990, 1, 1), (1999, 12, 31)),
            dated_record("new", (2020, 3, 1), (2021, 3, 1)),
        ])
        .unwrap();
        let cands = vec![candidate("old", Some(1), None), candidate("new", Some(2), None)];
        let out = filter_constraints(cands, &temporal_2020(), &cat, FilterMode::Hard);
        let ids: Vec<&str> = out.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["new"]);
    }

    #[test]
    fn records_without_temporal_metadata_always_pass() {
        let cat = catalog(&[("bare", "no dates")]);
        let cands = vec![candidate("bare", Some(1), None)];
        let out = filter_constraints(cands, &temporal_2020(), &cat, FilterMode::Hard);
        assert_eq!(out.len(), 1);
        assert!(!out[0].demoted);
    }

    #[test]
    fn soft_filter_is_a_stable_partition() {
        let cat = Catalog::from_records(vec![
            dated_record("fail1", (1990, 1, 1), (1991, 1, 1)),
            dated_record("pass1", (2019, 1, 1), (2021, 1, 1)),
            dated_record("fail2", (1980, 1, 1), (1981, 1, 1)),
            dated_record("pass2", (2020, 5, 1), (2020, 6, 1)),
        ])
        .unwrap();
        let cands = vec![
            candidate("fail1", Some(1), None),
            candidate("pass1", Some(2), None),
            candidate("fail2", Some(3), None),
            candidate("pass2", Some(4), None),
        ];
        let out = filter_constraints(cands, &temporal_2020(), &cat, FilterMode::Soft);
        let ids: Vec<&str> = out.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["pass1", "pass2", "fail1", "fail2"]);
        assert!(!out[0].demoted && !out[1].demoted);
        assert!(out[2].demoted && out[3].demoted);
    }

    #[test]
    fn open_ended_record_ranges_use_lenient_intersection() {
        let mut only_start = record("s", "start only");
        only_start.temporal_start = NaiveDate::from_ymd_opt(2025, 1, 1);
        let mut only_end = record("e", "end only");
        only_end.temporal_end = NaiveDate::from_ymd_opt(1990, 1, 1);
        let cat = Catalog::from_records(vec![only_start, only_end]).unwrap();
        let cands = vec![candidate("s", Some(1), None), candidate("e", Some(2), None)];
        // 2020 window: record starting 2025 fails, record ending 1990 fails
        let out = filter_constraints(cands, &temporal_2020(), &cat, FilterMode::Hard);
        assert!(out.is_empty());
    }

    #[test]
    fn spatial_filter_respects_bbox_intersection() {
        let mut florida = record("fl", "florida data");
        florida.bbox = Some(BBox { west: -86.0, south: 25.0, east: -80.0, north: 30.0 });
        let mut alaska = record("ak", "alaska data");
        alaska.bbox = Some(BBox { west: -170.0, south: 55.0, east: -130.0, north: 71.0 });
        let cat = Catalog::from_records(vec![florida, alaska]).unwrap();
        let constraints = QueryConstraints {
            temporal: None,
            spatial: Some(BBox { west: -87.63, south: 24.52, east: -80.03, north: 31.0 }),
        };
        let cands = vec![candidate("fl", Some(1), None), candidate("ak", Some(2), None)];
        let out = filter_constraints(cands, &constraints, &cat, FilterMode::Hard);
        let ids: Vec<&str> = out.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["fl"]);
    }

    #[test]
    fn baseline_reranker_with_alpha_only_preserves_fused_order() {
        let cat = catalog(&[("a", "alpha doc"), ("b", "beta doc"), ("c", "gamma doc")]);
        let fused = fuse(
            vec![
                candidate("a", Some(1), Some(1)),
                candidate("b", Some(2), None),
                candidate("c", None, Some(3)),
            ],
            &FusionParams::default(),
        );
        let fused_ids: Vec<String> = fused.iter().map(|c| c.id.clone()).collect();
        let reranker = BaselineReranker { alpha: 1.0, beta: 0.0, gamma: 0.0 };
        let out = rerank("any query", fused, &cat, &reranker, 3).unwrap();
        let out_ids: Vec<String> = out.candidates.iter().map(|c| c.id.clone()).collect();
        assert_eq!(out_ids, fused_ids);
        assert!(!out.reranker_fallback);
    }

    #[test]
    fn rerank_rejects_top_m_zero_and_passes_singletons() {
        let cat = catalog(&[("a", "only")]);
        let fused = vec![candidate("a", Some(1), None)];
        assert!(matches!(
            rerank("q", fused.clone(), &cat, &BaselineReranker::default(), 0),
            Err(PipelineError::BadTopM)
        ));
        let out = rerank("q", fused, &cat, &BaselineReranker::default(), 1).unwrap();
        assert_eq!(out.candidates[0].id, "a");
    }

    #[test]
    fn stub_reranker_promotes_third_candidate() {
        let cat = catalog(&[("a", "first"), ("b", "second"), ("c", "third")]);
        let fused = fuse(
            vec![
                candidate("a", Some(1), None),
                candidate("b", Some(2), None),
                candidate("c", Some(3), None),
            ],
            &FusionParams::default(),
        );
        assert_eq!(fused[2].id, "c");

        let docs: Vec<CandidateDoc> = fused
            .iter()
            .map(|c| CandidateDoc {
                id: c.id.clone(),
                title: cat.by_id(&c.id).unwrap().title.clone(),
                summary: String::new(),
                fused_score: c.score,
            })
            .collect();
        let prompt = render_rerank_prompt("promote c", &docs);
        let provider = crate::understanding::StubProvider::new()
            .on(&prompt, r#"[{"id":"a","score":0},{"id":"b","score":0},{"id":"c","score":10}]"#);
        let reranker = LlmReranker::new(Box::new(provider));

        let out = rerank("promote c", fused, &cat, &reranker, 3).unwrap();
        assert_eq!(out.candidates[0].id, "c");
        assert!((out.candidates[0].score - 10.0).abs() < 1e-12);
        assert!(!out.reranker_fallback);
    }

    #[test]
    fn failing_reranker_returns_fused_order_with_flag() {
        let cat = catalog(&[("a", "first"), ("b", "second")]);
        let fused = fuse(
            vec![candidate("a", Some(1), None), candidate("b", Some(2), None)],
            &FusionParams::default(),
        );
        let fused_ids: Vec<String> = fused.iter().map(|c| c.id.clone()).collect();
        let reranker = LlmReranker::new(Box::new(crate::understanding::FailingProvider));
        let out = rerank("q", fused, &cat, &reranker, 2).unwrap();
        let out_ids: Vec<String> = out.candidates.iter().map(|c| c.id.clone()).collect();
        assert_eq!(out_ids, fused_ids);
        assert!(out.reranker_fallback);
    }

    #[test]
    fn search_ranks_sole_matching_record_first() {
        let e = engine(&[
            ("target", "graupel observations"),
            ("other1", "sea surface height"),
            ("other2", "ozone column"),
        ]);
        let out = e.search("graupel").unwrap();
        assert!(!out.results.is_empty());
        assert_eq!(out.results[0].id, "target");
        assert_eq!(out.results[0].rank, 1);
    }

    #[test]
    fn search_is_deterministic() {
        let e = engine(&[
            ("a", "rain and temperature"),
            ("b", "temperature record"),
            ("c", "rain gauge network"),
        ]);
        let first = e.search("rain temperature 2020").unwrap();
        let second = e.search("rain temperature 2020").unwrap();
        assert_eq!(first, second);
        let json_a = serde_json::to_string(&first).unwrap();
        let json_b = serde_json::to_string(&second).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn type_b_flood_query_prefers_precipitation_record() {
        let e = engine(&[
            ("precip", "Daily gridded precipitation analysis"),
            ("aero", "Aerosol optical depth climatology"),
        ]);
        let out = e.search("flood analysis").unwrap();
        assert_eq!(out.explain.understood.intent, crate::understanding::IntentType::TypeB);
        assert_eq!(out.results[0].id, "precip");
        let aero_rank = out.results.iter().find(|r| r.id == "aero").map(|r| r.rank);
        assert!(aero_rank.is_none_or(|r| r > 1));
    }

    #[test]
    fn search_propagates_empty_query_error() {
        let e = engine(&[("a", "rain")]);
        assert!(matches!(
            e.search("   "),
            Err(PipelineError::Understand(UnderstandError::EmptyQuery))
        ));
    }

    #[test]
    fn search_with_failing_providers_still_returns_results() {
        let understander = QueryUnderstander {
            intent_mode: StageMode::Provider,
            rewrite_mode: StageMode::Provider,
            provider: Some(Box::new(crate::understanding::FailingProvider)),
            ..QueryUnderstander::default()
        };
        let e = SearchEngine::build(
            catalog(&[("precip", "precipitation analysis"), ("aero", "aerosol data")]),
            AbbrDict::builtin(),
            Box::new(HashEmbedder::default()),
            understander,
            Box::new(LlmReranker::new(Box::new(crate::understanding::FailingProvider))),
            EngineOptions::default(),
        )
        .unwrap();
        let out = e.search("flood analysis").unwrap();
        assert!(!out.results.is_empty());
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn recall_pool_covers_both_single_paths() {
        let e = engine(&[
            ("a", "rain rain rain"),
            ("b", "rain snow"),
            ("c", "snow snow"),
            ("d", "sleet"),
        ]);
        let uq = understood("rain snow");
        let pool = FusionParams::default();
        let lex_hits = lexical_search(e.lexical_index(), &uq.rewritten, &AbbrDict::builtin(), false, pool.pool_size);
        let sem_hits = vector_search(e.vector_index(), e.embedder.as_ref(), &uq.rewritten, pool.pool_size)
            .unwrap();
        let recalled = recall(
            &uq,
            e.lexical_index(),
            e.vector_index(),
            e.embedder.as_ref(),
            &AbbrDict::builtin(),
            &pool,
            false,
        )
        .unwrap();
        let union_ids: BTreeSet<&str> = recalled.candidates.iter().map(|c| c.id.as_str()).collect();
        for hit in lex_hits.iter().chain(sem_hits.iter()) {
            assert!(union_ids.contains(hit.id.as_str()), "{} missing from union", hit.id);
        }
        assert!(recalled.candidates.len() >= lex_hits.len().max(sem_hits.len()));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_candidates() -> impl Strategy<Value = Vec<ScoredCandidate>> {
            prop::collection::btree_set("[a-z]{1,6}", 1..15).prop_flat_map(|ids| {
                let ids: Vec<String> = ids.into_iter().collect();
                let n = ids.len();
                (
                    Just(ids),
                    prop::collection::vec((prop::option::of(1..50usize), prop::option::of(1..50usize)), n),
                )
                    .prop_map(|(ids, ranks)| {
                        ids.into_iter()
                            .zip(ranks)
                            .map(|(id, (lex, sem))| {
                                let (lex, sem) = if lex.is_none() && sem.is_none() {
                                    (Some(1), None) // fuse precondition: at least one rank
                                } else {
                                    (lex, sem)
                                };
                                candidate(&id, lex, sem)
                            })
                            .collect()
                    })
            })
        }

        proptest! {
            #[test]
            fn fuse_never_drops_or_duplicates(cands in arb_candidates()) {
                let mut before: Vec<String> = cands.iter().map(|c| c.id.clone()).collect();
                let fused = fuse(cands, &FusionParams::default());
                let mut after: Vec<String> = fused.iter().map(|c| c.id.clone()).collect();
                before.sort();
                after.sort();
                prop_assert_eq!(before, after);
            }

            #[test]
            fn fused_scores_sorted_descending(cands in arb_candidates()) {
                let fused = fuse(cands, &FusionParams::default());
                for pair in fused.windows(2) {
                    prop_assert!(pair[0].score >= pair[1].score);
                }
            }
        }
    }
}
