//! Inverted index and BM25 ranking over catalog text fields.
//!
//! Each document is the record's title, summary, variables, and keywords
//! concatenated into one unweighted field, passed through abbreviation
//! expansion and then tokenized. Scoring is Okapi BM25 with the
//! always-non-negative `ln(1 + (N - df + 0.5) / (df + 0.5))` idf smoothing;
//! with a small corpus the plain idf would go negative on majority terms.

use crate::catalog::Catalog;
use crate::pipeline::{PathSource, ScoredCandidate};
use crate::textproc::{expand_abbreviations, tokenize, AbbrDict, TokenStream};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Okapi BM25 parameters. Defaults are the canonical `k1 = 1.2`,
/// `b = 0.75`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if k1.is_nan() || k1 <= 0.0 {
            return Err(IndexError::BadParams(format!("k1 must be > 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(IndexError::BadParams(format!(
                "b must be in [0, 1], got {b}"
            )));
        }
        Ok(Bm25Params { k1, b })
    }
}

/// One posting: document position and within-document term frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: usize,
    pub tf: u32,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("nothing to index: catalog is empty")]
    EmptyCatalog,
    #[error("document position {doc} out of range (doc_count = {count})")]
    DocOutOfRange { doc: usize, count: usize },
    #[error("invalid BM25 parameters: {0}")]
    BadParams(String),
}

/// Inverted index over a catalog, frozen after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
    doc_count: usize,
    doc_ids: Vec<String>,
    /// Which record fields were concatenated into the indexed text.
    fields: Vec<String>,
    params: Bm25Params,
}

impl LexIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc: usize) -> Option<usize> {
        self.doc_lengths.get(doc).copied()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    /// Number of documents containing `term`.
    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn term_frequency(&self, term: &str, doc: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&doc, |post| post.doc)
                    .ok()
                    .map(|i| p[i].tf)
            })
            .unwrap_or(0)
    }
}

/// BM25 weight of one term-document pair:
/// `idf(df) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))`.
pub fn bm25_term_weight(
    params: Bm25Params,
    tf: u32,
    df: usize,
    doc_count: usize,
    doc_len: usize,
    avg_doc_length: f64,
) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let idf = bm25_idf(df, doc_count);
    let tf = f64::from(tf);
    let norm = params.k1 * (1.0 - params.b + params.b * doc_len as f64 / avg_doc_length);
    idf * tf * (params.k1 + 1.0) / (tf + norm)
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; non-negative for every `df <= N`.
pub fn bm25_idf(df: usize, doc_count: usize) -> f64 {
    (1.0 + (doc_count as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

/// Build the inverted index for a catalog. Abbreviation expansion runs
/// before tokenization, so an empty dictionary indexes the raw text.
pub fn build_lexical_index(
    catalog: &Catalog,
    dict: &AbbrDict,
    params: Bm25Params,
) -> Result<LexIndex, IndexError> {
    if catalog.is_empty() {
        return Err(IndexError::EmptyCatalog);
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(catalog.len());
    let mut doc_ids = Vec::with_capacity(catalog.len());

    for (doc, record) in catalog.records().iter().enumerate() {
        let text = expand_abbreviations(&record.indexed_text(), dict);
        let tokens = tokenize(&text);
        doc_lengths.push(tokens.len());
        doc_ids.push(record.id.clone());

        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for token in &tokens {
            *counts.entry(token.as_str()).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            postings
                .entry(term.to_string())
                .or_default()
                .push(Posting { doc, tf });
        }
    }

    let avg_doc_length = doc_lengths.iter().sum::<usize>() as f64 / doc_lengths.len() as f64;
    Ok(LexIndex {
        postings,
        doc_lengths,
        avg_doc_length,
        doc_count: catalog.len(),
        doc_ids,
        fields: ["title", "summary", "variables", "keywords"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        params,
    })
}

/// BM25 score of one document for a query: the sum of term weights over the
/// query's unique terms, in first-occurrence order. Terms absent from the
/// document contribute zero.
pub fn bm25_score(
    index: &LexIndex,
    query_terms: &TokenStream,
    doc: usize,
) -> Result<f64, IndexError> {
    if doc >= index.doc_count {
        return Err(IndexError::DocOutOfRange {
            doc,
            count: index.doc_count,
        });
    }
    let doc_len = index.doc_lengths[doc];
    let mut score = 0.0;
    for term in query_terms.unique() {
        let tf = index.term_frequency(term, doc);
        if tf == 0 {
            continue;
        }
        let df = index.doc_frequency(term);
        score += bm25_term_weight(
            index.params,
            tf,
            df,
            index.doc_count,
            doc_len,
            index.avg_doc_length,
        );
    }
    Ok(score)
}

/// Score every document containing at least one query term and return the
/// top `k` by descending score, ties broken by ascending record id. The
/// query goes through the same tokenizer as indexing; `expand_query`
/// applies abbreviation expansion to the query first (off by default in
/// engine configuration).
pub fn lexical_search(
    index: &LexIndex,
    query: &str,
    dict: &AbbrDict,
    expand_query: bool,
    k: usize,
) -> Vec<ScoredCandidate> {
    let query_text = if expand_query {
        expand_abbreviations(query, dict)
    } else {
        query.to_string()
    };
    let terms = tokenize(&query_text);

    let mut candidates: Vec<usize> = Vec::new();
    let mut seen = vec![false; index.doc_count];
    for term in terms.unique() {
        if let Some(postings) = index.postings.get(term) {
            for posting in postings {
                if !seen[posting.doc] {
                    seen[posting.doc] = true;
                    candidates.push(posting.doc);
                }
            }
        }
    }

    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|doc| {
            let score = bm25_score(index, &terms, doc).expect("candidate doc in range");
            (doc, score)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("BM25 scores are finite")
            .then_with(|| index.doc_ids[a.0].cmp(&index.doc_ids[b.0]))
    });
    scored.truncate(k);

    scored
        .into_iter()
        .enumerate()
        .map(|(rank, (doc, score))| {
            ScoredCandidate::from_path(index.doc_ids[doc].clone(), score, PathSource::Lexical, rank + 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, CatalogRecord, Source};

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

    fn catalog(titles: &[(&str, &str)]) -> Catalog {
        Catalog::from_records(titles.iter().map(|(id, t)| record(id, t))).unwrap()
    }

    /// Two-document corpus used in the worked examples.
    fn rain_snow_corpus() -> Catalog {
        catalog(&[("d0", "rain rain snow"), ("d1", "snow")])
    }

    fn index(catalog: &Catalog) -> LexIndex {
        build_lexical_index(catalog, &AbbrDict::empty(), Bm25Params::default()).unwrap()
    }

    #[test]
    fn single_record_index_statistics() {
        let cat = catalog(&[("a", "rain")]);
        let idx = index(&cat);
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.avg_doc_length(), 1.0);
        assert_eq!(idx.postings("rain"), Some(&[Posting { doc: 0, tf: 1 }][..]));
    }

    #[test]
    fn disjoint_vocabularies_have_single_postings() {
        let cat = catalog(&[("a", "rain drizzle"), ("b", "snow sleet")]);
        let idx = index(&cat);
        for term in ["rain", "drizzle", "snow", "sleet"] {
            assert_eq!(idx.doc_frequency(term), 1, "term {term}");
        }
    }

    #[test]
    fn index_expands_abbreviations_before_tokenizing() {
        let cat = catalog(&[("a", "MODIS")]);
        let idx = build_lexical_index(&cat, &AbbrDict::builtin(), Bm25Params::default()).unwrap();
        for term in ["modis", "moderate", "resolution", "imaging", "spectroradiometer"] {
            assert_eq!(idx.doc_frequency(term), 1, "missing expanded term {term}");
        }
    }

    #[test]
    fn empty_catalog_is_rejected() {
        let cat = Catalog::default();
        let err = build_lexical_index(&cat, &AbbrDict::empty(), Bm25Params::default()).unwrap_err();
        assert!(err.to_string().contains("nothing to index"));
    }

    #[test]
    fn bm25_score_matches_hand_evaluation() {
        // tf=2, df=1, N=2, |d|=3, avgdl=2:
        //   idf = ln(1 + 1.5/1.5) = ln 2
        //   tf part = 2*2.2 / (2 + 1.2*(0.25 + 0.75*1.5)) = 4.4/3.65
        let idx = index(&rain_snow_corpus());
        let score = bm25_score(&idx, &tokenize("rain"), 0).unwrap();
        let expected = 2f64.ln() * (4.4 / 3.65);
        assert!((score - expected).abs() < 1e-12, "got {score}");
        assert!((score - 0.8356).abs() < 5e-5, "got {score}");
    }

    #[test]
    fn bm25_score_is_zero_for_absent_term() {
        let idx = index(&rain_snow_corpus());
        assert_eq!(bm25_score(&idx, &tokenize("rain"), 1).unwrap(), 0.0);
    }

    #[test]
    fn bm25_score_of_empty_query_is_zero() {
        let idx = index(&rain_snow_corpus());
        assert_eq!(bm25_score(&idx, &tokenize(""), 0).unwrap(), 0.0);
    }

    #[test]
    fn bm25_score_rejects_out_of_range_doc() {
        let idx = index(&rain_snow_corpus());
        assert!(matches!(
            bm25_score(&idx, &tokenize("rain"), 2),
            Err(IndexError::DocOutOfRange { doc: 2, count: 2 })
        ));
    }

    #[test]
    fn search_ranks_by_hand_evaluated_scores() {
        // d0: rain-term ln2 * 4.4/3.65 plus snow-term ln1.2 * 2.2/2.65
        // d1: snow-term ln1.2 * 2.2/1.75
        let idx = index(&rain_snow_corpus());
        let hits = lexical_search(&idx, "rain snow", &AbbrDict::empty(), false, 2);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].id, "d0");
        assert_eq!(hits[1].id, "d1");

        let d0_expected = 2f64.ln() * (4.4 / 3.65) + 1.2f64.ln() * (2.2 / 2.65);
        let d1_expected = 1.2f64.ln() * (2.2 / 1.75);
        assert!((hits[0].score - d0_expected).abs() < 1e-12);
        assert!((hits[1].score - d1_expected).abs() < 1e-12);
        assert!(hits[0].score > hits[1].score);
    }

    #[test]
    fn search_with_no_matching_terms_is_empty() {
        let idx = index(&rain_snow_corpus());
        assert!(lexical_search(&idx, "volcano", &AbbrDict::empty(), false, 5).is_empty());
    }

    #[test]
    fn search_truncates_without_padding() {
        let idx = index(&rain_snow_corpus());
        let hits = lexical_search(&idx, "rain", &AbbrDict::empty(), false, 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "d0");
    }

    #[test]
    fn search_breaks_ties_by_ascending_id() {
        let cat = catalog(&[("b", "rain"), ("a", "rain")]);
        let idx = index(&cat);
        let hits = lexical_search(&idx, "rain", &AbbrDict::empty(), false, 2);
        assert_eq!(hits[0].id, "a");
        assert_eq!(hits[1].id, "b");
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn query_time_expansion_toggle_bridges_vocabulary() {
        // Index built without expansion holds only full-form words; the
        // acronym query reaches it only when query expansion is on.
        let cat = catalog(&[("full", "moderate resolution imaging spectroradiometer granules")]);
        let idx = index(&cat);
        let dict = AbbrDict::builtin();
        assert!(lexical_search(&idx, "MODIS", &dict, false, 5).is_empty());
        let hits = lexical_search(&idx, "MODIS", &dict, true, 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "full");
    }

    #[test]
    fn search_records_lexical_provenance_and_rank() {
        let idx = index(&rain_snow_corpus());
        let hits = lexical_search(&idx, "rain snow", &AbbrDict::empty(), false, 2);
        for (i, hit) in hits.iter().enumerate() {
            assert!(hit.provenance.contains(&PathSource::Lexical));
            assert_eq!(hit.lexical_rank, Some(i + 1));
            assert_eq!(hit.semantic_rank, None);
        }
    }

    #[test]
    fn term_weight_is_monotone_in_tf() {
        let params = Bm25Params::default();
        for tf in 1..50u32 {
            let lower = bm25_term_weight(params, tf, 3, 100, 20, 15.0);
            let higher = bm25_term_weight(params, tf + 1, 3, 100, 20, 15.0);
            assert!(higher >= lower, "tf {tf}: {higher} < {lower}");
        }
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params::new(0.0, 0.5).is_err());
        assert!(Bm25Params::new(1.2, 1.5).is_err());
        assert!(Bm25Params::new(1.2, -0.1).is_err());
        assert!(Bm25Params::new(0.9, 0.0).is_ok());
    }

    #[test]
    fn irrelevant_document_preserves_result_rank_order() {
        // idf enters as ln(N+1) - ln(df+0.5), so for a fixed-df term the
        // growth in N scales all matching docs by the same positive factor.
        // Keeping the new document at the average length leaves avgdl and
        // the per-doc length normalization untouched, so ranks must hold.
        let base = catalog(&[
            ("a", "rain rain rain sleet"),
            ("b", "rain rain snow fog"),
            ("c", "rain snow snow hail"),
        ]);
        let grown = catalog(&[
            ("a", "rain rain rain sleet"),
            ("b", "rain rain snow fog"),
            ("c", "rain snow snow hail"),
            ("z", "volcanic ash plume observations"),
        ]);
        let query = "rain";
        let order_base: Vec<String> = lexical_search(&index(&base), query, &AbbrDict::empty(), false, 10)
            .into_iter()
            .map(|c| c.id)
            .collect();
        let order_grown: Vec<String> = lexical_search(&index(&grown), query, &AbbrDict::empty(), false, 10)
            .into_iter()
            .map(|c| c.id)
            .collect();
        assert_eq!(order_base, order_grown);
        assert_eq!(order_base, ["a", "b", "c"]);
    }
}
