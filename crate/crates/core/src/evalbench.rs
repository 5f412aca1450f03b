//! Evaluation harness: Recall@K, MRR, and MAP over benchmark cases, plus
//! literature-grounded ground-truth construction.
//!
//! Benchmark cases pair a query with the set of catalog records a paper
//! actually cites. Cited dataset names align to catalog entries through
//! URL pattern matching first and fuzzy name matching second; every
//! matched entry counts as valid ground truth. All metrics are
//! macro-averaged: within each query type separately, then overall.

use crate::catalog::Catalog;
use crate::pipeline::SearchEngine;
use crate::textproc::{contains_delimited, tokenize};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground-truth set is empty: metric undefined")]
    EmptyGroundTruth,
    #[error("k must be >= 1")]
    BadK,
    #[error("no benchmark cases to evaluate")]
    NoCases,
    #[error("result depth {depth} is smaller than the largest requested cutoff {max_k}")]
    DepthTooSmall { depth: usize, max_k: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid benchmark case on line {line}: {message}")]
    BadCase { line: usize, message: String },
    #[error("invalid extraction: {0}")]
    BadExtraction(String),
    #[error("invalid URL pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
}

/// Whether a benchmark query uses precise terminology or states a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "KEYWORD")]
    Keyword,
    #[serde(rename = "TASK")]
    Task,
}

impl std::fmt::Display for QueryType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QueryType::Keyword => write!(f, "keyword"),
            QueryType::Task => write!(f, "task"),
        }
    }
}

/// One evaluation query with its ground-truth record ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub query: String,
    pub query_type: QueryType,
    pub groundtruth: BTreeSet<String>,
    pub paper_id: String,
}

impl BenchmarkCase {
    fn validate(&self) -> Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("query is empty".into());
        }
        if self.groundtruth.is_empty() {
            return Err("groundtruth is empty".into());
        }
        Ok(())
    }
}

/// Load benchmark cases from JSON Lines, validating each.
pub fn load_cases(path: &Path) -> Result<Vec<BenchmarkCase>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cases = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let text = line.map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let case: BenchmarkCase = serde_json::from_str(&text).map_err(|e| EvalError::BadCase {
            line: line_no,
            message: e.to_string(),
        })?;
        case.validate().map_err(|message| EvalError::BadCase {
            line: line_no,
            message,
        })?;
        cases.push(case);
    }
    Ok(cases)
}

/// Write benchmark cases as JSON Lines (inverse of [`load_cases`]).
pub fn write_cases(cases: &[BenchmarkCase], path: &Path) -> Result<(), EvalError> {
    let io_err = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for case in cases {
        let line = serde_json::to_string(case).expect("case serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    file.flush().map_err(io_err)
}

/// Fraction of ground-truth ids within the top `k` results.
pub fn recall_at_k(ranked: &[String], gt: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    if k == 0 {
        return Err(EvalError::BadK);
    }
    let hits = ranked.iter().take(k).filter(|id| gt.contains(*id)).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// `1 / rank` of the first relevant result (1-based); zero when no
/// relevant item is retrieved.
pub fn reciprocal_rank(ranked: &[String], gt: &BTreeSet<String>) -> Result<f64, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    Ok(first_relevant_rank(ranked, gt).map_or(0.0, |rank| 1.0 / rank as f64))
}

fn first_relevant_rank(ranked: &[String], gt: &BTreeSet<String>) -> Option<usize> {
    ranked.iter().position(|id| gt.contains(id)).map(|i| i + 1)
}

/// Mean of precision values at each relevant item's rank, divided by the
/// ground-truth size: `(1/|G|) * sum_k P(k) * rel(k)`.
pub fn average_precision(ranked: &[String], gt: &BTreeSet<String>) -> Result<f64, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if gt.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / gt.len() as f64)
}

/// Macro-averaged metrics for a group of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub n: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub map: f64,
}

/// Per-case evaluation detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDetail {
    pub case_index: usize,
    pub paper_id: String,
    pub query_type: QueryType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_relevant_rank: Option<usize>,
    pub average_precision: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub hits_at: BTreeMap<usize, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Evaluation report: macro-averages per query type and overall, plus
/// per-case detail rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub result_depth: usize,
    pub per_type: BTreeMap<QueryType, MetricBlock>,
    pub overall: MetricBlock,
    pub failed_cases: usize,
    pub details: Vec<CaseDetail>,
}

impl EvalReport {
    /// Aligned plain-text table: one row per query type plus overall,
    /// columns R@K for each requested cutoff, then MRR and MAP.
    pub fn text_table(&self) -> String {
        let mut header = vec!["type".to_string(), "n".to_string()];
        header.extend(self.ks.iter().map(|k| format!("R@{k}")));
        header.push("MRR".to_string());
        header.push("MAP".to_string());

        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut push_block = |label: &str, block: &MetricBlock| {
            let mut row = vec![label.to_string(), block.n.to_string()];
            for k in &self.ks {
                row.push(format!("{:.3}", block.recall_at.get(k).copied().unwrap_or(0.0)));
            }
            row.push(format!("{:.3}", block.mrr));
            row.push(format!("{:.3}", block.map));
            rows.push(row);
        };
        for (query_type, block) in &self.per_type {
            push_block(&query_type.to_string(), block);
        }
        push_block("overall", &self.overall);

        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let render = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:>width$}", c, width = widths[i]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = String::new();
        writeln!(out, "{}", render(&header)).unwrap();
        for row in &rows {
            writeln!(out, "{}", render(row)).unwrap();
        }
        if self.failed_cases > 0 {
            writeln!(out, "failed cases: {}", self.failed_cases).unwrap();
        }
        out
    }
}

fn macro_average(details: &[&CaseDetail], ks: &[usize]) -> MetricBlock {
    let n = details.len();
    let mut recall_at = BTreeMap::new();
    for &k in ks {
        let mean = if n == 0 {
            0.0
        } else {
            details
                .iter()
                .map(|d| d.recall_at.get(&k).copied().unwrap_or(0.0))
                .sum::<f64>()
                / n as f64
        };
        recall_at.insert(k, mean);
    }
    let mrr = if n == 0 {
        0.0
    } else {
        details
            .iter()
            .map(|d| d.first_relevant_rank.map_or(0.0, |r| 1.0 / r as f64))
            .sum::<f64>()
            / n as f64
    };
    let map = if n == 0 {
        0.0
    } else {
        details.iter().map(|d| d.average_precision).sum::<f64>() / n as f64
    };
    MetricBlock {
        n,
        recall_at,
        mrr,
        map,
    }
}

/// Run the engine over every case and macro-average the metrics, within
/// each query type separately and overall. A failing case is excluded from
/// the averages and counted in the report. Cases may evaluate in parallel;
/// the report is keyed by case index and independent of scheduling.
pub fn evaluate(
    cases: &[BenchmarkCase],
    engine: &SearchEngine,
    ks: &[usize],
    result_depth: usize,
) -> Result<EvalReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let max_k = ks.iter().copied().max().ok_or(EvalError::BadK)?;
    if result_depth < max_k {
        return Err(EvalError::DepthTooSmall {
            depth: result_depth,
            max_k,
        });
    }

    let details: Vec<CaseDetail> = cases
        .par_iter()
        .enumerate()
        .map(|(case_index, case)| evaluate_case(case_index, case, engine, ks, result_depth))
        .collect();

    let ok: Vec<&CaseDetail> = details.iter().filter(|d| d.error.is_none()).collect();
    let mut per_type = BTreeMap::new();
    for query_type in [QueryType::Keyword, QueryType::Task] {
        let of_type: Vec<&CaseDetail> = ok
            .iter()
            .copied()
            .filter(|d| d.query_type == query_type)
            .collect();
        if !of_type.is_empty() {
            per_type.insert(query_type, macro_average(&of_type, ks));
        }
    }
    let overall = macro_average(&ok, ks);
    Ok(EvalReport {
        ks: ks.to_vec(),
        result_depth,
        per_type,
        overall,
        failed_cases: details.len() - ok.len(),
        details,
    })
}

fn evaluate_case(
    case_index: usize,
    case: &BenchmarkCase,
    engine: &SearchEngine,
    ks: &[usize],
    result_depth: usize,
) -> CaseDetail {
    let failed = |message: String| CaseDetail {
        case_index,
        paper_id: case.paper_id.clone(),
        query_type: case.query_type,
        first_relevant_rank: None,
        average_precision: 0.0,
        recall_at: BTreeMap::new(),
        hits_at: BTreeMap::new(),
        error: Some(message),
    };
    if case.groundtruth.is_empty() {
        return failed("empty ground truth".into());
    }
    let ranked: Vec<String> = match engine.search_to_depth(&case.query, result_depth) {
        Ok(output) => output.results.into_iter().map(|r| r.id).collect(),
        Err(e) => return failed(e.to_string()),
    };
    let gt = &case.groundtruth;
    let mut recall_at = BTreeMap::new();
    let mut hits_at = BTreeMap::new();
    for &k in ks {
        recall_at.insert(k, recall_at_k(&ranked, gt, k).expect("gt nonempty, k >= 1"));
        hits_at.insert(
            k,
            ranked.iter().take(k).filter(|id| gt.contains(*id)).count(),
        );
    }
    CaseDetail {
        case_index,
        paper_id: case.paper_id.clone(),
        query_type: case.query_type,
        first_relevant_rank: first_relevant_rank(&ranked, gt),
        average_precision: average_precision(&ranked, gt).expect("gt nonempty"),
        recall_at,
        hits_at,
        error: None,
    }
}

/// Normalize one token for fuzzy name matching: version tokens like "v06"
/// lose the prefix and leading zeros, numeric tokens lose leading zeros.
fn normalize_match_token(token: &str) -> String {
    let strip_zeros = |digits: &str| {
        let stripped = digits.trim_start_matches('0');
        if stripped.is_empty() {
            "0".to_string()
        } else {
            stripped.to_string()
        }
    };
    if let Some(digits) = token.strip_prefix('v') {
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            return strip_zeros(digits);
        }
    }
    if token.chars().all(|c| c.is_ascii_digit()) {
        return strip_zeros(token);
    }
    token.to_string()
}

fn match_token_set(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_vec()
        .iter()
        .map(|t| normalize_match_token(t))
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

/// Default similarity threshold for fuzzy name matching.
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.85;

/// Match a cited dataset name against the catalog.
///
/// A record matches when the Jaccard similarity of the normalized token
/// sets of the name and of the record's title+id reaches `threshold`, or
/// when the record's id appears verbatim (case-insensitive, delimited) in
/// the name. Returns matching ids in catalog order.
pub fn fuzzy_match(name: &str, catalog: &Catalog, threshold: f64) -> Vec<String> {
    let name_lower = name.to_lowercase();
    let name_tokens = match_token_set(name);
    let mut matches = Vec::new();
    for record in catalog.records() {
        let verbatim = contains_delimited(&name_lower, &record.id.to_lowercase());
        let similar = if name_tokens.is_empty() {
            false
        } else {
            let record_tokens = match_token_set(&format!("{} {}", record.title, record.id));
            jaccard(&name_tokens, &record_tokens) >= threshold
        };
        if verbatim || similar {
            matches.push(record.id.clone());
        }
    }
    matches
}

/// One cited dataset in a paper extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub doi_or_url: String,
}

/// Structured information extracted from one paper, mirroring the
/// four-key extraction response schema exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub datasets: Vec<DatasetRef>,
    pub keywords: Vec<String>,
    pub is_original_keywords: bool,
    pub i_want_to: Vec<String>,
}

const EXTRACTION_KEYS: [&str; 4] = ["datasets", "keywords", "is_original_keywords", "i_want_to"];

/// Strict parse of the four-key extraction object. Unknown keys are
/// rejected and types enforced; the error names the first violation.
pub fn parse_extraction(text: &str) -> Result<ExtractionRecord, EvalError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| EvalError::BadExtraction(format!("not valid JSON: {e}")))?;
    let object = value
        .as_object()
        .ok_or_else(|| EvalError::BadExtraction("not a JSON object".into()))?;

    for key in object.keys() {
        if !EXTRACTION_KEYS.contains(&key.as_str()) {
            return Err(EvalError::BadExtraction(format!("unknown key {key}")));
        }
    }
    for key in EXTRACTION_KEYS {
        if !object.contains_key(key) {
            return Err(EvalError::BadExtraction(format!("missing key {key}")));
        }
    }

    let datasets = object["datasets"]
        .as_array()
        .ok_or_else(|| EvalError::BadExtraction("wrong type for datasets: expected array".into()))?
        .iter()
        .map(parse_dataset_ref)
        .collect::<Result<Vec<_>, _>>()?;
    let keywords = parse_string_array(&object["keywords"], "keywords")?;
    let is_original_keywords = object["is_original_keywords"].as_bool().ok_or_else(|| {
        EvalError::BadExtraction("wrong type for is_original_keywords: expected boolean".into())
    })?;
    let i_want_to = parse_string_array(&object["i_want_to"], "i_want_to")?;

    Ok(ExtractionRecord {
        datasets,
        keywords,
        is_original_keywords,
        i_want_to,
    })
}

fn parse_string_array(value: &serde_json::Value, key: &str) -> Result<Vec<String>, EvalError> {
    value
        .as_array()
        .ok_or_else(|| EvalError::BadExtraction(format!("wrong type for {key}: expected array")))?
        .iter()
        .map(|item| {
            item.as_str().map(str::to_string).ok_or_else(|| {
                EvalError::BadExtraction(format!("wrong type in {key}: expected string"))
            })
        })
        .collect()
}

fn parse_dataset_ref(value: &serde_json::Value) -> Result<DatasetRef, EvalError> {
    let object = value.as_object().ok_or_else(|| {
        EvalError::BadExtraction("wrong type in datasets: expected object".into())
    })?;
    for key in object.keys() {
        if key != "name" && key != "doi_or_url" {
            return Err(EvalError::BadExtraction(format!(
                "unknown key {key} in datasets entry"
            )));
        }
    }
    let field = |key: &str| -> Result<String, EvalError> {
        object
            .get(key)
            .ok_or_else(|| EvalError::BadExtraction(format!("missing key {key} in datasets entry")))?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                EvalError::BadExtraction(format!("wrong type for {key} in datasets entry"))
            })
    };
    Ok(DatasetRef {
        name: field("name")?,
        doi_or_url: field("doi_or_url")?,
    })
}

/// Compiled URL-to-record-id patterns. Each pattern carries one capture
/// group holding the candidate id.
#[derive(Debug, Clone)]
pub struct UrlPatterns {
    patterns: Vec<Regex>,
}

const DEFAULT_URL_PATTERNS: &str = include_str!("../assets/url_patterns.json");

impl UrlPatterns {
    /// Built-in examples covering DOI and archive-landing-page forms.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_URL_PATTERNS).expect("built-in URL patterns are valid")
    }

    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        let raw: Vec<String> = serde_json::from_str(json)
            .map_err(|e| EvalError::BadExtraction(format!("URL pattern file: {e}")))?;
        let patterns = raw
            .iter()
            .map(|p| {
                let regex = Regex::new(p).map_err(|e| EvalError::Pattern {
                    pattern: p.clone(),
                    message: e.to_string(),
                })?;
                if regex.captures_len() < 2 {
                    return Err(EvalError::Pattern {
                        pattern: p.clone(),
                        message: "pattern needs one capture group for the record id".into(),
                    });
                }
                Ok(regex)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(UrlPatterns { patterns })
    }

    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Candidate ids captured from a URL, in pattern order.
    pub fn extract_ids(&self, url: &str) -> Vec<String> {
        self.patterns
            .iter()
            .filter_map(|p| p.captures(url))
            .filter_map(|c| c.get(1).map(|m| m.as_str().to_string()))
            .collect()
    }
}

fn lookup_id_case_insensitive(catalog: &Catalog, id: &str) -> Option<String> {
    if catalog.by_id(id).is_some() {
        return Some(id.to_string());
    }
    catalog
        .records()
        .iter()
        .find(|r| r.id.eq_ignore_ascii_case(id))
        .map(|r| r.id.clone())
}

/// Build benchmark cases from one paper's extraction.
///
/// Per cited dataset, URL pattern matching runs first; when it yields no
/// catalog id, fuzzy name matching takes over. The union of matched ids
/// across all cited datasets becomes the ground truth of every emitted
/// case: one KEYWORD case aggregating the keywords into a single query,
/// and one TASK case per "I want to" statement. A paper whose datasets
/// match nothing emits no cases.
pub fn match_groundtruth(
    paper_id: &str,
    extraction: &ExtractionRecord,
    catalog: &Catalog,
    url_patterns: &UrlPatterns,
    threshold: f64,
) -> Vec<BenchmarkCase> {
    let mut groundtruth: BTreeSet<String> = BTreeSet::new();
    for dataset in &extraction.datasets {
        let mut by_url: Vec<String> = url_patterns
            .extract_ids(&dataset.doi_or_url)
            .into_iter()
            .filter_map(|id| lookup_id_case_insensitive(catalog, &id))
            .collect();
        if by_url.is_empty() {
            by_url = fuzzy_match(&dataset.name, catalog, threshold);
        }
        groundtruth.extend(by_url);
    }
    if groundtruth.is_empty() {
        return Vec::new();
    }

    let mut cases = Vec::new();
    let keyword_query = extraction.keywords.join(" ");
    if !keyword_query.trim().is_empty() {
        cases.push(BenchmarkCase {
            query: keyword_query,
            query_type: QueryType::Keyword,
            groundtruth: groundtruth.clone(),
            paper_id: paper_id.to_string(),
        });
    }
    for statement in &extraction.i_want_to {
        if statement.trim().is_empty() {
            continue;
        }
        cases.push(BenchmarkCase {
            query: statement.clone(),
            query_type: QueryType::Task,
            groundtruth: groundtruth.clone(),
            paper_id: paper_id.to_string(),
        });
    }
    cases
}
