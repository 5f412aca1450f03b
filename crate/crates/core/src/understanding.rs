//! Query understanding: intent classification, query rewriting, and
//! structured constraint extraction.
//!
//! Queries come in two flavors. Type A queries name concrete data
//! (variables, platforms, dataset names) and only receive a spell pass.
//! Type B queries state a research goal ("flood analysis") and are
//! rewritten into retrievable data terms, either by table-driven rules or
//! by an LLM provider filling the rewrite prompt. Constraint extraction
//! always runs on the original query, since a rewrite may inject region
//! names the user never asked to constrain to.
//!
//! Every provider-backed path degrades to the rule-based path on failure,
//! so a query is never aborted by a flaky provider.

use crate::catalog::BBox;
use crate::semantic::fnv1a64;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use thiserror::Error;

pub const INTENT_PROMPT_TEMPLATE: &str = include_str!("../assets/intent_prompt.txt");
pub const REWRITE_PROMPT_TEMPLATE: &str = include_str!("../assets/rewrite_prompt.txt");

const DEFAULT_GAZETTEER: &str = include_str!("../assets/gazetteer.json");
const DEFAULT_REGIONS: &str = include_str!("../assets/regions.json");
const DEFAULT_TOPICS: &str = include_str!("../assets/topics.json");

/// Render the intent-classification prompt for a query.
pub fn fill_intent_prompt(query: &str) -> String {
    INTENT_PROMPT_TEMPLATE.replace("{query}", query)
}

/// Render the query-rewrite prompt for a query.
pub fn fill_rewrite_prompt(query: &str) -> String {
    REWRITE_PROMPT_TEMPLATE.replace("{query}", query)
}

/// Query intent: a specific data request (A) or a broad research goal (B).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntentType {
    #[serde(rename = "TYPE_A")]
    TypeA,
    #[serde(rename = "TYPE_B")]
    TypeB,
}

/// Inclusive date range extracted from a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Structured constraints extracted from a query. Always satisfies
/// `start <= end`; a reversed textual range is normalized by swapping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryConstraints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal: Option<TemporalRange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial: Option<BBox>,
}

impl QueryConstraints {
    pub fn is_empty(&self) -> bool {
        self.temporal.is_none() && self.spatial.is_none()
    }
}

/// Stage 0 output for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderstoodQuery {
    pub original: String,
    pub intent: IntentType,
    /// Equals the (spell-passed) original for Type A queries.
    pub rewritten: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewrite_reasoning: Option<String>,
    pub constraints: QueryConstraints,
}

/// Stage 0 output plus any degradation warnings collected on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Understood {
    pub query: UnderstoodQuery,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum UnderstandError {
    #[error("empty query")]
    EmptyQuery,
}

/// Errors surfaced by LLM providers.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider transport failure: {0}")]
    Transport(String),
    #[error("provider returned a bad response: {0}")]
    BadResponse(String),
}

/// Text-completion transport contract. Implementations must be total:
/// every call returns text or a [`ProviderError`].
pub trait LlmProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Deterministic table-driven provider for tests and offline runs, keyed
/// by the FNV-1a hash of the exact prompt text.
#[derive(Debug, Default)]
pub struct StubProvider {
    replies: HashMap<u64, String>,
    fallback: Option<String>,
}

impl StubProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register the reply for one exact prompt.
    pub fn on(mut self, prompt: &str, reply: &str) -> Self {
        self.replies.insert(fnv1a64(prompt.as_bytes()), reply.to_string());
        self
    }

    /// Reply used when no exact prompt matches.
    pub fn otherwise(mut self, reply: &str) -> Self {
        self.fallback = Some(reply.to_string());
        self
    }
}

impl LlmProvider for StubProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.replies
            .get(&fnv1a64(prompt.as_bytes()))
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| ProviderError::BadResponse("no stubbed reply for prompt".into()))
    }
}

/// Provider whose every call fails; exercises degradation paths.
#[derive(Debug, Default, Clone, Copy)]
pub struct FailingProvider;

impl LlmProvider for FailingProvider {
    fn complete(&self, _prompt: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Transport("provider unavailable".into()))
    }
}

/// HTTP adapter for a remote completion service.
///
/// Wire contract: `POST endpoint` with JSON body
/// `{"prompt": "...", "model": "..."}` (model omitted when unset),
/// expecting `{"completion": "..."}`. Credentials ride in an
/// `Authorization: Bearer` header when an API key is set.
pub struct HttpLlmProvider {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completion: String,
}

impl HttpLlmProvider {
    pub fn new(endpoint: impl Into<String>, model: Option<String>, api_key: Option<String>) -> Self {
        HttpLlmProvider {
            endpoint: endpoint.into(),
            model,
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl LlmProvider for HttpLlmProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = CompletionRequest {
            prompt,
            model: self.model.as_deref(),
        };
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(ProviderError::Transport(format!(
                "endpoint returned HTTP {}",
                response.status()
            )));
        }
        let parsed: CompletionResponse = response
            .json()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        Ok(parsed.completion)
    }
}

/// Whether a stage runs on curated rules or on an LLM provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageMode {
    Rules,
    Provider,
}

use crate::textproc::contains_delimited;

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("cannot read gazetteer {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("gazetteer is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Curated terms (platforms, dataset names, variables) whose presence marks
/// a query as a specific data request. Also supplies the vocabulary for the
/// Type A spell pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    terms: BTreeSet<String>,
    words: BTreeSet<String>,
}

impl Gazetteer {
    /// Built-in term lists covering common platforms, dataset names, and
    /// variables.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_GAZETTEER).expect("built-in gazetteer is valid")
    }

    /// Parse a JSON object of category name to term array. Category names
    /// are free-form; all terms land in one flat set.
    pub fn from_json(json: &str) -> Result<Self, GazetteerError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(json)?;
        Ok(Self::from_terms(raw.into_values().flatten()))
    }

    pub fn from_file(path: &Path) -> Result<Self, GazetteerError> {
        let text = std::fs::read_to_string(path).map_err(|source| GazetteerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_terms(terms: impl IntoIterator<Item = String>) -> Self {
        let terms: BTreeSet<String> = terms.into_iter().map(|t| t.to_lowercase()).collect();
        let words = terms
            .iter()
            .flat_map(|t| {
                t.split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .map(str::to_string)
            })
            .collect();
        Gazetteer { terms, words }
    }

    /// Whether any gazetteer term appears in the query (case-insensitive,
    /// word-boundary match).
    pub fn matches(&self, query: &str) -> bool {
        let lower = query.to_lowercase();
        self.terms.iter().any(|t| contains_delimited(&lower, t))
    }

    /// Individual words of all terms; the spell-pass vocabulary.
    pub fn words(&self) -> &BTreeSet<String> {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Region name to bounding box table for spatial constraint extraction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionGazetteer {
    // sorted longest name first so the longest match wins
    entries: Vec<(String, BBox)>,
}

impl RegionGazetteer {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_REGIONS).expect("built-in region gazetteer is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, GazetteerError> {
        let raw: BTreeMap<String, [f64; 4]> = serde_json::from_str(json)?;
        let mut entries: Vec<(String, BBox)> = raw
            .into_iter()
            .map(|(name, b)| (name.to_lowercase(), BBox::from(b)))
            .collect();
        entries.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then(a.0.cmp(&b.0)));
        Ok(RegionGazetteer { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, GazetteerError> {
        let text = std::fs::read_to_string(path).map_err(|source| GazetteerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The longest region name appearing in the query, if any.
    pub fn lookup(&self, query: &str) -> Option<(&str, BBox)> {
        let lower = query.to_lowercase();
        self.entries
            .iter()
            .find(|(name, _)| contains_delimited(&lower, name))
            .map(|(name, bbox)| (name.as_str(), *bbox))
    }
}

/// Research-topic trigger to variable-terms table for rule-based rewriting.
/// A trigger fires when any query token starts with it, so "flood" covers
/// "flooding" and "floods".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicMap {
    topics: BTreeMap<String, Vec<String>>,
}

impl TopicMap {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TOPICS).expect("built-in topic map is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, GazetteerError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(json)?;
        Ok(TopicMap {
            topics: raw
                .into_iter()
                .map(|(trigger, terms)| (trigger.to_lowercase(), terms))
                .collect(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, GazetteerError> {
        let text = std::fs::read_to_string(path).map_err(|source| GazetteerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Triggered topics in deterministic (alphabetical) order.
    pub fn triggered(&self, query: &str) -> Vec<(&str, &[String])> {
        let tokens: Vec<String> = crate::textproc::tokenize(query).into_vec();
        self.topics
            .iter()
            .filter(|(trigger, _)| tokens.iter().any(|t| t.starts_with(trigger.as_str())))
            .map(|(trigger, terms)| (trigger.as_str(), terms.as_slice()))
            .collect()
    }
}

/// Intent decision plus an optional degradation warning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentOutcome {
    pub intent: IntentType,
    pub warning: Option<String>,
}

/// Classify a query as Type A or Type B.
///
/// Rules mode: Type A iff any gazetteer term appears (case-insensitive,
/// word-boundary). Provider mode: fill the intent prompt, send it, and map
/// a trimmed `"A"`/`"B"` reply; anything else falls back to rules with a
/// warning.
pub fn classify_intent(
    query: &str,
    mode: StageMode,
    provider: Option<&dyn LlmProvider>,
    gazetteer: &Gazetteer,
) -> IntentOutcome {
    let by_rules = || {
        if gazetteer.matches(query) {
            IntentType::TypeA
        } else {
            IntentType::TypeB
        }
    };
    match (mode, provider) {
        (StageMode::Rules, _) | (StageMode::Provider, None) => IntentOutcome {
            intent: by_rules(),
            warning: (mode == StageMode::Provider)
                .then(|| "intent classification: no provider configured, using rules".to_string()),
        },
        (StageMode::Provider, Some(provider)) => {
            match provider.complete(&fill_intent_prompt(query)) {
                Ok(reply) => match reply.trim() {
                    "A" => IntentOutcome {
                        intent: IntentType::TypeA,
                        warning: None,
                    },
                    "B" => IntentOutcome {
                        intent: IntentType::TypeB,
                        warning: None,
                    },
                    other => {
                        let warning = format!(
                            "intent classification: unexpected provider reply {other:?}, falling back to rules"
                        );
                        log::warn!("{warning}");
                        IntentOutcome {
                            intent: by_rules(),
                            warning: Some(warning),
                        }
                    }
                },
                Err(e) => {
                    let warning =
                        format!("intent classification: provider failed ({e}), falling back to rules");
                    log::warn!("{warning}");
                    IntentOutcome {
                        intent: by_rules(),
                        warning: Some(warning),
                    }
                }
            }
        }
    }
}

/// Rewrite result plus an optional degradation warning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteOutcome {
    pub rewritten: String,
    pub reasoning: String,
    pub warning: Option<String>,
}

#[derive(Deserialize)]
struct RewriteReply {
    reasoning: String,
    query: String,
}

fn parse_rewrite_reply(reply: &str) -> Option<RewriteReply> {
    let parsed: RewriteReply = serde_json::from_str(reply.trim()).ok()?;
    if parsed.query.trim().is_empty() {
        return None;
    }
    Some(parsed)
}

/// Rewrite a research-goal query into data-oriented search terms.
///
/// Rules mode appends the variable terms of every triggered topic to the
/// original query, skipping terms already present. Provider mode fills the
/// rewrite prompt and parses a `{"reasoning", "query"}` JSON reply; an
/// unparseable or empty reply is retried once and then falls back to rules
/// with a warning.
pub fn rewrite_query(
    query: &str,
    mode: StageMode,
    provider: Option<&dyn LlmProvider>,
    topics: &TopicMap,
) -> RewriteOutcome {
    let by_rules = |warning: Option<String>| {
        let lower = query.to_lowercase();
        let triggered = topics.triggered(query);
        let mut appended: Vec<&str> = Vec::new();
        for (_, terms) in &triggered {
            for term in *terms {
                let term_lower = term.to_lowercase();
                if !contains_delimited(&lower, &term_lower)
                    && !appended.iter().any(|t| t.eq_ignore_ascii_case(term))
                {
                    appended.push(term);
                }
            }
        }
        if appended.is_empty() {
            return RewriteOutcome {
                rewritten: query.to_string(),
                reasoning: "no research topic triggers matched; query left unchanged".to_string(),
                warning,
            };
        }
        let triggers: Vec<&str> = triggered.iter().map(|(t, _)| *t).collect();
        RewriteOutcome {
            rewritten: format!("{query} {}", appended.join(" ")),
            reasoning: format!("appended variable terms for topics: {}", triggers.join(", ")),
            warning,
        }
    };

    let provider = match (mode, provider) {
        (StageMode::Rules, _) => return by_rules(None),
        (StageMode::Provider, None) => {
            return by_rules(Some(
                "query rewrite: no provider configured, using rules".to_string(),
            ))
        }
        (StageMode::Provider, Some(p)) => p,
    };

    let prompt = fill_rewrite_prompt(query);
    for _attempt in 0..2 {
        if let Ok(reply) = provider.complete(&prompt) {
            if let Some(parsed) = parse_rewrite_reply(&reply) {
                return RewriteOutcome {
                    rewritten: parsed.query,
                    reasoning: parsed.reasoning,
                    warning: None,
                };
            }
        }
    }
    let warning =
        "query rewrite: provider reply unusable after retry, falling back to rules".to_string();
    log::warn!("{warning}");
    by_rules(Some(warning))
}

/// Extract temporal and spatial constraints from a query.
///
/// Temporal: standalone 4-digit years in 1900-2099 (which covers the
/// `YYYY--YYYY`, `YYYY-YYYY`, and `YYYY to YYYY` range spellings, since
/// the separators are token boundaries); a single year y maps to
/// `(y-01-01, y-12-31)` and several years span min..max, so a reversed
/// range normalizes by construction. Spatial: the longest region-gazetteer
/// name appearing in the query.
pub fn extract_constraints(query: &str, regions: &RegionGazetteer) -> QueryConstraints {
    let mut years: Vec<i32> = Vec::new();
    for token in &crate::textproc::tokenize(query) {
        if token.len() == 4 && token.chars().all(|c| c.is_ascii_digit()) {
            let year: i32 = token.parse().expect("4 ascii digits");
            if (1900..=2099).contains(&year) {
                years.push(year);
            }
        }
    }
    let temporal = if years.is_empty() {
        None
    } else {
        let start_year = *years.iter().min().expect("nonempty");
        let end_year = *years.iter().max().expect("nonempty");
        Some(TemporalRange {
            start: NaiveDate::from_ymd_opt(start_year, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(end_year, 12, 31).expect("valid date"),
        })
    };
    let spatial = regions.lookup(query).map(|(_, bbox)| bbox);
    QueryConstraints { temporal, spatial }
}

/// Optimal string alignment distance (Levenshtein plus adjacent
/// transposition), so "percipitation" sits one edit from "precipitation".
pub fn osa_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (n, m) = (a.len(), b.len());
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    let mut rows: Vec<Vec<usize>> = vec![vec![0; m + 1]; n + 1];
    for (i, row) in rows.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in rows[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut d = (rows[i - 1][j] + 1)
                .min(rows[i][j - 1] + 1)
                .min(rows[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                d = d.min(rows[i - 2][j - 2] + 1);
            }
            rows[i][j] = d;
        }
    }
    rows[n][m]
}

const SPELL_MIN_TOKEN_LEN: usize = 4;

/// Correct misspelled query tokens against the gazetteer vocabulary only.
///
/// A purely alphabetic token of at least four characters that is not a
/// vocabulary word is replaced by the (lexicographically smallest)
/// vocabulary word at edit distance one, if any. Everything else,
/// including all separators, is preserved byte for byte.
pub fn spell_correct(query: &str, vocab: &BTreeSet<String>) -> String {
    let mut out = String::with_capacity(query.len());
    let mut rest = query;
    while let Some(start) = rest.find(|c: char| c.is_alphanumeric()) {
        let end = rest[start..]
            .find(|c: char| !c.is_alphanumeric())
            .map_or(rest.len(), |e| start + e);
        out.push_str(&rest[..start]);
        let token = &rest[start..end];
        out.push_str(&correct_token(token, vocab));
        rest = &rest[end..];
    }
    out.push_str(rest);
    out
}

fn correct_token<'a>(token: &'a str, vocab: &BTreeSet<String>) -> std::borrow::Cow<'a, str> {
    use std::borrow::Cow;
    if token.chars().count() < SPELL_MIN_TOKEN_LEN || !token.chars().all(char::is_alphabetic) {
        return Cow::Borrowed(token);
    }
    let lower = token.to_lowercase();
    if vocab.contains(&lower) {
        return Cow::Borrowed(token);
    }
    let token_len = lower.chars().count();
    for word in vocab {
        // length pre-filter keeps the scan cheap
        if word.chars().count().abs_diff(token_len) > 1 {
            continue;
        }
        if osa_distance(&lower, word) == 1 {
            return Cow::Owned(word.clone());
        }
    }
    Cow::Borrowed(token)
}

/// Stage 0 configuration and state: gazetteers, topic map, per-stage modes,
/// and an optional provider.
pub struct QueryUnderstander {
    pub gazetteer: Gazetteer,
    pub regions: RegionGazetteer,
    pub topics: TopicMap,
    pub intent_mode: StageMode,
    pub rewrite_mode: StageMode,
    pub provider: Option<Box<dyn LlmProvider>>,
}

impl Default for QueryUnderstander {
    fn default() -> Self {
        QueryUnderstander {
            gazetteer: Gazetteer::builtin(),
            regions: RegionGazetteer::builtin(),
            topics: TopicMap::builtin(),
            intent_mode: StageMode::Rules,
            rewrite_mode: StageMode::Rules,
            provider: None,
        }
    }
}

impl QueryUnderstander {
    /// Run the full Stage 0: classify intent, rewrite Type B queries (spell
    /// pass for Type A), and extract constraints from the original query.
    pub fn understand(&self, query: &str) -> Result<Understood, UnderstandError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(UnderstandError::EmptyQuery);
        }
        let provider = self.provider.as_deref();
        let mut warnings = Vec::new();

        let intent_outcome = classify_intent(query, self.intent_mode, provider, &self.gazetteer);
        warnings.extend(intent_outcome.warning.clone());

        let (rewritten, reasoning) = match intent_outcome.intent {
            IntentType::TypeA => (spell_correct(query, self.gazetteer.words()), None),
            IntentType::TypeB => {
                let outcome = rewrite_query(query, self.rewrite_mode, provider, &self.topics);
                warnings.extend(outcome.warning.clone());
                (outcome.rewritten, Some(outcome.reasoning))
            }
        };

        let constraints = extract_constraints(query, &self.regions);
        Ok(Understood {
            query: UnderstoodQuery {
                original: query.to_string(),
                intent: intent_outcome.intent,
                rewritten,
                rewrite_reasoning: reasoning,
                constraints,
            },
            warnings,
        })
    }
}
