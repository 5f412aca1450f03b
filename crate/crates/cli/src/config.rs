//! Engine configuration: TOML file, command-line overrides, and built-in
//! defaults, merged with precedence flag > config > default.
//!
//! Secrets never live in the config file: the provider API key and an
//! endpoint override come from the `DATASCOUT_API_KEY` and
//! `DATASCOUT_PROVIDER_ENDPOINT` environment variables.

use anyhow::{bail, Context, Result};
use datascout_core::lexical::Bm25Params;
use datascout_core::pipeline::{EngineOptions, FilterMode, FusionParams};
use datascout_core::semantic::DEFAULT_HASH_DIMENSION;
use datascout_core::understanding::StageMode;
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const API_KEY_ENV: &str = "DATASCOUT_API_KEY";
pub const PROVIDER_ENDPOINT_ENV: &str = "DATASCOUT_PROVIDER_ENDPOINT";

/// Raw config file contents. Every field is optional; unknown keys are
/// rejected.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub paths: PathsSection,
    pub bm25: Bm25Section,
    pub embedder: EmbedderSection,
    pub fusion: FusionSection,
    pub pipeline: PipelineSection,
    pub provider: ProviderSection,
    pub reranker: RerankerSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub catalog: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub abbr_dict: Option<PathBuf>,
    pub variable_map: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub url_patterns: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bm25Section {
    pub k1: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    /// "hash" (default) or "remote".
    pub kind: Option<String>,
    pub dimension: Option<usize>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub rrf_k: Option<f64>,
    pub pool_size: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    /// "soft" (default) or "hard".
    pub filter_mode: Option<String>,
    pub top_m: Option<usize>,
    pub result_k: Option<usize>,
    pub expand_queries: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// "rules" (default) or "provider".
    pub intent_mode: Option<String>,
    pub rewrite_mode: Option<String>,
    /// "baseline" (default) or "provider".
    pub reranker: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankerSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: FileConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }
}

/// Command-line overrides shared by the engine-driving subcommands.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct EngineFlags {
    /// Catalog file (JSON Lines)
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Persisted index bundle to load instead of building
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Abbreviation dictionary file (JSON object)
    #[arg(long)]
    pub abbr_dict: Option<PathBuf>,
    /// Variable alias map file (JSON object)
    #[arg(long)]
    pub variable_map: Option<PathBuf>,
    /// Term gazetteer file (JSON object of category -> terms)
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Region gazetteer file (JSON object of name -> bbox)
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Topic map file (JSON object of trigger -> terms)
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// BM25 k1
    #[arg(long)]
    pub k1: Option<f64>,
    /// BM25 b
    #[arg(long)]
    pub b: Option<f64>,
    /// Embedder kind: hash or remote
    #[arg(long)]
    pub embedder: Option<String>,
    /// Embedding dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Reciprocal-rank-fusion constant
    #[arg(long)]
    pub rrf_k: Option<f64>,
    /// Per-source recall pool size
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Constraint filter mode: soft or hard
    #[arg(long)]
    pub filter_mode: Option<String>,
    /// How many fused candidates the reranker sees
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Apply abbreviation expansion to queries as well as the index
    #[arg(long)]
    pub expand_queries: bool,
}

/// Fully resolved engine settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub catalog: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub abbr_dict: Option<PathBuf>,
    pub variable_map: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub url_patterns: Option<PathBuf>,
    pub bm25: Bm25Params,
    pub embedder_kind: EmbedderKind,
    pub dimension: usize,
    pub embed_endpoint: Option<String>,
    pub embed_model: Option<String>,
    pub fusion: FusionParams,
    pub filter_mode: FilterMode,
    pub top_m: usize,
    pub result_k: usize,
    pub expand_queries: bool,
    pub provider_endpoint: Option<String>,
    pub provider_model: Option<String>,
    pub api_key: Option<String>,
    pub intent_mode: StageMode,
    pub rewrite_mode: StageMode,
    pub reranker_kind: RerankerKind,
    pub reranker_weights: (f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    Hash,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankerKind {
    Baseline,
    Provider,
}

fn parse_stage_mode(value: &str) -> Result<StageMode> {
    match value {
        "rules" => Ok(StageMode::Rules),
        "provider" => Ok(StageMode::Provider),
        other => bail!("invalid stage mode {other:?} (expected \"rules\" or \"provider\")"),
    }
}

fn parse_filter_mode(value: &str) -> Result<FilterMode> {
    match value {
        "soft" => Ok(FilterMode::Soft),
        "hard" => Ok(FilterMode::Hard),
        other => bail!("invalid filter mode {other:?} (expected \"soft\" or \"hard\")"),
    }
}

/// Merge config file values and command-line flags over built-in defaults.
/// Flags win over the file, the file wins over defaults; numeric fields are
/// validated against their owning types' invariants.
pub fn resolve(file: &FileConfig, flags: &EngineFlags) -> Result<Settings> {
    let defaults = EngineOptions::default();

    let k1 = flags.k1.or(file.bm25.k1).unwrap_or(defaults.bm25.k1);
    let b = flags.b.or(file.bm25.b).unwrap_or(defaults.bm25.b);
    let bm25 = Bm25Params::new(k1, b).map_err(|e| anyhow::anyhow!("{e}"))?;

    let rrf_k = flags
        .rrf_k
        .or(file.fusion.rrf_k)
        .unwrap_or(defaults.fusion.rrf_k);
    let pool_size = flags
        .pool_size
        .or(file.fusion.pool_size)
        .unwrap_or(defaults.fusion.pool_size);
    let fusion = FusionParams::new(rrf_k, pool_size).map_err(|e| anyhow::anyhow!("{e}"))?;

    let filter_mode = match flags.filter_mode.as_deref().or(file.pipeline.filter_mode.as_deref()) {
        Some(value) => parse_filter_mode(value)?,
        None => defaults.filter_mode,
    };
    let top_m = flags.top_m.or(file.pipeline.top_m).unwrap_or(defaults.top_m);
    if top_m == 0 {
        bail!("top_m must be >= 1");
    }
    let result_k = file.pipeline.result_k.unwrap_or(defaults.result_k);
    if result_k == 0 {
        bail!("result_k must be >= 1");
    }
    let expand_queries = if flags.expand_queries {
        true
    } else {
        file.pipeline.expand_queries.unwrap_or(defaults.expand_queries)
    };

    let embedder_kind = match flags.embedder.as_deref().or(file.embedder.kind.as_deref()) {
        None | Some("hash") => EmbedderKind::Hash,
        Some("remote") => EmbedderKind::Remote,
        Some(other) => bail!("invalid embedder kind {other:?} (expected \"hash\" or \"remote\")"),
    };
    let dimension = flags
        .dim
        .or(file.embedder.dimension)
        .unwrap_or(DEFAULT_HASH_DIMENSION);
    if dimension == 0 {
        bail!("embedding dimension must be >= 1");
    }
    if embedder_kind == EmbedderKind::Remote && file.embedder.endpoint.is_none() {
        bail!("remote embedder requires embedder.endpoint in the config");
    }

    let intent_mode = match file.provider.intent_mode.as_deref() {
        Some(value) => parse_stage_mode(value)?,
        None => StageMode::Rules,
    };
    let rewrite_mode = match file.provider.rewrite_mode.as_deref() {
        Some(value) => parse_stage_mode(value)?,
        None => StageMode::Rules,
    };
    let reranker_kind = match file.provider.reranker.as_deref() {
        None | Some("baseline") => RerankerKind::Baseline,
        Some("provider") => RerankerKind::Provider,
        Some(other) => {
            bail!("invalid reranker kind {other:?} (expected \"baseline\" or \"provider\")")
        }
    };

    let alpha = file.reranker.alpha.unwrap_or(0.5);
    let beta = file.reranker.beta.unwrap_or(0.3);
    let gamma = file.reranker.gamma.unwrap_or(0.2);

    let provider_endpoint = std::env::var(PROVIDER_ENDPOINT_ENV)
        .ok()
        .filter(|v| !v.is_empty())
        .or_else(|| file.provider.endpoint.clone());
    let api_key = std::env::var(API_KEY_ENV).ok().filter(|v| !v.is_empty());

    Ok(Settings {
        catalog: flags.catalog.clone().or_else(|| file.paths.catalog.clone()),
        index: flags.index.clone().or_else(|| file.paths.index.clone()),
        abbr_dict: flags.abbr_dict.clone().or_else(|| file.paths.abbr_dict.clone()),
        variable_map: flags
            .variable_map
            .clone()
            .or_else(|| file.paths.variable_map.clone()),
        gazetteer: flags.gazetteer.clone().or_else(|| file.paths.gazetteer.clone()),
        regions: flags.regions.clone().or_else(|| file.paths.regions.clone()),
        topics: flags.topics.clone().or_else(|| file.paths.topics.clone()),
        url_patterns: file.paths.url_patterns.clone(),
        bm25,
        embedder_kind,
        dimension,
        embed_endpoint: file.embedder.endpoint.clone(),
        embed_model: file.embedder.model.clone(),
        fusion,
        filter_mode,
        top_m,
        result_k,
        expand_queries,
        provider_endpoint,
        provider_model: file.provider.model.clone(),
        api_key,
        intent_mode,
        rewrite_mode,
        reranker_kind,
        reranker_weights: (alpha, beta, gamma),
    })
}

impl Settings {
    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            bm25: self.bm25,
            fusion: self.fusion,
            filter_mode: self.filter_mode,
            top_m: self.top_m,
            result_k: self.result_k,
            expand_queries: self.expand_queries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_engine_options() {
        let settings = resolve(&FileConfig::default(), &EngineFlags::default()).unwrap();
        assert_eq!(settings.bm25, Bm25Params::default());
        assert_eq!(settings.fusion, FusionParams::default());
        assert_eq!(settings.filter_mode, FilterMode::Soft);
        assert_eq!(settings.top_m, 50);
        assert_eq!(settings.result_k, 100);
        assert!(!settings.expand_queries);
        assert_eq!(settings.dimension, DEFAULT_HASH_DIMENSION);
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let file: FileConfig = toml::from_str(
            r#"
            [bm25]
            k1 = 1.5
            b = 0.6
            [fusion]
            rrf_k = 30.0
            pool_size = 40
            [pipeline]
            filter_mode = "hard"
            top_m = 10
            result_k = 25
            [embedder]
            dimension = 64
            "#,
        )
        .unwrap();

        // config over defaults
        let from_file = resolve(&file, &EngineFlags::default()).unwrap();
        assert_eq!(from_file.bm25.k1, 1.5);
        assert_eq!(from_file.bm25.b, 0.6);
        assert_eq!(from_file.fusion.rrf_k, 30.0);
        assert_eq!(from_file.fusion.pool_size, 40);
        assert_eq!(from_file.filter_mode, FilterMode::Hard);
        assert_eq!(from_file.top_m, 10);
        assert_eq!(from_file.result_k, 25);
        assert_eq!(from_file.dimension, 64);

        // flags over config
        let flags = EngineFlags {
            k1: Some(2.0),
            b: Some(0.4),
            rrf_k: Some(10.0),
            pool_size: Some(20),
            filter_mode: Some("soft".into()),
            top_m: Some(5),
            dim: Some(32),
            ..EngineFlags::default()
        };
        let from_flags = resolve(&file, &flags).unwrap();
        assert_eq!(from_flags.bm25.k1, 2.0);
        assert_eq!(from_flags.bm25.b, 0.4);
        assert_eq!(from_flags.fusion.rrf_k, 10.0);
        assert_eq!(from_flags.fusion.pool_size, 20);
        assert_eq!(from_flags.filter_mode, FilterMode::Soft);
        assert_eq!(from_flags.top_m, 5);
        assert_eq!(from_flags.dimension, 32);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let parsed: Result<FileConfig, _> = toml::from_str("[bm25]\nk1 = 1.2\nmystery = true\n");
        assert!(parsed.is_err());
        let parsed: Result<FileConfig, _> = toml::from_str("[mystery]\nx = 1\n");
        assert!(parsed.is_err());
    }

    #[test]
    fn numeric_invariants_are_enforced() {
        let bad_k1: FileConfig = toml::from_str("[bm25]\nk1 = 0.0\n").unwrap();
        assert!(resolve(&bad_k1, &EngineFlags::default()).is_err());
        let bad_b: FileConfig = toml::from_str("[bm25]\nb = 1.5\n").unwrap();
        assert!(resolve(&bad_b, &EngineFlags::default()).is_err());
        let bad_topm: FileConfig = toml::from_str("[pipeline]\ntop_m = 0\n").unwrap();
        assert!(resolve(&bad_topm, &EngineFlags::default()).is_err());
        let bad_rrf: FileConfig = toml::from_str("[fusion]\nrrf_k = -1.0\n").unwrap();
        assert!(resolve(&bad_rrf, &EngineFlags::default()).is_err());
    }
}
