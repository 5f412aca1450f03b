//! Wiring from resolved [`Settings`] to a ready [`SearchEngine`]: resource
//! files (or built-in defaults), catalog loading with variable
//! normalization, embedder/provider/reranker construction, and index
//! build-or-load.

use crate::config::{EmbedderKind, RerankerKind, Settings};
use anyhow::{Context, Result};
use datascout_core::catalog::{
    ingest_records, normalize_variables, Catalog, CatalogFormat, VariableMap,
};
use datascout_core::evalbench::UrlPatterns;
use datascout_core::persist::IndexBundle;
use datascout_core::pipeline::{
    BaselineReranker, LlmReranker, Reranker, SearchEngine,
};
use datascout_core::semantic::{Embedder, HashEmbedder, RemoteEmbedder};
use datascout_core::textproc::AbbrDict;
use datascout_core::understanding::{
    Gazetteer, HttpLlmProvider, LlmProvider, QueryUnderstander, RegionGazetteer, TopicMap,
};

/// Lookup tables resolved from configured paths or built-in defaults.
pub struct Resources {
    pub dict: AbbrDict,
    pub variable_map: VariableMap,
    pub gazetteer: Gazetteer,
    pub regions: RegionGazetteer,
    pub topics: TopicMap,
    pub url_patterns: UrlPatterns,
}

pub fn load_resources(settings: &Settings) -> Result<Resources> {
    let dict = match &settings.abbr_dict {
        Some(path) => AbbrDict::from_file(path)?,
        None => AbbrDict::builtin(),
    };
    let variable_map = match &settings.variable_map {
        Some(path) => VariableMap::from_file(path)?,
        None => VariableMap::builtin(),
    };
    let gazetteer = match &settings.gazetteer {
        Some(path) => Gazetteer::from_file(path)?,
        None => Gazetteer::builtin(),
    };
    let regions = match &settings.regions {
        Some(path) => RegionGazetteer::from_file(path)?,
        None => RegionGazetteer::builtin(),
    };
    let topics = match &settings.topics {
        Some(path) => TopicMap::from_file(path)?,
        None => TopicMap::builtin(),
    };
    let url_patterns = match &settings.url_patterns {
        Some(path) => UrlPatterns::from_file(path)?,
        None => UrlPatterns::builtin(),
    };
    Ok(Resources {
        dict,
        variable_map,
        gazetteer,
        regions,
        topics,
        url_patterns,
    })
}

/// Ingest the configured catalog and normalize every record's variables.
pub fn load_catalog(settings: &Settings, resources: &Resources) -> Result<Catalog> {
    let path = settings
        .catalog
        .as_ref()
        .context("no catalog given (use --catalog or paths.catalog in the config)")?;
    let raw = ingest_records(path, CatalogFormat::JsonLines)?;
    let normalized = raw
        .records()
        .iter()
        .map(|r| normalize_variables(r, &resources.variable_map));
    Ok(Catalog::from_records(normalized)?)
}

pub fn make_embedder(settings: &Settings) -> Result<Box<dyn Embedder>> {
    match settings.embedder_kind {
        EmbedderKind::Hash => Ok(Box::new(HashEmbedder::new(settings.dimension))),
        EmbedderKind::Remote => {
            let endpoint = settings
                .embed_endpoint
                .clone()
                .context("remote embedder requires embedder.endpoint")?;
            Ok(Box::new(RemoteEmbedder::new(
                endpoint,
                settings.embed_model.clone(),
                settings.api_key.clone(),
                settings.dimension,
            )))
        }
    }
}

fn make_provider(settings: &Settings) -> Option<Box<dyn LlmProvider>> {
    settings.provider_endpoint.as_ref().map(|endpoint| {
        Box::new(HttpLlmProvider::new(
            endpoint.clone(),
            settings.provider_model.clone(),
            settings.api_key.clone(),
        )) as Box<dyn LlmProvider>
    })
}

pub fn make_understander(settings: &Settings, resources: &Resources) -> QueryUnderstander {
    QueryUnderstander {
        gazetteer: resources.gazetteer.clone(),
        regions: resources.regions.clone(),
        topics: resources.topics.clone(),
        intent_mode: settings.intent_mode,
        rewrite_mode: settings.rewrite_mode,
        provider: make_provider(settings),
    }
}

pub fn make_reranker(settings: &Settings) -> Box<dyn Reranker> {
    let (alpha, beta, gamma) = settings.reranker_weights;
    match settings.reranker_kind {
        RerankerKind::Baseline => Box::new(BaselineReranker { alpha, beta, gamma }),
        RerankerKind::Provider => match make_provider(settings) {
            Some(provider) => Box::new(LlmReranker::new(provider)),
            None => {
                log::warn!("reranker \"provider\" configured without an endpoint; using baseline");
                Box::new(BaselineReranker { alpha, beta, gamma })
            }
        },
    }
}

/// Assemble the full engine: load or build indexes over the normalized
/// catalog and plug in the configured components.
pub fn build_engine(settings: &Settings) -> Result<SearchEngine> {
    let resources = load_resources(settings)?;
    let catalog = load_catalog(settings, &resources)?;
    let embedder = make_embedder(settings)?;
    let understander = make_understander(settings, &resources);
    let reranker = make_reranker(settings);
    let options = settings.engine_options();

    let engine = match &settings.index {
        Some(path) => {
            let bundle = IndexBundle::load(path)?;
            SearchEngine::from_parts(
                catalog,
                bundle.lexical,
                bundle.vector,
                resources.dict,
                embedder,
                understander,
                reranker,
                options,
            )?
        }
        None => SearchEngine::build(
            catalog,
            resources.dict,
            embedder,
            understander,
            reranker,
            options,
        )?,
    };
    Ok(engine)
}
