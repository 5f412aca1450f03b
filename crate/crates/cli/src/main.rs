//! `datascout`: hybrid search over scientific-metadata catalogs.
//!
//! Subcommands: `ingest`, `index build`, `search`, `eval run`,
//! `bench match`, `abbr expand`. Machine-readable output goes to stdout,
//! diagnostics to stderr. Exit codes: 0 success, 1 usage error, 2 data
//! error.

mod config;
mod engine;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use config::{EngineFlags, FileConfig};
use datascout_core::catalog::Catalog;
use datascout_core::evalbench::{self, BenchmarkCase, DEFAULT_FUZZY_THRESHOLD};
use datascout_core::persist::{IndexBundle, INDEX_FORMAT_VERSION};
use datascout_core::textproc::expand_abbreviations;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

const VERSION_STRING: &str = concat!(env!("CARGO_PKG_VERSION"), " (index-format 1)");

#[derive(Parser)]
#[command(
    name = "datascout",
    version = VERSION_STRING,
    about = "Multi-stage hybrid search over scientific-metadata catalogs"
)]
struct Cli {
    /// Config file (TOML); flags override config values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and validate a catalog, optionally writing normalized records
    Ingest(IngestArgs),
    /// Build and persist search indexes
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Run one query through the full pipeline
    Search(SearchArgs),
    /// Run the evaluation harness
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
    /// Construct benchmark cases from paper extractions
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Abbreviation utilities
    Abbr {
        #[command(subcommand)]
        action: AbbrAction,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Catalog file (JSON Lines)
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Variable alias map file
    #[arg(long)]
    variable_map: Option<PathBuf>,
    /// Write the normalized catalog here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum IndexAction {
    /// Build the lexical and vector indexes and persist them
    Build {
        #[command(flatten)]
        flags: EngineFlags,
        /// Output index file
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SearchArgs {
    /// The query
    query: String,
    /// Include the understood query and per-stage candidate counts
    #[arg(long)]
    explain: bool,
    /// Result depth (overrides pipeline.result_k)
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    flags: EngineFlags,
}

#[derive(Subcommand)]
enum EvalAction {
    /// Evaluate benchmark cases against the engine
    Run(EvalRunArgs),
}

#[derive(Args)]
struct EvalRunArgs {
    /// Benchmark cases (JSON Lines)
    #[arg(long)]
    bench: PathBuf,
    /// Recall cutoffs, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
    k: Vec<usize>,
    /// Ranking depth per query (defaults to the largest cutoff)
    #[arg(long)]
    depth: Option<usize>,
    /// Worker threads for case evaluation (0 = rayon default)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    flags: EngineFlags,
}

#[derive(Subcommand)]
enum BenchAction {
    /// Match extraction files against the catalog into benchmark cases
    Match(BenchMatchArgs),
}

#[derive(Args)]
struct BenchMatchArgs {
    /// Extraction JSON files, or a directory of them
    #[arg(long, required = true, num_args = 1..)]
    extractions: Vec<PathBuf>,
    /// Fuzzy-match similarity threshold
    #[arg(long, default_value_t = DEFAULT_FUZZY_THRESHOLD)]
    threshold: f64,
    /// Write cases here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: EngineFlags,
}

#[derive(Subcommand)]
enum AbbrAction {
    /// Expand abbreviations in text from stdin to stdout
    Expand {
        /// Abbreviation dictionary file
        #[arg(long)]
        dict: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let file_config = load_file_config(&cli.config)?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&file_config, args),
        Command::Index {
            action: IndexAction::Build { flags, out },
        } => cmd_index_build(&file_config, &flags, &out),
        Command::Search(args) => cmd_search(&file_config, args),
        Command::Eval {
            action: EvalAction::Run(args),
        } => cmd_eval_run(&file_config, args),
        Command::Bench {
            action: BenchAction::Match(args),
        } => cmd_bench_match(&file_config, args),
        Command::Abbr {
            action: AbbrAction::Expand { dict },
        } => cmd_abbr_expand(dict),
    }
}

#[derive(Serialize)]
struct IngestSummary {
    records: usize,
    sources: BTreeMap<String, usize>,
}

fn cmd_ingest(file_config: &FileConfig, args: IngestArgs) -> Result<()> {
    let flags = EngineFlags {
        catalog: args.catalog,
        variable_map: args.variable_map,
        ..EngineFlags::default()
    };
    let settings = config::resolve(file_config, &flags)?;
    let resources = engine::load_resources(&settings)?;
    let catalog = engine::load_catalog(&settings, &resources)?;

    if let Some(out) = &args.out {
        catalog.write_jsonl(out)?;
    }

    let mut sources: BTreeMap<String, usize> = BTreeMap::new();
    for record in catalog.records() {
        let key = serde_json::to_value(record.source)?
            .as_str()
            .unwrap_or("OTHER")
            .to_string();
        *sources.entry(key).or_insert(0) += 1;
    }
    let summary = IngestSummary {
        records: catalog.len(),
        sources,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_index_build(file_config: &FileConfig, flags: &EngineFlags, out: &Path) -> Result<()> {
    let settings = config::resolve(file_config, flags)?;
    let resources = engine::load_resources(&settings)?;
    let catalog = engine::load_catalog(&settings, &resources)?;
    let embedder = engine::make_embedder(&settings)?;

    let lexical =
        datascout_core::lexical::build_lexical_index(&catalog, &resources.dict, settings.bm25)?;
    let vector =
        datascout_core::semantic::build_vector_index(&catalog, embedder.as_ref(), &resources.dict)?;
    let bundle = IndexBundle::new(lexical, vector);
    bundle.save(out)?;
    println!(
        "{}",
        serde_json::json!({
            "indexed": catalog.len(),
            "format_version": INDEX_FORMAT_VERSION,
            "out": out.display().to_string(),
        })
    );
    Ok(())
}

fn print_warnings(warnings: &[String]) {
    for warning in warnings {
        eprintln!("warning: {warning}");
    }
}

fn cmd_search(file_config: &FileConfig, args: SearchArgs) -> Result<()> {
    let settings = config::resolve(file_config, &args.flags)?;
    let engine = engine::build_engine(&settings)?;
    let depth = args.k.unwrap_or(settings.result_k);
    let output = engine.search_to_depth(&args.query, depth)?;
    print_warnings(&output.warnings);
    if args.explain {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({
                "results": output.results,
                "explain": output.explain,
            }))?
        );
    } else {
        println!("{}", serde_json::to_string(&output.results)?);
    }
    Ok(())
}

fn cmd_eval_run(file_config: &FileConfig, args: EvalRunArgs) -> Result<()> {
    if args.k.is_empty() {
        anyhow::bail!("--k needs at least one cutoff");
    }
    let settings = config::resolve(file_config, &args.flags)?;
    let engine = engine::build_engine(&settings)?;
    let cases = evalbench::load_cases(&args.bench)?;
    let max_k = args.k.iter().copied().max().unwrap_or(0);
    let depth = args.depth.unwrap_or(max_k);

    let report = run_in_pool(args.threads, || {
        evalbench::evaluate(&cases, &engine, &args.k, depth)
    })?;

    eprint!("{}", report.text_table());
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn run_in_pool<T>(threads: usize, job: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    if threads == 0 {
        job()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("build rayon pool");
        pool.install(job)
    }
}

fn collect_extraction_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("cannot list {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn cmd_bench_match(file_config: &FileConfig, args: BenchMatchArgs) -> Result<()> {
    let settings = config::resolve(file_config, &args.flags)?;
    let resources = engine::load_resources(&settings)?;
    let catalog: Catalog = engine::load_catalog(&settings, &resources)?;

    let mut cases: Vec<BenchmarkCase> = Vec::new();
    for path in collect_extraction_files(&args.extractions)? {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read extraction {}", path.display()))?;
        let extraction = evalbench::parse_extraction(&text)
            .with_context(|| format!("extraction {}", path.display()))?;
        let paper_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        cases.extend(evalbench::match_groundtruth(
            &paper_id,
            &extraction,
            &catalog,
            &resources.url_patterns,
            args.threshold,
        ));
    }

    match &args.out {
        Some(out) => {
            evalbench::write_cases(&cases, out)?;
            eprintln!("wrote {} cases to {}", cases.len(), out.display());
        }
        None => {
            for case in &cases {
                println!("{}", serde_json::to_string(case)?);
            }
        }
    }
    Ok(())
}

fn cmd_abbr_expand(dict_path: Option<PathBuf>) -> Result<()> {
    let dict = match dict_path {
        Some(path) => datascout_core::textproc::AbbrDict::from_file(&path)?,
        None => datascout_core::textproc::AbbrDict::builtin(),
    };
    let mut text = String::new();
    std::io::stdin()
        .read_to_string(&mut text)
        .context("cannot read stdin")?;
    print!("{}", expand_abbreviations(&text, &dict));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_string_names_the_index_format() {
        assert!(VERSION_STRING.contains(&format!("index-format {INDEX_FORMAT_VERSION}")));
    }

    #[test]
    fn cli_parses_documented_subcommands() {
        for argv in [
            vec!["datascout", "ingest", "--catalog", "c.jsonl"],
            vec!["datascout", "index", "build", "--catalog", "c.jsonl", "--out", "i.json"],
            vec!["datascout", "search", "ERA5 temperature 2020", "--explain"],
            vec!["datascout", "eval", "run", "--bench", "cases.jsonl", "--k", "10,20,50,100"],
            vec!["datascout", "bench", "match", "--extractions", "x.json", "--catalog", "c.jsonl"],
            vec!["datascout", "abbr", "expand"],
        ] {
            Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        }
    }

    #[test]
    fn eval_k_list_parses_comma_separated() {
        let cli = Cli::try_parse_from([
            "datascout", "eval", "run", "--bench", "b.jsonl", "--k", "10,20,50,100",
        ])
        .unwrap();
        match cli.command {
            Command::Eval {
                action: EvalAction::Run(args),
            } => assert_eq!(args.k, vec![10, 20, 50, 100]),
            _ => panic!("wrong command parsed"),
        }
    }
}
