//! Commands behind the `tgtext` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tgtext::derive_seed;
use tgtext::eval::{
    self, EdgeBankWindow, EvalConfig, EvalError, EvalOutput, MethodSummary, PredictionRecord,
};
use tgtext::explain::{self, CategoryReport, ExplainError, ExplanationRecord};
use tgtext::graph::{self, DatasetManifest, DatasetStats, EdgeStream, GraphError};
use tgtext::llm::{Completion, LlmClient, LlmError};
use tgtext::mock::{self, MockOracle, MockTransport};
use tgtext::negatives::{self, NegativeConfig, NegativeError, NegativeSampler};

pub mod config;

pub use config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const NEGATIVES_FILE: &str = "negatives.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";
pub const REPORT_FILE: &str = "category_report.json";
pub const REPORT_CSV_FILE: &str = "category_report.csv";
pub const ABLATION_JSON_FILE: &str = "ablation.json";
pub const ABLATION_CSV_FILE: &str = "ablation.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Endpoint(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::InvalidFractions { .. }
            | GraphError::EmptyTestSet
            | GraphError::InvalidSplit { .. }
            | GraphError::ManifestMismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<NegativeError> for CliError {
    fn from(e: NegativeError) -> Self {
        match e {
            NegativeError::SpaceTooSmall { .. } | NegativeError::ZeroCount => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Endpoint(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Endpoint(inner) => inner.into(),
            EvalError::Io(_) | EvalError::Json { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Written to every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub revision: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub negative_seed: u64,
    pub client: Option<String>,
    pub dataset: DatasetManifest,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, stream: &EdgeStream, client: Option<String>) -> Self {
        Self {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            revision: option_env!("TGTEXT_REVISION").map(str::to_owned),
            config_hash: config.hash(),
            seed: config.seed,
            negative_seed: negative_seed(config.seed),
            client,
            dataset: stream.manifest(config.dataset.as_deref().and_then(Path::to_str)),
            config: config.clone(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        read_json(&dir.join(MANIFEST_FILE))
    }
}

pub fn negative_seed(seed: u64) -> u64 {
    derive_seed(seed, "negatives")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Ingest and split the configured dataset.
pub fn load_stream(config: &RunConfig) -> Result<EdgeStream, CliError> {
    let path = config
        .dataset
        .as_deref()
        .ok_or_else(|| CliError::Config("no dataset given".into()))?;
    let stream = graph::ingest_csv(path, &config.ingest)
        .map_err(|e| CliError::from(e).with_context(&path.display().to_string()))?;
    Ok(graph::chronological_split(stream, config.train_frac, config.val_frac)?)
}

impl CliError {
    fn with_context(self, ctx: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{ctx}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{ctx}: {m}")),
            CliError::Endpoint(m) => CliError::Endpoint(format!("{ctx}: {m}")),
        }
    }
}

pub fn build_client(config: &RunConfig, stream: &EdgeStream) -> Result<LlmClient, CliError> {
    let max_parallel = config.endpoint.max_parallel.max(1);
    if let Some(path) = &config.mock_script {
        let entries = mock::load_script(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let transport = MockTransport::scripted(stream, entries);
        return Ok(LlmClient::new(Arc::new(transport)).with_max_parallel(max_parallel));
    }
    if let Some(oracle) = config.mock {
        if oracle == MockOracle::Scripted {
            return Err(CliError::Config("the scripted mock needs mock_script".into()));
        }
        let transport = MockTransport::new(oracle, stream);
        return Ok(LlmClient::new(Arc::new(transport)).with_max_parallel(max_parallel));
    }
    Ok(LlmClient::http(&config.endpoint)?)
}

pub fn build_sampler(config: &RunConfig, stream: &EdgeStream) -> Result<NegativeSampler, CliError> {
    let sampler = NegativeSampler::new(
        stream,
        NegativeConfig {
            n: config.num_negatives,
            seed: negative_seed(config.seed),
            pool: config.historical_pool,
        },
    )?;
    match &config.negatives_file {
        Some(path) => {
            let fixed = negatives::load_fixed_negatives(path)
                .map_err(|e| CliError::from(e).with_context(&path.display().to_string()))?;
            Ok(sampler.with_fixed(stream, fixed)?)
        }
        None => Ok(sampler),
    }
}

pub fn eval_config(config: &RunConfig) -> EvalConfig {
    EvalConfig {
        prompt: config.prompt.clone(),
        direction: config.direction,
        scoring: config.scoring,
        max_queries: config.max_queries,
        retain_exchanges: 0,
        method: match config.mock.filter(|_| config.mock_script.is_none()) {
            Some(oracle) => format!("mock-{}", oracle.name()),
            None if config.mock_script.is_some() => "mock-scripted".to_owned(),
            None => eval::METHOD_LLM.to_owned(),
        },
    }
}

/// One row of the dataset statistics table.
pub fn stats_table(name: &str, stats: &DatasetStats) -> String {
    let surprise = stats
        .surprise
        .map_or_else(|| "n/a".to_owned(), |s| format!("{s:.3}"));
    format!(
        "Dataset\t# Nodes\t# Edges\t# Unique Edges\t# Unique Steps\tSurprise\tDuration\n\
         {name}\t{}\t{}\t{}\t{}\t{surprise}\t{}\n",
        stats.num_nodes,
        stats.num_edges,
        stats.num_unique_edges,
        stats.num_unique_steps,
        stats.duration.1 - stats.duration.0,
    )
}

pub fn cmd_stats(config: &RunConfig) -> Result<DatasetStats, CliError> {
    let stream = load_stream(config)?;
    Ok(graph::compute_stats(&stream)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    EdgebankInf,
    EdgebankTw,
}

fn write_eval_output(dir: &Path, output: &EvalOutput, write_negatives: bool) -> Result<(), CliError> {
    create_dir(dir)?;
    eval::write_jsonl(&dir.join(RECORDS_FILE), &output.records)?;
    if write_negatives {
        negatives::save_negatives(&dir.join(NEGATIVES_FILE), &output.negatives)?;
    }
    write_json(&dir.join(SUMMARY_FILE), &output.summary)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join(CONFIG_FILE), &manifest.config)?;
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

/// Evaluate the prompted model (or a baseline) and write the run directory.
pub fn cmd_eval(config: &RunConfig, baseline: Option<Baseline>) -> Result<MethodSummary, CliError> {
    config.validate()?;
    let stream = load_stream(config)?;
    let sampler = build_sampler(config, &stream)?;
    let (output, client_id) = match baseline {
        Some(b) => {
            let window = match b {
                Baseline::EdgebankInf => EdgeBankWindow::Unlimited,
                Baseline::EdgebankTw => EdgeBankWindow::Window(
                    config
                        .edgebank_window
                        .unwrap_or_else(|| eval::train_duration(&stream)),
                ),
            };
            let out = eval::run_edgebank(
                &stream,
                window,
                config.prompt.batch_size,
                config.max_queries,
                &sampler,
            )?;
            (out, None)
        }
        None => {
            let client = build_client(config, &stream)?;
            let out = eval::run_eval(&stream, &eval_config(config), &client, &sampler)?;
            (out, Some(client.identity()))
        }
    };
    let dir = &config.output_dir;
    write_eval_output(dir, &output, true)?;
    write_manifest(dir, &RunManifest::new("eval", config, &stream, client_id))?;
    Ok(output.summary)
}

/// One ablation configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationFlag {
    NoIcl,
    NoNeighbors,
    NoBackground,
    None,
}

impl AblationFlag {
    pub fn label(self) -> &'static str {
        match self {
            AblationFlag::NoIcl => "no-icl",
            AblationFlag::NoNeighbors => "no-neighbors",
            AblationFlag::NoBackground => "no-background",
            AblationFlag::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "no-icl" => Ok(AblationFlag::NoIcl),
            "no-neighbors" => Ok(AblationFlag::NoNeighbors),
            "no-background" => Ok(AblationFlag::NoBackground),
            "none" => Ok(AblationFlag::None),
            other => Err(CliError::Config(format!("unknown ablation flag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sweep {
    pub neighbors: Vec<usize>,
    pub flags: Vec<AblationFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub configuration: String,
    pub neighbors: usize,
    pub include_background: bool,
    pub include_examples: bool,
    pub include_neighbors: bool,
    pub num_queries: usize,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub num_errors: usize,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("configuration,neighbors,background,examples,temporal_neighbors,num_queries,mrr,hits_at_1,errors\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.configuration,
            r.neighbors,
            r.include_background,
            r.include_examples,
            r.include_neighbors,
            r.num_queries,
            r.mrr,
            r.hits_at_1,
            r.num_errors
        );
    }
    out
}

/// Run one evaluation per sweep entry with shared negatives and seeds.
pub fn cmd_ablate(config: &RunConfig, sweep: &Sweep) -> Result<Vec<AblationRow>, CliError> {
    if sweep.neighbors.is_empty() && sweep.flags.is_empty() {
        return Err(CliError::Config("empty ablation sweep".into()));
    }
    config.validate()?;
    let stream = load_stream(config)?;
    let sampler = build_sampler(config, &stream)?;
    let client = build_client(config, &stream)?;

    let mut variants = Vec::new();
    for &m in &sweep.neighbors {
        let mut c = config.clone();
        c.prompt.neighbors = m;
        variants.push((format!("neighbors-{m}"), c));
    }
    for &flag in &sweep.flags {
        let mut c = config.clone();
        match flag {
            AblationFlag::NoIcl => c.prompt.include_examples = false,
            AblationFlag::NoNeighbors => c.prompt.include_neighbors = false,
            AblationFlag::NoBackground => c.prompt.include_background = false,
            AblationFlag::None => {}
        }
        variants.push((flag.label().to_owned(), c));
    }

    let root = &config.output_dir;
    let mut rows = Vec::new();
    for (i, (label, variant)) in variants.iter().enumerate() {
        log::info!("ablation {label}");
        let output = eval::run_eval(&stream, &eval_config(variant), &client, &sampler)?;
        if i == 0 {
            create_dir(root)?;
            negatives::save_negatives(&root.join(NEGATIVES_FILE), &output.negatives)?;
        }
        write_eval_output(&root.join(label), &output, false)?;
        let s = &output.summary;
        rows.push(AblationRow {
            configuration: label.clone(),
            neighbors: variant.prompt.effective_neighbors(),
            include_background: variant.prompt.include_background,
            include_examples: variant.prompt.include_examples,
            include_neighbors: variant.prompt.include_neighbors,
            num_queries: s.num_queries,
            mrr: s.mrr,
            hits_at_1: s.hits_at_1,
            num_errors: s.num_errors,
        });
    }
    write_json(&root.join(ABLATION_JSON_FILE), &rows)?;
    fs::write(root.join(ABLATION_CSV_FILE), ablation_csv(&rows))?;
    write_manifest(root, &RunManifest::new("ablate", config, &stream, Some(client.identity())))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainOutput {
    pub report: CategoryReport,
    pub explanations: Vec<ExplanationRecord>,
    pub failed: usize,
}

/// Explain and classify the first `config.first_n` test predictions.
///
/// With `from_run`, predictions come from an earlier eval directory and the
/// prompts are rebuilt from its stored configuration; the client comes from
/// `config`. Otherwise an evaluation over the first `first_n` queries runs
/// first and its outputs are written alongside the report.
pub fn cmd_explain(config: &RunConfig, from_run: Option<&Path>) -> Result<ExplainOutput, CliError> {
    config.validate()?;
    let out_dir = &config.output_dir;
    let (stream, run_config, records, answered, client) = match from_run {
        Some(run_dir) => {
            let run_config: RunConfig = read_json(&run_dir.join(CONFIG_FILE))?;
            let stream = load_stream(&run_config)?;
            let records: Vec<PredictionRecord> = eval::read_jsonl(&run_dir.join(RECORDS_FILE))?;
            if records.is_empty() {
                return Err(CliError::Io(format!("{}: no prediction records", run_dir.display())));
            }
            let records: Vec<PredictionRecord> = records.into_iter().take(config.first_n).collect();
            let mut eval_cfg = eval_config(&run_config);
            eval_cfg.max_queries = Some(records.len());
            let bundles = eval::replay_bundles(&stream, &eval_cfg)?;
            let mut answered = Vec::new();
            for (record, bundle) in records.iter().zip(bundles) {
                if bundle.query_id != record.query_id {
                    return Err(CliError::Io(format!(
                        "records do not follow the run's query order at query {}",
                        record.query_id
                    )));
                }
                if let Some(text) = &record.response {
                    let completion = Completion {
                        query_id: record.query_id,
                        text: text.clone(),
                        latency_ms: 0,
                        attempt_count: 0,
                    };
                    answered.push((bundle, completion));
                }
            }
            let client = build_client(config, &stream)?;
            (stream, run_config, records, answered, client)
        }
        None => {
            let stream = load_stream(config)?;
            let sampler = build_sampler(config, &stream)?;
            let client = build_client(config, &stream)?;
            let mut eval_cfg = eval_config(config);
            let first_n = config.first_n.min(config.max_queries.unwrap_or(usize::MAX));
            eval_cfg.max_queries = Some(first_n);
            eval_cfg.retain_exchanges = first_n;
            let output = eval::run_eval(&stream, &eval_cfg, &client, &sampler)?;
            write_eval_output(out_dir, &output, true)?;
            let answered = output
                .exchanges
                .into_iter()
                .map(|x| (x.bundle, x.completion))
                .collect();
            (stream, config.clone(), output.records, answered, client)
        }
    };

    let mut explanations = Vec::new();
    let mut failed = 0;
    for result in explain::explain_and_classify(&client, &answered) {
        match result {
            Ok(record) => explanations.push(record),
            Err(e @ LlmError::Auth(_)) => return Err(e.into()),
            Err(e) => {
                log::warn!("explanation failed: {e}");
                failed += 1;
            }
        }
    }
    let report = explain::aggregate_report(&records, &explanations)?;

    create_dir(out_dir)?;
    eval::write_jsonl(&out_dir.join(EXPLANATIONS_FILE), &explanations)?;
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    fs::write(out_dir.join(REPORT_CSV_FILE), report.to_csv())?;
    let mut manifest = RunManifest::new("explain", config, &stream, Some(client.identity()));
    if from_run.is_some() {
        manifest.dataset = stream.manifest(run_config.dataset.as_deref().and_then(Path::to_str));
    }
    write_manifest(out_dir, &manifest)?;
    Ok(ExplainOutput {
        report,
        explanations,
        failed,
    })
}

