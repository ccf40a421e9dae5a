//! Run configuration: defaults, config files and flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use tgtext::eval::ScoringMode;
use tgtext::graph::IngestOptions;
use tgtext::llm::EndpointConfig;
use tgtext::mock::MockOracle;
use tgtext::negatives::HistoricalPool;
use tgtext::neighbors::Direction;
use tgtext::prompt::PromptConfig;

use crate::CliError;

/// Everything a command needs. A run manifest embeds this verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub ingest: IngestOptions,
    pub train_frac: f64,
    pub val_frac: f64,
    pub prompt: PromptConfig,
    pub direction: Direction,
    pub scoring: ScoringMode,
    /// Answer with a deterministic mock instead of the endpoint.
    pub mock: Option<MockOracle>,
    /// JSONL script for the scripted mock; implies `mock = scripted`.
    pub mock_script: Option<PathBuf>,
    pub endpoint: EndpointConfig,
    pub seed: u64,
    pub num_negatives: usize,
    pub historical_pool: HistoricalPool,
    /// Pre-computed negative sets (JSONL) that take precedence over sampling.
    pub negatives_file: Option<PathBuf>,
    /// EdgeBank-tw window; the train duration when unset.
    pub edgebank_window: Option<u64>,
    pub max_queries: Option<usize>,
    pub first_n: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            ingest: IngestOptions::default(),
            train_frac: 0.70,
            val_frac: 0.15,
            prompt: PromptConfig::default(),
            direction: Direction::Bidirectional,
            scoring: ScoringMode::RankedList,
            mock: None,
            mock_script: None,
            endpoint: EndpointConfig::default(),
            seed: 0,
            num_negatives: 20,
            historical_pool: HistoricalPool::SourceConditioned,
            negatives_file: None,
            edgebank_window: None,
            max_queries: None,
            first_n: 5000,
            output_dir: PathBuf::from("tgtext-out"),
        }
    }
}

impl RunConfig {
    /// Read a JSON object or `key = value` lines (dotted keys for nested
    /// fields, `#` comments). Missing keys keep their defaults.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            key_values(text)?
        };
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.prompt.batch_size == 0 {
            return Err(CliError::Config("batch_size must be at least 1".into()));
        }
        if self.num_negatives == 0 {
            return Err(CliError::Config("num_negatives must be at least 1".into()));
        }
        if self.mock.is_none() && self.mock_script.is_none() {
            self.endpoint.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn key_values(text: &str) -> Result<Value, CliError> {
    let mut root = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
        let raw = raw.trim();
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));

        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| {
            CliError::Config(format!("line {}: empty key", i + 1))
        })?;
        let mut node = &mut root;
        for part in parts {
            let entry = node
                .entry(part.to_owned())
                .or_insert_with(|| Value::Object(Map::new()));
            node = entry.as_object_mut().ok_or_else(|| {
                CliError::Config(format!("line {}: {part} is not a table", i + 1))
            })?;
        }
        node.insert(last.to_owned(), value);
    }
    Ok(Value::Object(root))
}
