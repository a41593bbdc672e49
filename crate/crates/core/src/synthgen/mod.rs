//! Synthetic duplicate / distinct query pairs from an LLM.
//!
//! Every seed query gets two prompts: one asking for two paraphrases
//! (emitted with `is_duplicate = 1`) and one asking for two related but
//! different queries (`is_duplicate = 0`). Each generated query is paired with
//! its seed, so a fully successful seed yields four records.
//!
//! Output is JSON Lines sorted by `(seed_id, kind, item)` and deduplicated on
//! the normalized `(question1, question2)` pair, which makes it independent of
//! request completion order.

mod llm;
mod parse;
mod prompts;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pair::LabeledPair;

pub use llm::{ChatCompletionsClient, LlmClient, LlmError};
pub use parse::{parse_llm_queries, ParseError};
pub use prompts::{
    render_distinct_prompt, render_paraphrase_prompt, DEFAULT_DOMAIN_ROLE, DISTINCT_TEMPLATE,
    PARAPHRASE_TEMPLATE,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no seeds given")]
    EmptySeeds,
    #[error("seed {id} has empty text")]
    EmptySeedText { id: i64 },
    #[error("seed file line {line}: {message}")]
    BadSeedLine { line: usize, message: String },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedQuery {
    pub id: i64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
}

impl SeedQuery {
    pub fn new(id: i64, text: impl Into<String>) -> Result<Self, SynthError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(SynthError::EmptySeedText { id });
        }
        Ok(Self {
            id,
            text,
            domain_tag: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Paraphrase,
    Distinct,
}

impl PairKind {
    pub fn label(self) -> i64 {
        match self {
            PairKind::Paraphrase => 1,
            PairKind::Distinct => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub question1: String,
    pub question2: String,
    pub is_duplicate: i64,
    pub kind: PairKind,
    pub seed_id: i64,
    pub raw_response_hash: String,
}

impl SynthRecord {
    pub fn to_pair(&self) -> Option<LabeledPair> {
        LabeledPair::from_label(&self.question1, &self.question2, self.is_duplicate).ok()
    }
}

/// A prompt that never produced usable output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenFailure {
    pub seed_id: i64,
    pub kind: PairKind,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub llm_endpoint: String,
    pub llm_model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_domain_role")]
    pub domain_role: String,
    /// First retry delay; doubles on each further retry.
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Also emit paraphrase/paraphrase positives and paraphrase/distinct
    /// negatives.
    #[serde(default)]
    pub expand_pairs: bool,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_concurrency() -> usize {
    4
}

fn default_max_retries() -> u32 {
    3
}

fn default_domain_role() -> String {
    DEFAULT_DOMAIN_ROLE.to_string()
}

fn default_retry_backoff_ms() -> u64 {
    500
}

fn default_timeout_ms() -> u64 {
    120_000
}

impl GenConfig {
    pub fn new(llm_endpoint: impl Into<String>, llm_model: impl Into<String>) -> Self {
        Self {
            llm_endpoint: llm_endpoint.into(),
            llm_model: llm_model.into(),
            temperature: default_temperature(),
            concurrency: default_concurrency(),
            max_retries: default_max_retries(),
            domain_role: default_domain_role(),
            retry_backoff_ms: default_retry_backoff_ms(),
            timeout_ms: default_timeout_ms(),
            api_key_env: None,
            expand_pairs: false,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.concurrency < 1 {
            return Err(SynthError::InvalidConfig("concurrency must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(SynthError::InvalidConfig("temperature must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SynthError> {
        let cfg: GenConfig = toml::from_str(s).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn client(&self) -> Result<ChatCompletionsClient, SynthError> {
        Ok(ChatCompletionsClient::new(
            &self.llm_endpoint,
            &self.llm_model,
            self.temperature,
            Duration::from_millis(self.timeout_ms),
            self.api_key_env.as_deref(),
        )?)
    }
}

/// Lowercased, whitespace-collapsed form used for equality checks.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Records for one seed, each tagged with its position for ordering.
#[derive(Debug, Clone, Default)]
pub struct SeedOutcome {
    items: Vec<(PairKind, usize, SynthRecord)>,
    pub failures: Vec<GenFailure>,
    /// Generated queries dropped for being identical to the seed.
    pub identical_dropped: usize,
}

impl SeedOutcome {
    pub fn records(&self) -> impl Iterator<Item = &SynthRecord> {
        self.items.iter().map(|(_, _, r)| r)
    }
}

struct Generated {
    queries: (String, String),
    hash: String,
}

async fn run_prompt(
    prompt: &str,
    config: &GenConfig,
    client: &dyn LlmClient,
) -> Result<Generated, (u32, String)> {
    let attempts = config.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
        let raw = match client.complete(prompt).await {
            Ok(raw) => raw,
            Err(e) => {
                last_error = e.to_string();
                continue;
            }
        };
        match parse_llm_queries(&raw) {
            Ok(queries) => {
                return Ok(Generated {
                    queries,
                    hash: hex::encode(Sha256::digest(raw.as_bytes())),
                })
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err((attempts, last_error))
}

/// Issues both prompts for `seed` and turns the answers into records.
///
/// A prompt that still fails after `max_retries` retries contributes no
/// records and one [`GenFailure`].
pub async fn generate_for_seed(
    seed: &SeedQuery,
    config: &GenConfig,
    client: &dyn LlmClient,
) -> SeedOutcome {
    let mut out = SeedOutcome::default();
    let seed_norm = normalize_text(&seed.text);
    let mut generated: Vec<(PairKind, Vec<String>, String)> = Vec::new();

    for kind in [PairKind::Paraphrase, PairKind::Distinct] {
        let prompt = match kind {
            PairKind::Paraphrase => render_paraphrase_prompt(&seed.text, &config.domain_role),
            PairKind::Distinct => render_distinct_prompt(&seed.text, &config.domain_role),
        };
        match run_prompt(&prompt, config, client).await {
            Ok(g) => {
                let (a, b) = g.queries;
                let kept: Vec<String> = [a, b]
                    .into_iter()
                    .filter(|q| {
                        let keep = normalize_text(q) != seed_norm;
                        if !keep {
                            out.identical_dropped += 1;
                        }
                        keep
                    })
                    .collect();
                for (i, q) in kept.iter().enumerate() {
                    out.items.push((
                        kind,
                        i,
                        SynthRecord {
                            question1: seed.text.clone(),
                            question2: q.clone(),
                            is_duplicate: kind.label(),
                            kind,
                            seed_id: seed.id,
                            raw_response_hash: g.hash.clone(),
                        },
                    ));
                }
                generated.push((kind, kept, g.hash));
            }
            Err((attempts, error)) => {
                tracing::warn!(seed_id = seed.id, ?kind, attempts, %error, "generation failed");
                out.failures.push(GenFailure {
                    seed_id: seed.id,
                    kind,
                    attempts,
                    error,
                });
            }
        }
    }

    if config.expand_pairs {
        expand(&mut out, seed.id, &generated);
    }
    out
}

fn expand(out: &mut SeedOutcome, seed_id: i64, generated: &[(PairKind, Vec<String>, String)]) {
    let find = |k: PairKind| generated.iter().find(|g| g.0 == k);
    let push = |kind: PairKind, q1: &str, q2: &str, hash: &str, out: &mut SeedOutcome| {
        if normalize_text(q1) == normalize_text(q2) {
            out.identical_dropped += 1;
            return;
        }
        let item = out.items.iter().filter(|it| it.0 == kind).count();
        out.items.push((
            kind,
            item,
            SynthRecord {
                question1: q1.to_string(),
                question2: q2.to_string(),
                is_duplicate: kind.label(),
                kind,
                seed_id,
                raw_response_hash: hash.to_string(),
            },
        ));
    };
    let Some((_, paras, p_hash)) = find(PairKind::Paraphrase) else {
        return;
    };
    if let [a, b] = paras.as_slice() {
        push(PairKind::Paraphrase, a, b, p_hash, out);
    }
    if let Some((_, distincts, d_hash)) = find(PairKind::Distinct) {
        for p in paras {
            for d in distincts {
                push(PairKind::Distinct, p, d, d_hash, out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub seeds_processed: usize,
    pub records_written: usize,
    pub failures: usize,
    pub dedup_dropped: usize,
}

/// Where failures for `output_path` are logged.
pub fn failures_path(output_path: &Path) -> PathBuf {
    let mut name = output_path.as_os_str().to_owned();
    name.push(".failures.jsonl");
    PathBuf::from(name)
}

/// Generates records for every seed and writes them to `output_path`.
///
/// At most `config.concurrency` seeds are in flight, and each seed issues its
/// two prompts one after the other, so no more than `concurrency` LLM
/// requests run at once. Failures are written next to the output (see
/// [`failures_path`]) when there are any.
pub async fn run_pipeline(
    seeds: &[SeedQuery],
    config: &GenConfig,
    client: &dyn LlmClient,
    output_path: &Path,
) -> Result<PipelineSummary, SynthError> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(SynthError::EmptySeeds);
    }
    if let Some(bad) = seeds.iter().find(|s| s.text.trim().is_empty()) {
        return Err(SynthError::EmptySeedText { id: bad.id });
    }

    let outcomes: Vec<(usize, SeedOutcome)> = stream::iter(seeds.iter().enumerate())
        .map(|(pos, seed)| async move { (pos, generate_for_seed(seed, config, client).await) })
        .buffer_unordered(config.concurrency)
        .collect()
        .await;

    let mut items: Vec<(i64, PairKind, usize, usize, SynthRecord)> = Vec::new();
    let mut failures: Vec<(usize, GenFailure)> = Vec::new();
    let mut dedup_dropped = 0;
    for (pos, outcome) in outcomes {
        dedup_dropped += outcome.identical_dropped;
        failures.extend(outcome.failures.into_iter().map(|f| (pos, f)));
        for (kind, item, rec) in outcome.items {
            items.push((rec.seed_id, kind, pos, item, rec));
        }
    }
    items.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    failures.sort_by(|a, b| (a.1.seed_id, a.0, a.1.kind).cmp(&(b.1.seed_id, b.0, b.1.kind)));

    let mut seen = HashSet::new();
    let mut writer = BufWriter::new(fs::File::create(output_path)?);
    let mut records_written = 0;
    for (.., rec) in items {
        let key = (normalize_text(&rec.question1), normalize_text(&rec.question2));
        if !seen.insert(key) {
            dedup_dropped += 1;
            continue;
        }
        serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
        records_written += 1;
    }
    writer.flush()?;

    let fail_path = failures_path(output_path);
    if failures.is_empty() {
        if fail_path.exists() {
            fs::remove_file(&fail_path)?;
        }
    } else {
        let mut w = BufWriter::new(fs::File::create(&fail_path)?);
        for (_, f) in &failures {
            serde_json::to_writer(&mut w, f).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }

    Ok(PipelineSummary {
        seeds_processed: seeds.len(),
        records_written,
        failures: failures.len(),
        dedup_dropped,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<SynthRecord>, SynthError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SynthError::BadSeedLine {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes records as a `question1,question2,is_duplicate` CSV for training or
/// evaluation.
pub fn export_csv(records: &[SynthRecord], path: &Path) -> Result<(), SynthError> {
    let pairs: Vec<LabeledPair> = records.iter().filter_map(SynthRecord::to_pair).collect();
    crate::evalkit::write_pairs_csv(path, &pairs).map_err(|e| match e {
        crate::evalkit::EvalError::Io(io) => SynthError::Io(io),
        other => SynthError::Io(std::io::Error::other(other.to_string())),
    })
}

/// Reads seeds from `path`.
///
/// `.jsonl` files hold one [`SeedQuery`] object per line. Anything else is
/// read as plain text, one query per non-blank line, with the 1-based line
/// number as id.
pub fn load_seeds(path: &Path) -> Result<Vec<SeedQuery>, SynthError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut seeds = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seed = if jsonl {
            let s: SeedQuery = serde_json::from_str(&line).map_err(|e| SynthError::BadSeedLine {
                line: n + 1,
                message: e.to_string(),
            })?;
            if s.text.trim().is_empty() {
                return Err(SynthError::EmptySeedText { id: s.id });
            }
            s
        } else {
            SeedQuery::new(n as i64 + 1, line.trim())?
        };
        seeds.push(seed);
    }
    if seeds.is_empty() {
        return Err(SynthError::EmptySeeds);
    }
    Ok(seeds)
}
