//! The semantic cache: embed, search, compare against a threshold.
//!
//! A lookup is a hit when the best stored query scores at least the threshold
//! (top-1 semantics). Exact repeats of a stored query text (after trimming)
//! replace the stored response instead of adding a second vector.
//!
//! # Snapshot format
//!
//! JSON Lines. The first line is a header:
//!
//! ```text
//! {"format_version":1,"model_id":"..","dim":384,"threshold":0.9,"next_id":12,"entry_count":11,"checksum":"<sha256 hex>"}
//! ```
//!
//! followed by one entry per line in ascending id order. Embeddings are the
//! base64 (standard alphabet, padded) encoding of the little-endian `f64`
//! components, so vectors round-trip bit for bit. The checksum is SHA-256
//! over the entry lines, each including its trailing `\n`. Hit/miss counters
//! are runtime state and are not written; per-entry `hit_count` is.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{Embedding, SimilarityScore, Threshold};
use crate::index::{IndexError, VectorIndex};
use crate::provider::{EmbeddingProvider, ProviderError};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("model mismatch: cache uses {expected}, got {found}")]
    ModelMismatch { expected: String, found: String },
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("no persist_path configured")]
    NoPersistPath,
    #[error("invalid cache config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    /// Least recently inserted, hit, or updated.
    #[default]
    Lru,
    /// Oldest insertion first.
    Fifo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default = "default_max_entries")]
    pub max_entries: usize,
    #[serde(default)]
    pub eviction: EvictionPolicy,
    #[serde(default)]
    pub persist_path: Option<PathBuf>,
}

fn default_max_entries() -> usize {
    10_000
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            threshold: Threshold::default(),
            max_entries: default_max_entries(),
            eviction: EvictionPolicy::default(),
            persist_path: None,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if self.max_entries < 1 {
            return Err(CacheError::InvalidConfig("max_entries must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub id: u64,
    pub query_text: String,
    pub response_text: String,
    pub embedding: Embedding,
    /// Unix epoch milliseconds.
    pub created_at: u64,
    pub hit_count: u64,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupOutcome {
    pub hit: bool,
    pub entry: Option<CacheEntry>,
    /// Best score found; absent only when the cache was empty.
    pub similarity: Option<SimilarityScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub size: usize,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub evictions: u64,
}

struct Slot {
    query_text: String,
    response_text: String,
    created_at: u64,
    model_id: String,
    hit_count: AtomicU64,
    last_used: AtomicU64,
}

#[derive(Default)]
struct State {
    index: VectorIndex,
    slots: HashMap<u64, Slot>,
    by_text: HashMap<String, u64>,
    next_id: u64,
}

impl State {
    fn entry(&self, id: u64) -> Option<CacheEntry> {
        let slot = self.slots.get(&id)?;
        let ie = self.index.get(id)?;
        Some(CacheEntry {
            id,
            query_text: slot.query_text.clone(),
            response_text: slot.response_text.clone(),
            embedding: ie.vector.clone(),
            created_at: slot.created_at,
            hit_count: slot.hit_count.load(Ordering::Relaxed),
            model_id: slot.model_id.clone(),
        })
    }

    fn remove(&mut self, id: u64) -> bool {
        let Some(slot) = self.slots.remove(&id) else {
            return false;
        };
        self.by_text.remove(slot.query_text.trim());
        self.index.remove(id);
        true
    }

    fn victim(&self, policy: EvictionPolicy) -> Option<u64> {
        match policy {
            EvictionPolicy::Fifo => self.index.entries_by_seq().first().map(|e| e.id),
            EvictionPolicy::Lru => self
                .slots
                .iter()
                .min_by_key(|(id, s)| (s.last_used.load(Ordering::Relaxed), **id))
                .map(|(id, _)| *id),
        }
    }
}

type TimeSource = Arc<dyn Fn() -> u64 + Send + Sync>;

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Thread-safe semantic cache over an [`EmbeddingProvider`].
///
/// Lookups share a read lock; puts, removals and evictions take the write
/// lock only after the provider call has returned.
pub struct SemanticCache {
    config: CacheConfig,
    provider: Arc<dyn EmbeddingProvider>,
    state: RwLock<State>,
    clock: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    time_source: TimeSource,
}

impl std::fmt::Debug for SemanticCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemanticCache")
            .field("config", &self.config)
            .field("model_id", &self.provider.model_id())
            .field("size", &self.len())
            .finish()
    }
}

impl SemanticCache {
    pub fn new(config: CacheConfig, provider: Arc<dyn EmbeddingProvider>) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(Self::with_state(config, provider, State::default(), 0))
    }

    fn with_state(
        config: CacheConfig,
        provider: Arc<dyn EmbeddingProvider>,
        state: State,
        clock: u64,
    ) -> Self {
        Self {
            config,
            provider,
            state: RwLock::new(state),
            clock: AtomicU64::new(clock),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            time_source: Arc::new(now_millis),
        }
    }

    /// Replaces the wall clock used for `created_at`.
    pub fn with_time_source(mut self, f: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.time_source = Arc::new(f);
        self
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn len(&self) -> usize {
        self.state.read().slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed)
    }

    async fn embed(&self, text: &str) -> Result<Embedding, CacheError> {
        let mut result = self.provider.embed_batch(&[text.to_string()]).await?;
        let e = result
            .embeddings
            .pop()
            .ok_or_else(|| ProviderError::InvalidResponse("no embedding returned".into()))?;
        if e.model_id() != self.model_id() {
            return Err(CacheError::ModelMismatch {
                expected: self.model_id().to_string(),
                found: e.model_id().to_string(),
            });
        }
        Ok(e.into_normalized().map_err(IndexError::from)?)
    }

    /// Stores `response_text` under `query_text` and returns the entry id.
    pub async fn put(&self, query_text: &str, response_text: &str) -> Result<u64, CacheError> {
        let key = query_text.trim();
        if key.is_empty() {
            return Err(CacheError::EmptyQuery);
        }
        if let Some(id) = self.replace_existing(key, response_text) {
            return Ok(id);
        }
        let embedding = self.embed(query_text).await?;

        let mut state = self.state.write();
        // Another writer may have stored the same text while we were embedding.
        if let Some(&id) = state.by_text.get(key) {
            drop(state);
            return Ok(self.replace_existing(key, response_text).unwrap_or(id));
        }
        if let Some(expected) = state.index.dim() {
            if expected != embedding.dim() {
                return Err(IndexError::DimensionMismatch {
                    expected,
                    actual: embedding.dim(),
                }
                .into());
            }
        }
        while state.slots.len() >= self.config.max_entries {
            let Some(victim) = state.victim(self.config.eviction) else {
                break;
            };
            state.remove(victim);
            self.evictions.fetch_add(1, Ordering::Relaxed);
        }
        let id = state.next_id;
        state.index.insert(id, embedding)?;
        state.next_id += 1;
        state.by_text.insert(key.to_string(), id);
        state.slots.insert(
            id,
            Slot {
                query_text: query_text.to_string(),
                response_text: response_text.to_string(),
                created_at: (self.time_source)(),
                model_id: self.model_id().to_string(),
                hit_count: AtomicU64::new(0),
                last_used: AtomicU64::new(self.tick()),
            },
        );
        Ok(id)
    }

    fn replace_existing(&self, key: &str, response_text: &str) -> Option<u64> {
        let mut state = self.state.write();
        let id = *state.by_text.get(key)?;
        let tick = self.tick();
        let slot = state.slots.get_mut(&id)?;
        slot.response_text = response_text.to_string();
        slot.last_used.store(tick, Ordering::Relaxed);
        Some(id)
    }

    /// Top-1 lookup against the configured threshold, or `threshold_override`.
    pub async fn lookup(
        &self,
        query_text: &str,
        threshold_override: Option<Threshold>,
    ) -> Result<LookupOutcome, CacheError> {
        if query_text.trim().is_empty() {
            return Err(CacheError::EmptyQuery);
        }
        let threshold = threshold_override.unwrap_or(self.config.threshold);
        if self.is_empty() {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return Ok(LookupOutcome {
                hit: false,
                entry: None,
                similarity: None,
            });
        }
        let query = self.embed(query_text).await?;

        let state = self.state.read();
        let Some(best) = state.index.search(&query, 1)?.into_iter().next() else {
            // Emptied while the provider call was in flight.
            self.misses.fetch_add(1, Ordering::Relaxed);
            return Ok(LookupOutcome {
                hit: false,
                entry: None,
                similarity: None,
            });
        };
        if !threshold.accepts(best.score) {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return Ok(LookupOutcome {
                hit: false,
                entry: None,
                similarity: Some(best.score),
            });
        }
        if let Some(slot) = state.slots.get(&best.id) {
            slot.hit_count.fetch_add(1, Ordering::Relaxed);
            slot.last_used.store(self.tick(), Ordering::Relaxed);
        }
        self.hits.fetch_add(1, Ordering::Relaxed);
        Ok(LookupOutcome {
            hit: true,
            entry: state.entry(best.id),
            similarity: Some(best.score),
        })
    }

    pub fn get(&self, id: u64) -> Option<CacheEntry> {
        self.state.read().entry(id)
    }

    pub fn remove(&self, id: u64) -> bool {
        self.state.write().remove(id)
    }

    /// All entries in ascending id order.
    pub fn entries(&self) -> Vec<CacheEntry> {
        let state = self.state.read();
        let mut ids: Vec<u64> = state.slots.keys().copied().collect();
        ids.sort_unstable();
        ids.into_iter().filter_map(|id| state.entry(id)).collect()
    }

    pub fn stats(&self) -> CacheStats {
        let hits = self.hits.load(Ordering::Relaxed);
        let misses = self.misses.load(Ordering::Relaxed);
        CacheStats {
            size: self.len(),
            hits,
            misses,
            hit_rate: hits as f64 / (hits + misses).max(1) as f64,
            evictions: self.evictions.load(Ordering::Relaxed),
        }
    }

    /// Writes a snapshot to the configured `persist_path`.
    pub fn save(&self) -> Result<(), CacheError> {
        let path = self.config.persist_path.as_ref().ok_or(CacheError::NoPersistPath)?;
        self.save_to(path)
    }

    /// Writes a snapshot to `path`, replacing it atomically.
    pub fn save_to(&self, path: &Path) -> Result<(), CacheError> {
        let bytes = self.snapshot_bytes();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// The exact bytes [`SemanticCache::save_to`] would write.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let state = self.state.read();
        let mut ids: Vec<u64> = state.slots.keys().copied().collect();
        ids.sort_unstable();

        let mut body = Vec::new();
        for id in &ids {
            let slot = &state.slots[id];
            let vector = &state.index.get(*id).expect("slot without vector").vector;
            let line = SnapshotEntry {
                id: *id,
                query_text: slot.query_text.clone(),
                response_text: slot.response_text.clone(),
                embedding: encode_vector(vector.values()),
                created_at: slot.created_at,
                hit_count: slot.hit_count.load(Ordering::Relaxed),
                model_id: slot.model_id.clone(),
                last_used: slot.last_used.load(Ordering::Relaxed),
            };
            serde_json::to_writer(&mut body, &line).expect("snapshot entry serializes");
            body.push(b'\n');
        }
        let header = SnapshotHeader {
            format_version: SNAPSHOT_FORMAT_VERSION,
            model_id: self.model_id().to_string(),
            dim: state.index.dim(),
            threshold: self.config.threshold.value(),
            next_id: state.next_id,
            entry_count: ids.len(),
            checksum: hex::encode(Sha256::digest(&body)),
        };
        let mut out = serde_json::to_vec(&header).expect("snapshot header serializes");
        out.push(b'\n');
        out.extend_from_slice(&body);
        out
    }

    /// Restores a cache from the snapshot at `config.persist_path`.
    ///
    /// Capacity, eviction policy and threshold come from `config`; the
    /// threshold stored in the header records what was in effect at save time.
    pub fn load(config: CacheConfig, provider: Arc<dyn EmbeddingProvider>) -> Result<Self, CacheError> {
        config.validate()?;
        let path = config.persist_path.clone().ok_or(CacheError::NoPersistPath)?;
        let reader = BufReader::new(fs::File::open(&path)?);
        let (state, clock) = read_snapshot(reader, provider.model_id())?;
        Ok(Self::with_state(config, provider, state, clock))
    }

    /// Loads the snapshot if `persist_path` names an existing file, otherwise
    /// starts empty.
    pub fn open(config: CacheConfig, provider: Arc<dyn EmbeddingProvider>) -> Result<Self, CacheError> {
        match &config.persist_path {
            Some(p) if p.exists() => Self::load(config, provider),
            _ => Self::new(config, provider),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format_version: u32,
    model_id: String,
    dim: Option<usize>,
    threshold: f64,
    next_id: u64,
    entry_count: usize,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct SnapshotEntry {
    id: u64,
    query_text: String,
    response_text: String,
    embedding: String,
    created_at: u64,
    hit_count: u64,
    model_id: String,
    last_used: u64,
}

fn encode_vector(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_vector(s: &str) -> Result<Vec<f64>, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64 words", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_snapshot(reader: impl BufRead, model_id: &str) -> Result<(State, u64), CacheError> {
    let corrupt = |m: String| CacheError::CorruptSnapshot(m);
    let mut lines = reader.split(b'\n');
    let header_line = lines
        .next()
        .ok_or_else(|| corrupt("missing header".into()))??;
    let header: SnapshotHeader =
        serde_json::from_slice(&header_line).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.format_version != SNAPSHOT_FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format_version {}", header.format_version)));
    }
    if header.model_id != model_id {
        return Err(CacheError::ModelMismatch {
            expected: model_id.to_string(),
            found: header.model_id,
        });
    }

    let mut hasher = Sha256::new();
    let mut state = State::default();
    let mut clock = 0u64;
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        hasher.update(&line);
        hasher.update(b"\n");
        let e: SnapshotEntry = serde_json::from_slice(&line)
            .map_err(|err| corrupt(format!("entry line {}: {err}", n + 2)))?;
        if e.model_id != model_id {
            return Err(CacheError::ModelMismatch {
                expected: model_id.to_string(),
                found: e.model_id,
            });
        }
        let values = decode_vector(&e.embedding).map_err(|m| corrupt(format!("entry {}: {m}", e.id)))?;
        let embedding = Embedding::from_unit(values, e.model_id.clone())
            .map_err(|err| corrupt(format!("entry {}: {err}", e.id)))?;
        if header.dim != Some(embedding.dim()) {
            return Err(corrupt(format!("entry {} has dim {}", e.id, embedding.dim())));
        }
        state
            .index
            .insert(e.id, embedding)
            .map_err(|err| corrupt(format!("entry {}: {err}", e.id)))?;
        state.by_text.insert(e.query_text.trim().to_string(), e.id);
        clock = clock.max(e.last_used + 1);
        state.slots.insert(
            e.id,
            Slot {
                query_text: e.query_text,
                response_text: e.response_text,
                created_at: e.created_at,
                model_id: e.model_id,
                hit_count: AtomicU64::new(e.hit_count),
                last_used: AtomicU64::new(e.last_used),
            },
        );
    }
    if hex::encode(hasher.finalize()) != header.checksum {
        return Err(corrupt("checksum mismatch".into()));
    }
    if state.slots.len() != header.entry_count {
        return Err(corrupt(format!(
            "header promises {} entries, found {}",
            header.entry_count,
            state.slots.len()
        )));
    }
    if state.slots.keys().any(|&id| id >= header.next_id) {
        return Err(corrupt("entry id at or beyond next_id".into()));
    }
    state.next_id = header.next_id;
    Ok((state, clock))
}
