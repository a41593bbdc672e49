//! Test fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod oracle;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use parking_lot::Mutex;
use semcache::synthgen::{LlmClient, LlmError};
use semcache::{mock_embed, EmbedResult, EmbeddingProvider, ProviderError};
use serde::Deserialize;
use serde_json::json;

/// How the stub embedding endpoint behaves.
#[derive(Clone)]
pub struct StubBehavior {
    pub dim: usize,
    pub seed: u64,
    pub delay: Duration,
    /// The first `fail_first` requests get `fail_status`.
    pub fail_first: usize,
    pub fail_status: u16,
    /// Return `data` in reverse index order.
    pub reverse: bool,
}

impl Default for StubBehavior {
    fn default() -> Self {
        Self {
            dim: 16,
            seed: 0,
            delay: Duration::ZERO,
            fail_first: 0,
            fail_status: 500,
            reverse: false,
        }
    }
}

struct StubState {
    behavior: StubBehavior,
    requests: AtomicUsize,
    last_auth: Mutex<Option<String>>,
    last_model: Mutex<Option<String>>,
}

#[derive(Deserialize)]
struct EmbedRequest {
    model: String,
    input: Vec<String>,
}

async fn embed(State(s): State<Arc<StubState>>, headers: HeaderMap, Json(req): Json<EmbedRequest>) -> Response {
    let n = s.requests.fetch_add(1, Ordering::SeqCst);
    *s.last_auth.lock() = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    *s.last_model.lock() = Some(req.model);
    if n < s.behavior.fail_first {
        let status = StatusCode::from_u16(s.behavior.fail_status).unwrap();
        return (status, "stub failure").into_response();
    }
    if !s.behavior.delay.is_zero() {
        tokio::time::sleep(s.behavior.delay).await;
    }
    let mut data: Vec<_> = req
        .input
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "embedding": mock_embed(t, s.behavior.dim, s.behavior.seed).values()}))
        .collect();
    if s.behavior.reverse {
        data.reverse();
    }
    Json(json!({"object": "list", "data": data})).into_response()
}

/// An OpenAI-style `/v1/embeddings` endpoint answering with mock embeddings.
pub struct StubEmbedServer {
    pub url: String,
    state: Arc<StubState>,
    task: tokio::task::JoinHandle<()>,
}

impl StubEmbedServer {
    pub async fn spawn(behavior: StubBehavior) -> Self {
        let state = Arc::new(StubState {
            behavior,
            requests: AtomicUsize::new(0),
            last_auth: Mutex::new(None),
            last_model: Mutex::new(None),
        });
        let app = Router::new()
            .route("/v1/embeddings", post(embed))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
        let task = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self { url, state, task }
    }

    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    pub fn last_auth(&self) -> Option<String> {
        self.state.last_auth.lock().clone()
    }

    pub fn last_model(&self) -> Option<String> {
        self.state.last_model.lock().clone()
    }
}

impl Drop for StubEmbedServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// A URL on which nothing listens.
pub async fn closed_url() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1/embeddings")
}

/// Mock embeddings after a fixed per-call delay; optionally a different delay
/// for the first call.
pub struct DelayProvider {
    pub dim: usize,
    pub delay: Duration,
    pub first_delay: Option<Duration>,
    pub calls: AtomicUsize,
}

impl DelayProvider {
    pub fn new(delay: Duration) -> Self {
        Self { dim: 8, delay, first_delay: None, calls: AtomicUsize::new(0) }
    }

    pub fn slow_first(delay: Duration, first: Duration) -> Self {
        Self { first_delay: Some(first), ..Self::new(delay) }
    }
}

#[async_trait]
impl EmbeddingProvider for DelayProvider {
    fn model_id(&self) -> &str {
        "delay-stub"
    }

    fn max_batch(&self) -> usize {
        1
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<EmbedResult, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let delay = match (n, self.first_delay) {
            (0, Some(d)) => d,
            _ => self.delay,
        };
        tokio::time::sleep(delay).await;
        let embeddings = texts.iter().map(|t| mock_embed(t, self.dim, 0)).collect();
        Ok(EmbedResult { embeddings, wall_time_s: delay.as_secs_f64(), text_count: texts.len() })
    }
}

/// Extracts the seed query from a rendered prompt.
pub fn seed_of(prompt: &str) -> String {
    let mut lines = prompt.lines().filter(|l| l.starts_with("Original Query: "));
    let line = if is_paraphrase(prompt) { lines.next() } else { lines.last() }.unwrap();
    line.trim_start_matches("Original Query: ").trim_matches('\'').to_string()
}

pub fn is_paraphrase(prompt: &str) -> bool {
    prompt.contains("unique paraphrases")
}

/// Deterministic LLM: answers are a pure function of the prompt. With
/// `wrap`, answers alternate between Markdown fences and surrounding prose.
pub struct StubLlm {
    pub wrap: bool,
    pub jitter: bool,
    pub calls: AtomicUsize,
}

impl StubLlm {
    pub fn new() -> Self {
        Self { wrap: false, jitter: false, calls: AtomicUsize::new(0) }
    }

    pub fn answer(prompt: &str) -> String {
        let s = seed_of(prompt);
        if is_paraphrase(prompt) {
            format!(r#"{{"queries": ["{s}, reworded", "Put another way: {s}"]}}"#)
        } else {
            format!(r#"{{"queries": ["{s} in children", "{s} in older adults"]}}"#)
        }
    }
}

#[async_trait]
impl LlmClient for StubLlm {
    async fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let body = Self::answer(prompt);
        let len = seed_of(prompt).len();
        if self.jitter {
            // Completion order varies with the seed text.
            tokio::time::sleep(Duration::from_millis((len as u64 * 7) % 13)).await;
        }
        Ok(match (self.wrap, len % 2) {
            (false, _) => body,
            (true, 0) => format!("```json\n{body}\n```"),
            (true, _) => format!("Sure, here are the queries.\n{body}\nLet me know if you need more."),
        })
    }
}

/// Replays scripted responses in order, then repeats the last one.
pub struct ScriptedLlm {
    script: Mutex<VecDeque<Result<String, LlmError>>>,
    last: Mutex<Option<Result<String, LlmError>>>,
    pub calls: AtomicUsize,
}

impl ScriptedLlm {
    pub fn new(script: Vec<Result<String, LlmError>>) -> Self {
        Self { script: Mutex::new(script.into()), last: Mutex::new(None), calls: AtomicUsize::new(0) }
    }
}

#[async_trait]
impl LlmClient for ScriptedLlm {
    async fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self.script.lock().pop_front();
        match next {
            Some(r) => {
                *self.last.lock() = Some(r.clone());
                r
            }
            None => self.last.lock().clone().expect("empty script"),
        }
    }
}
