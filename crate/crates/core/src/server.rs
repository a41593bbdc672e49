//! HTTP/JSON front end for a [`SemanticCache`].
//!
//! | method | path                | body                     | success            |
//! |--------|---------------------|--------------------------|--------------------|
//! | POST   | `/v1/entries`       | `{query, response}`      | 201 `{id}`         |
//! | POST   | `/v1/lookup`        | `{query, threshold?}`    | 200 `{hit, similarity?, entry?}` |
//! | GET    | `/v1/stats`         |                          | 200 `CacheStats`   |
//! | DELETE | `/v1/entries/{id}`  |                          | 204                |
//! | GET    | `/health`           |                          | 200 `{status: "ok"}` |
//!
//! Errors are `{"error": message}` with 400 for bad input, 404 for unknown
//! entries or routes, 413 for oversize bodies, 502 when the embedding provider
//! fails and 504 when a request exceeds `request_timeout_ms`.

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection};
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::cache::{CacheConfig, CacheEntry, CacheError, LookupOutcome, SemanticCache};
use crate::embedding::Threshold;
use crate::provider::{build_provider, ProviderConfig, ProviderError};

pub const ENV_BIND: &str = "LANGCACHE_BIND";
pub const ENV_THRESHOLD: &str = "LANGCACHE_THRESHOLD";
pub const ENV_PERSIST_PATH: &str = "LANGCACHE_PERSIST_PATH";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid server config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind_address: String,
    #[serde(default = "default_request_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_max_body_bytes")]
    pub max_body_bytes: usize,
    #[serde(default)]
    pub cache_config: CacheConfig,
    #[serde(default = "default_provider")]
    pub provider_config: ProviderConfig,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_request_timeout_ms() -> u64 {
    30_000
}

fn default_max_body_bytes() -> usize {
    64 * 1024
}

fn default_provider() -> ProviderConfig {
    ProviderConfig::mock("mock", 256, 0)
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind_address: default_bind(),
            request_timeout_ms: default_request_timeout_ms(),
            max_body_bytes: default_max_body_bytes(),
            cache_config: CacheConfig::default(),
            provider_config: default_provider(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ServerError> {
        toml::from_str(s).map_err(|e| ServerError::Config(e.to_string()))
    }

    /// Defaults, overlaid by the file at `path` (if any), overlaid by the
    /// environment. The result is validated.
    pub fn load(path: Option<&Path>) -> Result<Self, ServerError> {
        let mut cfg = match path {
            Some(p) => Self::from_toml_str(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `LANGCACHE_*` overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServerError> {
        if let Some(bind) = var(ENV_BIND) {
            self.bind_address = bind;
        }
        if let Some(t) = var(ENV_THRESHOLD) {
            let value: f64 = t
                .trim()
                .parse()
                .map_err(|_| ServerError::Config(format!("{ENV_THRESHOLD}={t:?} is not a number")))?;
            self.cache_config.threshold =
                Threshold::new(value).map_err(|e| ServerError::Config(format!("{ENV_THRESHOLD}: {e}")))?;
        }
        if let Some(p) = var(ENV_PERSIST_PATH) {
            self.cache_config.persist_path = if p.is_empty() { None } else { Some(PathBuf::from(p)) };
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        let valid_bind = self
            .bind_address
            .rsplit_once(':')
            .is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
        if !valid_bind {
            return Err(ServerError::Config(format!(
                "bind_address {:?} is not host:port",
                self.bind_address
            )));
        }
        if self.request_timeout_ms < 1 {
            return Err(ServerError::Config("request_timeout_ms must be >= 1".into()));
        }
        if self.max_body_bytes < 1 {
            return Err(ServerError::Config("max_body_bytes must be >= 1".into()));
        }
        self.cache_config.validate()?;
        self.provider_config.validate()?;
        Ok(())
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<CacheError> for ApiError {
    fn from(e: CacheError) -> Self {
        let status = match &e {
            CacheError::EmptyQuery => StatusCode::BAD_REQUEST,
            CacheError::Provider(_) | CacheError::ModelMismatch { .. } => StatusCode::BAD_GATEWAY,
            CacheError::Index(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<BytesRejection> for ApiError {
    fn from(r: BytesRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

fn parse_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn non_empty(field: &str, value: &str) -> Result<(), ApiError> {
    if value.trim().is_empty() {
        Err(ApiError::bad_request(format!("\"{field}\" must be a non-empty string")))
    } else {
        Ok(())
    }
}

#[derive(Deserialize)]
struct PutRequest {
    query: String,
    response: String,
}

#[derive(Serialize)]
struct PutResponse {
    id: u64,
}

#[derive(Deserialize)]
struct LookupRequest {
    query: String,
    #[serde(default)]
    threshold: Option<f64>,
}

/// Entry as returned by lookup. Hit counts are left out so that the body
/// depends only on the cache contents, not on earlier lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryView {
    pub id: u64,
    pub query_text: String,
    pub response_text: String,
    pub created_at: u64,
    pub model_id: String,
}

impl From<CacheEntry> for EntryView {
    fn from(e: CacheEntry) -> Self {
        Self {
            id: e.id,
            query_text: e.query_text,
            response_text: e.response_text,
            created_at: e.created_at,
            model_id: e.model_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupResponse {
    pub hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<EntryView>,
}

impl From<LookupOutcome> for LookupResponse {
    fn from(o: LookupOutcome) -> Self {
        Self {
            hit: o.hit,
            similarity: o.similarity.map(|s| s.value()),
            entry: if o.hit { o.entry.map(EntryView::from) } else { None },
        }
    }
}

type AppState = Arc<SemanticCache>;

async fn put_entry(
    State(cache): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<PutResponse>), ApiError> {
    let req: PutRequest = parse_body(body)?;
    non_empty("query", &req.query)?;
    non_empty("response", &req.response)?;
    let id = cache.put(&req.query, &req.response).await?;
    Ok((StatusCode::CREATED, Json(PutResponse { id })))
}

async fn lookup(
    State(cache): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<LookupResponse>, ApiError> {
    let req: LookupRequest = parse_body(body)?;
    non_empty("query", &req.query)?;
    let threshold = req
        .threshold
        .map(Threshold::new)
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let outcome = cache.lookup(&req.query, threshold).await?;
    Ok(Json(outcome.into()))
}

async fn stats(State(cache): State<AppState>) -> impl IntoResponse {
    Json(cache.stats())
}

async fn delete_entry(
    State(cache): State<AppState>,
    id: Result<axum::extract::Path<u64>, PathRejection>,
) -> Result<StatusCode, ApiError> {
    let axum::extract::Path(id) =
        id.map_err(|_| ApiError::bad_request("entry id must be a nonnegative integer"))?;
    if cache.remove(id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::new(StatusCode::NOT_FOUND, format!("no entry with id {id}")))
    }
}

async fn health() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method not allowed")
}

async fn enforce_timeout(State(limit): State<Duration>, req: Request, next: Next) -> Response {
    match tokio::time::timeout(limit, next.run(req)).await {
        Ok(resp) => resp,
        Err(_) => ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            format!("request exceeded {} ms", limit.as_millis()),
        )
        .into_response(),
    }
}

/// Routes for `cache` with the body limit and timeout from `config`.
pub fn router(cache: Arc<SemanticCache>, config: &ServerConfig) -> Router {
    Router::new()
        .route("/v1/entries", post(put_entry))
        .route("/v1/entries/{id}", delete(delete_entry))
        .route("/v1/lookup", post(lookup))
        .route("/v1/stats", get(stats))
        .route("/health", get(health))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(config.max_body_bytes))
        .layer(middleware::from_fn_with_state(
            Duration::from_millis(config.request_timeout_ms),
            enforce_timeout,
        ))
        .with_state(cache)
}

pub struct Server {
    config: ServerConfig,
    cache: Arc<SemanticCache>,
}

impl Server {
    /// Builds the provider and opens (or creates) the cache.
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        config.validate()?;
        let provider = build_provider(&config.provider_config)?;
        let cache = SemanticCache::open(config.cache_config.clone(), provider)?;
        Ok(Self::with_cache(config, Arc::new(cache)))
    }

    pub fn with_cache(config: ServerConfig, cache: Arc<SemanticCache>) -> Self {
        Self { config, cache }
    }

    pub fn cache(&self) -> &Arc<SemanticCache> {
        &self.cache
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub async fn bind(&self) -> Result<tokio::net::TcpListener, ServerError> {
        Ok(tokio::net::TcpListener::bind(&self.config.bind_address).await?)
    }

    /// Serves on `listener` until `shutdown` resolves, lets in-flight requests
    /// finish, then writes the snapshot if a persist path is configured.
    pub async fn serve(
        self,
        listener: tokio::net::TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<(), ServerError> {
        let app = router(self.cache.clone(), &self.config);
        axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
        if self.cache.config().persist_path.is_some() {
            self.cache.save()?;
            tracing::info!(entries = self.cache.len(), "snapshot written");
        }
        Ok(())
    }
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
