//! Semantic caching for LLM responses.
//!
//! Queries are embedded, compared by cosine similarity against stored
//! queries, and answered from cache when the best match clears a threshold.
//! Around the cache sit the tools needed to choose that threshold and judge
//! embedding models: pair-classification metrics and calibration, a
//! cross-domain forgetting report, a latency benchmark, and an LLM-driven
//! generator of labeled duplicate/distinct query pairs.

pub mod benchlat;
pub mod cache;
pub mod embedding;
pub mod evalkit;
pub mod index;
pub mod pair;
pub mod provider;
pub mod server;
pub mod synthgen;

pub use embedding::{cosine_similarity, normalize, Embedding, SimilarityScore, Threshold, VectorError};
pub use pair::LabeledPair;
pub use provider::{build_provider, mock_embed, EmbedResult, EmbeddingProvider, ProviderConfig, ProviderError, ProviderKind};
pub use cache::{CacheConfig, CacheEntry, CacheError, CacheStats, EvictionPolicy, LookupOutcome, SemanticCache};
pub use index::{IndexError, SearchHit, VectorIndex};
pub use evalkit::{EvalError, EvalReport, ScoredPair};
pub use synthgen::{GenConfig, PairKind, PipelineSummary, SeedQuery, SynthError, SynthRecord};
pub use benchlat::{BenchError, LatencyStats, ScatterEntry};
pub use server::{Server, ServerConfig, ServerError};
