//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits non-zero if any
//! criterion fails. The network-gated base-model check runs only when
//! `SEMCACHE_BASE_MODEL_URL`, `SEMCACHE_BASE_MODEL_NAME` and
//! `SEMCACHE_BASE_MODEL_PAIRS` are set.

mod common;

use std::future::Future;
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{oracle, closed_url, DelayProvider, ScriptedLlm, StubLlm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcache::benchlat::measure_latency;
use semcache::provider::MockProvider;
use semcache::synthgen::{
    generate_for_seed, parse_llm_queries, read_records, run_pipeline, GenConfig, PairKind, SeedQuery,
};
use semcache::{
    build_provider, mock_embed, CacheConfig, Embedding, EvictionPolicy, ProviderConfig, SemanticCache,
    Server, ServerConfig, Threshold, VectorIndex,
};
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn metric_oracle() -> Outcome {
    const INSTANCES: usize = 600;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240501);
    let mut done = 0;
    while done < INSTANCES {
        let n = rng.random_range(2..=12);
        let coarse = rng.random_bool(0.5);
        let obs: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let s = if coarse {
                    rng.random_range(-4i32..=4) as f64 / 4.0
                } else {
                    rng.random_range(-1.0..=1.0)
                };
                (s, rng.random_bool(0.5))
            })
            .collect();
        if obs.iter().all(|o| o.1) || obs.iter().all(|o| !o.1) {
            continue;
        }
        oracle::check_instance(&obs)?;
        done += 1;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{INSTANCES} instances in {:.3} s", elapsed.as_secs_f64()))
}

fn ap_worked_example() -> Outcome {
    let obs = [(0.9, true), (0.8, true), (0.7, false), (0.6, true)];
    let ap = semcache::evalkit::average_precision(&oracle::scored(&obs)).map_err(|e| e.to_string())?;
    let expected = (1.0 / 1.0 + 2.0 / 2.0 + 3.0 / 4.0) / 3.0;
    ensure!((ap - expected).abs() <= 1e-12, "AP {ap} vs {expected}");
    Ok(format!("AP = {ap}"))
}

/// Top-1 similarity of each probe against the 100 stored queries, per mock seed.
const PINNED_UNRELATED: [(u64, [f64; 5]); 2] = [
    (
        0,
        [0.1452028706584307, 0.1425819000131447, 0.1492371392015294, 0.11537657822727052, 0.1548749000697596],
    ),
    (
        1,
        [0.15324153950245561, 0.1592241997883697, 0.15579759991590536, 0.2250908884929437, 0.17300060903213096],
    ),
];

fn stored_query(i: usize) -> String {
    format!("customer question {i} about order status")
}

fn unrelated_probe(j: usize) -> String {
    format!("unrelated probe {j} on volcanic geology")
}

async fn hit_rule() -> Outcome {
    let th = |v: f64| Threshold::new(v).unwrap();
    for (seed, pinned) in PINNED_UNRELATED {
        let cache = SemanticCache::new(
            CacheConfig { max_entries: 100, ..Default::default() },
            Arc::new(MockProvider::new("mock", 256, seed)),
        )
        .map_err(|e| e.to_string())?;
        for i in 0..100 {
            cache.put(&stored_query(i), &format!("answer {i}")).await.map_err(|e| e.to_string())?;
        }
        ensure!(cache.len() == 100, "size {}", cache.len());

        let mut hits = 0;
        for i in 0..100 {
            let o = cache.lookup(&stored_query(i), Some(th(0.99))).await.map_err(|e| e.to_string())?;
            let sim = o.similarity.map(|s| s.value()).unwrap_or(f64::NAN);
            let same = o.entry.as_ref().is_some_and(|e| e.query_text == stored_query(i));
            if o.hit && same && (sim - 1.0).abs() <= 1e-12 {
                hits += 1;
            }
        }
        ensure!(hits == 100, "seed {seed}: {hits}/100 exact hits at 0.99");

        let stored: Vec<Embedding> = (0..100).map(|i| mock_embed(&stored_query(i), 256, seed)).collect();
        for (j, want) in pinned.iter().enumerate() {
            let o = cache.lookup(&unrelated_probe(j), Some(th(0.8))).await.map_err(|e| e.to_string())?;
            let got = o.similarity.map(|s| s.value()).unwrap_or(f64::NAN);
            ensure!(!o.hit, "seed {seed} probe {j} hit");
            ensure!((got - want).abs() <= 1e-12, "seed {seed} probe {j}: {got} vs pinned {want}");
            let q = mock_embed(&unrelated_probe(j), 256, seed);
            let brute = stored
                .iter()
                .map(|e| e.values().iter().zip(q.values()).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            ensure!((got - brute).abs() <= 1e-12, "seed {seed} probe {j}: {got} vs scan {brute}");
        }

        let probes: Vec<String> = (0..20)
            .map(|i| match i % 4 {
                0 => stored_query(i),
                1 => format!("{} please", stored_query(i)),
                2 => format!("customer question {i}"),
                _ => unrelated_probe(i),
            })
            .collect();
        let mut previous: Option<Vec<bool>> = None;
        for t in [0.5, 0.7, 0.9, 0.99] {
            let mut row = Vec::new();
            for p in &probes {
                row.push(cache.lookup(p, Some(th(t))).await.map_err(|e| e.to_string())?.hit);
            }
            if let Some(prev) = &previous {
                ensure!(
                    row.iter().zip(prev).all(|(now, before)| !now || *before),
                    "seed {seed}: a probe hit at {t} but missed at a lower threshold"
                );
            }
            previous = Some(row);
        }
    }
    Ok("100/100 exact hits at 0.99, 10 pinned misses at 0.8, monotone over 4 thresholds".into())
}

fn index_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = [8, 64, 384];
    for instance in 0..100 {
        let dim = dims[instance % 3];
        let n = rng.random_range(1..=500);
        let k = rng.random_range(1..=n.min(50) + 5);
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && rng.random_bool(0.1) {
                let j = rng.random_range(0..i);
                raw.push(raw[j].clone());
            } else {
                raw.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
            }
        }
        let mut index = VectorIndex::new();
        for (i, v) in raw.iter().enumerate() {
            index
                .insert(i as u64 * 3 + 1, Embedding::new(v.clone(), "t").map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        }
        let qv: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let query = Embedding::new(qv.clone(), "t").map_err(|e| e.to_string())?;
        let got = index.search(&query, k).map_err(|e| e.to_string())?;

        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let qn = norm(&qv);
        let mut full: Vec<(u64, f64, usize)> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = v.iter().zip(&qv).map(|(a, b)| a * b).sum::<f64>() / (norm(v) * qn);
                (i as u64 * 3 + 1, c.clamp(-1.0, 1.0), i)
            })
            .collect();
        full.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        full.truncate(k);

        ensure!(got.len() == full.len(), "instance {instance}: {} hits vs {}", got.len(), full.len());
        for (r, (g, o)) in got.iter().zip(&full).enumerate() {
            ensure!(g.id == o.0, "instance {instance} rank {r}: id {} vs {}", g.id, o.0);
            ensure!(
                (g.score.value() - o.1).abs() <= 1e-9,
                "instance {instance} rank {r}: score {} vs {}",
                g.score.value(),
                o.1
            );
        }
    }
    Ok("100 instances, dims {8, 64, 384}, up to 500 vectors".into())
}

async fn persistence_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("snapshot.jsonl");
    let config = CacheConfig {
        threshold: Threshold::new(0.85).unwrap(),
        max_entries: 40,
        eviction: EvictionPolicy::Lru,
        persist_path: Some(path.clone()),
    };
    let provider = || Arc::new(MockProvider::new("mock", 128, 11));
    let original = SemanticCache::new(config.clone(), provider()).map_err(|e| e.to_string())?;
    for i in 0..50 {
        original.put(&format!("stored {i}"), &format!("response {i}")).await.map_err(|e| e.to_string())?;
    }
    for i in [45, 46, 45] {
        original.lookup(&format!("stored {i}"), None).await.map_err(|e| e.to_string())?;
    }
    original.save().map_err(|e| e.to_string())?;
    let first = std::fs::read(&path).map_err(|e| e.to_string())?;

    let loaded = SemanticCache::load(config.clone(), provider()).map_err(|e| e.to_string())?;
    let second_path = dir.path().join("second.jsonl");
    loaded.save_to(&second_path).map_err(|e| e.to_string())?;
    let second = std::fs::read(&second_path).map_err(|e| e.to_string())?;
    ensure!(first == second, "snapshots differ ({} vs {} bytes)", first.len(), second.len());

    for i in 0..20 {
        let q = if i % 2 == 0 { format!("stored {}", 10 + i) } else { format!("never stored {i}") };
        let a = original.lookup(&q, None).await.map_err(|e| e.to_string())?;
        let b = loaded.lookup(&q, None).await.map_err(|e| e.to_string())?;
        ensure!(a == b, "lookup {q:?} differs after reload");
    }
    Ok(format!("{} byte snapshot identical, 20 lookups equal", first.len()))
}

async fn synthgen_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seeds: Vec<SeedQuery> =
        (1..=25).map(|i| SeedQuery::new(i, format!("medical seed question {i}")).unwrap()).collect();
    let mut outputs = Vec::new();
    for (run, concurrency) in [(0, 1), (1, 1), (2, 8), (3, 8)] {
        let mut cfg = GenConfig::new("http://unused", "stub");
        cfg.concurrency = concurrency;
        cfg.retry_backoff_ms = 0;
        let llm = StubLlm { wrap: true, jitter: true, calls: AtomicUsize::new(0) };
        let path = dir.path().join(format!("run{run}.jsonl"));
        let s = run_pipeline(&seeds, &cfg, &llm, &path).await.map_err(|e| e.to_string())?;
        ensure!(
            s.records_written + s.dedup_dropped == 100,
            "run {run}: {} written + {} dropped",
            s.records_written,
            s.dedup_dropped
        );
        for r in read_records(&path).map_err(|e| e.to_string())? {
            let consistent = matches!((r.kind, r.is_duplicate), (PairKind::Paraphrase, 1) | (PairKind::Distinct, 0));
            ensure!(consistent, "run {run}: {:?} with label {}", r.kind, r.is_duplicate);
        }
        outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure!(outputs.windows(2).all(|w| w[0] == w[1]), "outputs differ across runs or concurrency");

    let fenced = "```json\n{\"queries\": [\"a\", \"b\"]}\n```";
    let prose = "Certainly! The queries are:\n{\"queries\": [\"a\", \"b\"]}\nHope this helps.";
    for raw in [fenced, prose] {
        let got = parse_llm_queries(raw).map_err(|e| e.to_string())?;
        ensure!(got == ("a".into(), "b".into()), "parsed {got:?}");
    }

    let llm = ScriptedLlm::new(vec![Ok(r#"{"queries": ["only one"]}"#.into())]);
    let mut cfg = GenConfig::new("http://unused", "stub");
    cfg.retry_backoff_ms = 0;
    let out = generate_for_seed(&seeds[0], &cfg, &llm).await;
    ensure!(out.records().count() == 0, "records despite arity errors");
    ensure!(out.failures.len() == 2, "{} failures logged", out.failures.len());
    ensure!(out.failures.iter().all(|f| f.attempts == 1 + cfg.max_retries), "attempt counts {:?}", out.failures);
    ensure!(llm.calls.load(Ordering::SeqCst) == 2 * (1 + cfg.max_retries as usize), "call count");
    Ok("100 records per 25 seeds, identical across 4 runs at concurrency 1 and 8".into())
}

async fn latency_bench() -> Outcome {
    let queries: Vec<String> = (0..4).map(|i| format!("q{i}")).collect();
    let mut means = Vec::new();
    for ms in [5, 20, 50] {
        let p = DelayProvider::new(Duration::from_millis(ms));
        means.push(measure_latency(&p, &queries, 1, 2).await.map_err(|e| e.to_string())?.mean_s);
    }
    ensure!(means.windows(2).all(|w| w[0] < w[1]), "means not increasing: {means:?}");

    let slow_first = || DelayProvider::slow_first(Duration::from_millis(5), Duration::from_millis(100));
    let warm = measure_latency(&slow_first(), &queries, 1, 2).await.map_err(|e| e.to_string())?;
    let cold = measure_latency(&slow_first(), &queries, 0, 2).await.map_err(|e| e.to_string())?;
    ensure!(warm.max_s < 0.1, "slow call leaked past warmup: {warm:?}");
    ensure!(cold.max_s >= 0.1, "slow call not observed without warmup: {cold:?}");
    Ok(format!("means {:?} s", means.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>()))
}

struct TestServer {
    base: String,
    stop: tokio::sync::oneshot::Sender<()>,
    task: tokio::task::JoinHandle<Result<(), semcache::ServerError>>,
    cache: Arc<SemanticCache>,
}

async fn start_server(config: ServerConfig, provider: Arc<dyn semcache::EmbeddingProvider>) -> TestServer {
    let cache = Arc::new(SemanticCache::open(config.cache_config.clone(), provider).unwrap());
    let server = Server::with_cache(config, cache.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, rx) = tokio::sync::oneshot::channel();
    let task = tokio::spawn(server.serve(listener, async {
        let _ = rx.await;
    }));
    TestServer { base, stop, task, cache }
}

async fn call(http: &reqwest::Client, method: reqwest::Method, url: String, body: Option<Value>) -> (u16, Value) {
    let mut req = http.request(method, url);
    if let Some(b) = body {
        req = req.json(&b);
    }
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    let text = resp.text().await.unwrap();
    (status, if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() })
}

async fn server_conformance() -> Outcome {
    use reqwest::Method;
    let http = reqwest::Client::new();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("server.jsonl");
    let mut config = ServerConfig::default();
    config.cache_config.persist_path = Some(path.clone());
    let s = start_server(config, Arc::new(MockProvider::new("mock", 64, 0))).await;

    let (st, body) = call(&http, Method::POST, format!("{}/v1/entries", s.base), Some(json!({"query": "q0", "response": "r0"}))).await;
    ensure!(st == 201 && body["id"].is_u64(), "put: {st} {body}");
    let (st, body) = call(&http, Method::POST, format!("{}/v1/entries", s.base), Some(json!({"response": "r"}))).await;
    ensure!(st == 400 && body["error"].is_string(), "missing query: {st} {body}");
    let (st, _) = call(&http, Method::POST, format!("{}/v1/lookup", s.base), Some(json!({"query": "q", "threshold": 1.5}))).await;
    ensure!(st == 400, "threshold 1.5: {st}");
    let (st, body) = call(&http, Method::DELETE, format!("{}/v1/entries/987654", s.base), None).await;
    ensure!(st == 404 && body["error"].is_string(), "delete unknown: {st} {body}");

    for i in 1..25 {
        call(&http, Method::POST, format!("{}/v1/entries", s.base), Some(json!({"query": format!("q{i}"), "response": format!("r{i}")}))).await;
    }
    let probes: Vec<String> =
        (0..32).map(|i| if i % 2 == 0 { format!("q{}", i / 2) } else { format!("other text {i}") }).collect();
    let mut expected = Vec::new();
    for p in &probes {
        expected.push(call(&http, Method::POST, format!("{}/v1/lookup", s.base), Some(json!({"query": p}))).await);
    }
    for _ in 0..3 {
        let tasks: Vec<_> = probes
            .iter()
            .map(|p| {
                let (http, url, body) = (http.clone(), format!("{}/v1/lookup", s.base), json!({"query": p}));
                tokio::spawn(async move { call(&http, Method::POST, url, Some(body)).await })
            })
            .collect();
        for (t, want) in tasks.into_iter().zip(&expected) {
            ensure!(&t.await.unwrap() == want, "concurrent lookup differs");
        }
    }

    let snapshot = s.cache.snapshot_bytes();
    s.stop.send(()).map_err(|_| "server already stopped".to_string())?;
    s.task.await.unwrap().map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&path).map_err(|e| e.to_string())? == snapshot, "shutdown snapshot differs");

    let mut down = ProviderConfig::remote(closed_url().await, "down");
    down.max_attempts = 1;
    let s = start_server(ServerConfig::default(), build_provider(&down).unwrap()).await;
    let (st, body) = call(&http, Method::POST, format!("{}/v1/entries", s.base), Some(json!({"query": "q", "response": "r"}))).await;
    ensure!(st == 502 && body["error"].is_string(), "provider down: {st} {body}");
    s.stop.send(()).ok();
    s.task.await.unwrap().map_err(|e| e.to_string())?;
    Ok("201/400/404/502 paths, 3 concurrent rounds of 32 lookups, snapshot flushed".into())
}

/// `None` when the environment does not configure the check.
async fn base_model_sanity() -> Option<Outcome> {
    let url = std::env::var("SEMCACHE_BASE_MODEL_URL").ok()?;
    let model = std::env::var("SEMCACHE_BASE_MODEL_NAME").ok()?;
    let pairs_path = std::env::var("SEMCACHE_BASE_MODEL_PAIRS").ok()?;
    Some(
        async {
            let pairs = semcache::evalkit::load_pairs_csv(&pairs_path).map_err(|e| e.to_string())?;
            let provider = build_provider(&ProviderConfig::remote(url, model)).map_err(|e| e.to_string())?;
            let r = semcache::evalkit::evaluate(&pairs, provider.as_ref(), 4).await.map_err(|e| e.to_string())?;
            ensure!((r.average_precision - 0.92).abs() <= 0.03, "AP {} outside 0.92 +/- 0.03", r.average_precision);
            Ok(format!("AP {:.4} on {} pairs", r.average_precision, r.n_pairs))
        }
        .await,
    )
}

fn run<F: Future<Output = Outcome>>(rt: &tokio::runtime::Runtime, f: F) -> Outcome {
    rt.block_on(f)
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("metric oracle equivalence", Box::new(metric_oracle)),
        ("AP worked example", Box::new(ap_worked_example)),
        ("hit-rule semantics", Box::new(|| run(&rt, hit_rule()))),
        ("index-oracle equivalence", Box::new(index_oracle)),
        ("persistence round-trip", Box::new(|| run(&rt, persistence_round_trip()))),
        ("synthgen contract", Box::new(|| run(&rt, synthgen_contract()))),
        ("latency bench", Box::new(|| run(&rt, latency_bench()))),
        ("server conformance", Box::new(|| run(&rt, server_conformance()))),
    ];

    let (mut passed, mut failed) = (0, 0);
    for (name, check) in &checks {
        let result = std::panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            });
        match result {
            Ok(detail) => {
                passed += 1;
                println!("PASS  {name}: {detail}");
            }
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    match rt.block_on(base_model_sanity()) {
        None => println!("SKIP  base-model sanity (set SEMCACHE_BASE_MODEL_URL, SEMCACHE_BASE_MODEL_NAME, SEMCACHE_BASE_MODEL_PAIRS)"),
        Some(Ok(detail)) => {
            passed += 1;
            println!("PASS  base-model sanity: {detail}");
        }
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL  base-model sanity: {why}");
        }
    }
    println!("{passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
