use std::path::Path;
use std::sync::Arc;

use semcache::benchlat::{self, measure_latency, BenchError, ScatterEntry};
use semcache::evalkit::{self, EvalError, EvalReport, TableRow};
use semcache::server::{self, ServerError};
use semcache::synthgen::{self, SynthError};
use semcache::{build_provider, EmbeddingProvider, ProviderConfig, ProviderError, ProviderKind, Server, ServerConfig};
use serde_json::json;

use super::{CliError, Command, ExportCommand, ProviderArgs};

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_provider() {
            CliError::Upstream(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::InvalidConfig(_) | ProviderError::MissingCredential(_) => CliError::Input(e.to_string()),
            _ => CliError::Upstream(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Llm(_) => CliError::Upstream(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Provider { .. } => CliError::Upstream(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ServerError> for CliError {
    fn from(e: ServerError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn input(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}

pub async fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Serve { config, mock_seed } => serve(config.as_deref(), mock_seed).await,
        Command::Put { server, query, response } => {
            let body = json!({ "query": query, "response": response });
            forward(reqwest::Client::new().post(format!("{}/v1/entries", server.trim_end_matches('/'))).json(&body)).await
        }
        Command::Lookup { server, query, threshold } => {
            let mut body = json!({ "query": query });
            if let Some(t) = threshold {
                body["threshold"] = json!(t);
            }
            forward(reqwest::Client::new().post(format!("{}/v1/lookup", server.trim_end_matches('/'))).json(&body)).await
        }
        Command::Eval { pairs, provider, out, parallelism } => eval(&pairs, &provider, &out, parallelism).await,
        Command::Calibrate { pairs, provider, parallelism } => calibrate(&pairs, &provider, parallelism).await,
        Command::Synthgen { seeds, config, out, export_csv, concurrency } => {
            synthgen(&seeds, &config, &out, export_csv.as_deref(), concurrency).await
        }
        Command::Bench { queries, provider, warmup, repeats, out, scatter, ap, report } => {
            bench(&queries, &provider, warmup, repeats, out.as_deref(), scatter.as_deref(), ap, report.as_deref()).await
        }
        Command::Export(export) => run_export(export),
    }
}

fn describe(config: &ProviderConfig) -> String {
    match config.kind {
        ProviderKind::Mock => format!(
            "provider: mock model={} dim={} seed={} delay_ms={}",
            config.model_name, config.mock.dim, config.mock.seed, config.mock.delay_ms
        ),
        ProviderKind::RemoteHttp => {
            format!("provider: remote_http model={} endpoint={}", config.model_name, config.endpoint_url)
        }
    }
}

fn load_pairs(path: &Path) -> Result<Vec<semcache::LabeledPair>, CliError> {
    evalkit::load_pairs_csv(path).map_err(|e| input(&path.display().to_string(), e))
}

fn provider_config(args: &ProviderArgs) -> Result<ProviderConfig, CliError> {
    let config = match &args.provider {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| input(&path.display().to_string(), e))?;
            ProviderConfig::from_toml_str(&text)?
        }
        None => {
            let mut c = ProviderConfig::mock(&args.mock_model, args.mock_dim, args.mock_seed);
            c.mock.delay_ms = args.mock_delay_ms;
            c.validate()?;
            c
        }
    };
    eprintln!("{}", describe(&config));
    Ok(config)
}

fn provider(args: &ProviderArgs) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
    Ok(build_provider(&provider_config(args)?)?)
}

async fn serve(config: Option<&Path>, mock_seed: Option<u64>) -> Result<(), CliError> {
    let mut config = ServerConfig::load(config)?;
    if let Some(seed) = mock_seed {
        config.provider_config.mock.seed = seed;
    }
    eprintln!("{}", describe(&config.provider_config));
    let server = Server::new(config)?;
    let listener = server.bind().await?;
    let addr = listener.local_addr().map_err(|e| input("bind", e))?;
    println!("listening on {addr}");
    server.serve(listener, server::shutdown_signal()).await?;
    Ok(())
}

/// Sends `req`, prints the response body and maps the status to an exit code.
async fn forward(req: reqwest::RequestBuilder) -> Result<(), CliError> {
    let resp = req
        .send()
        .await
        .map_err(|e| CliError::Upstream(format!("cannot reach server: {e}")))?;
    let status = resp.status();
    let body = resp
        .text()
        .await
        .map_err(|e| CliError::Upstream(format!("reading response: {e}")))?;
    println!("{body}");
    if status.is_success() {
        Ok(())
    } else if status.is_client_error() {
        Err(CliError::Input(format!("server answered {status}")))
    } else {
        Err(CliError::Upstream(format!("server answered {status}")))
    }
}

fn print_metrics(r: &EvalReport) {
    for (name, value) in [
        ("Precision", r.precision),
        ("Recall", r.recall),
        ("F1", r.f1),
        ("Accuracy", r.accuracy),
        ("Avg. Precision", r.average_precision),
    ] {
        println!("{name:<16}{value:.4}");
    }
}

async fn eval(pairs: &Path, provider_args: &ProviderArgs, out: &Path, parallelism: usize) -> Result<(), CliError> {
    let pairs = load_pairs(pairs)?;
    let provider = provider(provider_args)?;
    let report = evalkit::evaluate(&pairs, provider.as_ref(), parallelism).await?;
    evalkit::write_report(out, &report)?;
    print_metrics(&report);
    Ok(())
}

async fn calibrate(pairs: &Path, provider_args: &ProviderArgs, parallelism: usize) -> Result<(), CliError> {
    let pairs = load_pairs(pairs)?;
    let provider = provider(provider_args)?;
    let scored = evalkit::score_pairs(&pairs, provider.as_ref(), parallelism).await?;
    let f1 = evalkit::best_threshold_f1(&scored)?;
    let acc = evalkit::best_threshold_accuracy(&scored)?;
    println!("f1_threshold       {}  (f1 {:.4})", f1.threshold, f1.f1);
    println!("accuracy_threshold {}  (accuracy {:.4})", acc.threshold, acc.accuracy);
    Ok(())
}

async fn synthgen(
    seeds: &Path,
    config: &Path,
    out: &Path,
    export_csv: Option<&Path>,
    concurrency: Option<usize>,
) -> Result<(), CliError> {
    let seeds = synthgen::load_seeds(seeds)?;
    let text = std::fs::read_to_string(config).map_err(|e| input(&config.display().to_string(), e))?;
    let mut config = synthgen::GenConfig::from_toml_str(&text)?;
    if let Some(c) = concurrency {
        config.concurrency = c;
    }
    let client = config.client()?;
    let summary = synthgen::run_pipeline(&seeds, &config, &client, out).await?;
    if let Some(csv) = export_csv {
        let records = synthgen::read_records(out)?;
        synthgen::export_csv(&records, csv)?;
    }
    println!("seeds_processed {}", summary.seeds_processed);
    println!("records_written {}", summary.records_written);
    println!("failures        {}", summary.failures);
    println!("dedup_dropped   {}", summary.dedup_dropped);
    if summary.records_written == 0 && summary.failures > 0 {
        return Err(CliError::Upstream(format!(
            "every prompt failed; see {}",
            synthgen::failures_path(out).display()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn bench(
    queries: &Path,
    provider_args: &ProviderArgs,
    warmup: usize,
    repeats: usize,
    out: Option<&Path>,
    scatter: Option<&Path>,
    ap: Option<f64>,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(queries).map_err(|e| input(&queries.display().to_string(), e))?;
    let queries: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    let ap = match (ap, report) {
        (Some(ap), _) => Some(ap),
        (None, Some(path)) => Some(evalkit::read_report::<EvalReport>(path)?.average_precision),
        (None, None) => None,
    };
    if scatter.is_some() && ap.is_none() {
        return Err(CliError::Input("--scatter needs --ap or --report".into()));
    }
    let provider = provider(provider_args)?;
    let stats = measure_latency(provider.as_ref(), &queries, warmup, repeats).await?;
    if let Some(path) = out {
        evalkit::write_report(path, &stats)?;
    }
    if let (Some(path), Some(ap)) = (scatter, ap) {
        benchlat::emit_scatter_csv(&[ScatterEntry::new(&stats.model, stats.mean_s, ap)], path)?;
    }
    println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    Ok(())
}

/// Splits `MODEL,A,B` from the right so the model name may contain commas.
fn split_triple<'a>(arg: &'a str, what: &str) -> Result<(&'a str, &'a str, &'a str), CliError> {
    let mut parts = arg.rsplitn(3, ',');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(c), Some(b), Some(a)) if !a.is_empty() => Ok((a, b, c)),
        _ => Err(CliError::Input(format!("expected {what}, got {arg:?}"))),
    }
}

fn run_export(command: ExportCommand) -> Result<(), CliError> {
    match command {
        ExportCommand::Table { rows, out } => {
            let mut parsed = Vec::new();
            for arg in &rows {
                let (model, source, path) = split_triple(arg, "MODEL,SOURCE,REPORT_JSON")?;
                let report: EvalReport = evalkit::read_report(path)?;
                parsed.push((model, source, report));
            }
            let table: Vec<TableRow> =
                parsed.iter().map(|(model, source, report)| TableRow { model, source, report }).collect();
            evalkit::write_table_csv(&out, &table)?;
        }
        ExportCommand::Scatter { points, out } => {
            let mut entries = Vec::new();
            for arg in &points {
                let (model, x, y) = split_triple(arg, "MODEL,MEAN_SECONDS,AVERAGE_PRECISION")?;
                let num = |s: &str| s.trim().parse::<f64>().map_err(|e| input(arg, e));
                entries.push(ScatterEntry::new(model, num(x)?, num(y)?));
            }
            benchlat::emit_scatter_csv(&entries, &out)?;
        }
    }
    Ok(())
}
