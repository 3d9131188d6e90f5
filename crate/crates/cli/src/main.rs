use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use claimline::config::AppConfig;
use claimline::corpus::open_detailed;
use claimline::harness::{
    run_criteria_retrieval, run_direct_retrieval, run_filtration, run_summarization, run_veracity, ExperimentReport,
    HarnessError, VeracityMode,
};
use claimline::pipeline::{Snapshot, VerifyRequest, VerifyResponse};
use claimline_service::{serve, AppState};

const EXIT_ERROR: u8 = 1;
const EXIT_DEGRADED: u8 = 2;

/// Retrieve, filter, summarize and verify previously fact-checked claims.
#[derive(Debug, Parser)]
#[command(name = "claimline", version)]
struct Cli {
    /// Config file; defaults to $CLAIMLINE_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a corpus, embed it and store the index.
    Ingest {
        /// Corpus file or directory; defaults to the configured corpus.
        source: Option<PathBuf>,
        /// Output directory; defaults to the service data directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline on one claim.
    Verify {
        #[arg(long)]
        text: String,
        #[arg(long = "top-k", value_name = "N")]
        top_k: Option<usize>,
        #[arg(long = "language", value_name = "CODE")]
        language_hint: Option<String>,
        /// Print the response as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Direct multilingual retrieval (S@K, MRR).
    EvalRetrieval(EvalArgs),
    /// Criteria-based two-step retrieval.
    EvalCriteria(EvalArgs),
    /// LLM filtration of retrieved candidates.
    EvalFiltration(EvalArgs),
    /// Fact-check article summarization (ROUGE-L).
    EvalSummarization(EvalArgs),
    /// Veracity prediction.
    EvalVeracity {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum, default_value_t = Mode::WithContext)]
        mode: Mode,
    },
    /// Run the HTTP service.
    Serve {
        /// Address to listen on; overrides service.bind.
        #[arg(long, value_name = "ADDR:PORT")]
        bind: Option<String>,
    },
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    /// Report directory; overrides output_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    WithContext,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    init_logging();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn init_logging() {
    let color = std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && std::io::stderr().is_terminal();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(color)
        .init();
}

fn load_config(explicit: Option<&Path>) -> Result<AppConfig> {
    let path = AppConfig::locate(explicit)?;
    Ok(AppConfig::load(&path)?)
}

fn run(cli: Cli) -> Result<u8> {
    if let Command::Verify { text, .. } = &cli.command {
        if text.trim().is_empty() {
            let mut cmd = Cli::command();
            let usage = cmd
                .find_subcommand_mut("verify")
                .map(|c| c.clone().bin_name("claimline verify").render_usage());
            eprintln!("error: --text must not be empty\n");
            if let Some(usage) = usage {
                eprintln!("{usage}");
            }
            return Ok(EXIT_ERROR);
        }
    }
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { source, out } => ingest(&cfg, source, out),
        Command::Verify {
            text,
            top_k,
            language_hint,
            json,
        } => verify(&cfg, text, top_k, language_hint, json),
        Command::EvalRetrieval(a) => eval(&cfg, a, run_direct_retrieval),
        Command::EvalCriteria(a) => eval(&cfg, a, run_criteria_retrieval),
        Command::EvalFiltration(a) => eval(&cfg, a, run_filtration),
        Command::EvalSummarization(a) => eval(&cfg, a, run_summarization),
        Command::EvalVeracity { eval: a, mode } => {
            let mode = match mode {
                Mode::Baseline => VeracityMode::Baseline,
                Mode::WithContext => VeracityMode::WithContext,
            };
            eval(&cfg, a, |c| run_veracity(c, mode))
        }
        Command::Serve { bind } => serve_until_signal(cfg, bind),
    }
}

fn ingest(cfg: &AppConfig, source: Option<PathBuf>, out: Option<PathBuf>) -> Result<u8> {
    let source = source.unwrap_or_else(|| cfg.experiment.corpus_path.clone());
    let out = out.unwrap_or_else(|| cfg.data_dir());
    let opened = open_detailed(&source).with_context(|| format!("cannot load {}", source.display()))?;
    for w in &opened.warnings {
        eprintln!("warning: {w}");
    }
    for e in &opened.errors {
        eprintln!("rejected: {e}");
    }
    if opened.corpus.num_fact_checks() == 0 {
        bail!("{} contains no valid fact-checks", source.display());
    }
    let (loaded, posts, errors) = (
        opened.corpus.num_fact_checks(),
        opened.corpus.num_posts(),
        opened.errors.len(),
    );
    let pipeline = cfg.pipeline()?;
    let snapshot = Snapshot::build(opened.corpus, pipeline.embedder()).context("cannot build index")?;
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    snapshot.save(&out)?;
    println!(
        "loaded {loaded} fact-checks and {posts} posts ({errors} rejected); index written to {}",
        out.display()
    );
    Ok(0)
}

fn verify(
    cfg: &AppConfig,
    text: String,
    top_k: Option<usize>,
    language_hint: Option<String>,
    json: bool,
) -> Result<u8> {
    let (state, warnings) = AppState::from_config(cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let snapshot = state.snapshot().context("no corpus index available")?;
    let req = VerifyRequest {
        text,
        top_k: Some(top_k.unwrap_or(cfg.service.default_top_k)),
        language_hint,
    };
    let resp = state.pipeline().verify(&snapshot, &req)?;
    let mut stdout = std::io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut stdout, &resp)?;
        writeln!(stdout)?;
    } else {
        write_report(&mut stdout, &resp)?;
    }
    for w in &resp.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if resp.degraded { EXIT_DEGRADED } else { 0 })
}

fn write_report(out: &mut impl Write, resp: &VerifyResponse) -> std::io::Result<()> {
    let v = &resp.verdict;
    writeln!(out, "Verdict: {}", v.label)?;
    if !v.explanation.is_empty() {
        writeln!(out, "  {}", v.explanation)?;
    }
    let dist: Vec<String> = v.distribution.iter().map(|(l, n)| format!("{l}={n}")).collect();
    writeln!(out, "  ratings of relevant fact-checks: {}", dist.join(", "))?;
    if resp.degraded {
        writeln!(out, "  (degraded: retrieval only)")?;
    }
    if !resp.overall_summary.is_empty() {
        writeln!(out, "\nSummary:\n  {}", resp.overall_summary)?;
    }
    writeln!(out, "\nRelevant fact-checks ({}):", resp.relevant.len())?;
    for r in &resp.relevant {
        let fc = &r.factcheck;
        writeln!(
            out,
            "- [{}] {} ({}, {})",
            fc.rating,
            fc.display_claim(),
            fc.organization,
            fc.id
        )?;
        if let Some(url) = &fc.article_url {
            writeln!(out, "  {url}")?;
        }
        writeln!(out, "  summary: {}", r.summary)?;
        writeln!(out, "  why: {}", r.relevance_explanation)?;
    }
    writeln!(out, "\nOther retrieved fact-checks ({}):", resp.irrelevant.len())?;
    for s in &resp.irrelevant {
        writeln!(
            out,
            "- {:.3} {} ({})",
            s.score,
            s.factcheck.display_claim(),
            s.factcheck.id
        )?;
    }
    let t = &resp.timing;
    writeln!(
        out,
        "\nTiming: retrieve {} ms, filter {} ms, summarize {} ms, predict {} ms, total {} ms",
        t.retrieve_ms, t.filter_ms, t.summarize_ms, t.predict_ms, t.total_ms
    )
}

fn eval(
    cfg: &AppConfig,
    args: EvalArgs,
    runner: impl Fn(&claimline::harness::ExperimentConfig) -> Result<ExperimentReport, HarnessError>,
) -> Result<u8> {
    let mut exp = cfg.experiment.clone();
    if let Some(out) = args.out {
        exp.output_dir = out;
    }
    let report = runner(&exp)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let files = report.write(&exp.output_dir)?;
    print!("{}", report.to_table());
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(0)
}

fn serve_until_signal(cfg: AppConfig, bind: Option<String>) -> Result<u8> {
    let addr = bind.unwrap_or_else(|| cfg.service.bind.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = match tokio::net::TcpListener::bind(&addr).await {
            Ok(l) => l,
            Err(e) => bail!("cannot bind {addr}: {e}"),
        };
        let (state, warnings) = tokio::task::spawn_blocking(move || AppState::from_config(&cfg)).await??;
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, Arc::new(state), shutdown_signal()).await?;
        eprintln!("shut down");
        Ok(0)
    })
}

async fn shutdown_signal() {
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
