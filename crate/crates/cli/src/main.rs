use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use situmatch::annotate::{agency_model, AnnotationExport, AnnotationService, SimilarityClass};
use situmatch::pipeline::stages::{load_annotation_pairs, stage_dir};
use situmatch::pipeline::{run_all, run_stage, RunConfig, Stage, StageOutcome, StageStatus};
use situmatch::stats::krippendorff_alpha;
use situmatch_cli::server::{router, AppState};

#[derive(Parser)]
#[command(name = "situmatch", version, about = "Matched-pair analysis of community judgments")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "situmatch.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one stage: ingest, extract, topics, embed, propensity, match,
    /// estimate, report, synth or annotate-serve.
    Run {
        stage: String,
        /// Port for annotate-serve; overrides `annotate.port`.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Run every analysis stage from ingest to report.
    All,
    /// Parse and validate the configuration.
    Check,
    /// Agreement and agency model for an exported annotation file.
    Annotations { export: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    RunConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))
}

fn print_outcome(o: &StageOutcome) {
    let status = match o.status {
        StageStatus::Ran => "ran",
        StageStatus::Skipped => "up to date",
    };
    println!("{:<15} {:<11} {}", o.stage.name(), status, o.dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run { stage, port } => {
            let cfg = load(&cli)?;
            let stage: Stage = stage.parse()?;
            let outcome = run_stage(stage, &cfg)?;
            print_outcome(&outcome);
            if stage == Stage::AnnotateServe {
                serve(&cfg, port.unwrap_or(cfg.annotate.port))?;
            }
        }
        Command::All => {
            let cfg = load(&cli)?;
            for o in run_all(&cfg)? {
                print_outcome(&o);
            }
        }
        Command::Check => {
            let cfg = load(&cli)?;
            println!(
                "{} is valid; output goes to {}",
                cli.config.display(),
                cfg.output_dir.display()
            );
        }
        Command::Annotations { export } => annotations(export)?,
    }
    Ok(())
}

fn serve(cfg: &RunConfig, port: u16) -> Result<()> {
    if cfg.annotate.annotators.is_empty() {
        bail!("configuration error at `annotate.annotators`: no annotators configured");
    }
    let (pairs, practice) = load_annotation_pairs(cfg)?;
    let dir = stage_dir(cfg, Stage::AnnotateServe);
    let service = AnnotationService::new(
        pairs,
        practice,
        cfg.annotate.annotators.clone(),
        cfg.annotate.reviewers.clone(),
        cfg.seed,
    )?
    .with_log(&dir.join("log.jsonl"))?;
    let state = AppState::new(service, dir.join("export.json"));
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("annotation service listening on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn annotations(path: &Path) -> Result<()> {
    let export = AnnotationExport::load(path)?;
    let alpha = krippendorff_alpha(&export.similarity_matrix()).ok();
    let mut classes: BTreeMap<SimilarityClass, usize> = BTreeMap::new();
    for m in export.median_similarity().values() {
        *classes.entry(SimilarityClass::of(*m)).or_default() += 1;
    }
    let model = agency_model(&export).ok();
    let out = serde_json::json!({
        "similarity_alpha": alpha,
        "classes": classes,
        "agency_model": model,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
