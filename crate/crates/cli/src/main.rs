use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use claimaudit::collect::ProviderKind;
use claimaudit::dataset::{Dimension, PromptVariant, StatisticKind, Topic};
use claimaudit::ingest::load_dataset_dir;
use claimaudit::report::{normalize, run_audit, AuditConfig, AuditError, Workspace, ANNOTATED_DIR};
use claimaudit::stats::{exact_enumeration_oracle, TestKind, DEFAULT_ENUMERATION_BUDGET};

/// Audit how gender-conditioned and neutral LLM ratings of misinformation claims
/// line up with the ratings of human men and women.
#[derive(Parser)]
#[command(name = "claimaudit", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long, short, global = true, default_value = "claimaudit.toml")]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Bootstrap iterations.
    #[arg(long, global = true)]
    iterations: Option<u32>,
    /// Bootstrap seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Prompt variants to collect and analyze; repeatable.
    #[arg(long = "variant", global = true)]
    variants: Vec<PromptVariant>,
    #[arg(long, global = true)]
    dimension: Option<Dimension>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderArg>,
    /// Response cache file.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
    CacheOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Every step from ingest to report.
    Run,
    /// Load, deduplicate and quality-filter the dataset.
    Ingest,
    /// Collect count-matched LLM annotations.
    Collect,
    /// Gender-gap exaggeration test per topic.
    AnalyzeRq1,
    /// Men-vs-women alignment test per topic.
    AnalyzeRq2,
    /// Assemble tables, figure data and the machine-readable report.
    Report,
    /// Exact p-value by enumerating every resample, for small topics.
    Oracle {
        #[arg(long)]
        topic: String,
        #[arg(long, default_value = "1")]
        prompt: PromptVariant,
        #[arg(long, value_enum, default_value = "rq1")]
        test: TestArg,
        /// Largest number of assignments to enumerate.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        budget: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Rq1,
    Rq2,
}

fn load_config(c: &Common) -> Result<AuditConfig, AuditError> {
    let mut cfg = AuditConfig::from_path(&c.config)?;
    if let Some(o) = &c.output {
        cfg.output.dir = o.clone();
    }
    if let Some(b) = c.iterations {
        cfg.bootstrap.iterations = b;
    }
    if let Some(s) = c.seed {
        cfg.bootstrap.seed = s;
    }
    if !c.variants.is_empty() {
        cfg.analysis.variants = c.variants.clone();
    }
    if let Some(d) = c.dimension {
        cfg.analysis.dimension = d;
    }
    if let Some(p) = c.provider {
        cfg.provider.kind = match p {
            ProviderArg::Mock => ProviderKind::Mock,
            ProviderArg::Http => ProviderKind::Http,
            ProviderArg::CacheOnly => ProviderKind::CacheOnly,
        };
    }
    if let Some(cache) = &c.cache {
        cfg.output.cache = Some(cache.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32, AuditError> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Run => {
            let outcome = run_audit(&cfg)?;
            print!("{}", outcome.report.render_text());
            eprintln!("wrote {}", outcome.output_dir.display());
            Ok(outcome.exit_code())
        }
        Command::Ingest => {
            let stage = Workspace::open(&cfg)?.ingest()?;
            let (c, w, a) = stage.bundle.counts();
            println!(
                "{c} claims, {w} workers, {a} annotations ({} loaded, {} after dedupe)",
                stage.loaded_annotations, stage.deduped_annotations
            );
            if let Some(f) = &stage.filter {
                for r in &f.removed_workers {
                    println!(
                        "removed {} (gold accuracy {})",
                        r.worker_id,
                        r.accuracy.map_or("n/a".into(), |a| format!("{a:.2}"))
                    );
                }
            }
            Ok(0)
        }
        Command::Collect => {
            let stage = Workspace::open(&cfg)?.collect()?;
            let cov = stage.coverage();
            println!("{} of {} planned LLM annotations collected", cov.collected, cov.planned);
            if cov.gaps.is_empty() {
                Ok(0)
            } else {
                for g in &cov.gaps {
                    eprintln!("gap: {} {} P{} slot {}", g.claim_id, g.condition, g.prompt_variant, g.slot);
                }
                Ok(3)
            }
        }
        Command::AnalyzeRq1 | Command::AnalyzeRq2 => {
            let kind = match cli.command {
                Command::AnalyzeRq1 => StatisticKind::GenderGap,
                _ => StatisticKind::Alignment,
            };
            let out = Workspace::open(&cfg)?.analyze(kind)?;
            for r in &out.results {
                println!(
                    "{:<22} P{}  {:>8.4}  p = {:.4}",
                    r.topic.label(),
                    r.prompt_variant,
                    r.value,
                    r.p_value
                );
            }
            for s in &out.skipped {
                eprintln!("skipped {} P{}: {}", s.topic, s.prompt_variant, s.reason);
            }
            Ok(0)
        }
        Command::Report => {
            let outcome = Workspace::open(&cfg)?.report()?;
            print!("{}", outcome.report.render_text());
            Ok(outcome.exit_code())
        }
        Command::Oracle {
            topic,
            prompt,
            test,
            budget,
        } => {
            let bundle = load_dataset_dir(&cfg.output.dir.join(ANNOTATED_DIR))?;
            let grouped = normalize(&cfg, &bundle);
            let kind = match test {
                TestArg::Rq1 => TestKind::Rq1,
                TestArg::Rq2 => TestKind::Rq2,
            };
            let exact = exact_enumeration_oracle(
                &grouped,
                &Topic::parse(&topic),
                prompt,
                kind,
                &cfg.bootstrap,
                budget,
            )?;
            println!("{}", serde_json::to_string_pretty(&exact).expect("serializes"));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
