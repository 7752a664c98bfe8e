use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drawsim_core::conceptmap::{generate_map, render_map, validate_map, ConceptMap};
use drawsim_core::corpus::{
    build_corpus, consistency_rows, density_samples, load_topics, reindex, stratified_sample, ArtifactStore,
    CorpusConfig, OverlapPolicy, SamplingOptions, SamplingPlan,
};
use drawsim_core::digest::derive_seed;
use drawsim_core::docs::{read_document, to_document, write_document};
use drawsim_core::metrics::tables::{ablation_table, consistency_table, evaluation_table};
use drawsim_core::metrics::{ablation_report, consistency_report, edge_density, summarize, Condition, EvaluationRecord};
use drawsim_core::profiles::{build_profile, build_profile_ladder, CapabilityProfile, PerformanceLevel};
use drawsim_core::providers::{Providers, ProvidersFile};
use drawsim_core::standards::{bundled_standards, decompose, load_standards, TopicSpec};
use drawsim_core::synthesis::{
    generate_baseline, generate_unified, generate_unprofiled, render_drawing, verify_alignment, BaselineStrategy,
};
use drawsim_core::corpus::BlobStore;
use drawsim_core::{AblationReportF64, EdgeConfigF64, EvaluationSummaryF64};
use drawsim_service::api::{serve, ApiConfig};
use drawsim_service::evaluations::EvaluationStore;

#[derive(Parser)]
#[command(name = "drawsim", version, about = "Simulated student science drawings: generation, corpus, metrics, service")]
struct Cli {
    /// Provider configuration (TOML). Offline providers when omitted.
    #[arg(long, global = true, env = "DRAWSIM_PROVIDERS")]
    providers: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a performance expectation into evidence statements.
    Decompose {
        #[arg(long)]
        code: String,
        /// Standards file (JSONL); the bundled list by default.
        #[arg(long)]
        standards: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build one capability profile, or the whole ladder without --level.
    Profile {
        #[arg(long)]
        topic: PathBuf,
        #[arg(long)]
        level: Option<u8>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one triplet into a directory.
    Generate(GenerateArgs),
    /// Concept map utilities.
    Cmap {
        #[command(subcommand)]
        command: CmapCommand,
    },
    /// Corpus construction and rater sampling.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Consistency, complexity and evaluation reports.
    Metrics {
        #[command(subcommand)]
        command: MetricsCommand,
    },
    /// Serve a corpus over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Unified,
    Independent,
    Sequential,
    Unprofiled,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    topic: PathBuf,
    #[arg(long)]
    level: u8,
    /// Defaults to the topic's grade.
    #[arg(long)]
    grade: Option<u8>,
    /// Use this profile instead of building the topic's ladder.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "unified")]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CmapCommand {
    /// Check a concept map; exits non-zero listing violated rules.
    Validate { file: PathBuf },
    /// Render a concept map as DOT.
    Render {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Build or resume a corpus from a TOML config.
    Build {
        #[arg(long)]
        config: PathBuf,
    },
    /// Assign artifacts to raters.
    Sample {
        #[arg(long, env = "DRAWSIM_CORPUS_ROOT")]
        root: PathBuf,
        #[arg(long, default_value_t = 6)]
        raters: usize,
        #[arg(long, default_value_t = 80)]
        per_rater: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "auto")]
        overlap: Overlap,
    },
    /// Rebuild manifest.json from the artifact directories.
    Reindex {
        #[arg(long, env = "DRAWSIM_CORPUS_ROOT")]
        root: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Overlap {
    Auto,
    Disjoint,
    Allow,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliCondition {
    With,
    Without,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Cross-modal consistency grouped by grade band and level.
    Consistency {
        #[arg(long, env = "DRAWSIM_CORPUS_ROOT")]
        root: PathBuf,
        /// Sampling plan; every artifact when omitted.
        #[arg(long)]
        sample: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Level complexity SD of a corpus's drawings.
    Ablation {
        /// Corpus root, or its manifest.json.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        condition: CliCondition,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate evaluation records (JSONL, or the service's evaluation log).
    Aggregate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edge density of one image.
    EdgeDensity {
        image: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        low: f64,
        #[arg(long, default_value_t = 200.0)]
        high: f64,
        /// Keep the native size instead of resizing to 512x512.
        #[arg(long)]
        native: bool,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "DRAWSIM_CORPUS_ROOT")]
    root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long)]
    read_only: bool,
    /// Environment variable holding the bearer token for submissions.
    #[arg(long)]
    auth_token_env: Option<String>,
    /// Accept submissions for this plan only.
    #[arg(long)]
    plan: Option<String>,
    #[arg(long)]
    evaluations: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let providers = load_providers(cli.providers.as_deref())?;
    match cli.command {
        Command::Decompose {
            code,
            standards,
            seed,
            out,
        } => {
            let all = match standards {
                Some(p) => load_standards(&p)?,
                None => bundled_standards(),
            };
            let pe = all
                .iter()
                .find(|pe| pe.code == code)
                .with_context(|| format!("no performance expectation {code}"))?;
            let topic = decompose(pe, providers.generation.as_ref(), seed)?;
            emit(out.as_deref(), "topic", &topic)
        }
        Command::Profile { topic, level, seed, out } => {
            let topic: TopicSpec = read_document(&topic, "topic")?;
            match level {
                Some(v) => {
                    let p = build_profile(&topic, parse_level(v)?, providers.generation.as_ref(), seed)?;
                    emit(out.as_deref(), "capability_profile", &p)
                }
                None => {
                    let l = build_profile_ladder(&topic, providers.generation.as_ref(), seed)?;
                    emit(out.as_deref(), "profile_ladder", &l)
                }
            }
        }
        Command::Generate(args) => generate(args, &providers),
        Command::Cmap { command } => cmap(command),
        Command::Corpus { command } => corpus(command, cli.providers.as_deref()),
        Command::Metrics { command } => metrics(command, &providers),
        Command::Serve(args) => {
            let cfg = ApiConfig {
                bind: args.bind,
                root: args.root,
                read_only: args.read_only,
                auth_token_env: args.auth_token_env,
                active_plan: args.plan,
                evaluations: args.evaluations,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(cfg, providers.embedding.clone()))?;
            Ok(())
        }
    }
}

fn load_providers(path: Option<&Path>) -> Result<Providers> {
    Ok(match path {
        Some(p) => Providers::from_config(&ProvidersFile::load(p)?)?,
        None => Providers::offline(),
    })
}

fn parse_level(v: u8) -> Result<PerformanceLevel> {
    PerformanceLevel::from_value(v).with_context(|| format!("performance level must be 1-4, got {v}"))
}

/// Writes a document to `out`, or prints it.
fn emit<T: serde::Serialize>(out: Option<&Path>, kind: &str, value: &T) -> Result<()> {
    match out {
        Some(p) => write_document(p, kind, value).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{}", to_document(kind, value));
            Ok(())
        }
    }
}

fn generate(args: GenerateArgs, providers: &Providers) -> Result<()> {
    let topic: TopicSpec = read_document(&args.topic, "topic")?;
    let level = parse_level(args.level)?;
    let grade = args.grade.unwrap_or(topic.pe.grade);
    let gen = providers.generation.as_ref();
    let profile: CapabilityProfile = match &args.profile {
        Some(p) => read_document(p, "capability_profile")?,
        None => {
            let ladder = build_profile_ladder(&topic, gen, derive_seed(&[topic.code(), "ladder"], args.seed))?;
            ladder.get(level).cloned().context("ladder is missing a level")?
        }
    };
    let out = match args.strategy {
        Strategy::Unified => generate_unified(&topic, grade, &profile, gen, args.seed, &providers.style)?,
        Strategy::Independent => generate_baseline(
            BaselineStrategy::Independent,
            &topic,
            grade,
            &profile,
            gen,
            args.seed,
            &providers.style,
        )?,
        Strategy::Sequential => generate_baseline(
            BaselineStrategy::Sequential,
            &topic,
            grade,
            &profile,
            gen,
            args.seed,
            &providers.style,
        )?,
        Strategy::Unprofiled => generate_unprofiled(&topic, grade, level, gen, args.seed, &providers.style)?,
    };
    fs::create_dir_all(&args.out)?;
    let blobs = BlobStore::new(args.out.join(".blobs"));
    let (image, bytes) = render_drawing(&out.prompt.composed, providers.image.as_ref(), args.seed, &blobs)?;
    fs::write(args.out.join("image.png"), &bytes)?;
    fs::write(args.out.join("narrative.txt"), &out.narrative.text)?;
    write_document(&args.out.join("prompt.json"), "image_prompt", &out.prompt)?;
    write_document(&args.out.join("image_ref.json"), "image_ref", &image)?;
    if matches!(args.strategy, Strategy::Unprofiled) {
        println!("unprofiled output written to {}", args.out.display());
        return Ok(());
    }
    let report = verify_alignment(&out, &profile)?;
    write_document(&args.out.join("alignment.json"), "alignment_report", &report)?;
    match generate_map(&topic, &profile, &out.prompt, gen, derive_seed(&["map"], args.seed)) {
        Ok(map) => {
            fs::write(args.out.join("cmap.dot"), render_map(&map)?)?;
            write_document(&args.out.join("cmap.json"), "concept_map", &map)?;
        }
        Err(e) => eprintln!("concept map skipped: {e}"),
    }
    println!(
        "{} written to {} (alignment {})",
        profile.id(),
        args.out.display(),
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(())
}

fn read_map(path: &Path) -> Result<ConceptMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    // accept a bare map as well as a document envelope
    match drawsim_core::docs::from_document("concept_map", &text, &path.display().to_string()) {
        Ok(m) => Ok(m),
        Err(_) => serde_json::from_str(&text).with_context(|| format!("{} is not a concept map", path.display())),
    }
}

fn cmap(command: CmapCommand) -> Result<()> {
    match command {
        CmapCommand::Validate { file } => {
            let report = validate_map(&read_map(&file)?);
            if report.pass() {
                println!("valid");
                return Ok(());
            }
            for v in &report.violations {
                println!("{v}");
            }
            bail!("{} violation(s)", report.violations.len())
        }
        CmapCommand::Render { file, out } => {
            let dot = render_map(&read_map(&file)?)?;
            match out {
                Some(p) => fs::write(&p, dot).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{dot}"),
            }
            Ok(())
        }
    }
}

fn corpus(command: CorpusCommand, providers_flag: Option<&Path>) -> Result<()> {
    match command {
        CorpusCommand::Build { config } => {
            let cfg = CorpusConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            let providers = match (&cfg.providers, providers_flag) {
                (Some(p), _) => load_providers(Some(&resolve(p)))?,
                (None, flag) => load_providers(flag)?,
            };
            let root = resolve(&cfg.root);
            let mut cfg = cfg;
            cfg.standards = cfg.standards.as_deref().map(resolve);
            let topics = load_topics(&root, &cfg.selected_standards()?, &providers, cfg.seed)?;
            let summary = build_corpus(&root, &topics, &providers, &cfg.options()?)?;
            println!(
                "{} new, {} already present, {} deferred, {} failed; {} artifacts in {}",
                summary.generated.len(),
                summary.skipped,
                summary.deferred,
                summary.failures.len(),
                summary.manifest.artifacts.len(),
                root.display()
            );
            for f in &summary.failures {
                println!("  quarantined {} L{} #{}: {}", f.topic_ref, f.level.value(), f.exemplar, f.reason);
            }
            Ok(())
        }
        CorpusCommand::Sample {
            root,
            raters,
            per_rater,
            seed,
            overlap,
        } => {
            let manifest = reindex(&root, None)?;
            let opts = SamplingOptions {
                raters,
                per_rater,
                seed,
                overlap: match overlap {
                    Overlap::Auto => OverlapPolicy::Auto,
                    Overlap::Disjoint => OverlapPolicy::Disjoint,
                    Overlap::Allow => OverlapPolicy::Allow,
                },
            };
            let plan = stratified_sample(&manifest, &opts)?;
            let path = plan.save(&root)?;
            println!(
                "{}: {} raters x {} = {} evaluations{} -> {}",
                plan.id,
                plan.raters.len(),
                plan.per_rater,
                plan.total_evaluations(),
                if plan.overlapping { " (overlapping)" } else { "" },
                path.display()
            );
            Ok(())
        }
        CorpusCommand::Reindex { root } => {
            let m = reindex(&root, None)?;
            m.save(&root)?;
            println!("{} artifacts in {} cells", m.artifacts.len(), m.cells.len());
            Ok(())
        }
    }
}

/// Effective records: the service log keeps the latest submission per
/// (rater, artifact); a plain JSONL file is taken as is.
fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    if lines.first().is_some_and(|l| l.contains("\"stored_id\"")) {
        return Ok(EvaluationStore::open(path)?.effective());
    }
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let r: EvaluationRecord =
            serde_json::from_str(line).with_context(|| format!("{}:{}: not an evaluation record", path.display(), i + 1))?;
        if let Err(errs) = r.validate() {
            let msg: Vec<String> = errs.iter().map(ToString::to_string).collect();
            bail!("{}:{}: {}", path.display(), i + 1, msg.join("; "));
        }
        out.push(r);
    }
    Ok(out)
}

fn metrics(command: MetricsCommand, providers: &Providers) -> Result<()> {
    match command {
        MetricsCommand::Consistency {
            root,
            sample,
            limit,
            out,
        } => {
            let manifest = reindex(&root, None)?;
            let mut entries = manifest.artifacts.clone();
            if let Some(p) = sample {
                let plan = SamplingPlan::load(&p)?;
                let ids: std::collections::BTreeSet<&String> = plan.assignment.values().flatten().collect();
                entries.retain(|e| ids.contains(&e.id));
            }
            if let Some(n) = limit {
                entries.truncate(n);
            }
            let store = ArtifactStore::new(&root);
            let rows = consistency_rows::<f64>(&store, &entries, providers.embedding.as_ref())?;
            let report = consistency_report(&rows)?;
            print!("{}", consistency_table(&report));
            if let Some(p) = out {
                write_document(&p, "consistency_report", &report)?;
            }
            Ok(())
        }
        MetricsCommand::Ablation { corpus, condition, out } => {
            let root = if corpus.file_name().is_some_and(|n| n == "manifest.json") {
                corpus.parent().map(Path::to_path_buf).unwrap_or_default()
            } else {
                corpus
            };
            let condition = match condition {
                CliCondition::With => Condition::WithProfiles,
                CliCondition::Without => Condition::WithoutProfiles,
            };
            let manifest = reindex(&root, None)?;
            let entries: Vec<_> = manifest.artifacts.into_iter().filter(|e| e.condition == condition).collect();
            if entries.is_empty() {
                bail!("{} holds no {} artifacts", root.display(), condition.as_str());
            }
            let samples = density_samples(&ArtifactStore::new(&root), &entries, &EdgeConfigF64::default())?;
            let report: AblationReportF64 = ablation_report(condition, &samples)?;
            print!("{}", ablation_table(&[&report]));
            if let Some(p) = out {
                write_document(&p, "ablation_report", &report)?;
            }
            Ok(())
        }
        MetricsCommand::Aggregate { records, out } => {
            let recs = read_records(&records)?;
            let summary: EvaluationSummaryF64 = summarize(&recs)?;
            print!("{}", evaluation_table(&summary));
            if let Some(p) = out {
                write_document(&p, "evaluation_summary", &summary)?;
            }
            Ok(())
        }
        MetricsCommand::EdgeDensity {
            image,
            low,
            high,
            native,
        } => {
            let bytes = fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let cfg = if native {
                EdgeConfigF64::native(low, high)
            } else {
                EdgeConfigF64 {
                    low,
                    high,
                    ..EdgeConfigF64::default()
                }
            };
            let s = edge_density(&bytes, &cfg)?;
            let mut row = BTreeMap::new();
            row.insert("edge_density", s.edge_density.to_string());
            row.insert("edge_pixels", s.edge_pixels.to_string());
            row.insert("total_pixels", s.total_pixels.to_string());
            println!("{}", serde_json::to_string(&row)?);
            Ok(())
        }
    }
}
