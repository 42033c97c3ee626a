//! Command-line front end for the evaluation pipeline and the annotation
//! service.

pub mod auth;
pub mod server;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use hazeval_core::annotation::{self, AnnotationStore, AutomatedScores, TaskPayload};
use hazeval_core::corpus;
use hazeval_core::pipeline::{self, AnswerRow, MetricReport, ReportRow, RunConfig, Runtime};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hazeval", version, about = "Evaluate climate-hazard RAG answers and run annotation studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the question set and one answer per generator.
    Generate(ConfigArg),
    /// Score answers (generating any that are missing) and write the report.
    Evaluate(ConfigArg),
    /// Recompute aggregates from an existing rows file.
    Report {
        /// Directory holding rows.jsonl.
        #[arg(long)]
        dir: PathBuf,
        /// Also write metrics.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Manage annotation studies.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Print the agreement report for a study.
    Agree(StudySource),
    /// Serve the annotation API.
    Serve {
        #[command(flatten)]
        source: StudySource,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Static UI bundle served for non-API paths.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Assign tasks and write a new study log; prints one login code per annotator.
    Create(CreateStudy),
    /// Dump current annotations as JSONL.
    Export {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CreateStudy {
    #[arg(long)]
    pub config: PathBuf,
    /// Generator whose answers are annotated.
    #[arg(long)]
    pub generator: String,
    /// Comma-separated annotator ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub annotators: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub questions: usize,
    #[arg(long, default_value_t = 2)]
    pub redundancy: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudySource {
    #[arg(long)]
    pub log: PathBuf,
    /// Report rows used for the human/automated comparison.
    #[arg(long, requires_all = ["generator", "evaluator"])]
    pub rows: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub evaluator: Option<String>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FATAL
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cli.command {
        Command::Generate(c) => generate(&c.config, out),
        Command::Evaluate(c) => evaluate(&c.config, out),
        Command::Report { dir, csv } => report(&dir, csv, out),
        Command::Study(StudyCommand::Create(args)) => create_study(&args, out),
        Command::Study(StudyCommand::Export { log }) => {
            out.write_all(&AnnotationStore::open(&log)?.export()?)?;
            Ok(EXIT_OK)
        }
        Command::Agree(src) => {
            let store = AnnotationStore::open(&src.log)?;
            let report = annotation::agreement_report(&store.tasks(), &store.annotations(), &automated(&src)?);
            serde_json::to_writer_pretty(&mut *out, &report)?;
            writeln!(out)?;
            Ok(EXIT_OK)
        }
        Command::Serve { source, addr, assets } => serve(&source, &addr, assets),
    }
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn generate(config: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let rt = Runtime::prepare(load_config(config)?)?;
    let answers = pipeline::generate_answers(&rt, &rt.questions()?);
    let path = rt.config.output_dir.join(pipeline::ANSWERS_FILE);
    fs::create_dir_all(&rt.config.output_dir)?;
    fs::write(&path, pipeline::to_jsonl(&answers)?).with_context(|| format!("writing {}", path.display()))?;
    let failed = answers.iter().filter(|a| a.error.is_some()).count();
    writeln!(out, "{} answers written to {} ({failed} failed, {} provider calls)", answers.len(), path.display(), rt.total_calls())?;
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn evaluate(config: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let rt = Runtime::prepare(load_config(config)?)?;
    let answers_path = rt.config.output_dir.join(pipeline::ANSWERS_FILE);
    let answers: Vec<AnswerRow> = if answers_path.exists() {
        pipeline::read_jsonl(&answers_path)?
    } else {
        pipeline::generate_answers(&rt, &rt.questions()?)
    };
    let mut rows: Vec<ReportRow> = pipeline::evaluate(&rt, &answers);
    rows.splice(0..0, answers.into_iter().map(ReportRow::Answer));
    let report = MetricReport::from_rows(rows);
    pipeline::write_report(&report, &rt.config.output_dir, rt.config.csv)?;
    summarize(&report, out)?;
    writeln!(out, "report written to {} ({} provider calls)", rt.config.output_dir.display(), rt.total_calls())?;
    Ok(report.exit_code())
}

fn report(dir: &Path, csv: bool, out: &mut dyn Write) -> anyhow::Result<i32> {
    let report = pipeline::read_report(dir)?;
    pipeline::write_report(&report, dir, csv)?;
    summarize(&report, out)?;
    Ok(report.exit_code())
}

fn summarize(report: &MetricReport, out: &mut dyn Write) -> anyhow::Result<()> {
    for pair in &report.aggregate.pairs {
        writeln!(out, "{} / {} ({} rows)", pair.generator, pair.evaluator, pair.rows)?;
        for (name, m) in &pair.metrics {
            match m.mean {
                Some(mean) => writeln!(out, "  {name:<18} {mean:>9.4} ± {:<8.4} n={} nulls={} errors={}", m.std.unwrap_or(0.0), m.n, m.nulls, m.errors)?,
                None => writeln!(out, "  {name:<18} {:>9} n=0 nulls={} errors={}", "-", m.nulls, m.errors)?,
            }
        }
    }
    Ok(())
}

fn create_study(args: &CreateStudy, out: &mut dyn Write) -> anyhow::Result<i32> {
    let signer = auth::Signer::from_env()?;
    let cfg = load_config(&args.config)?;
    let rows_path = cfg.output_dir.join(pipeline::ROWS_FILE);
    let answers: Vec<AnswerRow> = if rows_path.exists() {
        pipeline::read_jsonl::<ReportRow>(&rows_path)?
            .into_iter()
            .filter_map(|r| match r {
                ReportRow::Answer(a) => Some(a),
                _ => None,
            })
            .collect()
    } else {
        pipeline::read_jsonl(&cfg.output_dir.join(pipeline::ANSWERS_FILE))
            .context("no answers found; run `hazeval generate` first")?
    };
    let docs: BTreeMap<String, String> = corpus::load_corpus(&cfg.corpus)?.into_iter().map(|d| (d.doc_id, d.body)).collect();
    let usable: Vec<&AnswerRow> = answers.iter().filter(|a| a.generator == args.generator && a.error.is_none()).take(args.questions).collect();
    if usable.len() < args.questions {
        bail!("only {} usable answers from generator `{}`, {} requested", usable.len(), args.generator, args.questions);
    }
    let payloads: BTreeMap<String, TaskPayload> = usable
        .iter()
        .map(|a| Ok((a.data.id.clone(), TaskPayload::from_row(&a.data, |id| docs.get(id).cloned())?)))
        .collect::<anyhow::Result<_>>()?;
    let qids: Vec<String> = payloads.keys().cloned().collect();
    let mut tasks = annotation::assign_tasks(&qids, &args.annotators, args.redundancy, args.seed)?;
    for t in &mut tasks {
        t.payload = payloads.get(&t.question_id).cloned();
    }
    AnnotationStore::create(&args.log, &tasks)?;
    for a in &args.annotators {
        let n = tasks.iter().filter(|t| &t.annotator_id == a).count();
        writeln!(out, "{}", serde_json::json!({ "annotator_id": a, "study_code": signer.study_code(a), "tasks": n }))?;
    }
    Ok(EXIT_OK)
}

fn automated(src: &StudySource) -> anyhow::Result<BTreeMap<String, AutomatedScores>> {
    let Some(path) = &src.rows else {
        return Ok(BTreeMap::new());
    };
    let rows: Vec<ReportRow> = pipeline::read_jsonl(path)?;
    let generator = src.generator.as_deref().unwrap_or_default();
    let evaluator = src.evaluator.as_deref().unwrap_or_default();
    let scores = annotation::automated_from_rows(&rows, generator, evaluator);
    if scores.is_empty() {
        bail!("no metric rows for generator `{generator}` and evaluator `{evaluator}` in {}", path.display());
    }
    Ok(scores)
}

fn serve(src: &StudySource, addr: &str, assets: Option<PathBuf>) -> anyhow::Result<i32> {
    let signer = auth::Signer::from_env()?;
    let store = AnnotationStore::open(&src.log)?;
    let state = server::AppState::new(store, signer, automated(src)?);
    let app = server::router(state, assets);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(EXIT_OK)
}
