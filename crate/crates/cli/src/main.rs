//! `metaforge`: one subcommand per pipeline stage.
//!
//! Stage commands (`chunk`, `select`, `extract`, `train`) read a JSON run
//! config; the flags below override its fields. Commands that work on a
//! finished run (`eval`, `grade`, `report`) read the run directory instead
//! and write into it unless `--out` names another directory. The LLM key is
//! only ever read from `METAFORGE_LLM_KEY`.

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use metaforge_core::config::{RunConfig, Strategy};
use metaforge_core::eval::cuad::convert_cuad;
use metaforge_core::eval::GroundTruth;
use metaforge_core::llm::PromptMode;
use metaforge_core::pipeline::{
    build_client, file_stem, grade_run, run_eval, run_report, write_grades, write_json, Inputs, Pipeline, ResultRecord,
    RunArtifacts,
};

#[derive(Parser)]
#[command(name = "metaforge", version, about = "Template-driven metadata extraction")]
struct Cli {
    /// JSON run config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Context budget in tokens.
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    tool_use: Option<bool>,
    #[arg(long, global = true)]
    max_retries: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Plain,
    Cot,
}

#[derive(Subcommand)]
enum Command {
    /// Print every chunk as one JSON line.
    Chunk {
        /// Only this document.
        #[arg(long)]
        doc: Option<String>,
    },
    /// Print each document's scores, rankings and packed context as JSON lines.
    Select {
        #[arg(long)]
        doc: Option<String>,
    },
    /// Run extraction (and grading, if configured) over the corpus.
    Extract,
    /// Score a run against ground truth and print its summary row.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the run's configured ground truth.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train the chunk reranker on a seeded document split.
    Train,
    /// Grade a finished run with the configured client.
    Grade {
        #[arg(long)]
        run: PathBuf,
        /// Also write the agent results with the grader's corrections adopted.
        #[arg(long)]
        adopt_corrections: bool,
    },
    /// Monitoring figures and, given truth, grader agreement rates.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Convert a CUAD release file into documents, template, truth and a config.
    ConvertCuad { input: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain on one line, skipping causes whose text the outer
/// message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !line.contains(&text) {
            if !line.is_empty() {
                line.push_str(": ");
            }
            line.push_str(&text);
        }
    }
    line
}

impl Cli {
    fn load_config(&self) -> Result<RunConfig> {
        let path = self.config.as_deref().context("this command needs --config")?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(b) = self.budget {
            cfg.budget_tokens = b;
        }
        if let Some(m) = self.mode {
            cfg.extraction.mode = match m {
                Mode::Plain => PromptMode::Plain,
                Mode::Cot => PromptMode::Cot,
            };
        }
        if let Some(t) = self.tool_use {
            cfg.extraction.tool_use = t;
        }
        if let Some(r) = self.max_retries {
            cfg.extraction.max_retries = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_or<'a>(&'a self, run: &'a Path) -> &'a Path {
        self.out.as_deref().unwrap_or(run)
    }
}

fn json_lines<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = BufWriter::new(io::stdout().lock());
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn load_truth(explicit: Option<&Path>, run: &RunArtifacts) -> Result<Option<GroundTruth>> {
    let path = explicit.or(run.config.ground_truth.as_deref());
    Ok(path.map(GroundTruth::load).transpose()?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Chunk { doc } | Command::Select { doc } => {
            let pipeline = Pipeline::load(cli.load_config()?)?;
            let docs: Vec<_> = pipeline
                .inputs
                .corpus
                .documents
                .iter()
                .filter(|d| doc.as_ref().is_none_or(|id| &d.id == id))
                .collect();
            if let (Some(id), true) = (doc, docs.is_empty()) {
                bail!("no document {id:?} in the corpus");
            }
            for d in docs {
                if matches!(cli.command, Command::Chunk { .. }) {
                    json_lines(pipeline.chunks(d)?)?;
                } else {
                    json_lines([pipeline.select(d)?])?;
                }
            }
        }
        Command::Extract => {
            let cfg = cli.load_config()?;
            let pipeline = Pipeline::load(cfg.clone())?;
            let client = build_client(&cfg, &pipeline.inputs)?;
            let run = pipeline.run_extract(client.as_ref())?;
            println!("{} documents extracted into {}", run.info.documents, run.out_dir.display());
            if !run.succeeded() {
                for f in &run.failures {
                    eprintln!("{} failed at {}: {}", f.doc_id, f.stage, f.error);
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval { run, truth } => {
            let art = RunArtifacts::load(run)?;
            let truth = load_truth(truth.as_deref(), &art)?.context("no ground truth: pass --truth")?;
            let exec = art.config.execution();
            let ev = run_eval(&art, &truth, exec)?;
            ev.write(cli.out_or(run))?;
            for d in &ev.missing_truth {
                eprintln!("no ground truth for {d}");
            }
            for d in &ev.missing_results {
                eprintln!("no result for {d}");
            }
            println!("{}", ev.row);
        }
        Command::Train => {
            let cfg = cli.load_config()?;
            let trained = Pipeline::load(cfg.clone())?.run_train()?;
            let m = &trained.metrics;
            let auc = m.auc.map_or_else(|| "n/a".to_owned(), |a| format!("{a:.4}"));
            println!(
                "trained on {} documents, tested on {}: auc {auc}, accuracy {:.4}; model in {}",
                m.train_documents.len(),
                m.test_documents.len(),
                m.accuracy,
                cfg.out_dir.display()
            );
        }
        Command::Grade { run, adopt_corrections } => {
            let mut art = RunArtifacts::load(run)?;
            let inputs = Inputs::load(&art.config)?;
            let client = build_client(&art.config, &inputs)?;
            art.grades = grade_run(&art, client.as_ref(), art.config.execution())?;
            let out = cli.out_or(run);
            write_grades(&art.grades, out)?;
            if *adopt_corrections {
                for (doc, g) in &art.grades {
                    let record = ResultRecord { doc_id: doc.clone(), result: g.apply_corrections(&art.results[doc]) };
                    write_json(&out.join("corrected").join(format!("{}.json", file_stem(doc))), &record)?;
                }
            }
            println!("graded {} documents", art.grades.len());
        }
        Command::Report { run, truth } => {
            let art = RunArtifacts::load(run)?;
            let truth = load_truth(truth.as_deref(), &art)?;
            let report = run_report(&art, truth.as_ref())?;
            report.write(cli.out_or(run))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::ConvertCuad { input } => {
            let out = cli.out.as_deref().context("convert-cuad needs --out")?;
            convert(input, out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn convert(input: &Path, out: &Path) -> Result<()> {
    let raw = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let c = convert_cuad(&raw).with_context(|| format!("parsing {}", input.display()))?;
    let docs_dir = out.join("docs");
    std::fs::create_dir_all(&docs_dir).with_context(|| format!("creating {}", docs_dir.display()))?;
    let mut manifest = Vec::new();
    for d in &c.documents {
        let rel = format!("docs/{}.txt", file_stem(&d.id));
        std::fs::write(out.join(&rel), &d.text).with_context(|| format!("writing {rel}"))?;
        manifest.push(serde_json::json!({"id": d.id, "path": rel, "conversion_tag": d.conversion_tag}));
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    std::fs::write(out.join("template.json"), c.template.to_json())?;
    write_json(&out.join("ground_truth.json"), &c.truth)?;
    write_json(
        &out.join("config.json"),
        &serde_json::json!({
            "manifest": "manifest.json",
            "template": "template.json",
            "ground_truth": "ground_truth.json",
            "out_dir": "run",
        }),
    )?;
    println!("converted {} contracts into {}", c.documents.len(), out.display());
    Ok(())
}
