mod settings;
mod workspace;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use kfocus::domain::{load_dataset, Split};
use kfocus::evaluation::{parse_sweep_spec, write_ablation, write_sweep, AblationRow, ReportHeader, SweepPoint, ABLATION_ROWS};
use kfocus::fixture::Fixture;
use kfocus::gateway::Gateway;
use kfocus::pipeline::Pipeline;
use kfocus::retrieval::{corpus_digest, load_corpus, KnowledgeIndex};
use kfocus::{Error, ErrorClass};
use tracing_subscriber::EnvFilter;

use settings::{Overrides, Settings};
use workspace::{atomic_write, build_gateway, required, Inputs, RunDir};

#[derive(Parser)]
#[command(name = "kfocus", version, about = "Knowledge-focused visual question answering")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset and corpus files and print their digests
    Ingest,
    /// Embed the corpus and write the knowledge index
    Index,
    /// Answer every eval sample; writes traces.jsonl and answers.jsonl
    Run,
    /// Like `run`, then score the answers into report.jsonl
    Eval,
    /// Evaluate the four stage combinations; writes ablation.jsonl
    Ablate,
    /// Evaluate a grid over one parameter; writes sweep-<param>.jsonl
    Sweep {
        /// `r=5,10,20`, `h=1,3,7` or `tau=0.5,0.8`
        #[arg(long = "sweep")]
        spec: String,
    },
    /// Write the synthetic offline fixture (data, mock script, index, config) to a directory
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration and its digest
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Index => "index",
            Command::Run => "run",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Sweep { .. } => "sweep",
            Command::Fixture { .. } => "fixture",
            Command::Config => "config",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::class);
    match class {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Backend) => 4,
        Some(ErrorClass::Integrity) => 5,
        None => 1,
    }
}

/// The error chain joined with ": ", skipping causes already spelled out by their parent.
fn render_chain(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("KFOCUS_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Command::Fixture { out } = &cli.command {
        return write_fixture(out);
    }
    let settings = cli.overrides.resolve()?;
    match &cli.command {
        Command::Config => {
            print!("{}", settings.to_toml());
            println!("# settings digest: {}", settings.digest());
            Ok(())
        }
        Command::Ingest => ingest(&settings),
        Command::Index => build_index(&settings),
        cmd => evaluate(cmd, &settings),
    }
}

fn ingest(settings: &Settings) -> anyhow::Result<()> {
    let samples = load_dataset(required(&settings.paths.dataset, "dataset")?)?;
    let eval = samples.iter().filter(|s| s.split == Split::Eval).count();
    println!("dataset: {} samples ({} eval, {} train_pool)", samples.len(), eval, samples.len() - eval);
    if let Some(path) = &settings.paths.corpus {
        let docs = load_corpus(path)?;
        println!("corpus: {} documents, digest {}", docs.len(), corpus_digest(&docs));
    }
    Ok(())
}

fn build_index(settings: &Settings) -> anyhow::Result<()> {
    let corpus = required(&settings.paths.corpus, "corpus")?;
    let out = required(&settings.paths.index, "index")?;
    let gateway = build_gateway(settings)?;
    let index = KnowledgeIndex::build(load_corpus(corpus)?, &gateway)?;
    index.save(out)?;
    println!(
        "index: {} documents, dim {}, corpus digest {} -> {}",
        index.len(),
        index.dim(),
        index.corpus_digest(),
        out.display()
    );
    Ok(())
}

fn evaluate(cmd: &Command, settings: &Settings) -> anyhow::Result<()> {
    let run_root = required(&settings.paths.run_dir, "run-dir")?;
    let gateway = build_gateway(settings)?;
    let inputs = Inputs::load(settings)?;
    // The manifest goes down before any model call.
    let run = RunDir::open(run_root, cmd.name(), settings, &inputs, &gateway)?;
    let selector = inputs.selector(settings, &gateway)?;
    let pipeline = Pipeline {
        gateway: &gateway,
        templates: &inputs.templates,
        index: inputs.index.as_ref(),
        selector: &selector,
        config: settings.pipeline.clone(),
        strict: settings.run.strict,
    };
    let header = |p: &Pipeline<'_>| ReportHeader {
        config_digest: p.config_digest(),
        template_versions: p.templates.versions(),
        toggles: p.config.toggles,
        identity: p.identity(),
    };

    match cmd {
        Command::Run | Command::Eval => {
            let eval = run.evaluate(&pipeline, &inputs.samples, header(&pipeline))?;
            run.write_outputs("", &eval)?;
            if matches!(cmd, Command::Eval) {
                atomic_write(&run.path("report.jsonl"), &eval.report.to_jsonl())?;
                let s = &eval.report.summary;
                println!(
                    "accuracy {} over {} samples ({} failed), knowledge used {}",
                    fmt_opt(s.mean_accuracy),
                    s.scored,
                    s.failed,
                    fmt_opt(s.knowledge_used_fraction)
                );
            } else {
                println!("answered {} samples ({} failed)", eval.traces.len(), eval.report.failures.len());
            }
        }
        Command::Ablate => {
            let mut rows = Vec::new();
            for &(name, toggles) in ABLATION_ROWS.iter() {
                let mut config = pipeline.config.clone();
                config.toggles = toggles;
                let p = pipeline.with_config(config);
                let evaluation = run.evaluate(&p, &inputs.samples, header(&p))?;
                println!("{name:<12} {}", fmt_opt(evaluation.report.summary.mean_accuracy));
                rows.push(AblationRow {
                    name,
                    toggles,
                    evaluation,
                });
            }
            let mut buf = Vec::new();
            write_ablation(&rows, &mut buf)?;
            atomic_write(&run.path("ablation.jsonl"), &buf)?;
        }
        Command::Sweep { spec } => {
            let (param, values) = parse_sweep_spec(spec)?;
            let mut points = Vec::new();
            for &value in &values {
                let p = pipeline.with_config(kfocus::evaluation::apply(&pipeline.config, param, value)?);
                if p.config.toggles.knowledge && p.index.is_none() {
                    return Err(Error::Config("sweep point needs an index".into()).into());
                }
                let evaluation = run.evaluate(&p, &inputs.samples, header(&p))?;
                println!("{param}={value:<8} {}", fmt_opt(evaluation.report.summary.mean_accuracy));
                points.push(SweepPoint { value, evaluation });
            }
            let mut buf = Vec::new();
            write_sweep(&points, param, &pipeline.config_digest(), &inputs.templates.versions(), &mut buf)?;
            atomic_write(&run.path(&format!("sweep-{param}.jsonl")), &buf)?;
        }
        _ => unreachable!("handled in dispatch"),
    }
    let stats = gateway.stats();
    tracing::info!(backend_calls = stats.backend_calls, cache_hits = stats.cache_hits, "done");
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Fixture files plus `index.kfi` and a complete `config.toml` with absolute paths.
fn write_fixture(out: &Path) -> anyhow::Result<()> {
    let fixture = Fixture::build();
    fixture.write_to(out)?;
    let out = out
        .canonicalize()
        .with_context(|| format!("resolving {}", out.display()))?;
    let gateway: Gateway = fixture.gateway().build();
    fixture.index(&gateway)?.save(out.join("index.kfi"))?;

    let mut settings = Settings {
        pipeline: fixture.config.clone(),
        ..Settings::default()
    };
    settings.paths.dataset = Some(out.join("dataset.jsonl"));
    settings.paths.corpus = Some(out.join("corpus.jsonl"));
    settings.paths.index = Some(out.join("index.kfi"));
    settings.paths.neighbors = Some(out.join("neighbors.jsonl"));
    settings.backends.mock_script = Some(out.join("mock.jsonl"));
    atomic_write(&out.join("config.toml"), settings.to_toml().as_bytes())?;
    println!("fixture written to {}", out.display());
    Ok(())
}
