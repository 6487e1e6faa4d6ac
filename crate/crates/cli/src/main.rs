//! `causal-cog` command-line entry point.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 backend failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use causal_cog::harness::{canonical_json, diagnose, evaluate, load_dataset, EvalReport, Sample};
use causal_cog::pipeline::{Engine, Method, Outcome};
use causal_cog::prompt::ImageRef;
use causal_cog::{open_backend, Backend, Error, OptionSet, PipelineConfig, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{FileConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "causal-cog",
    version,
    about = "Causal-CoG decoding for multiple-choice VQA"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer a single question.
    Ask(AskArgs),
    /// Evaluate a JSONL dataset and write a report.
    Eval(EvalArgs),
    /// Compare a report against a baseline report (W2R / R2W).
    Diagnose(DiagnoseArgs),
    /// Check backend health and forced-completion scoring.
    Probe(ProbeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Direct,
    NaiveCog,
    Ensemble,
    OneShot,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyFlag {
    TieC,
    Likelihood,
    Unweighted,
}

impl StrategyFlag {
    fn name(self) -> &'static str {
        match self {
            StrategyFlag::TieC => "tie-c",
            StrategyFlag::Likelihood => "likelihood",
            StrategyFlag::Unweighted => "unweighted",
        }
    }
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mock, http_shim or openai_compatible.
    #[arg(long)]
    backend_kind: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Fixture tables for the mock backend.
    #[arg(long)]
    mock_tables: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    n_candidates: Option<usize>,
    /// Candidates kept by the top-k TIE^c mask.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyFlag>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Top-k truncation for context sampling.
    #[arg(long)]
    top_k_sampling: Option<u32>,
    #[arg(long)]
    system_prompt_index: Option<usize>,
    /// Base seed; candidate i samples with seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long)]
    no_cache: bool,
    /// Run a baseline instead of Causal-CoG.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Record wall-clock timings (reports are then no longer reproducible).
    #[arg(long)]
    timing: bool,
    /// Print machine-readable JSON to stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AskArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Image path or `base64:<payload>`.
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    question: Option<String>,
    #[arg(long, num_args = 1..)]
    options: Vec<String>,
    /// JSON file holding one sample in dataset format.
    #[arg(long, conflicts_with_all = ["image", "question", "options"])]
    sample_file: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Report under study, e.g. Causal-CoG.
    report: PathBuf,
    /// Baseline report, e.g. direct decoding.
    baseline: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    json: bool,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    path.map_or_else(|| Ok(FileConfig::default()), FileConfig::load)
}

fn overrides(b: &BackendArgs, r: Option<&RunArgs>) -> Overrides {
    let mut o = Overrides {
        backend_kind: b.backend_kind.clone(),
        endpoint: b.endpoint.clone(),
        model: b.model.clone(),
        mock_tables: b.mock_tables.clone(),
        ..Default::default()
    };
    if let Some(r) = r {
        o.n_candidates = r.n_candidates;
        o.k = r.k;
        o.strategy = r.strategy.map(|s| s.name().to_string());
        o.temperature = r.temperature;
        o.top_k_sampling = r.top_k_sampling;
        o.system_prompt_index = r.system_prompt_index;
        o.seed = r.seed;
        o.max_parallel = r.max_parallel;
        o.no_cache = r.no_cache;
        o.timing = r.timing;
    }
    o
}

struct Setup {
    file: FileConfig,
    engine: Engine,
    method: Method,
    descriptor: causal_cog::BackendDescriptor,
}

fn setup(run: &RunArgs) -> Result<Setup> {
    let file = load_file_config(run.backend.config.as_deref())?;
    let o = overrides(&run.backend, Some(run));
    let descriptor = config::backend_descriptor(&file, &o)?;
    let mut pipeline: PipelineConfig = config::pipeline_config(&file, &o)?;
    let method = match run.baseline {
        None => Method::CausalCog,
        Some(Baseline::NaiveCog) => {
            pipeline = pipeline.naive();
            Method::CausalCog
        }
        Some(Baseline::Direct) => Method::Direct,
        Some(Baseline::Ensemble) => Method::Ensemble,
        Some(Baseline::OneShot) => Method::OneShot,
    };
    let backend: Arc<dyn Backend> = open_backend(&descriptor)?;
    let model = backend.probe()?;
    log::info!("backend {} ready (model {model})", backend.id());
    let engine = Engine::with_library(backend, pipeline, config::prompt_library(&file)?)?;
    Ok(Setup {
        file,
        engine,
        method,
        descriptor,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn read_sample_file(path: &Path) -> Result<Sample> {
    let mut samples = load_dataset(path)?;
    match samples.len() {
        1 => Ok(samples.remove(0)),
        n => Err(Error::validation(format!(
            "{} must hold exactly one sample (one JSON line), found {n}",
            path.display()
        ))),
    }
}

fn ask_sample(args: &AskArgs) -> Result<Sample> {
    if let Some(path) = &args.sample_file {
        return read_sample_file(path);
    }
    let question = args
        .question
        .clone()
        .ok_or_else(|| Error::validation("ask needs --question (or --sample-file)"))?;
    let image = args
        .image
        .as_deref()
        .map(|raw| ImageRef::parse(raw, None))
        .transpose()?;
    let sample = Sample {
        id: "ask".into(),
        image,
        question,
        options: OptionSet::new(args.options.clone())?,
        gold_index: None,
        metadata: Default::default(),
    };
    sample.validate()?;
    Ok(sample)
}

fn cmd_ask(args: AskArgs) -> Result<()> {
    let sample = ask_sample(&args)?;
    let s = setup(&args.run)?;
    let outcome = s.engine.run(&sample, s.method)?;
    let option = &sample.options.as_slice()[outcome.final_option()];
    if args.run.json {
        let text = match &outcome {
            Outcome::CausalCog(o) => canonical_json(o)?,
            Outcome::Baseline(o) => canonical_json(o)?,
        };
        print!("{text}");
        return Ok(());
    }
    match &outcome {
        Outcome::CausalCog(o) => {
            let effects = o.effects.as_ref().map_or_else(String::new, |e| {
                format!(" nde={:.6} tie={:.6}", e.nde, e.tie)
            });
            println!(
                "answer={option} index={} mode={}{effects}",
                o.final_option,
                serde_json::to_value(o.mode_used)?
                    .as_str()
                    .unwrap_or_default()
            );
        }
        Outcome::Baseline(o) => println!("answer={option} index={}", o.final_option),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let s = setup(&args.run)?;
    let dataset = args
        .dataset
        .clone()
        .or_else(|| s.file.dataset())
        .ok_or_else(|| Error::validation("eval needs --dataset"))?;
    let samples = load_dataset(&dataset)?;
    let report = evaluate(&samples, &s.engine, s.method, Some(&s.descriptor));
    let text = report.to_canonical_json()?;
    if let Some(out) = &args.out {
        write_file(out, &text)?;
    }
    if args.run.json {
        print!("{text}");
    } else {
        println!("{}", report.summary_line());
    }
    if report.n_errors > 0 {
        log::warn!("{} of {} samples failed", report.n_errors, report.n_samples);
    }
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let report = EvalReport::from_file(&args.report)?;
    let baseline = EvalReport::from_file(&args.baseline)?;
    let diag = diagnose(&report, &baseline)?;
    if args.json {
        print!("{}", canonical_json(&diag)?);
    } else {
        println!("{} vs {}", diag.report_method, diag.baseline_method);
        print!("{}", diag.counts.table());
        if !diag.skipped.is_empty() {
            println!("skipped {} samples", diag.skipped.len());
        }
    }
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let file = load_file_config(args.backend.config.as_deref())?;
    let descriptor = config::backend_descriptor(&file, &overrides(&args.backend, None))?;
    let backend = open_backend(&descriptor)?;
    let model = backend.probe()?;
    if args.json {
        let v = serde_json::json!({"backend": backend.id(), "model": model, "status": "ok"});
        print!("{}", canonical_json(&v)?);
    } else {
        println!("ok backend={} model={model}", backend.id());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_backend() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ask(a) => cmd_ask(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Probe(a) => cmd_probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
