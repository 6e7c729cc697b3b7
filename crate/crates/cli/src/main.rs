//! `cmind`: point it at a C source tree and a bug report, get a hypothesis.

mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmind_core::analyzer::{
    build_callgraph, enumerate_call_chains, render_call_chain, AnalysisError, Direction,
    DEFAULT_MAX_CHAINS, DEFAULT_MAX_DEPTH,
};
use cmind_core::corpus::{extract_functions, load_source_tree, CorpusError};
use cmind_core::eval::{run_corpus, EvalError, EvalOptions};
use cmind_core::llm::{BackendKind, LlmConfig, LlmError, LlmGateway};
use cmind_core::pipeline::{run, PipelineConfig, RunStatus};
use cmind_core::prompts::BugReport;
use cmind_service::{ServiceConfig, ServiceError};

use crate::config::{ConfigError, FileConfig};

const EXIT_FAILED: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_IO: u8 = 74;
const EXIT_ADDR_IN_USE: u8 = 75;

#[derive(Parser)]
#[command(name = "cmind", version, about = "Localize C bugs from a bug report and the source tree")]
struct Cli {
    /// TOML config file [default: $XDG_CONFIG_HOME/cmind/config.toml]
    #[arg(long, global = true, env = "CMIND_CONFIG")]
    config: Option<PathBuf>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the localization pipeline and print the summary.
    Localize(LocalizeArgs),
    /// Serve the HTTP job API.
    Serve(ServeArgs),
    /// Evaluate a corpus described by manifest.jsonl.
    Eval(EvalArgs),
    /// Print the call graph, or call chains from a root.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct LlmArgs {
    /// Replay model replies from a transcript instead of calling a model.
    #[arg(long, conflicts_with = "record")]
    transcript: Option<PathBuf>,
    /// Call the live model and record every exchange to this file.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, env = "CMIND_MODEL")]
    model: Option<String>,
    /// OpenAI-compatible API base URL.
    #[arg(long, env = "CMIND_ENDPOINT")]
    endpoint: Option<String>,
    /// Name of the environment variable that holds the API key.
    #[arg(long, env = "CMIND_API_KEY_ENV")]
    api_key_env: Option<String>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

impl LlmArgs {
    fn llm_config(&self, file: &FileConfig) -> LlmConfig {
        let mut cfg = file.llm.clone();
        if let Some(m) = &self.model {
            cfg.model_name = m.clone();
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
        if let Some(k) = &self.api_key_env {
            cfg.api_key_ref = Some(k.clone());
        }
        if let Some(t) = &self.transcript {
            cfg.backend = BackendKind::Scripted;
            cfg.transcript = Some(t.clone());
        } else if let Some(r) = &self.record {
            cfg.backend = BackendKind::Recording;
            cfg.transcript = Some(r.clone());
        }
        cfg
    }

    fn pipeline_config(&self, file: &FileConfig) -> PipelineConfig {
        let mut cfg = file.pipeline.clone();
        if let Some(n) = self.max_iterations {
            cfg.max_iterations = n;
        }
        cfg
    }
}

#[derive(Args)]
struct LocalizeArgs {
    /// Source folder or archive (.zip, .tar, .tar.gz).
    #[arg(long)]
    src: PathBuf,
    /// Text file holding the bug report.
    #[arg(long)]
    report: PathBuf,
    /// Write the full result JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CMIND_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[arg(long, env = "CMIND_LISTEN")]
    listen: Option<SocketAddr>,
    /// Concurrent pipeline runs.
    #[arg(long, env = "CMIND_WORKERS")]
    workers: Option<usize>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory containing manifest.jsonl.
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the report files [default: the corpus directory].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model label for the table [default: the model name].
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Also write per-case hypotheses for manual review.
    #[arg(long)]
    review: bool,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    src: PathBuf,
    /// Print call chains instead of the edge list.
    #[arg(long, requires = "root")]
    chains: bool,
    /// Function the chains start from (repeatable).
    #[arg(long)]
    root: Vec<String>,
    /// Maximum functions per chain.
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_CHAINS)]
    max_chains: usize,
    /// Follow callers instead of callees.
    #[arg(long)]
    backward: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let code = match e {
            CorpusError::PathNotFound(_) | CorpusError::Io { .. } => EXIT_IO,
            _ => EXIT_DATA,
        };
        Failure::new(code, format!("{}: {e}", e.kind()))
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        let code = match e {
            LlmError::Io { .. } => EXIT_IO,
            LlmError::TranscriptInvalid { .. } => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        Failure::new(code, format!("{}: {e}", e.kind()))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Missing(p) => Failure::new(EXIT_IO, format!("config file {} not found", p.display())),
            ConfigError::Io(p, e) => Failure::new(EXIT_IO, format!("cannot read {}: {e}", p.display())),
            ConfigError::Parse(p, e) => Failure::new(EXIT_USAGE, format!("invalid config {}: {e}", p.display())),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

fn validated(pipeline: PipelineConfig) -> Result<PipelineConfig, Failure> {
    pipeline
        .validate()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("ConfigInvalid: {e}")))?;
    Ok(pipeline)
}

fn localize(args: &LocalizeArgs, file: &FileConfig) -> Outcome {
    let text = read_text(&args.report)?;
    let report = BugReport::new(text).map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", e.kind())))?;
    let tree = load_source_tree(&args.src)?;
    let pipeline = validated(args.llm.pipeline_config(file))?;
    let gateway = LlmGateway::from_config(&args.llm.llm_config(file))?;

    let result = run(&report, &tree, &pipeline, &gateway);
    if let Some(out) = &args.out {
        write_text(out, &result.to_json())?;
    }
    for w in &result.warnings {
        log::warn!("{w}");
    }
    match result.status {
        RunStatus::Completed => {
            println!("{}", result.summary);
            Ok(0)
        }
        RunStatus::Inconclusive => {
            eprintln!("cmind: no conclusion within {} iterations", result.iterations);
            println!("{}", result.summary);
            Ok(EXIT_INCONCLUSIVE)
        }
        RunStatus::Failed => {
            eprintln!("cmind: {}", result.failure_reason.as_deref().unwrap_or("failed"));
            Ok(EXIT_FAILED)
        }
    }
}

fn serve(args: &ServeArgs, file: &FileConfig) -> Outcome {
    let defaults = ServiceConfig::new("cmind-data", LlmConfig::default());
    let section = &file.service;
    let config = ServiceConfig {
        data_root: args
            .data_root
            .clone()
            .or_else(|| section.data_root.clone())
            .unwrap_or(defaults.data_root),
        listen: args.listen.or(section.listen).unwrap_or(defaults.listen),
        workers: args.workers.or(section.workers).unwrap_or(defaults.workers),
        max_upload_bytes: section.max_upload_bytes.unwrap_or(defaults.max_upload_bytes),
        pipeline: validated(args.llm.pipeline_config(file))?,
        llm: args.llm.llm_config(file),
    };
    config.llm.validate()?;
    if config.workers == 0 {
        return Err(Failure::new(EXIT_USAGE, "workers must be at least 1"));
    }

    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_IO, format!("runtime: {e}")))?;
    rt.block_on(cmind_service::serve(&config)).map_err(|e| {
        let code = match e {
            ServiceError::AddressInUse(_) => EXIT_ADDR_IN_USE,
            ServiceError::Io { .. } => EXIT_IO,
            _ => EXIT_FAILED,
        };
        Failure::new(code, format!("{}: {e}", e.kind()))
    })?;
    Ok(0)
}

fn eval(args: &EvalArgs, file: &FileConfig) -> Outcome {
    let llm = args.llm.llm_config(file);
    let opts = EvalOptions {
        model_label: args.label.clone().unwrap_or_else(|| llm.model_name.clone()),
        pipeline: validated(args.llm.pipeline_config(file))?,
        llm,
        workers: args.workers.max(1),
    };
    let eval_err = |e: EvalError| {
        let code = match e {
            EvalError::Io { .. } => EXIT_IO,
            _ => EXIT_DATA,
        };
        Failure::new(code, format!("{}: {e}", e.kind()))
    };
    let report = run_corpus(&args.corpus, &opts).map_err(eval_err)?;
    let out = args.out.as_deref().unwrap_or(&args.corpus);
    std::fs::create_dir_all(out).map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", out.display())))?;
    report.write_to(out, args.review).map_err(eval_err)?;
    print!("{}", report.render_table());
    Ok(0)
}

fn analyze(args: &AnalyzeArgs) -> Outcome {
    let tree = load_source_tree(&args.src)?;
    let index = extract_functions(&tree);
    let graph = build_callgraph(&index);
    if !args.chains {
        print!("{}", graph.render_edge_list());
        return Ok(0);
    }
    let direction = if args.backward {
        Direction::Backward
    } else {
        Direction::Forward
    };
    let found = enumerate_call_chains(&graph, &args.root, direction, args.depth, args.max_chains).map_err(|e| {
        let code = match e {
            AnalysisError::UnknownRoot(_) => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        Failure::new(code, format!("{}: {e}", e.kind()))
    })?;
    for chain in &found.chains {
        println!("{}", render_call_chain(chain));
    }
    if found.truncated {
        eprintln!("cmind: output capped at {} chains", args.max_chains);
    }
    Ok(0)
}

fn dispatch(cli: &Cli) -> Outcome {
    let file = config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Localize(a) => localize(a, &file),
        Command::Serve(a) => serve(a, &file),
        Command::Eval(a) => eval(a, &file),
        Command::Analyze(a) => analyze(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("cmind: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
