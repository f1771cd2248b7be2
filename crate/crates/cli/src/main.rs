//! `mchr`: run annotation, serve the review API, report, simulate and
//! curate the taxonomy.
//!
//! Exit codes: 0 success, 1 incomplete report or internal failure, 2
//! configuration error, 3 adapter failure under the abort policy, 4 I/O
//! error, 5 port unavailable.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mchr_core::gateway::{ConfigError, TaskSpec};
use mchr_core::ingest::IngestError;
use mchr_core::metrics::{self, MetricsError};
use mchr_core::pipeline::{self, ErrorPolicy, PipelineError, RunConfig};
use mchr_core::review::CurationError;
use mchr_core::simulate::{self, ErrorStructure, HumanReviewer, SimulationConfig, SimulationError};
use mchr_core::store::{self, RunSession, StoreError};
use mchr_server::ServerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Incomplete = 1,
    Config = 2,
    Adapter = 3,
    Io = 4,
    Port = 5,
}

struct Failure {
    exit: Exit,
    message: String,
}

impl Failure {
    fn new(exit: Exit, message: impl std::fmt::Display) -> Self {
        Failure { exit, message: message.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let exit = match &e {
            PipelineError::Config(_) => Exit::Config,
            PipelineError::Ingest(IngestError::Io { .. }) => Exit::Io,
            PipelineError::Ingest(_) => Exit::Config,
            PipelineError::Adapter { .. } => Exit::Adapter,
            PipelineError::Store(_) | PipelineError::Io { .. } => Exit::Io,
            PipelineError::Contract(_) => Exit::Incomplete,
        };
        Failure::new(exit, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(Exit::Config, e)
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::new(Exit::Io, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::new(Exit::Incomplete, e)
    }
}

impl From<SimulationError> for Failure {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Pipeline(p) => p.into(),
            SimulationError::Config(c) => c.into(),
            SimulationError::Unsupported(_) => Failure::new(Exit::Config, e),
            SimulationError::Review(_) | SimulationError::Metrics(_) => Failure::new(Exit::Incomplete, e),
        }
    }
}

impl From<CurationError> for Failure {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::Taxonomy(_) => Failure::new(Exit::Config, e),
            CurationError::Store(s) => s.into(),
        }
    }
}

#[derive(Parser)]
#[command(name = "mchr", version, about = "Multi-model annotation with consensus and human review")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnError {
    Abort,
    Skip,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0,1]"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Annotate a dataset into a new run directory.
    Run {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = unit_interval)]
        threshold: Option<f64>,
        #[arg(long = "qc-rate", value_parser = unit_interval)]
        qc_rate: Option<f64>,
        #[arg(long = "on-error", value_enum, default_value_t = OnError::Abort)]
        on_error: OnError,
        /// Worker threads; defaults to one per processor.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Annotate a stratified sample of this many items per group.
        #[arg(long = "per-group")]
        per_group: Option<usize>,
        /// Directory of extra prompt templates (`<id>.txt`).
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Serve the review API for a run directory.
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = mchr_server::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long = "ui-dir")]
        ui_dir: Option<PathBuf>,
        /// Browser origin allowed to call the API, or `*`.
        #[arg(long = "cors-origin")]
        cors_origin: Option<String>,
    },
    /// Print the accuracy and review-rate report of a run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run synthetic model profiles through the pipeline.
    Simulate {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chance that a model's outcome follows a draw shared by all models.
        #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
        correlation: f64,
        /// Reviewer accuracy; the reviewer always answers gold when unset.
        #[arg(long = "human-accuracy", value_parser = unit_interval)]
        human_accuracy: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Inspect or curate an open-set run's categories.
    Taxonomy {
        #[arg(long)]
        run: PathBuf,
        #[command(subcommand)]
        action: TaxonomyAction,
    },
}

#[derive(Subcommand)]
enum TaxonomyAction {
    /// Print categories, counts and aliases.
    List {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Fold one category into another.
    Merge {
        from: String,
        into: String,
        #[arg(long, default_value = "cli")]
        actor: String,
    },
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(Exit::Io, format!("{}: {e}", path.display())))
}

fn cmd_run(cfg: RunConfig) -> Result<(), Failure> {
    let summary = pipeline::run_to_dir(&cfg)?;
    print!("{summary}");
    Ok(())
}

fn cmd_serve(run: &Path, host: IpAddr, port: u16, config: ServerConfig) -> Result<(), Failure> {
    let (session, warnings) = RunSession::open_dir(run)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(Exit::Io, e))?;
    runtime.block_on(async {
        let addr = SocketAddr::new(host, port);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::new(Exit::Port, format!("cannot listen on {addr}: {e}")))?;
        println!("listening on http://{}", listener.local_addr().map_err(|e| Failure::new(Exit::Io, e))?);
        mchr_server::serve(listener, mchr_server::router(session, &config))
            .await
            .map_err(|e| Failure::new(Exit::Io, e))
    })
}

fn cmd_report(run: &Path, format: Format) -> Result<(), Failure> {
    let replayed = store::replay(&run.join(store::EVENTS_FILE))?;
    for w in &replayed.warnings {
        eprintln!("warning: {w}");
    }
    let report = metrics::build_report_partial(&[&replayed.state])?;
    match format {
        Format::Table => print!("{}", report.render_table()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    if report.incomplete {
        return Err(Failure::new(Exit::Incomplete, "run incomplete: review cases are pending"));
    }
    Ok(())
}

fn cmd_simulate(cfg: SimulationConfig, format: Format) -> Result<(), Failure> {
    let result = simulate::simulate_run(&cfg)?;
    match format {
        Format::Table => print!("{}", result.render_table()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&result.to_json()).expect("serializes")),
    }
    Ok(())
}

fn cmd_taxonomy(run: &Path, action: TaxonomyAction) -> Result<(), Failure> {
    match action {
        TaxonomyAction::List { format } => {
            let replayed = store::replay(&run.join(store::EVENTS_FILE))?;
            let tax = &replayed.state.taxonomy;
            match format {
                Format::Json => {
                    println!("{}", serde_json::to_string_pretty(&tax.export()).expect("serializes"));
                }
                Format::Table => {
                    for (name, count) in tax.categories() {
                        println!("{name}\t{count}");
                    }
                    for (alias, target) in tax.aliases() {
                        println!("{alias} -> {target}");
                    }
                    if let Some(s) = tax.sparsity_stats() {
                        println!(
                            "categories: {}, below three cases: {:.2}, mean cases: {:.2}",
                            s.category_count, s.fraction_below_three, s.mean_count
                        );
                    }
                }
            }
            Ok(())
        }
        TaxonomyAction::Merge { from, into, actor } => {
            let (mut session, warnings) = RunSession::open_dir(run)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            session.merge_categories(&from, &into, &actor)?;
            println!("merged {from:?} into {into:?}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { task, input, models, out, seed, threshold, qc_rate, on_error, workers, per_group, templates } => {
            cmd_run(RunConfig {
                task,
                input,
                models,
                out,
                seed,
                threshold,
                qc_rate,
                on_error: match on_error {
                    OnError::Abort => ErrorPolicy::Abort,
                    OnError::Skip => ErrorPolicy::Skip,
                },
                workers,
                per_group,
                templates,
            })
        }
        Command::Serve { run, port, host, ui_dir, cors_origin } => {
            cmd_serve(&run, host, port, ServerConfig { cors_origin, ui_dir })
        }
        Command::Report { run, format } => cmd_report(&run, format),
        Command::Simulate { profiles, task, n, seed, correlation, human_accuracy, format, workers } => {
            let profiles = simulate::load_profiles(&read(&profiles)?)?;
            let task = TaskSpec::from_json(&read(&task)?)?;
            let mut cfg = SimulationConfig::new(profiles, task, n, seed);
            cfg.errors = ErrorStructure { correlation, ..ErrorStructure::default() };
            cfg.human = match human_accuracy {
                Some(accuracy) => HumanReviewer::Noisy { accuracy },
                None => HumanReviewer::Oracle,
            };
            cfg.workers = workers;
            cmd_simulate(cfg, format)
        }
        Command::Taxonomy { run, action } => cmd_taxonomy(&run, action),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.exit as u8)
        }
    }
}
