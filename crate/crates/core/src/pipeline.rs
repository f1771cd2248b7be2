//! Runs a dataset through gateway, consensus and routing, writing events.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::consensus::{self, ConsensusError, QcSampler, Route};
use crate::gateway::{
    query_with_repair, render_prompt, AdapterError, AdapterKind, ConfigError, HttpChatAdapter, ModelAdapter,
    ModelRole, ModelSpec, ModelVerdict, ReplayAdapter, ReplayFixtures, Roster, TaskSpec, TemplateRegistry,
    DEFAULT_HTTP_TIMEOUT_MS,
};
use crate::ingest::{self, ContentItem, DatasetManifest, IngestError};
use crate::metrics::{self, Percent};
use crate::review::ReviewError;
use crate::simulate::{ErrorStructure, SyntheticAdapter, SyntheticModelProfile};
use crate::store::{self, Event, EventLog, RunMeta, RunSession, StoreError};

pub const HTTP_TIMEOUT_ENV: &str = "MCHR_HTTP_TIMEOUT_MS";

/// Items decided in parallel before their events are written in order.
const CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("item {item}: {source}")]
    Adapter { item: String, source: AdapterError },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("internal contract violated: {0}")]
    Contract(String),
}

impl From<ReviewError> for PipelineError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Store(s) => PipelineError::Store(s),
            other => PipelineError::Contract(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ErrorPolicy {
    /// Stop the run at the first adapter failure.
    #[default]
    Abort,
    /// Record an item-failed event and continue.
    Skip,
}

impl std::str::FromStr for ErrorPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abort" => Ok(ErrorPolicy::Abort),
            "skip" => Ok(ErrorPolicy::Skip),
            other => Err(format!("unknown error policy {other:?} (expected abort or skip)")),
        }
    }
}

/// One adapter per role.
#[derive(Clone)]
pub struct Adapters {
    pub primary_1: Arc<dyn ModelAdapter>,
    pub primary_2: Arc<dyn ModelAdapter>,
    pub tiebreaker: Arc<dyn ModelAdapter>,
}

impl Adapters {
    pub fn get(&self, role: ModelRole) -> &dyn ModelAdapter {
        match role {
            ModelRole::Primary1 => &*self.primary_1,
            ModelRole::Primary2 => &*self.primary_2,
            ModelRole::Tiebreaker => &*self.tiebreaker,
        }
    }
}

impl fmt::Debug for Adapters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Adapters")
    }
}

/// What adapter construction may need beyond the model spec.
#[derive(Debug, Clone, Default)]
pub struct AdapterContext {
    /// Directory relative paths in model settings are resolved against.
    pub base_dir: PathBuf,
    pub http_timeout: Option<Duration>,
    pub task: Option<TaskSpec>,
    /// Gold labels by item id, for synthetic adapters.
    pub gold: Arc<HashMap<String, String>>,
    pub seed: u64,
}

pub fn http_timeout_from_env() -> Result<Duration, ConfigError> {
    match std::env::var(HTTP_TIMEOUT_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Duration::from_millis)
            .map_err(|_| ConfigError::Parse { what: HTTP_TIMEOUT_ENV.into(), message: format!("not a number: {v:?}") }),
        Err(_) => Ok(Duration::from_millis(DEFAULT_HTTP_TIMEOUT_MS)),
    }
}

/// Path of a replay model's fixture file, if its settings name one.
pub fn fixture_path(spec: &ModelSpec, base_dir: &Path) -> Result<PathBuf, ConfigError> {
    let rel = spec
        .settings
        .get("fixtures")
        .and_then(|v| v.as_str())
        .ok_or_else(|| ConfigError::Adapter { model: spec.id.clone(), message: "replay adapter needs settings.fixtures".into() })?;
    Ok(base_dir.join(rel))
}

pub fn build_adapter(spec: &ModelSpec, ctx: &AdapterContext) -> Result<Arc<dyn ModelAdapter>, ConfigError> {
    let bad = |message: String| ConfigError::Adapter { model: spec.id.clone(), message };
    Ok(match spec.kind {
        AdapterKind::HttpChat => {
            let timeout = ctx.http_timeout.unwrap_or(Duration::from_millis(DEFAULT_HTTP_TIMEOUT_MS));
            Arc::new(HttpChatAdapter::from_settings(&spec.id, &spec.settings, timeout)?)
        }
        AdapterKind::Replay => {
            let path = fixture_path(spec, &ctx.base_dir)?;
            let fixtures = ReplayFixtures::load(&path).map_err(|e| bad(e.to_string()))?;
            Arc::new(ReplayAdapter::new(Arc::new(fixtures)))
        }
        AdapterKind::Synthetic => {
            let profile = SyntheticModelProfile::from_spec(spec)?;
            let task = ctx.task.as_ref().ok_or_else(|| bad("synthetic adapter needs the task".into()))?;
            let correlation = spec.settings.get("correlation").and_then(|v| v.as_f64()).unwrap_or(0.0);
            let errors = ErrorStructure { correlation, ..ErrorStructure::default() };
            errors.validate().map_err(bad)?;
            Arc::new(SyntheticAdapter::new(profile, task, ctx.gold.clone(), errors, ctx.seed))
        }
    })
}

pub fn build_adapters(roster: &Roster, ctx: &AdapterContext) -> Result<Adapters, ConfigError> {
    Ok(Adapters {
        primary_1: build_adapter(&roster.primary_1, ctx)?,
        primary_2: build_adapter(&roster.primary_2, ctx)?,
        tiebreaker: build_adapter(&roster.tiebreaker, ctx)?,
    })
}

/// Verdict source over live adapters, rendering the shared prompt per item.
pub struct Annotator<'a> {
    pub task: &'a TaskSpec,
    pub roster: &'a Roster,
    pub adapters: &'a Adapters,
    pub templates: &'a TemplateRegistry,
}

impl consensus::VerdictSource for Annotator<'_> {
    fn verdict(&self, role: ModelRole, item: &ContentItem) -> Result<ModelVerdict, AdapterError> {
        let prompt = render_prompt(self.templates, self.task, item).map_err(|e| AdapterError::Config(e.to_string()))?;
        query_with_repair(self.adapters.get(role), self.roster.get(role), &prompt, self.task)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnotateOptions {
    pub seed: u64,
    /// Worker threads; 0 means one per processor.
    pub workers: usize,
    pub on_error: ErrorPolicy,
}

/// Counts printed after a run.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct RunSummary {
    pub items: usize,
    /// Routed without escalation, including QC samples.
    pub auto_accepted: usize,
    /// Escalated to human review.
    pub queued: usize,
    pub qc_sampled: usize,
    pub failed: usize,
    pub hrr: Percent,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "items: {}", self.items)?;
        writeln!(f, "auto-accepted: {}", self.auto_accepted)?;
        writeln!(f, "queued: {}", self.queued)?;
        writeln!(f, "qc-sampled: {}", self.qc_sampled)?;
        writeln!(f, "failed: {}", self.failed)?;
        writeln!(f, "HRR: {}", self.hrr)
    }
}

pub fn summarize(state: &store::RunState) -> RunSummary {
    let mut s = RunSummary {
        items: state.items().len(),
        auto_accepted: 0,
        queued: 0,
        qc_sampled: 0,
        failed: state.failed().len(),
        hrr: metrics::hrr(state),
    };
    for o in state.outcomes() {
        match o.route {
            Route::HumanReview(_) => s.queued += 1,
            Route::QcSample => {
                s.qc_sampled += 1;
                s.auto_accepted += 1;
            }
            Route::AutoAccept => s.auto_accepted += 1,
        }
    }
    s
}

/// Annotates `items` into a fresh session: run-started, item-loaded for
/// every item, then per item its verdicts, consensus, route and any review
/// case, and finally run-completed.
#[allow(clippy::too_many_arguments)]
pub fn annotate(
    session: &mut RunSession,
    task: &TaskSpec,
    roster: &Roster,
    adapters: &Adapters,
    templates: &TemplateRegistry,
    items: &[ContentItem],
    manifest: DatasetManifest,
    opts: AnnotateOptions,
) -> Result<RunSummary, PipelineError> {
    task.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| PipelineError::Contract(format!("worker pool: {e}")))?;

    session.append(Event::RunStarted {
        task: task.clone(),
        models: roster.clone(),
        seed: opts.seed,
        manifest,
    })?;
    for item in items {
        session.append(Event::ItemLoaded { item: item.clone() })?;
    }

    let annotator = Annotator { task, roster, adapters, templates };
    let mut qc = QcSampler::new(task.qc_rate, opts.seed);
    for chunk in items.chunks(CHUNK) {
        let taxonomy = session.state().taxonomy.clone();
        let decided: Vec<Result<consensus::Consensus, ConsensusError>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|item| consensus::decide(item, task, &annotator, &taxonomy))
                .collect()
        });
        for (item, result) in chunk.iter().zip(decided) {
            let consensus = match result {
                Ok(c) => c,
                Err(ConsensusError::Adapter(err)) => {
                    session.append(Event::ItemFailed { item: item.id.clone(), error: err.to_string() })?;
                    match opts.on_error {
                        ErrorPolicy::Abort => return Err(PipelineError::Adapter { item: item.id.clone(), source: err }),
                        ErrorPolicy::Skip => continue,
                    }
                }
                Err(ConsensusError::Contract(m)) => return Err(PipelineError::Contract(m)),
            };
            let route = consensus::route(&consensus, task.threshold, &mut qc);
            for verdict in &consensus.verdicts {
                session.append(Event::Verdict { verdict: verdict.clone() })?;
            }
            session.append(Event::Consensus((&consensus).into()))?;
            session.append(Event::Routed { item: item.id.clone(), route })?;
            if let Some(reason) = route.review_reason() {
                session.enqueue(&item.id, reason)?;
            }
        }
    }
    let summary = summarize(session.state());
    session.append(Event::RunCompleted { items: items.len(), failed: summary.failed })?;
    Ok(summary)
}

/// Inputs of `mchr run`.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub task: PathBuf,
    pub input: PathBuf,
    pub models: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub threshold: Option<f64>,
    pub qc_rate: Option<f64>,
    pub on_error: ErrorPolicy,
    pub workers: usize,
    /// Stratified sample size per group; all items when unset.
    pub per_group: Option<usize>,
    /// Extra prompt templates (`<id>.txt`).
    pub templates: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

pub fn load_task(path: &Path, threshold: Option<f64>, qc_rate: Option<f64>) -> Result<TaskSpec, PipelineError> {
    let mut task = TaskSpec::from_json(&read(path)?)?;
    if let Some(t) = threshold {
        task.threshold = t;
    }
    if let Some(q) = qc_rate {
        task.qc_rate = q;
    }
    task.validate()?;
    Ok(task)
}

/// Runs a dataset into a new run directory containing `run.json`,
/// `events.jsonl` and copies of any replay fixtures.
pub fn run_to_dir(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let task = load_task(&cfg.task, cfg.threshold, cfg.qc_rate)?;
    let roster = Roster::from_json(&read(&cfg.models)?)?;
    let mut templates = TemplateRegistry::bundled();
    if let Some(dir) = &cfg.templates {
        templates
            .load_dir(dir)
            .map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
    }
    if templates.get(&task.template).is_none() {
        return Err(ConfigError::UnknownTemplate(task.template.clone()).into());
    }

    let loaded = ingest::load_dataset(&cfg.input)?;
    for e in &loaded.errors {
        tracing::warn!(line = e.line, message = %e.message, "skipped malformed input line");
    }
    let (items, manifest) = match cfg.per_group {
        Some(k) => {
            let items = ingest::stratified_sample(&loaded.items, k, cfg.seed)?;
            let mut manifest = DatasetManifest::from_items(cfg.input.display().to_string(), &items);
            manifest.sample_seed = Some(cfg.seed);
            (items, manifest)
        }
        None => (loaded.items, loaded.manifest),
    };

    let base_dir = cfg.models.parent().map(Path::to_path_buf).unwrap_or_default();
    let ctx = AdapterContext {
        base_dir: base_dir.clone(),
        http_timeout: Some(http_timeout_from_env()?),
        task: Some(task.clone()),
        gold: Arc::new(items.iter().filter_map(|i| Some((i.id.clone(), i.gold.clone()?))).collect()),
        seed: cfg.seed,
    };
    let adapters = build_adapters(&roster, &ctx)?;

    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| PipelineError::Io { path, source }
    };
    std::fs::create_dir_all(&cfg.out).map_err(io(&cfg.out))?;
    let fixtures_dir = cfg.out.join(store::FIXTURES_DIR);
    for spec in roster.specs() {
        if spec.kind == AdapterKind::Replay {
            let src = fixture_path(spec, &base_dir)?;
            std::fs::create_dir_all(&fixtures_dir).map_err(io(&fixtures_dir))?;
            let dst = fixtures_dir.join(format!("{}.jsonl", spec.id));
            std::fs::copy(&src, &dst).map_err(io(&src))?;
        }
    }
    let log = EventLog::create(&cfg.out.join(store::EVENTS_FILE))?;
    store::write_run_file(
        &cfg.out,
        &RunMeta { task: task.clone(), models: roster.clone(), seed: cfg.seed, manifest: manifest.clone() },
    )?;
    let mut session = RunSession::new(log);
    annotate(
        &mut session,
        &task,
        &roster,
        &adapters,
        &templates,
        &items,
        manifest,
        AnnotateOptions { seed: cfg.seed, workers: cfg.workers, on_error: cfg.on_error },
    )
}
