//! Append-only event log and the run state folded from it.
//!
//! A run directory holds `run.json` (task and model snapshot), `events.jsonl`
//! (this log) and optionally `fixtures/`. Each log line is
//!
//! ```text
//! {"seq":N,"ts":"<RFC3339>","kind":"...","payload":{...}}
//! ```
//!
//! Sequence numbers start at 1 and never skip. Timestamps are informational;
//! [`RunState`] depends only on the ordered payloads, so replaying a log
//! always rebuilds the same state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{AgreementLevel, Consensus, ConsensusOutcome, DivergencePoint, ReviewReason, Route};
use crate::gateway::{ModelVerdict, Roster, TaskSpec};
use crate::ingest::{ContentItem, DatasetManifest};
use crate::review::{self, AnnotationRecord, CaseStatus, QcAudit, ReviewCase, ReviewDecision};
use crate::taxonomy::TaxonomyState;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const FIXTURES_DIR: &str = "fixtures";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("log corrupted at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unknown event kind {kind:?} at line {line}")]
    UnknownKind { line: usize, kind: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Consensus event payload; verdicts travel in their own events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    pub item: String,
    pub agreement: AgreementLevel,
    pub label: Option<String>,
    pub divergence: Vec<DivergencePoint>,
}

impl From<&Consensus> for ConsensusSummary {
    fn from(c: &Consensus) -> Self {
        ConsensusSummary {
            item: c.item.clone(),
            agreement: c.agreement,
            label: c.label.clone(),
            divergence: c.divergence.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum Event {
    RunStarted {
        task: TaskSpec,
        models: Roster,
        seed: u64,
        manifest: DatasetManifest,
    },
    ItemLoaded {
        item: ContentItem,
    },
    Verdict {
        verdict: ModelVerdict,
    },
    Consensus(ConsensusSummary),
    Routed {
        item: String,
        route: Route,
    },
    CaseEnqueued {
        case_id: String,
        item: String,
        reason: ReviewReason,
    },
    CaseDecided {
        case_id: String,
        decision: ReviewDecision,
        record: AnnotationRecord,
    },
    QcAudited {
        case_id: String,
        decision: ReviewDecision,
        audit: QcAudit,
    },
    TaxonomyMerged {
        from: String,
        into: String,
        actor: String,
        ts: String,
    },
    ItemFailed {
        item: String,
        error: String,
    },
    RunCompleted {
        items: usize,
        failed: usize,
    },
}

const KINDS: &[&str] = &[
    "run-started",
    "item-loaded",
    "verdict",
    "consensus",
    "routed",
    "case-enqueued",
    "case-decided",
    "qc-audited",
    "taxonomy-merged",
    "item-failed",
    "run-completed",
];

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::RunStarted { .. } => "run-started",
            Event::ItemLoaded { .. } => "item-loaded",
            Event::Verdict { .. } => "verdict",
            Event::Consensus(_) => "consensus",
            Event::Routed { .. } => "routed",
            Event::CaseEnqueued { .. } => "case-enqueued",
            Event::CaseDecided { .. } => "case-decided",
            Event::QcAudited { .. } => "qc-audited",
            Event::TaxonomyMerged { .. } => "taxonomy-merged",
            Event::ItemFailed { .. } => "item-failed",
            Event::RunCompleted { .. } => "run-completed",
        }
    }

    /// Review-phase events may follow `run-completed`; routing events may not.
    pub fn is_review_phase(&self) -> bool {
        matches!(
            self,
            Event::CaseDecided { .. } | Event::QcAudited { .. } | Event::TaxonomyMerged { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts: String,
    #[serde(flatten)]
    pub event: Event,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

enum Sink {
    File { file: File, path: PathBuf },
    Memory(Vec<String>),
    Discard,
}

/// Single-writer event log.
pub struct EventLog {
    sink: Sink,
    next_seq: u64,
    completed: bool,
    clock: fn() -> String,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("next_seq", &self.next_seq)
            .field("completed", &self.completed)
            .finish()
    }
}

impl EventLog {
    /// Creates a new log file; fails if it already exists.
    pub fn create(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|source| io_err(path, source))?;
        Ok(Self::with_sink(Sink::File { file, path: path.to_path_buf() }))
    }

    /// Keeps serialized lines in memory.
    pub fn in_memory() -> Self {
        Self::with_sink(Sink::Memory(Vec::new()))
    }

    /// Assigns sequence numbers without persisting anything.
    pub fn discard() -> Self {
        Self::with_sink(Sink::Discard)
    }

    fn with_sink(sink: Sink) -> Self {
        EventLog { sink, next_seq: 1, completed: false, clock: now_rfc3339 }
    }

    pub fn with_clock(mut self, clock: fn() -> String) -> Self {
        self.clock = clock;
        self
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Serialized lines, for in-memory logs.
    pub fn lines(&self) -> Option<&[String]> {
        match &self.sink {
            Sink::Memory(lines) => Some(lines),
            _ => None,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.sink {
            Sink::File { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn append(&mut self, event: Event) -> Result<EventRecord, StoreError> {
        if self.completed && !event.is_review_phase() {
            return Err(StoreError::Contract(format!(
                "cannot append {} after run-completed",
                event.kind()
            )));
        }
        let record = EventRecord { seq: self.next_seq, ts: (self.clock)(), event };
        let sync = record.event.is_review_phase() || matches!(record.event, Event::RunCompleted { .. });
        match &mut self.sink {
            Sink::File { file, path } => {
                let mut line = serde_json::to_string(&record).expect("events serialize");
                line.push('\n');
                file.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
                file.flush().map_err(|e| io_err(path, e))?;
                if sync {
                    file.sync_data().map_err(|e| io_err(path, e))?;
                }
            }
            Sink::Memory(lines) => lines.push(serde_json::to_string(&record).expect("events serialize")),
            Sink::Discard => {}
        }
        self.next_seq += 1;
        if matches!(record.event, Event::RunCompleted { .. }) {
            self.completed = true;
        }
        Ok(record)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub task: TaskSpec,
    pub models: Roster,
    pub seed: u64,
    pub manifest: DatasetManifest,
}

/// Everything known about a run, as a fold over its events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunState {
    pub meta: Option<RunMeta>,
    items: Vec<ContentItem>,
    item_index: HashMap<String, usize>,
    verdicts: HashMap<String, Vec<ModelVerdict>>,
    unrouted: HashMap<String, Consensus>,
    outcomes: HashMap<String, ConsensusOutcome>,
    /// Items in routing order.
    routed: Vec<String>,
    cases: BTreeMap<u64, ReviewCase>,
    case_index: HashMap<String, u64>,
    case_by_item: HashMap<String, String>,
    records: HashMap<String, AnnotationRecord>,
    failed: Vec<(String, String)>,
    pub taxonomy: TaxonomyState,
    completed: bool,
    last_seq: u64,
}

impl RunState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn task(&self) -> Option<&TaskSpec> {
        self.meta.as_ref().map(|m| &m.task)
    }

    pub fn items(&self) -> &[ContentItem] {
        &self.items
    }

    pub fn item(&self, id: &str) -> Option<&ContentItem> {
        self.item_index.get(id).map(|&i| &self.items[i])
    }

    pub fn verdicts(&self, item: &str) -> &[ModelVerdict] {
        self.verdicts.get(item).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn outcome(&self, item: &str) -> Option<&ConsensusOutcome> {
        self.outcomes.get(item)
    }

    /// Routed outcomes in routing order.
    pub fn outcomes(&self) -> impl Iterator<Item = &ConsensusOutcome> {
        self.routed.iter().map(move |id| &self.outcomes[id])
    }

    pub fn routed_count(&self) -> usize {
        self.routed.len()
    }

    /// Cases in enqueue order.
    pub fn cases(&self) -> impl Iterator<Item = &ReviewCase> {
        self.cases.values()
    }

    pub fn case(&self, case_id: &str) -> Option<&ReviewCase> {
        self.case_index.get(case_id).and_then(|seq| self.cases.get(seq))
    }

    pub fn case_for_item(&self, item: &str) -> Option<&ReviewCase> {
        self.case_by_item.get(item).and_then(|id| self.case(id))
    }

    pub fn case_count(&self) -> usize {
        self.cases.len()
    }

    pub fn pending_case_ids(&self) -> Vec<String> {
        self.cases
            .values()
            .filter(|c| c.status == CaseStatus::Pending)
            .map(|c| c.case_id.clone())
            .collect()
    }

    pub fn record(&self, item: &str) -> Option<&AnnotationRecord> {
        self.records.get(item)
    }

    /// Records in routing order.
    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.routed.iter().filter_map(move |id| self.records.get(id))
    }

    pub fn failed(&self) -> &[(String, String)] {
        &self.failed
    }

    pub fn is_completed(&self) -> bool {
        self.completed
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    fn meta_or_err(&self) -> Result<&RunMeta, StoreError> {
        self.meta
            .as_ref()
            .ok_or_else(|| StoreError::Contract("event before run-started".into()))
    }

    /// Folds one event into the state.
    pub fn apply(&mut self, record: &EventRecord) -> Result<(), StoreError> {
        let fail = |m: String| Err(StoreError::Contract(m));
        if record.seq != self.last_seq + 1 {
            return fail(format!("expected seq {}, got {}", self.last_seq + 1, record.seq));
        }
        if self.completed && !record.event.is_review_phase() {
            return fail(format!("{} after run-completed", record.event.kind()));
        }
        match &record.event {
            Event::RunStarted { task, models, seed, manifest } => {
                if self.meta.is_some() {
                    return fail("second run-started".into());
                }
                self.meta = Some(RunMeta {
                    task: task.clone(),
                    models: models.clone(),
                    seed: *seed,
                    manifest: manifest.clone(),
                });
            }
            Event::ItemLoaded { item } => {
                self.meta_or_err()?;
                if self.item_index.contains_key(&item.id) {
                    return fail(format!("item {} loaded twice", item.id));
                }
                self.item_index.insert(item.id.clone(), self.items.len());
                self.items.push(item.clone());
            }
            Event::Verdict { verdict } => {
                let task = self.meta_or_err()?.task.clone();
                if !self.item_index.contains_key(&verdict.item) {
                    return fail(format!("verdict for unknown item {}", verdict.item));
                }
                if let (true, Some(label)) = (task.labels.is_open(), &verdict.label) {
                    self.taxonomy
                        .resolve(label, &task)
                        .map_err(|e| StoreError::Contract(e.to_string()))?;
                }
                self.verdicts.entry(verdict.item.clone()).or_default().push(verdict.clone());
            }
            Event::Consensus(summary) => {
                self.meta_or_err()?;
                let verdicts = self.verdicts.get(&summary.item).cloned().unwrap_or_default();
                self.unrouted.insert(
                    summary.item.clone(),
                    Consensus {
                        item: summary.item.clone(),
                        agreement: summary.agreement,
                        label: summary.label.clone(),
                        verdicts,
                        divergence: summary.divergence.clone(),
                    },
                );
            }
            Event::Routed { item, route } => {
                let task = self.meta_or_err()?.task.clone();
                let Some(consensus) = self.unrouted.remove(item) else {
                    return fail(format!("routed item {item} has no consensus"));
                };
                let outcome = ConsensusOutcome { consensus, route: *route };
                if !matches!(route, Route::HumanReview(_)) {
                    let rec = review::auto_record(&outcome).map_err(|e| StoreError::Contract(e.to_string()))?;
                    if task.labels.is_open() {
                        self.taxonomy.record(&rec.final_label);
                    }
                    self.records.insert(item.clone(), rec);
                }
                self.routed.push(item.clone());
                self.outcomes.insert(item.clone(), outcome);
            }
            Event::CaseEnqueued { case_id, item, reason } => {
                let Some(outcome) = self.outcomes.get(item) else {
                    return fail(format!("case for unrouted item {item}"));
                };
                if self.case_by_item.contains_key(item) || self.case_index.contains_key(case_id) {
                    return fail(format!("duplicate case {case_id} for item {item}"));
                }
                let mut blind = self.items[self.item_index[item]].clone();
                blind.gold = None;
                let case = ReviewCase {
                    case_id: case_id.clone(),
                    enqueue_seq: record.seq,
                    item: blind,
                    outcome: outcome.clone(),
                    reason: *reason,
                    status: CaseStatus::Pending,
                    decision: None,
                    audit: None,
                };
                self.case_index.insert(case_id.clone(), record.seq);
                self.case_by_item.insert(item.clone(), case_id.clone());
                self.cases.insert(record.seq, case);
            }
            Event::CaseDecided { case_id, decision, record: rec } => {
                let task = self.meta_or_err()?.task.clone();
                let case = self.pending_case_mut(case_id)?;
                case.status = CaseStatus::Decided;
                case.decision = Some(decision.clone());
                if task.labels.is_open() {
                    let canonical = self
                        .taxonomy
                        .resolve(&rec.final_label, &task)
                        .map_err(|e| StoreError::Contract(e.to_string()))?;
                    self.taxonomy.record(&canonical);
                }
                self.records.insert(rec.item.clone(), rec.clone());
            }
            Event::QcAudited { case_id, decision, audit } => {
                let task = self.meta_or_err()?.task.clone();
                let case = self.pending_case_mut(case_id)?;
                case.status = CaseStatus::Decided;
                case.decision = Some(decision.clone());
                case.audit = Some(*audit);
                if task.labels.is_open() {
                    // reviewer labels join the category space even on audits
                    self.taxonomy
                        .resolve(&decision.label, &task)
                        .map_err(|e| StoreError::Contract(e.to_string()))?;
                }
            }
            Event::TaxonomyMerged { from, into, actor, ts } => {
                self.taxonomy
                    .merge(from, into, actor, ts)
                    .map_err(|e| StoreError::Contract(e.to_string()))?;
            }
            Event::ItemFailed { item, error } => {
                self.failed.push((item.clone(), error.clone()));
            }
            Event::RunCompleted { .. } => {
                self.meta_or_err()?;
                self.completed = true;
            }
        }
        self.last_seq = record.seq;
        Ok(())
    }

    fn pending_case_mut(&mut self, case_id: &str) -> Result<&mut ReviewCase, StoreError> {
        let seq = *self
            .case_index
            .get(case_id)
            .ok_or_else(|| StoreError::Contract(format!("unknown case {case_id}")))?;
        let case = self.cases.get_mut(&seq).expect("indexed case");
        if case.status == CaseStatus::Decided {
            return Err(StoreError::Contract(format!("case {case_id} decided twice")));
        }
        Ok(case)
    }
}

/// Result of reading a log back.
#[derive(Debug)]
pub struct Replayed {
    pub state: RunState,
    pub records: Vec<EventRecord>,
    pub warnings: Vec<String>,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
}

#[derive(Deserialize)]
struct RawRecord {
    seq: u64,
    ts: String,
    kind: String,
    #[serde(default)]
    payload: serde_json::Value,
}

fn parse_line(line: &str, number: usize) -> Result<EventRecord, StoreError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
        line: number,
        message: e.to_string(),
    })?;
    if !KINDS.contains(&raw.kind.as_str()) {
        return Err(StoreError::UnknownKind { line: number, kind: raw.kind });
    }
    let event: Event = serde_json::from_value(serde_json::json!({"kind": raw.kind, "payload": raw.payload}))
        .map_err(|e| StoreError::Corrupt { line: number, message: e.to_string() })?;
    Ok(EventRecord { seq: raw.seq, ts: raw.ts, event })
}

/// Rebuilds the state from a log file.
///
/// A final line without a newline that does not parse is treated as a torn
/// write: it is dropped with a warning. Any other bad line is corruption.
pub fn replay(path: &Path) -> Result<Replayed, StoreError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut state = RunState::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut valid_len = 0u64;
    let mut number = 0usize;
    let mut buf = String::new();
    loop {
        buf.clear();
        let read = reader.read_line(&mut buf).map_err(|e| io_err(path, e))?;
        if read == 0 {
            break;
        }
        number += 1;
        let complete = buf.ends_with('\n');
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() && complete {
            valid_len += read as u64;
            continue;
        }
        let record = match parse_line(line, number) {
            Ok(r) => r,
            Err(StoreError::Corrupt { message, .. }) if !complete => {
                let warning = format!("dropped truncated final line {number}: {message}");
                tracing::warn!("{warning}");
                warnings.push(warning);
                break;
            }
            Err(e) => return Err(e),
        };
        if record.seq != state.last_seq() + 1 {
            return Err(StoreError::Corrupt {
                line: number,
                message: format!("expected seq {}, found {}", state.last_seq() + 1, record.seq),
            });
        }
        state.apply(&record).map_err(|e| StoreError::Corrupt { line: number, message: e.to_string() })?;
        records.push(record);
        valid_len += read as u64;
    }
    Ok(Replayed { state, records, warnings, valid_len })
}

/// Reopens an existing log for appending after replaying it. A torn final
/// line is cut off first.
pub fn reopen(path: &Path) -> Result<(EventLog, Replayed), StoreError> {
    let replayed = replay(path)?;
    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let len = file.metadata().map_err(|e| io_err(path, e))?.len();
    if len != replayed.valid_len {
        file.set_len(replayed.valid_len).map_err(|e| io_err(path, e))?;
    }
    file.seek(SeekFrom::End(0)).map_err(|e| io_err(path, e))?;
    if replayed.valid_len > 0 {
        // a complete final record may lack its newline
        let mut last = [0u8; 1];
        file.seek(SeekFrom::Start(replayed.valid_len - 1)).map_err(|e| io_err(path, e))?;
        std::io::Read::read_exact(&mut file, &mut last).map_err(|e| io_err(path, e))?;
        file.seek(SeekFrom::End(0)).map_err(|e| io_err(path, e))?;
        if last[0] != b'\n' {
            file.write_all(b"\n").map_err(|e| io_err(path, e))?;
        }
    }
    let log = EventLog {
        sink: Sink::File { file, path: path.to_path_buf() },
        next_seq: replayed.state.last_seq() + 1,
        completed: replayed.state.is_completed(),
        clock: now_rfc3339,
    };
    Ok((log, replayed))
}

/// An event log paired with the state it folds into. Every append is
/// persisted first and then applied, so the in-memory state always equals
/// `replay(log)`.
#[derive(Debug)]
pub struct RunSession {
    log: EventLog,
    state: RunState,
}

impl RunSession {
    pub fn new(log: EventLog) -> Self {
        RunSession { log, state: RunState::new() }
    }

    pub fn resume(log: EventLog, state: RunState) -> Self {
        RunSession { log, state }
    }

    /// Opens an existing run directory for further review work.
    pub fn open_dir(dir: &Path) -> Result<(Self, Vec<String>), StoreError> {
        let (log, replayed) = reopen(&dir.join(EVENTS_FILE))?;
        Ok((RunSession { log, state: replayed.state }, replayed.warnings))
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn now(&self) -> String {
        (self.log.clock)()
    }

    pub fn append(&mut self, event: Event) -> Result<EventRecord, StoreError> {
        if self.log.next_seq() != self.state.last_seq() + 1 {
            return Err(StoreError::Contract(format!(
                "log at seq {} but state at {}",
                self.log.next_seq(),
                self.state.last_seq()
            )));
        }
        self.state.precheck(&event)?;
        let record = self.log.append(event)?;
        self.state.apply(&record)?;
        Ok(record)
    }

    pub fn into_state(self) -> RunState {
        self.state
    }
}

impl RunState {
    /// Rejects events that `apply` would refuse, before they are written.
    fn precheck(&self, event: &Event) -> Result<(), StoreError> {
        let contract = |m: String| Err(StoreError::Contract(m));
        if self.completed && !event.is_review_phase() {
            return contract(format!("cannot append {} after run-completed", event.kind()));
        }
        if self.meta.is_none() && !matches!(event, Event::RunStarted { .. }) {
            return contract("event before run-started".into());
        }
        match event {
            Event::RunStarted { .. } if self.meta.is_some() => contract("second run-started".into()),
            Event::ItemLoaded { item } if self.item_index.contains_key(&item.id) => {
                contract(format!("item {} loaded twice", item.id))
            }
            Event::Verdict { verdict } if !self.item_index.contains_key(&verdict.item) => {
                contract(format!("verdict for unknown item {}", verdict.item))
            }
            Event::Routed { item, .. } if !self.unrouted.contains_key(item) => {
                contract(format!("routed item {item} has no consensus"))
            }
            Event::CaseEnqueued { case_id, item, .. } => {
                if !self.outcomes.contains_key(item) {
                    contract(format!("case for unrouted item {item}"))
                } else if self.case_by_item.contains_key(item) || self.case_index.contains_key(case_id) {
                    contract(format!("item {item} already has a case"))
                } else {
                    Ok(())
                }
            }
            Event::CaseDecided { case_id, .. } | Event::QcAudited { case_id, .. } => match self.case(case_id) {
                None => contract(format!("unknown case {case_id}")),
                Some(c) if c.status == CaseStatus::Decided => contract(format!("case {case_id} already decided")),
                Some(_) => Ok(()),
            },
            Event::TaxonomyMerged { from, into, .. } => {
                if from == into {
                    contract(format!("cannot merge {from} into itself"))
                } else if !self.taxonomy.contains(from) || !self.taxonomy.contains(into) {
                    contract(format!("unknown category in merge {from} -> {into}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Writes `run.json` for a new run directory.
pub fn write_run_file(dir: &Path, meta: &RunMeta) -> Result<(), StoreError> {
    let path = dir.join(RUN_FILE);
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}
