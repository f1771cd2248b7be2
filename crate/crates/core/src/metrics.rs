//! Accuracy with Wilson intervals, human review rate, workload reduction and
//! the per-level report.
//!
//! Rates that must satisfy `hrr + reduction = 100` are kept as integer
//! hundredths of a percent so the identity holds exactly.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::gateway::{LabelSpace, TaskSpec};
use crate::review::{AnnotationRecord, QcAudit, RecordSource};
use crate::store::RunState;
use crate::taxonomy::{normalize_label, TaxonomyState};

pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no gold label for scored item {0:?}")]
    MissingGold(String),
    #[error("run incomplete: {} pending case(s): {}", .0.len(), .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("level {0} appears in more than one run")]
    DuplicateLevel(u8),
    #[error("run has not started")]
    NotStarted,
}

/// A percentage stored as hundredths, e.g. `Percent(3333)` is 33.33%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(pub u32);

impl Percent {
    pub const HUNDRED: Percent = Percent(10_000);

    /// `100 * part / whole`, rounded half up to 2 decimals; 0 when `whole` is 0.
    pub fn ratio(part: usize, whole: usize) -> Self {
        if whole == 0 {
            return Percent(0);
        }
        let (part, whole) = (part as u64, whole as u64);
        Percent(((20_000 * part + whole) / (2 * whole)) as u32)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Percent((v * 100.0).round() as u32))
    }
}

/// Wilson score interval for `k` successes in `n` trials, as proportions.
/// `None` when `n` is 0.
pub fn wilson_ci(k: usize, n: usize, z: f64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    assert!(k <= n, "successes exceed trials");
    let (kf, nf) = (k as f64, n as f64);
    let p = kf / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if k == 0 { 0.0 } else { (center - half).clamp(0.0, 1.0) };
    let high = if k == n { 1.0 } else { (center + half).clamp(0.0, 1.0) };
    Some((low.min(p), high.max(p)))
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Accuracy of one partition with its 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub k: usize,
    pub n: usize,
    /// Point estimate in percent, 1 decimal.
    pub pct: f64,
    /// Symmetric half-width in percent, 1 decimal.
    pub half: f64,
    pub low: f64,
    pub high: f64,
}

impl Accuracy {
    pub fn from_counts(k: usize, n: usize) -> Option<Self> {
        let (low, high) = wilson_ci(k, n, Z_95)?;
        let p = k as f64 / n as f64;
        let half = (p - low).max(high - p);
        Some(Accuracy {
            k,
            n,
            pct: round1(100.0 * p),
            half: round1(100.0 * half),
            low: round1(100.0 * low),
            high: round1(100.0 * high),
        })
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ±{:.1}", self.pct, self.half)
    }
}

/// Canonical form used when comparing a final label with gold.
fn scoring_label(label: &str, task: &TaskSpec, taxonomy: &TaxonomyState) -> String {
    let normalized = normalize_label(label).unwrap_or_else(|_| label.to_string());
    match &task.labels {
        LabelSpace::Closed(_) => task
            .labels
            .match_closed(&normalized)
            .map(str::to_string)
            .unwrap_or(normalized),
        LabelSpace::Open => taxonomy.chase(&normalized),
    }
}

/// `(correct, total)` over `records`, comparing alias-resolved labels.
pub fn accuracy<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    gold: &HashMap<String, String>,
    task: &TaskSpec,
    taxonomy: &TaxonomyState,
) -> Result<(usize, usize), MetricsError> {
    let (mut k, mut n) = (0, 0);
    for rec in records {
        let g = gold.get(&rec.item).ok_or_else(|| MetricsError::MissingGold(rec.item.clone()))?;
        if scoring_label(&rec.final_label, task, taxonomy) == scoring_label(g, task, taxonomy) {
            k += 1;
        }
        n += 1;
    }
    Ok((k, n))
}

/// Share of routed items escalated to a human; QC samples excluded.
pub fn hrr(state: &RunState) -> Percent {
    let escalated = state.outcomes().filter(|o| o.route.is_escalation()).count();
    Percent::ratio(escalated, state.routed_count())
}

pub fn workload_reduction(hrr: Percent) -> Percent {
    Percent(Percent::HUNDRED.0 - hrr.0.min(Percent::HUNDRED.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u8,
    pub task: String,
    /// Routed items.
    pub n: usize,
    pub all: Option<Accuracy>,
    pub auto: Option<Accuracy>,
    pub human: Option<Accuracy>,
    pub hrr: Percent,
    pub reduction: Percent,
    /// Items escalated to a human.
    pub reviewed: usize,
    pub qc_cases: usize,
    pub qc_mismatch: usize,
    pub failed: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub n: usize,
    pub reviewed: usize,
    pub hrr: Percent,
    pub reduction: Percent,
    pub all: Option<Accuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigEcho {
    pub task: String,
    pub level: u8,
    pub labels: crate::gateway::LabelSpace,
    pub threshold: f64,
    pub qc_rate: f64,
    pub seed: u64,
    pub models: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub runs: Vec<RunConfigEcho>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub incomplete: bool,
    pub levels: Vec<LevelReport>,
    pub totals: Totals,
    pub config: ReportConfig,
}

fn gold_map(state: &RunState) -> HashMap<String, String> {
    state
        .items()
        .iter()
        .filter_map(|i| i.gold.clone().map(|g| (i.id.clone(), g)))
        .collect()
}

/// Report for one run. Partial runs are scored on the records present.
pub fn level_report(state: &RunState) -> Result<LevelReport, MetricsError> {
    let meta = state.meta.as_ref().ok_or(MetricsError::NotStarted)?;
    let task = &meta.task;
    let gold = gold_map(state);
    let records: Vec<&AnnotationRecord> = state.records().collect();
    let score = |source: Option<RecordSource>| -> Result<Option<Accuracy>, MetricsError> {
        let (k, n) = accuracy(
            records.iter().copied().filter(|r| source.is_none_or(|s| r.source == s)),
            &gold,
            task,
            &state.taxonomy,
        )?;
        Ok(Accuracy::from_counts(k, n))
    };
    let hrr = hrr(state);
    let reviewed = state.outcomes().filter(|o| o.route.is_escalation()).count();
    let qc: Vec<_> = state.cases().filter(|c| c.reason == crate::consensus::ReviewReason::Qc).collect();
    Ok(LevelReport {
        level: task.level,
        task: task.id.clone(),
        n: state.routed_count(),
        all: score(None)?,
        auto: score(Some(RecordSource::Auto))?,
        human: score(Some(RecordSource::Human))?,
        hrr,
        reduction: workload_reduction(hrr),
        reviewed,
        qc_cases: qc.len(),
        qc_mismatch: qc.iter().filter(|c| c.audit == Some(QcAudit::Mismatch)).count(),
        failed: state.failed().len(),
        pending: state.pending_case_ids().len(),
    })
}

fn config_echo(state: &RunState) -> Option<RunConfigEcho> {
    let meta = state.meta.as_ref()?;
    Some(RunConfigEcho {
        task: meta.task.id.clone(),
        level: meta.task.level,
        labels: meta.task.labels.clone(),
        threshold: meta.task.threshold,
        qc_rate: meta.task.qc_rate,
        seed: meta.seed,
        models: meta
            .models
            .specs()
            .iter()
            .map(|m| (m.role.as_str().to_string(), m.id.clone()))
            .collect(),
    })
}

/// Builds a report, flagging `incomplete` when cases are pending or routing
/// has not finished.
pub fn build_report_partial(states: &[&RunState]) -> Result<RunReport, MetricsError> {
    let mut levels: Vec<LevelReport> = Vec::with_capacity(states.len());
    for state in states {
        let level = level_report(state)?;
        if levels.iter().any(|l| l.level == level.level) {
            return Err(MetricsError::DuplicateLevel(level.level));
        }
        levels.push(level);
    }
    let incomplete = states
        .iter()
        .any(|s| !s.is_completed() || !s.pending_case_ids().is_empty());

    let n: usize = levels.iter().map(|l| l.n).sum();
    let reviewed: usize = levels.iter().map(|l| l.reviewed).sum();
    let (k_all, n_all) = levels
        .iter()
        .filter_map(|l| l.all)
        .fold((0, 0), |(k, n), a| (k + a.k, n + a.n));
    let hrr = Percent::ratio(reviewed, n);
    Ok(RunReport {
        incomplete,
        levels,
        totals: Totals {
            n,
            reviewed,
            hrr,
            reduction: workload_reduction(hrr),
            all: Accuracy::from_counts(k_all, n_all),
        },
        config: ReportConfig { runs: states.iter().filter_map(|s| config_echo(s)).collect() },
    })
}

/// Builds the report of completed runs; pending cases are an error.
pub fn build_report(states: &[&RunState]) -> Result<RunReport, MetricsError> {
    let pending: Vec<String> = states.iter().flat_map(|s| s.pending_case_ids()).collect();
    if !pending.is_empty() {
        return Err(MetricsError::Incomplete(pending));
    }
    build_report_partial(states)
}

fn cell(acc: &Option<Accuracy>) -> String {
    acc.map(|a| a.to_string()).unwrap_or_else(|| "-".into())
}

impl RunReport {
    /// Fixed-width table with one row per level.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>7}  {:<12} {:<12} {:<12} {:>7} {:>9} {:>4} {:>11}",
            "Level", "n", "MCHR(All)", "Auto-part", "Human-part", "HRR", "Reduction", "QC", "QC-mismatch"
        );
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{:<6} {:>7}  {:<12} {:<12} {:<12} {:>7} {:>9} {:>4} {:>11}",
                l.level,
                l.n,
                cell(&l.all),
                cell(&l.auto),
                cell(&l.human),
                l.hrr.to_string(),
                l.reduction.to_string(),
                l.qc_cases,
                l.qc_mismatch
            );
        }
        if self.incomplete {
            out.push_str("(incomplete: review cases pending)\n");
        }
        out
    }
}
