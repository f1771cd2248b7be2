//! Human review queue and final annotation records.
//!
//! Items routed to human review become cases carrying the model verdicts,
//! reasoning and divergence points (never the gold label). Escalated cases
//! are decided into human records. QC cases audit an automated label: the
//! reviewer's answer is stored as match/mismatch and the record stays
//! automated.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{AgreementLevel, ConsensusOutcome, ReviewReason, Route};
use crate::gateway::{LabelSpace, VerdictStatus};
use crate::ingest::ContentItem;
use crate::store::{Event, RunSession, StoreError};
use crate::taxonomy::{normalize_label, TaxonomyError};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("case {0:?} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("bad cursor {0:?}")]
    BadCursor(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Pending,
    Decided,
}

impl CaseStatus {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(CaseStatus::Pending),
            "decided" => Some(CaseStatus::Decided),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub label: String,
    pub reviewer: String,
    #[serde(default)]
    pub rationale: String,
    pub decided_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QcAudit {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewCase {
    pub case_id: String,
    /// Sequence number of the enqueue event; defines queue order.
    pub enqueue_seq: u64,
    /// The item with its gold label removed.
    pub item: ContentItem,
    pub outcome: ConsensusOutcome,
    pub reason: ReviewReason,
    pub status: CaseStatus,
    pub decision: Option<ReviewDecision>,
    pub audit: Option<QcAudit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordSource {
    Auto,
    Human,
}

/// The final label of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item: String,
    pub final_label: String,
    pub source: RecordSource,
    pub agreement: AgreementLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ReviewReason>,
    pub confidences: Vec<f64>,
}

fn confidences(outcome: &ConsensusOutcome) -> Vec<f64> {
    outcome.consensus.verdicts.iter().filter_map(|v| v.confidence).collect()
}

/// Automated record for any outcome carrying a consensus label and not
/// escalated (auto-accepted or QC-sampled).
pub(crate) fn auto_record(outcome: &ConsensusOutcome) -> Result<AnnotationRecord, ReviewError> {
    if outcome.route.is_escalation() {
        return Err(ReviewError::Precondition(format!(
            "item {} is routed to human review",
            outcome.item()
        )));
    }
    let label = outcome
        .label()
        .ok_or_else(|| ReviewError::Precondition(format!("item {} has no consensus label", outcome.item())))?;
    Ok(AnnotationRecord {
        item: outcome.item().to_string(),
        final_label: label.to_string(),
        source: RecordSource::Auto,
        agreement: outcome.agreement(),
        reason: None,
        confidences: confidences(outcome),
    })
}

/// Record for an auto-accepted outcome.
pub fn auto_finalize(outcome: &ConsensusOutcome) -> Result<AnnotationRecord, ReviewError> {
    if outcome.route != Route::AutoAccept {
        return Err(ReviewError::Precondition(format!(
            "item {} is not auto-accepted",
            outcome.item()
        )));
    }
    auto_record(outcome)
}

/// Result of a reviewer decision: the item's record, plus the audit verdict
/// for QC cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub record: AnnotationRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<QcAudit>,
}

// ---- wire views ----

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseItemView {
    pub id: String,
    pub content: String,
    pub group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerdictView {
    pub model: String,
    pub status: VerdictStatus,
    pub label: Option<String>,
    pub confidence: Option<f64>,
    pub reasoning: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DivergenceView {
    pub label: String,
    pub holders: Vec<String>,
    pub conf_min: f64,
    pub conf_max: f64,
}

/// Full case payload served to reviewers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CasePayload {
    pub case_id: String,
    pub reason: ReviewReason,
    pub item: CaseItemView,
    pub verdicts: Vec<VerdictView>,
    pub divergence: Vec<DivergenceView>,
    pub consensus: Option<String>,
    pub agreement: AgreementLevel,
    pub status: CaseStatus,
    pub enqueue_seq: u64,
    pub decision: Option<ReviewDecision>,
    pub audit: Option<QcAudit>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseSummary {
    pub case_id: String,
    pub reason: ReviewReason,
    pub item_id: String,
    pub group: String,
    pub consensus: Option<String>,
    pub status: CaseStatus,
    pub enqueue_seq: u64,
}

impl ReviewCase {
    pub fn payload(&self) -> CasePayload {
        let c = &self.outcome.consensus;
        CasePayload {
            case_id: self.case_id.clone(),
            reason: self.reason,
            item: CaseItemView {
                id: self.item.id.clone(),
                content: self.item.content.clone(),
                group: self.item.group.clone(),
            },
            verdicts: c
                .verdicts
                .iter()
                .map(|v| VerdictView {
                    model: v.model.clone(),
                    status: v.status,
                    label: v.label.clone(),
                    confidence: v.confidence,
                    reasoning: v.reasoning.clone(),
                })
                .collect(),
            divergence: c
                .divergence
                .iter()
                .map(|d| DivergenceView {
                    label: d.label.clone(),
                    holders: d.holders.clone(),
                    conf_min: d.conf_min,
                    conf_max: d.conf_max,
                })
                .collect(),
            consensus: c.label.clone(),
            agreement: c.agreement,
            status: self.status,
            enqueue_seq: self.enqueue_seq,
            decision: self.decision.clone(),
            audit: self.audit,
        }
    }

    pub fn summary(&self) -> CaseSummary {
        CaseSummary {
            case_id: self.case_id.clone(),
            reason: self.reason,
            item_id: self.item.id.clone(),
            group: self.item.group.clone(),
            consensus: self.outcome.consensus.label.clone(),
            status: self.status,
            enqueue_seq: self.enqueue_seq,
        }
    }
}

// ---- queue listing ----

pub const DEFAULT_PAGE_LIMIT: usize = 50;
pub const MAX_PAGE_LIMIT: usize = 500;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaseQuery {
    pub status: Option<CaseStatus>,
    pub reason: Option<ReviewReason>,
    pub limit: Option<usize>,
    pub cursor: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CasePage {
    pub cases: Vec<CaseSummary>,
    pub next_cursor: Option<String>,
}

fn encode_cursor(after_seq: u64) -> String {
    URL_SAFE_NO_PAD.encode(format!("after:{after_seq}"))
}

fn decode_cursor(cursor: &str) -> Result<u64, ReviewError> {
    let bad = || ReviewError::BadCursor(cursor.to_string());
    let bytes = URL_SAFE_NO_PAD.decode(cursor).map_err(|_| bad())?;
    let text = String::from_utf8(bytes).map_err(|_| bad())?;
    text.strip_prefix("after:")
        .and_then(|n| n.parse().ok())
        .ok_or_else(bad)
}

pub fn list_cases<'a>(
    cases: impl Iterator<Item = &'a ReviewCase>,
    query: &CaseQuery,
) -> Result<CasePage, ReviewError> {
    let limit = query.limit.unwrap_or(DEFAULT_PAGE_LIMIT);
    if limit == 0 || limit > MAX_PAGE_LIMIT {
        return Err(ReviewError::Validation(format!("limit must be in 1..={MAX_PAGE_LIMIT}")));
    }
    let after = query.cursor.as_deref().map(decode_cursor).transpose()?.unwrap_or(0);
    let mut matching = cases.filter(|c| {
        c.enqueue_seq > after
            && query.status.is_none_or(|s| c.status == s)
            && query.reason.is_none_or(|r| c.reason == r)
    });
    let page: Vec<CaseSummary> = matching.by_ref().take(limit).map(ReviewCase::summary).collect();
    let next_cursor = match (page.last(), matching.next()) {
        (Some(last), Some(_)) => Some(encode_cursor(last.enqueue_seq)),
        _ => None,
    };
    Ok(CasePage { cases: page, next_cursor })
}

// ---- session operations ----

impl RunSession {
    /// Queues a routed item for review.
    pub fn enqueue(&mut self, item: &str, reason: ReviewReason) -> Result<ReviewCase, ReviewError> {
        let state = self.state();
        let outcome = state
            .outcome(item)
            .ok_or_else(|| ReviewError::Precondition(format!("item {item} has not been routed")))?;
        if outcome.route.review_reason() != Some(reason) {
            return Err(ReviewError::Precondition(format!(
                "item {item} routed as {:?}, not {}",
                outcome.route,
                reason.as_str()
            )));
        }
        if let Some(existing) = state.case_for_item(item) {
            return Err(ReviewError::Conflict(format!("item {item} already queued as {}", existing.case_id)));
        }
        let case_id = format!("case-{:05}", state.case_count() + 1);
        self.append(Event::CaseEnqueued { case_id: case_id.clone(), item: item.to_string(), reason })?;
        Ok(self.state().case(&case_id).expect("just enqueued").clone())
    }

    /// Applies a reviewer's label to a pending case.
    pub fn apply_decision(
        &mut self,
        case_id: &str,
        label: &str,
        reviewer: &str,
        rationale: &str,
    ) -> Result<DecisionOutcome, ReviewError> {
        let state = self.state();
        let case = state
            .case(case_id)
            .ok_or_else(|| ReviewError::NotFound(case_id.to_string()))?;
        if case.status == CaseStatus::Decided {
            return Err(ReviewError::Conflict(format!("case {case_id} is already decided")));
        }
        let task = state
            .task()
            .ok_or_else(|| ReviewError::Precondition("run has no task".into()))?;
        let normalized =
            normalize_label(label).map_err(|_| ReviewError::Validation("decision label is empty".into()))?;
        let canonical = match &task.labels {
            LabelSpace::Closed(_) => task
                .labels
                .match_closed(&normalized)
                .map(str::to_string)
                .ok_or_else(|| ReviewError::Validation(format!("label {normalized:?} is not in the task label space")))?,
            LabelSpace::Open => state.taxonomy.chase(&normalized),
        };
        let decision = ReviewDecision {
            label: canonical.clone(),
            reviewer: reviewer.to_string(),
            rationale: rationale.to_string(),
            decided_at: self.now(),
        };

        if case.reason == ReviewReason::Qc {
            let item = case.item.id.clone();
            let consensus = case.outcome.label().map(|l| state.taxonomy.chase(l));
            let audit = if consensus.as_deref() == Some(canonical.as_str()) {
                QcAudit::Match
            } else {
                QcAudit::Mismatch
            };
            self.append(Event::QcAudited { case_id: case_id.to_string(), decision, audit })?;
            let record = self.state().record(&item).cloned().ok_or_else(|| {
                ReviewError::Precondition(format!("QC item {item} has no automated record"))
            })?;
            return Ok(DecisionOutcome { record, audit: Some(audit) });
        }

        let record = AnnotationRecord {
            item: case.item.id.clone(),
            final_label: canonical,
            source: RecordSource::Human,
            agreement: case.outcome.agreement(),
            reason: Some(case.reason),
            confidences: confidences(&case.outcome),
        };
        self.append(Event::CaseDecided { case_id: case_id.to_string(), decision, record: record.clone() })?;
        Ok(DecisionOutcome { record, audit: None })
    }

    /// Merges two open-set categories.
    pub fn merge_categories(&mut self, from: &str, into: &str, actor: &str) -> Result<(), CurationError> {
        let state = self.state();
        let task = state.task().ok_or(TaxonomyError::ClosedTask)?;
        if !task.labels.is_open() {
            return Err(TaxonomyError::ClosedTask.into());
        }
        let from = normalize_label(from)?;
        let into = normalize_label(into)?;
        // dry run on a copy so a bad merge never reaches the log
        let mut probe = state.taxonomy.clone();
        let ts = self.now();
        probe.merge(&from, &into, actor, &ts)?;
        self.append(Event::TaxonomyMerged { from, into, actor: actor.to_string(), ts })?;
        Ok(())
    }

    pub fn pending_cases(&self, reason: Option<ReviewReason>, limit: Option<usize>, cursor: Option<String>) -> Result<CasePage, ReviewError> {
        list_cases(
            self.state().cases(),
            &CaseQuery { status: Some(CaseStatus::Pending), reason, limit, cursor },
        )
    }
}
