//! Task and model configuration, prompt rendering, and validated model
//! queries.
//!
//! Every model sees the same rendered prompt for an item. Responses must be
//! a JSON object `{"label", "confidence", "reasoning"}`; malformed responses
//! are re-requested up to [`MAX_REPAIR_RETRIES`] times with a repair
//! instruction before the model is recorded as abstaining.

mod adapter;
mod http;
mod parse;
mod prompt;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use adapter::{AdapterError, AdapterRequest, ModelAdapter, ReplayAdapter, ReplayEntry, ReplayFixtures};
pub use http::{HttpChatAdapter, HttpChatSettings, DEFAULT_HTTP_TIMEOUT_MS};
pub use parse::{extract_object, parse_verdict, FormatError, FormatErrorKind};
pub use prompt::{render_prompt, RenderedPrompt, TemplateRegistry, DEFAULT_TEMPLATE, RESPONSE_FORMAT};

use crate::taxonomy::{compact_key, normalize_label};

/// Repair re-queries after the first attempt; three attempts in total.
pub const MAX_REPAIR_RETRIES: u32 = 2;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_QC_RATE: f64 = 0.05;

pub const LEVEL3_LABELS: [&str; 5] = ["frontend", "backend", "full-stack", "database", "supporting tools"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid task: {0}")]
    Task(String),
    #[error("invalid model roster: {0}")]
    Roster(String),
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("invalid adapter settings for {model}: {message}")]
    Adapter { model: String, message: String },
    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },
}

/// Fixed list of labels (levels 1-3) or an open category space (level 4).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelSpace {
    Closed(Vec<String>),
    Open,
}

impl LabelSpace {
    pub fn is_open(&self) -> bool {
        matches!(self, LabelSpace::Open)
    }

    pub fn labels(&self) -> &[String] {
        match self {
            LabelSpace::Closed(labels) => labels,
            LabelSpace::Open => &[],
        }
    }

    /// Task label matching a normalized label, exactly or ignoring
    /// separators.
    pub fn match_closed(&self, normalized: &str) -> Option<&str> {
        let labels = self.labels();
        if let Some(hit) = labels.iter().find(|l| l.as_str() == normalized) {
            return Some(hit);
        }
        let key = compact_key(normalized);
        labels.iter().find(|l| compact_key(l) == key).map(String::as_str)
    }
}

impl Serialize for LabelSpace {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            LabelSpace::Closed(labels) => labels.serialize(serializer),
            LabelSpace::Open => serializer.serialize_str("OPEN"),
        }
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            List(Vec<String>),
            Marker(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::List(labels) => Ok(LabelSpace::Closed(labels)),
            Repr::Marker(m) if m.eq_ignore_ascii_case("open") => Ok(LabelSpace::Open),
            Repr::Marker(m) => Err(serde::de::Error::custom(format!(
                "label space must be a list of labels or \"OPEN\", got {m:?}"
            ))),
        }
    }
}

fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_qc_rate() -> f64 {
    DEFAULT_QC_RATE
}

/// One annotation task. The task file is this struct as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub level: u8,
    pub labels: LabelSpace,
    #[serde(default)]
    pub instruction: String,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_qc_rate")]
    pub qc_rate: f64,
}

impl TaskSpec {
    pub fn closed(id: &str, level: u8, labels: &[&str], instruction: &str) -> Self {
        TaskSpec {
            id: id.to_string(),
            level,
            labels: LabelSpace::Closed(labels.iter().map(|l| l.to_string()).collect()),
            instruction: instruction.to_string(),
            template: default_template(),
            threshold: DEFAULT_THRESHOLD,
            qc_rate: DEFAULT_QC_RATE,
        }
    }

    pub fn open(id: &str, instruction: &str) -> Self {
        TaskSpec {
            id: id.to_string(),
            level: 4,
            labels: LabelSpace::Open,
            instruction: instruction.to_string(),
            template: default_template(),
            threshold: DEFAULT_THRESHOLD,
            qc_rate: DEFAULT_QC_RATE,
        }
    }

    /// The five-way application-domain task.
    pub fn level3_default(id: &str) -> Self {
        Self::closed(
            id,
            3,
            &LEVEL3_LABELS,
            "Classify the application domain the code snippet belongs to.",
        )
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_qc_rate(mut self, qc_rate: f64) -> Self {
        self.qc_rate = qc_rate;
        self
    }

    /// Parses a task file and normalizes its labels.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut task: TaskSpec = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            what: "task".into(),
            message: e.to_string(),
        })?;
        if let LabelSpace::Closed(labels) = &mut task.labels {
            for label in labels.iter_mut() {
                *label = normalize_label(label)
                    .map_err(|_| ConfigError::Task(format!("label {label:?} is empty")))?;
            }
        }
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Task(msg));
        if self.id.trim().is_empty() {
            return bad("task id is empty".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.qc_rate) {
            return bad(format!("qc rate {} outside [0, 1]", self.qc_rate));
        }
        match (self.level, &self.labels) {
            (1..=3, LabelSpace::Open) => return bad(format!("level {} needs a closed label space", self.level)),
            (4, LabelSpace::Closed(_)) => return bad("level 4 needs an open label space".into()),
            (1..=4, _) => {}
            (level, _) => return bad(format!("level {level} not in 1..=4")),
        }
        if let LabelSpace::Closed(labels) = &self.labels {
            if matches!(self.level, 1 | 2) && labels.len() != 2 {
                return bad(format!("level {} is binary, got {} labels", self.level, labels.len()));
            }
            if labels.len() < 2 {
                return bad("closed label space needs at least 2 labels".into());
            }
            let mut keys = HashSet::new();
            for label in labels {
                if normalize_label(label).ok().as_deref() != Some(label.as_str()) {
                    return bad(format!("label {label:?} is not normalized"));
                }
                if !keys.insert(compact_key(label)) {
                    return bad(format!("label {label:?} duplicates another label"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelRole {
    #[serde(rename = "primary-1")]
    Primary1,
    #[serde(rename = "primary-2")]
    Primary2,
    #[serde(rename = "tiebreaker")]
    Tiebreaker,
}

impl ModelRole {
    pub const ALL: [ModelRole; 3] = [ModelRole::Primary1, ModelRole::Primary2, ModelRole::Tiebreaker];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Primary1 => "primary-1",
            ModelRole::Primary2 => "primary-2",
            ModelRole::Tiebreaker => "tiebreaker",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterKind {
    HttpChat,
    Replay,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub kind: AdapterKind,
    pub role: ModelRole,
    #[serde(default)]
    pub settings: serde_json::Map<String, serde_json::Value>,
}

/// The three models of a run, one per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    pub primary_1: ModelSpec,
    pub primary_2: ModelSpec,
    pub tiebreaker: ModelSpec,
}

impl Roster {
    pub fn from_specs(specs: Vec<ModelSpec>) -> Result<Self, ConfigError> {
        let mut slots: [Option<ModelSpec>; 3] = [None, None, None];
        let mut ids = HashSet::new();
        for spec in specs {
            if spec.id.trim().is_empty() {
                return Err(ConfigError::Roster("model id is empty".into()));
            }
            if !ids.insert(spec.id.clone()) {
                return Err(ConfigError::Roster(format!("model id {:?} used twice", spec.id)));
            }
            let slot = &mut slots[spec.role as usize];
            if slot.is_some() {
                return Err(ConfigError::Roster(format!("role {} assigned twice", spec.role)));
            }
            *slot = Some(spec);
        }
        let [p1, p2, tb] = slots;
        let missing = |role: ModelRole| ConfigError::Roster(format!("no model for role {role}"));
        Ok(Roster {
            primary_1: p1.ok_or_else(|| missing(ModelRole::Primary1))?,
            primary_2: p2.ok_or_else(|| missing(ModelRole::Primary2))?,
            tiebreaker: tb.ok_or_else(|| missing(ModelRole::Tiebreaker))?,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let specs: Vec<ModelSpec> = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            what: "model config".into(),
            message: e.to_string(),
        })?;
        Self::from_specs(specs)
    }

    pub fn get(&self, role: ModelRole) -> &ModelSpec {
        match role {
            ModelRole::Primary1 => &self.primary_1,
            ModelRole::Primary2 => &self.primary_2,
            ModelRole::Tiebreaker => &self.tiebreaker,
        }
    }

    pub fn specs(&self) -> [&ModelSpec; 3] {
        [&self.primary_1, &self.primary_2, &self.tiebreaker]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Labeled,
    Abstained,
}

/// One model's answer for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub model: String,
    pub item: String,
    pub status: VerdictStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub reasoning: String,
    pub attempts: u32,
    pub raw: String,
}

impl ModelVerdict {
    pub fn labeled(model: &str, item: &str, label: &str, confidence: f64, reasoning: &str) -> Self {
        ModelVerdict {
            model: model.to_string(),
            item: item.to_string(),
            status: VerdictStatus::Labeled,
            label: Some(label.to_string()),
            confidence: Some(confidence),
            reasoning: reasoning.to_string(),
            attempts: 1,
            raw: String::new(),
        }
    }

    pub fn abstained(model: &str, item: &str, reasoning: &str, attempts: u32, raw: &str) -> Self {
        ModelVerdict {
            model: model.to_string(),
            item: item.to_string(),
            status: VerdictStatus::Abstained,
            label: None,
            confidence: None,
            reasoning: reasoning.to_string(),
            attempts,
            raw: raw.to_string(),
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.status == VerdictStatus::Labeled
    }
}

fn repair_instruction(error: &FormatError) -> String {
    format!(
        "\n\nYour previous response was rejected ({error}). Reply again with only one JSON object of the form {RESPONSE_FORMAT}"
    )
}

/// Queries a model, re-asking with a repair instruction on malformed
/// responses. Returns an abstention once the retries are exhausted; only
/// transport failures are errors.
pub fn query_with_repair(
    adapter: &dyn ModelAdapter,
    model: &ModelSpec,
    prompt: &RenderedPrompt,
    task: &TaskSpec,
) -> Result<ModelVerdict, AdapterError> {
    let mut last: Option<(FormatError, String)> = None;
    for attempt in 1..=1 + MAX_REPAIR_RETRIES {
        let text = match &last {
            None => prompt.text.clone(),
            Some((err, _)) => format!("{}{}", prompt.text, repair_instruction(err)),
        };
        let raw = adapter.complete(&AdapterRequest {
            model: &model.id,
            item: &prompt.item_id,
            attempt,
            prompt: &text,
        })?;
        match parse_verdict(&raw, task, &model.id, &prompt.item_id) {
            Ok(mut verdict) => {
                verdict.attempts = attempt;
                return Ok(verdict);
            }
            Err(err) => last = Some((err, raw)),
        }
    }
    let (err, raw) = last.expect("at least one attempt");
    Ok(ModelVerdict::abstained(
        &model.id,
        &prompt.item_id,
        &format!("no valid response: {err}"),
        1 + MAX_REPAIR_RETRIES,
        &raw,
    ))
}
