//! Label canonicalization and open-set category management.
//!
//! Every comparison in the crate (model agreement, accuracy scoring) happens
//! on canonical labels: normalized text, matched to the task label space on
//! closed tasks or chased through the alias map on open tasks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{LabelSpace, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("label is empty after normalization")]
    InvalidLabel,
    #[error("label {0:?} is not in the task label space")]
    LabelOutOfSpace(String),
    #[error("unknown category {0:?}")]
    NotFound(String),
    #[error("cannot merge category {0:?} into itself")]
    SelfMerge(String),
    #[error("closed-set tasks have a fixed taxonomy")]
    ClosedTask,
}

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!'];
const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Lowercases, trims, collapses whitespace runs, strips trailing sentence
/// punctuation and surrounding quotes. Idempotent.
pub fn normalize_label(raw: &str) -> Result<String, TaxonomyError> {
    let mut current = raw.to_string();
    loop {
        let lowered = current.to_lowercase();
        let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
        let stripped = collapsed
            .trim_end_matches(TRAILING_PUNCT)
            .trim_matches(QUOTES)
            .trim()
            .to_string();
        if stripped == current {
            break;
        }
        current = stripped;
    }
    if current.is_empty() {
        return Err(TaxonomyError::InvalidLabel);
    }
    Ok(current)
}

/// Separator-insensitive key used to match closed label spaces, so that
/// "front-end", "front end" and "frontend" all hit the label "frontend".
pub fn compact_key(normalized: &str) -> String {
    normalized.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEntry {
    pub from: String,
    pub into: String,
    pub ts: String,
    pub actor: String,
}

/// Open-set category space: canonical categories with final-label counts,
/// aliases for merged names, and the merge history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaxonomyState {
    categories: BTreeMap<String, u64>,
    aliases: BTreeMap<String, String>,
    merges: Vec<MergeEntry>,
}

impl TaxonomyState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn categories(&self) -> &BTreeMap<String, u64> {
        &self.categories
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    pub fn merges(&self) -> &[MergeEntry] {
        &self.merges
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.categories.contains_key(canonical)
    }

    /// Follows aliases from a normalized label without creating anything.
    /// Unknown labels map to themselves.
    pub fn chase(&self, label: &str) -> String {
        let mut current = label;
        for _ in 0..=self.aliases.len() {
            match self.aliases.get(current) {
                Some(next) => current = next,
                None => break,
            }
        }
        current.to_string()
    }

    /// Canonical form of a normalized label without mutating the taxonomy.
    pub fn canonical(&self, label: &str, task: &TaskSpec) -> Result<String, TaxonomyError> {
        match &task.labels {
            LabelSpace::Closed(_) => task
                .labels
                .match_closed(label)
                .map(str::to_string)
                .ok_or_else(|| TaxonomyError::LabelOutOfSpace(label.to_string())),
            LabelSpace::Open => Ok(self.chase(label)),
        }
    }

    /// Canonical form of a normalized label; on open tasks an unseen label
    /// becomes a new category with count 0.
    pub fn resolve(&mut self, label: &str, task: &TaskSpec) -> Result<String, TaxonomyError> {
        if label.is_empty() {
            return Err(TaxonomyError::InvalidLabel);
        }
        let canonical = self.canonical(label, task)?;
        if task.labels.is_open() {
            self.categories.entry(canonical.clone()).or_insert(0);
        }
        Ok(canonical)
    }

    /// Counts one finalized annotation under `canonical`.
    pub fn record(&mut self, canonical: &str) {
        *self.categories.entry(canonical.to_string()).or_insert(0) += 1;
    }

    pub fn merge(&mut self, from: &str, into: &str, actor: &str, ts: &str) -> Result<(), TaxonomyError> {
        if from == into {
            return Err(TaxonomyError::SelfMerge(from.to_string()));
        }
        for name in [from, into] {
            if !self.categories.contains_key(name) {
                return Err(TaxonomyError::NotFound(name.to_string()));
            }
        }
        let moved = self.categories.remove(from).unwrap_or(0);
        *self.categories.get_mut(into).expect("checked above") += moved;
        for target in self.aliases.values_mut() {
            if target == from {
                *target = into.to_string();
            }
        }
        self.aliases.insert(from.to_string(), into.to_string());
        self.merges.push(MergeEntry {
            from: from.to_string(),
            into: into.to_string(),
            ts: ts.to_string(),
            actor: actor.to_string(),
        });
        Ok(())
    }

    pub fn export(&self) -> TaxonomyExport {
        TaxonomyExport {
            categories: self.categories.clone(),
            aliases: self.aliases.clone(),
            merges: self.merges.clone(),
        }
    }

    pub fn sparsity_stats(&self) -> Option<SparsityStats> {
        sparsity_stats(self.categories.values().copied())
    }
}

/// JSON export shape of the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyExport {
    pub categories: BTreeMap<String, u64>,
    pub aliases: BTreeMap<String, String>,
    pub merges: Vec<MergeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub category_count: usize,
    /// Share of categories with fewer than three cases, 4 decimals.
    pub fraction_below_three: f64,
    /// Mean cases per category, 4 decimals.
    pub mean_count: f64,
}

/// Sparsity over categories holding at least one case; `None` when there are
/// no such categories.
pub fn sparsity_stats(counts: impl IntoIterator<Item = u64>) -> Option<SparsityStats> {
    let used: Vec<u64> = counts.into_iter().filter(|&c| c >= 1).collect();
    if used.is_empty() {
        return None;
    }
    let n = used.len();
    let below = used.iter().filter(|&&c| c < 3).count();
    let total: u64 = used.iter().sum();
    Some(SparsityStats {
        category_count: n,
        fraction_below_three: round4(below as f64 / n as f64),
        mean_count: round4(total as f64 / n as f64),
    })
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}
