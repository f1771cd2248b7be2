//! Dataset loading and seeded stratified sampling.
//!
//! Datasets are UTF-8 files with one JSON record per line:
//!
//! ```text
//! {"id": "c-1", "content": "fn main() {}", "group": "rust", "gold": "backend"}
//! ```
//!
//! `gold` may be `null` or absent. Unknown fields are ignored.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate item id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("per-group sample size must be at least 1")]
    EmptySample,
}

/// One unit of content to annotate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentItem {
    pub id: String,
    pub content: String,
    pub group: String,
    #[serde(default)]
    pub gold: Option<String>,
}

impl ContentItem {
    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.content.is_empty() {
            return Err(format!("item {:?} has empty content", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub item_count: usize,
    pub group_counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub sample_seed: Option<u64>,
}

impl DatasetManifest {
    pub fn from_items(source: impl Into<String>, items: &[ContentItem]) -> Self {
        let mut group_counts = BTreeMap::new();
        for item in items {
            *group_counts.entry(item.group.clone()).or_insert(0) += 1;
        }
        DatasetManifest {
            source: source.into(),
            item_count: items.len(),
            group_counts,
            sample_seed: None,
        }
    }
}

/// A malformed input line, reported but not fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub items: Vec<ContentItem>,
    pub manifest: DatasetManifest,
    pub errors: Vec<LineError>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset, IngestError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: display.clone(),
        source,
    })?;
    parse_dataset(file, display)
}

/// Parses line-delimited records from any reader. Blank lines are skipped.
pub fn parse_dataset(reader: impl Read, source: impl Into<String>) -> Result<LoadedDataset, IngestError> {
    let source = source.into();
    let mut items = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let number = idx + 1;
        let line = line.map_err(|source_err| IngestError::Io {
            path: source.clone(),
            source: source_err,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ContentItem = match serde_json::from_str(&line) {
            Ok(item) => item,
            Err(err) => {
                errors.push(LineError { line: number, message: err.to_string() });
                continue;
            }
        };
        if let Err(message) = item.validate() {
            errors.push(LineError { line: number, message });
            continue;
        }
        if !seen.insert(item.id.clone()) {
            return Err(IngestError::DuplicateId { id: item.id, line: number });
        }
        items.push(item);
    }

    let manifest = DatasetManifest::from_items(source, &items);
    Ok(LoadedDataset { items, manifest, errors })
}

/// Draws up to `per_group` items from every group without replacement.
///
/// Groups are visited in lexicographic order and each group draws from its
/// own stream derived from `(seed, group)`, so adding a group never changes
/// another group's sample. Within a group the chosen items keep their input
/// order.
pub fn stratified_sample(items: &[ContentItem], per_group: usize, seed: u64) -> Result<Vec<ContentItem>, IngestError> {
    if per_group == 0 {
        return Err(IngestError::EmptySample);
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, item) in items.iter().enumerate() {
        groups.entry(item.group.as_str()).or_default().push(pos);
    }

    let mut out = Vec::new();
    for (group, positions) in groups {
        if positions.len() <= per_group {
            out.extend(positions.iter().map(|&p| items[p].clone()));
            continue;
        }
        let mut rng = seed::stream(seed, &["sample", group]);
        let mut chosen = index::sample(&mut rng, positions.len(), per_group).into_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| items[positions[i]].clone()));
    }
    Ok(out)
}
