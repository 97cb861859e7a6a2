//! JSON-lines model registry: one [`ModelRecord`] per line.
//!
//! Fields this crate does not know about are kept and written back.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const ORACLE_ACCURACY: &str = "oracle_accuracy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    #[serde(default, deserialize_with = "stringly_map")]
    pub hyperparams: BTreeMap<String, String>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    /// Downstream accuracy as reported, typically a percentage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

// Hyperparameters are kept as strings; numbers and booleans are accepted
// and stored in their JSON spelling.
fn stringly_map<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, String>, D::Error> {
    let raw = BTreeMap::<String, Value>::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| match v {
            Value::String(s) => (k, s),
            other => (k, other.to_string()),
        })
        .collect())
}

impl ModelRecord {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            hyperparams: BTreeMap::new(),
            scores: BTreeMap::new(),
            oracle_accuracy: None,
            source_path: None,
            extra: BTreeMap::new(),
        }
    }

    /// Oracle value by field name: `oracle_accuracy` or any numeric extra
    /// field (e.g. an out-of-distribution accuracy column).
    pub fn oracle(&self, field: &str) -> Option<f64> {
        if field == ORACLE_ACCURACY {
            return self.oracle_accuracy;
        }
        self.extra.get(field).and_then(Value::as_f64)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.model_id.is_empty() {
            return Err("model_id must be non-empty".into());
        }
        if let Some((k, v)) = self.scores.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("score {k} = {v} is not finite"));
        }
        if let Some(acc) = self.oracle_accuracy {
            if !(0.0..=100.0).contains(&acc) {
                return Err(format!("oracle_accuracy {acc} outside [0, 100]"));
            }
        }
        Ok(())
    }
}

pub fn parse_registry(text: &str) -> Result<Vec<ModelRecord>> {
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ModelRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| Error::Parse { line: line_no, message })?;
        if !ids.insert(record.model_id.clone()) {
            return Err(Error::DuplicateModelId(record.model_id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_registry(path: impl AsRef<Path>) -> Result<Vec<ModelRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_registry(&text)
}

/// Reads `path`, or returns an empty registry when it does not exist.
pub fn read_registry_or_empty(path: impl AsRef<Path>) -> Result<Vec<ModelRecord>> {
    let path = path.as_ref();
    if path.exists() {
        read_registry(path)
    } else {
        Ok(Vec::new())
    }
}

pub fn render_registry(records: &[ModelRecord]) -> Result<String> {
    let mut ids = BTreeSet::new();
    let mut out = String::new();
    for r in records {
        if !ids.insert(r.model_id.as_str()) {
            return Err(Error::DuplicateModelId(r.model_id.clone()));
        }
        r.validate().map_err(Error::InvalidArgument)?;
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_registry(path: impl AsRef<Path>, records: &[ModelRecord]) -> Result<()> {
    let path = path.as_ref();
    let text = render_registry(records)?;
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeOutcome {
    /// The model had no value under this key.
    Inserted,
    /// Same value already present.
    Unchanged,
    /// A different value was present and `overwrite` was not set.
    KeptExisting,
    Overwritten,
}

impl MergeOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeOutcome::Inserted => "inserted",
            MergeOutcome::Unchanged => "unchanged",
            MergeOutcome::KeptExisting => "kept-existing",
            MergeOutcome::Overwritten => "overwritten",
        }
    }
}

/// Records `value` under `key` for `model_id`, creating the record if needed.
pub fn merge_score(
    records: &mut Vec<ModelRecord>,
    model_id: &str,
    key: &str,
    value: f64,
    overwrite: bool,
) -> MergeOutcome {
    let pos = match records.iter().position(|r| r.model_id == model_id) {
        Some(pos) => pos,
        None => {
            records.push(ModelRecord::new(model_id));
            records.len() - 1
        }
    };
    let scores = &mut records[pos].scores;
    match scores.get(key) {
        None => {
            scores.insert(key.to_owned(), value);
            MergeOutcome::Inserted
        }
        Some(old) if old.to_bits() == value.to_bits() => MergeOutcome::Unchanged,
        Some(_) if overwrite => {
            scores.insert(key.to_owned(), value);
            MergeOutcome::Overwritten
        }
        Some(_) => MergeOutcome::KeptExisting,
    }
}
