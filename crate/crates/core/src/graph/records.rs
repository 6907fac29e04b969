use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Spam,
    Regular,
    Unlabeled,
}

impl Label {
    pub fn as_target(self) -> Option<f64> {
        match self {
            Label::Spam => Some(1.0),
            Label::Regular => Some(0.0),
            Label::Unlabeled => None,
        }
    }

    pub fn is_spam(self) -> bool {
        self == Label::Spam
    }
}

/// One comment: the unit of classification.
#[derive(Clone, Debug, PartialEq)]
pub struct CommentRecord {
    pub comment_id: String,
    pub user_id: String,
    pub item_id: String,
    pub tokens: Vec<String>,
    pub timestamp: i64,
    pub label: Label,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    comment_id: String,
    user_id: String,
    item_id: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
    timestamp: i64,
    #[serde(default)]
    label: Option<u8>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    comment_id: &'a str,
    user_id: &'a str,
    item_id: &'a str,
    tokens: &'a [String],
    timestamp: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

fn parse_line(line: &str, lineno: usize) -> Result<CommentRecord> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| GasError::Parse {
        line: lineno,
        msg: e.to_string(),
    })?;
    let tokens = match (raw.tokens, raw.text) {
        (Some(t), _) => t.into_iter().map(|s| s.to_lowercase()).collect(),
        (None, Some(text)) => text.split_whitespace().map(str::to_lowercase).collect(),
        (None, None) => {
            return Err(GasError::Parse {
                line: lineno,
                msg: "record needs `tokens` or `text`".into(),
            })
        }
    };
    let label = match raw.label {
        None => Label::Unlabeled,
        Some(0) => Label::Regular,
        Some(1) => Label::Spam,
        Some(v) => {
            return Err(GasError::Parse {
                line: lineno,
                msg: format!("label must be 0 or 1, got {v}"),
            })
        }
    };
    Ok(CommentRecord {
        comment_id: raw.comment_id,
        user_id: raw.user_id,
        item_id: raw.item_id,
        tokens,
        timestamp: raw.timestamp,
        label,
    })
}

/// Reads JSON-lines comment records, rejecting duplicate ids.
pub fn ingest(path: impl AsRef<Path>) -> Result<Vec<CommentRecord>> {
    read_records(BufReader::new(std::fs::File::open(path)?))
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<CommentRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(&line, i + 1)?;
        if !seen.insert(rec.comment_id.clone()) {
            return Err(GasError::DuplicateId(rec.comment_id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut w: W, records: &[CommentRecord]) -> Result<()> {
    for r in records {
        let out = OutRecord {
            comment_id: &r.comment_id,
            user_id: &r.user_id,
            item_id: &r.item_id,
            tokens: &r.tokens,
            timestamp: r.timestamp,
            label: match r.label {
                Label::Spam => Some(1),
                Label::Regular => Some(0),
                Label::Unlabeled => None,
            },
        };
        serde_json::to_writer(&mut w, &out).map_err(|e| GasError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Node feature vectors keyed by external id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeFeatures {
    pub users: HashMap<String, Vec<f64>>,
    pub items: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    item_id: Option<String>,
    features: Vec<f64>,
}

/// Reads a `{"user_id" | "item_id", "features": [...]}` sidecar and merges
/// it into `into`.
pub fn read_node_features<R: BufRead>(reader: R, into: &mut NodeFeatures) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFeature = serde_json::from_str(&line).map_err(|e| GasError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match (raw.user_id, raw.item_id) {
            (Some(u), None) => {
                into.users.insert(u, raw.features);
            }
            (None, Some(it)) => {
                into.items.insert(it, raw.features);
            }
            _ => {
                return Err(GasError::Parse {
                    line: i + 1,
                    msg: "exactly one of `user_id` / `item_id` is required".into(),
                })
            }
        }
    }
    Ok(())
}

pub fn load_node_features(path: impl AsRef<Path>, into: &mut NodeFeatures) -> Result<()> {
    read_node_features(BufReader::new(std::fs::File::open(path)?), into)
}

/// Writes one sidecar line per entry, sorted by id.
pub fn write_node_features<W: Write>(mut w: W, users: bool, feats: &HashMap<String, Vec<f64>>) -> Result<()> {
    let mut keys: Vec<&String> = feats.keys().collect();
    keys.sort();
    for k in keys {
        let raw = RawFeature {
            user_id: users.then(|| k.clone()),
            item_id: (!users).then(|| k.clone()),
            features: feats[k].clone(),
        };
        serde_json::to_writer(&mut w, &raw).map_err(|e| GasError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
