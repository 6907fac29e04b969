//! Flat `key = value` run configuration. Keys are dotted paths into
//! [`RunConfig`] (`train.epochs`, `model.hidden`, `paths.records`, `seed`);
//! `#` starts a comment. Later assignments win, so command-line overrides
//! are applied after the file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gas_core::eval::LogRegConfig;
use gas_core::knn::{KnnConfig, SifConfig};
use gas_core::model::{ModelConfig, TrainConfig};
use gas_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub records: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub user_features: Option<PathBuf>,
    pub item_features: Option<PathBuf>,
    pub comment_graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub scores: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub paths: Paths,
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sif: SifConfig,
    pub knn: KnnConfig,
    pub logreg: LogRegConfig,
    pub synth: SynthConfig,
}

/// Parses `key = value` lines into ordered assignments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads `text` as a scalar of the same JSON type as `like`.
fn typed(like: &Value, text: &str) -> Result<Value> {
    // `none` clears an optional; the value is rejected later if not optional
    if text == "none" {
        return Ok(Value::Null);
    }
    let guess = || -> Value {
        if let Ok(i) = text.parse::<u64>() {
            Value::from(i)
        } else if let Ok(x) = text.parse::<f64>() {
            Value::from(x)
        } else if let Ok(b) = text.parse::<bool>() {
            Value::from(b)
        } else {
            Value::from(text)
        }
    };
    Ok(match like {
        Value::Bool(_) => Value::from(text.parse::<bool>().with_context(|| format!("`{text}` is not a boolean"))?),
        Value::Number(n) if n.is_u64() => {
            Value::from(text.parse::<u64>().with_context(|| format!("`{text}` is not a non-negative integer"))?)
        }
        Value::Number(_) => Value::from(text.parse::<f64>().with_context(|| format!("`{text}` is not a number"))?),
        Value::String(_) => Value::from(text),
        Value::Array(items) => {
            let proto = items.first().cloned().unwrap_or(Value::Null);
            let parts: Result<Vec<Value>> = text
                .split(',')
                .map(|p| if proto.is_null() { Ok(guess_from(p.trim())) } else { typed(&proto, p.trim()) })
                .collect();
            Value::Array(parts?)
        }
        Value::Null => guess(),
        Value::Object(_) => bail!("expected a scalar key, not a section"),
    })
}

fn guess_from(text: &str) -> Value {
    typed(&Value::Null, text).unwrap_or(Value::Null)
}

impl RunConfig {
    /// Applies dotted-key assignments in order.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        for (key, text) in pairs {
            let mut slot = &mut tree;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
            }
            *slot = if key.starts_with("paths.") {
                Value::from(text.as_str())
            } else {
                typed(slot, text).with_context(|| format!("config key `{key}`"))?
            };
        }
        *self = serde_json::from_value(tree).context("invalid config value")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_pairs(&text)?)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gas_core::model::{Precision, Variant};

    #[test]
    fn flat_keys_override_defaults() {
        let text = "# run\nseed = 7\nmodel.variant = gas-local\nmodel.precision = f32\nmodel.filter_widths = 2,3\n\
                    train.epochs = 3 # short\ntrain.pos_weight = 4.5\nknn.min_similarity = 0.2\npaths.records = a.jsonl\n";
        let mut c = RunConfig::default();
        c.apply(&parse_pairs(text).unwrap()).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.model.variant, Variant::GasLocal);
        assert_eq!(c.model.precision, Precision::F32);
        assert_eq!(c.model.filter_widths, vec![2, 3]);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.pos_weight, Some(4.5));
        assert_eq!(c.knn.min_similarity, Some(0.2));
        assert_eq!(c.paths.records.as_deref(), Some(Path::new("a.jsonl")));
        // later assignment wins; `none` clears optionals
        c.apply(&[("train.pos_weight".into(), "none".into()), ("train.epochs".into(), "5".into())]).unwrap();
        assert_eq!(c.train.pos_weight, None);
        assert_eq!(c.train.epochs, 5);
    }

    #[test]
    fn bad_keys_and_values_rejected() {
        let mut c = RunConfig::default();
        assert!(c.apply(&[("train.epoch".into(), "3".into())]).is_err());
        assert!(c.apply(&[("train.epochs".into(), "-1".into())]).is_err());
        assert!(c.apply(&[("model.variant".into(), "huge".into())]).is_err());
        assert!(c.apply(&[("train".into(), "1".into())]).is_err());
        assert!(parse_pairs("no equals sign").is_err());
    }

    #[test]
    fn round_trips_through_pairs() {
        let c = RunConfig::default();
        let mut d = RunConfig::default();
        d.apply(&[("sif.a".into(), "0.001".into())]).unwrap();
        assert_eq!(c, d);
    }
}
