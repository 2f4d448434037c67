//! `key = value` config files layered under command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cora::training::{ModelConfig, TrainConfig};
use serde_json::{Map, Value};

/// Effective training and model settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

/// Keys that belong to the model rather than the training run.
const MODEL_KEYS: [&str; 7] = ["dim", "word_dim", "heads", "max_rank", "oa_layers", "oo_layers", "leaky_slope"];

impl Settings {
    /// Defaults overridden by the pairs in `text`, one `key = value` per line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut train = serde_json::to_value(TrainConfig::default())?;
        let mut model = serde_json::to_value(ModelConfig::default())?;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", n + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            let target = if MODEL_KEYS.contains(&key) { &mut model } else { &mut train };
            set_number(target, key, value).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(Self {
            train: serde_json::from_value(train)?,
            model: serde_json::from_value(model)?,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_text(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }

    /// Every effective value, for the run log.
    pub fn describe(&self) -> String {
        let mut all = Map::new();
        for v in [serde_json::to_value(&self.train), serde_json::to_value(&self.model)] {
            if let Ok(Value::Object(m)) = v {
                all.extend(m);
            }
        }
        Value::Object(all).to_string()
    }
}

fn set_number(target: &mut Value, key: &str, value: &str) -> Result<()> {
    let obj = target.as_object_mut().expect("configs serialize to objects");
    let Some(slot) = obj.get_mut(key) else {
        bail!("unknown config key {key:?}");
    };
    *slot = if slot.is_u64() {
        Value::from(value.parse::<u64>().with_context(|| format!("{key} expects a nonnegative integer"))?)
    } else {
        let x: f64 = value.parse().with_context(|| format!("{key} expects a number"))?;
        serde_json::Number::from_f64(x)
            .map(Value::Number)
            .with_context(|| format!("{key} must be finite"))?
    };
    Ok(())
}
