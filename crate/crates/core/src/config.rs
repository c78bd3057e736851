//! Flat `key = value` configuration covering every model and training field,
//! plus named presets. Defaults live here and nowhere else.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::ModelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}` ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("unknown preset `{0}` (expected default, smoke or tiny)")]
    UnknownPreset(String),
    #[error("invalid training config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Patch extent along `x` (rows).
    pub patch_x: usize,
    /// Patch extent along `y` (columns).
    pub patch_y: usize,
    pub base_lr: f64,
    pub warm_epochs: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub total_epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// Steps per epoch per scene.
    pub patches_per_scene: usize,
    /// Write `epoch_{e}` every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            patch_x: 64,
            patch_y: 64,
            base_lr: 1e-3,
            warm_epochs: 200,
            decay_every: 100,
            decay_factor: 10.0,
            total_epochs: 400,
            seed: 0,
            augment: true,
            patches_per_scene: 50,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patch_x == 0 || self.patch_y == 0 {
            return bad("patch extents must be positive");
        }
        if self.patches_per_scene == 0 || self.decay_every == 0 {
            return bad("patches_per_scene and decay_every must be positive");
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) || !(self.decay_factor >= 1.0) {
            return bad("base_lr must be positive and decay_factor at least 1");
        }
        Ok(())
    }
}

/// Blur synthesis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// 3 (translation) or 6 (translation and rotation).
    pub dof: u8,
    pub samples: usize,
    /// Bound on each translation component, in units of the focal-plane depth.
    pub trans_mag: f64,
    /// Bound on each rotation component, radians.
    pub rot_mag: f64,
    /// Distance between adjacent views.
    pub baseline: f64,
    /// Pixels of image motion per unit lateral translation.
    pub disparity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dof: 3,
            samples: crate::synth::DEFAULT_SAMPLES,
            trans_mag: 0.1,
            rot_mag: 0.01,
            baseline: crate::synth::DEFAULT_BASELINE,
            disparity: 40.0,
            seed: 0,
        }
    }
}

/// Model, training and synthesis settings, as read from one file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-size network and training schedule.
    Default,
    /// Reduced network for the single-patch overfit run: 2000 steps with the
    /// standard schedule compressed to one scene and five patches per epoch.
    Smoke,
    /// Very small network for tests and quick experiments.
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "default" => Ok(Self::Default),
            "smoke" => Ok(Self::Smoke),
            "tiny" => Ok(Self::Tiny),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Default => Self::default(),
            Preset::Smoke => Self {
                model: ModelConfig {
                    channels: 16,
                    num_blocks: 4,
                    attention_hidden: 32,
                    residual: true,
                    ..ModelConfig::default()
                },
                train: TrainConfig {
                    batch_size: 1,
                    augment: false,
                    patches_per_scene: 5,
                    total_epochs: 400,
                    checkpoint_every: 0,
                    ..TrainConfig::default()
                },
                synth: SynthConfig::default(),
            },
            Preset::Tiny => Self {
                model: ModelConfig {
                    u: 3,
                    v: 3,
                    channels: 8,
                    num_blocks: 2,
                    attention_hidden: 16,
                    residual: true,
                    ..ModelConfig::default()
                },
                train: TrainConfig {
                    batch_size: 1,
                    patch_x: 16,
                    patch_y: 16,
                    patches_per_scene: 10,
                    total_epochs: 20,
                    checkpoint_every: 10,
                    ..TrainConfig::default()
                },
                synth: SynthConfig::default(),
            },
        }
    }

    fn sections(&self) -> [(&'static str, Map<String, Value>); 3] {
        [
            ("model", to_map(&self.model)),
            ("train", to_map(&self.train)),
            ("synth", to_map(&self.synth)),
        ]
    }

    /// Every field as `key = value` under `# model`, `# train` and `# synth`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, map) in self.sections() {
            let _ = writeln!(out, "# {section}");
            for (k, v) in map {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Apply `key = value` overrides; later entries win. Keys are unique
    /// across sections except `seed`, which sets both the training and the
    /// synthesis seed.
    pub fn apply<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<(), ConfigError> {
        let mut sections = self.sections();
        for (key, raw) in pairs {
            let mut found = false;
            for (_, map) in sections.iter_mut() {
                if let Some(slot) = map.get_mut(key) {
                    *slot = parse_like(slot, key, raw)?;
                    found = true;
                }
            }
            if !found {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
        }
        let bad = |e: serde_json::Error| ConfigError::Invalid(e.to_string());
        let [(_, model), (_, train), (_, synth)] = sections;
        self.model = serde_json::from_value(Value::Object(model)).map_err(bad)?;
        self.train = serde_json::from_value(Value::Object(train)).map_err(bad)?;
        self.synth = serde_json::from_value(Value::Object(synth)).map_err(bad)?;
        Ok(())
    }

    pub fn parse_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let pairs = parse_pairs(text)?;
        self.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.parse_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }
}

fn to_map<S: Serialize>(s: &S) -> Map<String, Value> {
    match serde_json::to_value(s) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config structs serialize as objects"),
    }
}

/// Parse `raw` with the type of the current value in `slot`.
fn parse_like(slot: &Value, key: &str, raw: &str) -> Result<Value, ConfigError> {
    let err = |reason: &str| ConfigError::BadValue {
        key: key.to_string(),
        value: raw.to_string(),
        reason: reason.to_string(),
    };
    match slot {
        Value::Bool(_) => match raw {
            "true" | "1" | "yes" | "on" => Ok(Value::Bool(true)),
            "false" | "0" | "no" | "off" => Ok(Value::Bool(false)),
            _ => Err(err("expected a boolean")),
        },
        Value::Number(n) if n.is_u64() => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| err("expected a non-negative integer")),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| err("expected a number"))?;
            serde_json::Number::from_f64(v)
                .map(Value::Number)
                .ok_or_else(|| err("expected a finite number"))
        }
        _ => Err(err("unsupported field type")),
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: line.to_string(),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
