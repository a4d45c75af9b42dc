use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::NetConfig;
use crate::objectives::LossWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Teacher path only, trained on synthetic pairs.
    #[default]
    SynAtm,
    /// Teacher plus student path on unpaired target-domain frames.
    RealAtm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Synthetic training pairs (clean + degraded).
    pub teacher_manifest: Option<PathBuf>,
    /// Target-domain training frames; only degraded paths are read.
    pub student_manifest: Option<PathBuf>,
    /// Held-out synthetic pairs scored with PSNR/SSIM each epoch.
    pub validation_manifest: Option<PathBuf>,
    /// Held-out target-domain frames scored with PIQE each epoch.
    pub student_validation_manifest: Option<PathBuf>,
    /// Upper bound on validation images per split; 0 means all.
    pub validation_limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// `random`, `null`, or a path to pretrained feature weights.
    pub feature_extractor: String,
    pub feature_seed: u64,
    pub data: DataConfig,
    pub weights: LossWeights,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::SynAtm,
            epochs: 200,
            iters_per_epoch: 1500,
            batch_size: 16,
            crop_size: 160,
            lr_init: 1e-4,
            lr_final: 5e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
            checkpoint_every: 1,
            feature_extractor: "random".into(),
            feature_seed: 0,
            data: DataConfig::default(),
            weights: LossWeights::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_iters(&self) -> usize {
        self.epochs * self.iters_per_epoch
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.teacher_manifest,
            &mut d.student_manifest,
            &mut d.validation_manifest,
            &mut d.student_validation_manifest,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        let fe = Path::new(&self.feature_extractor);
        if !matches!(self.feature_extractor.as_str(), "random" | "null") && fe.is_relative() {
            self.feature_extractor = base.join(fe).to_string_lossy().into_owned();
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides addressed by dotted paths
    /// (`epochs=3`, `net.base_channels=16`, `data.student_manifest=...`).
    /// Values parse as TOML literals and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).expect("config serializes");
        let mut problems = Vec::new();
        for item in overrides {
            let Some((key, raw)) = item.split_once('=') else {
                problems.push(format!("override `{item}` is not of the form key=value"));
                continue;
            };
            let key = key.trim();
            let value = parse_literal(raw.trim());
            if let Err(e) = set_path(&mut root, key, value) {
                problems.push(e);
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))
    }

    /// Every violated constraint, named by its config key.
    pub fn validate(&self) -> Vec<String> {
        let mut p = self.validate_hyperparameters();
        if self.data.teacher_manifest.is_none() {
            p.push("data.teacher_manifest is required".into());
        }
        if self.mode == TrainMode::RealAtm && self.data.student_manifest.is_none() {
            p.push("data.student_manifest is required when mode = real_atm".into());
        }
        p
    }

    /// Constraints on everything except the data section.
    pub fn validate_hyperparameters(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (k, v) in [
            ("epochs", self.epochs),
            ("iters_per_epoch", self.iters_per_epoch),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                p.push(format!("{k} must be positive"));
            }
        }
        if self.crop_size < crate::nets::MIN_DISC_INPUT || !self.crop_size.is_multiple_of(2) {
            p.push(format!(
                "crop_size must be even and at least {}, got {}",
                crate::nets::MIN_DISC_INPUT,
                self.crop_size
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            p.push(format!("lr_init must be positive, got {}", self.lr_init));
        }
        if !(self.lr_final >= 0.0 && self.lr_final <= self.lr_init) {
            p.push(format!("lr_final must lie in [0, lr_init], got {}", self.lr_final));
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                p.push(format!("{k} must lie in [0, 1), got {v}"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            p.push(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        p.extend(self.weights.validate());
        p.extend(self.net.validate());
        p
    }

    pub fn check(&self) -> Result<()> {
        let p = self.validate();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> std::result::Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| format!("override key `{key}`: `{}` is not a section", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            let slot = table.get(*part);
            let known = slot.is_some() || is_optional_key(key);
            if !known {
                return Err(format!("unknown config key `{key}`"));
            }
            let value = match (slot, value) {
                (Some(toml::Value::Float(_)), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
                (Some(toml::Value::String(_)), v @ (toml::Value::Integer(_) | toml::Value::Float(_))) => {
                    toml::Value::String(v.to_string())
                }
                (_, v) => v,
            };
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .get_mut(*part)
            .ok_or_else(|| format!("unknown config key `{key}`"))?;
    }
    unreachable!("split always yields at least one part")
}

/// Keys that serialize as absent when unset.
fn is_optional_key(key: &str) -> bool {
    matches!(
        key,
        "data.teacher_manifest" | "data.student_manifest" | "data.validation_manifest" | "data.student_validation_manifest"
    )
}
