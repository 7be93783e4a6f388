//! Run configuration: all hyperparameters in one serializable struct,
//! loadable from a JSON file with dotted `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::judge::JudgeSpec;
use crate::weighting::{BaseLossKind, Direction};

/// Epoch-dependent target mean weight:
/// k(epoch) = amplitude * (1 - exp(-epoch / time_constant)) + offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KSchedule {
    pub amplitude: f64,
    pub time_constant: f64,
    pub offset: f64,
}

impl Default for KSchedule {
    fn default() -> Self {
        KSchedule {
            amplitude: 0.6,
            time_constant: 200.0,
            offset: 0.3,
        }
    }
}

impl KSchedule {
    pub fn value(&self, epoch: u64) -> f64 {
        self.amplitude * (1.0 - (-(epoch as f64) / self.time_constant).exp()) + self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub scale: usize,
    pub epochs: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub stride: usize,
    /// Weight samples per SR update (T).
    pub samples: usize,
    /// Relaxation temperature of the weight sampler.
    pub temperature: f32,
    /// Offset in the weight-criterion ratio.
    pub epsilon_wc: f32,
    pub k_schedule: KSchedule,
    pub base_loss: BaseLossKind,
    pub direction: Direction,
    pub lr_theta: f32,
    pub lr_phi: f32,
    /// Global gradient-norm clip for both optimizers.
    pub grad_clip: f32,
    pub sr_depth: usize,
    pub sr_width: usize,
    pub judge: JudgeSpec,
    /// Train the four-loss comparison harness instead of a single model.
    pub four_loss: bool,
    /// Dataset manifest path; resolved relative to the config file.
    pub manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            scale: 2,
            epochs: 10,
            batch_size: 8,
            patch_size: 32,
            stride: 32,
            samples: 4,
            temperature: 0.5,
            epsilon_wc: 1e-6,
            k_schedule: KSchedule::default(),
            base_loss: BaseLossKind::L1,
            direction: Direction::Inverted,
            lr_theta: 1e-4,
            lr_phi: 1e-4,
            grad_clip: 1.0,
            sr_depth: 8,
            sr_width: 32,
            judge: JudgeSpec::default(),
            four_loss: false,
            manifest: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples (T) must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.lr_theta > 0.0 && self.lr_phi > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(1..=8).contains(&self.scale) {
            return Err(Error::Config(format!("scale {} out of range", self.scale)));
        }
        if self.patch_size % self.scale != 0 {
            return Err(Error::Config(format!(
                "patch_size {} not divisible by scale {}",
                self.patch_size, self.scale
            )));
        }
        if self.sr_depth < 2 {
            return Err(Error::Config("sr_depth must be at least 2".into()));
        }
        Ok(())
    }

    /// Content hash of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Parse `key=value` pairs as dotted JSON-pointer overrides.
pub fn parse_override(raw: &str) -> Result<(String, serde_json::Value)> {
    let (key, value) = raw.split_once('=').ok_or_else(|| {
        Error::Config(format!("override `{raw}` is not of the form key=value"))
    })?;
    let parsed = serde_json::from_str::<serde_json::Value>(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn apply_override(root: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override key `{key}`: `{part}` is not an object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

/// Load a config file, apply overrides, and deserialize strictly (unknown
/// keys are errors naming the key). Relative manifest paths are resolved
/// against the config file's directory.
pub fn load_config(path: &Path, overrides: &[(String, serde_json::Value)]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for (key, v) in overrides {
        apply_override(&mut value, key, v.clone())?;
    }
    let mut config: TrainConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(manifest) = &config.manifest {
        if manifest.is_relative() {
            if let Some(dir) = path.parent() {
                config.manifest = Some(dir.join(manifest));
            }
        }
    }
    config.validate()?;
    Ok(config)
}
