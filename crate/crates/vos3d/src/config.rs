//! Run configuration: a hierarchical text file with sections for the model,
//! the inference schedule, training and data. Unknown keys are rejected and
//! cross-section consistency is validated with named errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::Normalization;
use crate::pipeline::ClipScheduleConfig;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    /// `JPEGImages/<seq>` + `Annotations/<seq>`, densely annotated.
    Davis,
    /// Same layout, annotations may be missing for some frames.
    Sparse,
    /// `<sample>/image.png` + `<sample>/masks/*.png` per static image.
    ImageInstances,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub root: Option<PathBuf>,
    pub layout: LayoutKind,
    pub split: Option<String>,
    /// Optional (height, width) every frame is resized to before use.
    pub resize: Option<(usize, usize)>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { root: None, layout: LayoutKind::Davis, split: None, resize: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub schedule: ClipScheduleConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.encoder.validate()?;
        self.model.decoder.validate()?;
        if self.model.normalization.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::config(
                "model.normalization.std components must be positive",
            ));
        }
        self.schedule.validate()?;
        self.train.validate()?;
        self.synth.per_step.validate()?;
        if self.train.clip_length != self.schedule.clip_length {
            return Err(Error::config(format!(
                "train.clip_length ({}) must equal schedule.clip_length ({})",
                self.train.clip_length, self.schedule.clip_length
            )));
        }
        if let Some((h, w)) = self.data.resize {
            if h == 0 || w == 0 {
                return Err(Error::config("data.resize dimensions must be positive"));
            }
        }
        Ok(())
    }
}

/// Parse and fully validate a run configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text)
        .map_err(|e| Error::config(format!("malformed config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}
