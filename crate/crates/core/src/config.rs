//! Experiment configuration: one JSON document aggregating the per-module
//! configs, with strict unknown-key rejection, documented defaults, and
//! cross-field validation. The seed fully determines every stochastic
//! choice downstream (init, shuffling, masking, synthesis).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::decoder::DecodeConfig;
use crate::enhance::EnhanceConfig;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::model::ModelConfig;
use crate::synth::SynthSpec;
use crate::tokenizer::TokenizerConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generate a synthetic tone-word corpus in the prepare stage.
    Synth,
    /// Ingest an existing manifest.
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Manifest path for `source = "manifest"`.
    pub manifest: Option<PathBuf>,
    pub synth: SynthSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            manifest: None,
            synth: SynthSpec::default(),
        }
    }
}

/// SNR grid entry: a finite dB value, or infinity for the clean condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrPoint(pub f64);

impl Serialize for SnrPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for SnrPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(SnrPoint)
                .ok_or_else(|| D::Error::custom("bad SNR number")),
            serde_json::Value::String(s) if s == "inf" => Ok(SnrPoint(f64::INFINITY)),
            _ => Err(D::Error::custom("SNR must be a number or \"inf\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub frontend: FrontendConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub enhance: EnhanceConfig,
    pub data: DataConfig,
    /// Acoustic context depth k for conversational tasks; defaults to 3
    /// preceding utterances for DA and 0 otherwise.
    context_turns: Option<i64>,
    pub multitask_asr: bool,
    pub seed: u64,
    /// Splits decoded and scored by stages 5 and 6.
    pub eval_splits: Vec<String>,
    /// SNR sweep grid in dB; "inf" marks the clean condition.
    pub snr_grid_db: Vec<SnrPoint>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Ic,
            frontend: FrontendConfig::default(),
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            enhance: EnhanceConfig::default(),
            data: DataConfig::default(),
            context_turns: None,
            multitask_asr: false,
            seed: 0,
            eval_splits: vec!["test".to_string()],
            snr_grid_db: vec![
                SnrPoint(0.0),
                SnrPoint(5.0),
                SnrPoint(10.0),
                SnrPoint(20.0),
                SnrPoint(f64::INFINITY),
            ],
        }
    }
}

impl ExperimentConfig {
    /// Resolved context depth: explicit value, else 3 for DA, else 0.
    pub fn context_depth(&self) -> usize {
        match self.context_turns {
            Some(k) => k.max(0) as usize,
            None => {
                if self.task == Task::Da {
                    3
                } else {
                    0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.context_turns {
            if k < 0 {
                return Err(Error::Config(format!(
                    "context_turns must be non-negative, got {k}"
                )));
            }
        }
        self.frontend.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        self.enhance.validate()?;
        self.data.synth.validate()?;
        if self.data.source == DataSource::Manifest && self.data.manifest.is_none() {
            return Err(Error::Config(
                "data.source is \"manifest\" but data.manifest is not set".into(),
            ));
        }
        if self.eval_splits.is_empty() {
            return Err(Error::Config("eval_splits must not be empty".into()));
        }
        Ok(())
    }

    pub fn with_context_turns(mut self, k: Option<i64>) -> Self {
        self.context_turns = k;
        self
    }
}

/// Loads and validates an experiment config JSON document; omitted fields
/// take the documented defaults, unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
