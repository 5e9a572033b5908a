//! `ExperimentConfig`: the JSON run description. Command-line flags are
//! applied on top of the file, and the resolved value is what the run
//! manifest records.

use std::fs;
use std::path::{Path, PathBuf};

use refrakt_core::evalharness::{EvalConfig, PreprocessConfig, Scenario};
use refrakt_core::fusion::Modality;
use refrakt_core::nn::TrainConfig;
use refrakt_core::synthgen::DatasetSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset root holding one folder per subject.
    pub dataset: Option<PathBuf>,
    pub modality: Modality,
    pub scenario: Scenario,
    pub out: Option<PathBuf>,
    /// The one experiment seed. It replaces `train.seed` and `synth.seed`.
    pub seed: u64,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub shuffle_labels: bool,
    pub preprocess: PreprocessConfig,
    pub synth: DatasetSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        Self {
            dataset: None,
            modality: Modality::Multimodal,
            scenario: Scenario::Dependent,
            out: None,
            seed: 0,
            train: eval.train,
            train_fraction: eval.train_fraction,
            shuffle_labels: eval.shuffle_labels,
            preprocess: PreprocessConfig::default(),
            synth: DatasetSpec::default(),
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub modality: Option<Modality>,
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub window_len: Option<usize>,
    pub window_stride: Option<usize>,
    pub epochs: Option<usize>,
}

impl ExperimentConfig {
    /// Reads a config file. A run manifest is accepted too; its `config`
    /// member is used, so a finished run can be replayed from its manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {} is not JSON: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("artifacts") && map.contains_key("config") => {
                map.remove("config").unwrap_or_default()
            }
            v => v,
        };
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.dataset {
            self.dataset = Some(d.clone());
        }
        if let Some(m) = o.modality {
            self.modality = m;
        }
        if let Some(s) = o.scenario {
            self.scenario = s;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(w) = o.window_len {
            self.train.window_len = w;
        }
        if let Some(w) = o.window_stride {
            self.train.window_stride = w;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
            let before = self.train.milestones.len();
            self.train.milestones.retain(|&m| m < e);
            if self.train.milestones.len() < before {
                log::warn!("dropped learning-rate milestones at or beyond epoch {e}");
            }
        }
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            train: self.train.clone(),
            train_fraction: self.train_fraction,
            shuffle_labels: self.shuffle_labels,
        }
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    /// The dataset root, which must exist when the run starts.
    pub fn require_dataset(&self) -> Result<&Path, CliError> {
        let d = self.dataset.as_deref().ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
        if !d.is_dir() {
            return Err(CliError::Usage(format!("dataset {} is not a directory", d.display())));
        }
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(CliError::Usage(format!("train_fraction {} outside (0, 1]", self.train_fraction)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        let mut c = ExperimentConfig {
            dataset: Some("data".into()),
            modality: Modality::Gaze,
            scenario: Scenario::Independent,
            seed: 11,
            ..ExperimentConfig::default()
        };
        c.train.lr0 = 0.1 + 0.2;
        c.synth.class_effect_scale = 1.0 / 3.0;
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
    }

    #[test]
    fn flags_override_file_values() {
        let mut c: ExperimentConfig = serde_json::from_str(r#"{"modality": "eog", "seed": 3, "train": {"epochs": 50, "milestones": [10, 40]}}"#).unwrap();
        c.apply(&Overrides {
            modality: Some(Modality::Gaze),
            epochs: Some(20),
            window_len: Some(30),
            ..Overrides::default()
        });
        assert_eq!(c.modality, Modality::Gaze);
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.train.milestones, vec![10]);
        assert_eq!(c.train.window_len, 30);
        assert_eq!((c.seed, c.train.seed, c.synth.seed), (3, 3, 3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"epochs": 3}"#).is_err());
    }
}
