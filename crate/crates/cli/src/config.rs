use std::path::{Path, PathBuf};

use icdscribe_core::dataset::GenerationConfig;
use icdscribe_core::fusion::{FusionConfig, TrainConfig};
use icdscribe_core::metrics::EvalConfig;
use icdscribe_core::model::{DecoderConfig, EncoderConfig, ModelConfig};
use icdscribe_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

const MODEL_STREAM: u64 = 0x30DE1;
const TRAIN_STREAM: u64 = 0x7A1E;
const SUBSET_STREAM: u64 = 0x5B5E7;

/// Which ICD codes to generate and which speaker to hold out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Tab-separated `code<TAB>description` file, or `builtin`.
    pub icd_list: String,
    pub held_out_speaker: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            icd_list: "builtin".into(),
            held_out_speaker: 2,
        }
    }
}

/// Which training utterances are used and how many are held back for
/// model selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsetConfig {
    /// `0` uses every training utterance.
    pub max_utterances: usize,
    /// Utterances held back from training for the per-epoch WER. `0`
    /// measures WER on the training utterances instead.
    pub validation_utterances: usize,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        SubsetConfig {
            max_utterances: 0,
            validation_utterances: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub order: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { order: 10 }
    }
}

/// Every setting of a run in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model initialization, subset selection and training.
    pub seed: u64,
    pub data: DataConfig,
    pub dataset: GenerationConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub lm: LmConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub subset: SubsetConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.dataset.validate()?;
        self.fusion.validate()?;
        self.train.validate()?;
        if self.data.held_out_speaker >= self.dataset.speakers {
            return Err(CliError::Invalid(format!(
                "held_out_speaker {} is not among the {} speakers",
                self.data.held_out_speaker, self.dataset.speakers
            )));
        }
        if self.lm.order == 0 {
            return Err(CliError::Invalid("lm.order must be at least 1".into()));
        }
        if self.fusion.max_decode_len != self.decoder.max_decode_len {
            return Err(CliError::Invalid(format!(
                "fusion.max_decode_len {} differs from decoder.max_decode_len {}",
                self.fusion.max_decode_len, self.decoder.max_decode_len
            )));
        }
        self.model_config(5)?;
        Ok(())
    }

    pub fn icd_list_path(&self) -> Option<PathBuf> {
        (self.data.icd_list != "builtin").then(|| PathBuf::from(&self.data.icd_list))
    }

    pub fn model_config(&self, vocab_size: usize) -> CliResult<ModelConfig> {
        let cfg = ModelConfig {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            input_dim: self.dataset.frontend.n_mels,
            vocab_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, &[MODEL_STREAM])
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, &[TRAIN_STREAM])
    }

    pub fn subset_seed(&self) -> u64 {
        derive_seed(self.seed, &[SUBSET_STREAM])
    }
}
