use std::path::Path;

use icdscribe_core::dataset::Vocabulary;
use icdscribe_core::fusion::TrainState;
use icdscribe_core::model::Seq2Seq;
use icdscribe_core::tensor::{AdamState, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_VERSION: &str = "ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub config: RunConfig,
    /// Content words in id order.
    pub vocabulary: Vec<String>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub validation_wer: Option<f64>,
    /// Lowest validation WER seen up to this epoch.
    pub best_validation_wer: Option<f64>,
    pub params: Vec<NamedTensor>,
    pub optimizer: OptimizerSnapshot,
}

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        vocab: &Vocabulary,
        state: &TrainState,
        validation_wer: Option<f64>,
        best_validation_wer: Option<f64>,
    ) -> Self {
        let params = state
            .model
            .params()
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                trainable: t.requires_grad(),
                values: t.values().to_vec(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION.into(),
            config: config.clone(),
            vocabulary: vocab.content_words().to_vec(),
            epoch: state.epoch,
            step: state.optimizer.step,
            validation_wer,
            best_validation_wer,
            params,
            optimizer: OptimizerSnapshot {
                step: state.optimizer.step,
                m: state.optimizer.m.clone(),
                v: state.optimizer.v.clone(),
            },
        }
    }

    pub fn vocabulary(&self) -> CliResult<Vocabulary> {
        Ok(Vocabulary::from_content_words(&self.vocabulary)?)
    }

    pub fn model(&self) -> CliResult<Seq2Seq> {
        let mut store = ParamStore::new();
        for p in &self.params {
            let t = Tensor::new(p.shape.clone(), p.values.clone())?.with_requires_grad(p.trainable);
            store.add(p.name.clone(), t)?;
        }
        let cfg = self.config.model_config(self.vocabulary()?.len())?;
        Ok(Seq2Seq::from_params(cfg, store)?)
    }

    /// Model, optimizer moments and epoch counter, ready to continue
    /// training.
    pub fn train_state(&self) -> CliResult<TrainState> {
        let model = self.model()?;
        let mut optimizer = AdamState::new(self.config.train.optimizer, model.params());
        let shapes_match = self.optimizer.m.len() == optimizer.m.len()
            && self.optimizer.v.len() == optimizer.v.len()
            && optimizer
                .m
                .iter()
                .zip(&self.optimizer.m)
                .chain(optimizer.v.iter().zip(&self.optimizer.v))
                .all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(CliError::Invalid("optimizer state does not match the parameters".into()));
        }
        optimizer.step = self.optimizer.step;
        optimizer.m = self.optimizer.m.clone();
        optimizer.v = self.optimizer.v.clone();
        Ok(TrainState {
            model,
            optimizer,
            epoch: self.epoch,
            seed: self.config.train_seed(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        #[derive(Deserialize)]
        struct Header {
            version: String,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| icdscribe_core::Error::Format(format!("checkpoint: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(icdscribe_core::Error::Format(format!(
                "checkpoint version {:?}, expected {CHECKPOINT_VERSION:?}",
                header.version
            ))
            .into());
        }
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| icdscribe_core::Error::Format(format!("checkpoint: {e}")))?;
        ckpt.config.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
