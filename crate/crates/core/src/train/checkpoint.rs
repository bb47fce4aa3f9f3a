use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use crate::autodiff::ParamStore;
use crate::config::ModelConfig;
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::model::FocalModel;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Position of a seeded ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position, as a decimal string (128-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position '{}'", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: ModelConfig,
    pub config_hash: String,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub adam: AdamState,
    pub epoch: usize,
    pub step: u64,
    pub rng: RngState,
    pub best_dev_acc: Option<f64>,
}

impl Checkpoint {
    pub fn capture(
        model: &FocalModel,
        adam: &AdamState,
        epoch: usize,
        rng: RngState,
        best_dev_acc: Option<f64>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: model.config.clone(),
            config_hash: model.config.hash(),
            vocab: model.vocab.clone(),
            params: model.params.clone(),
            adam: adam.clone(),
            epoch,
            step: adam.step,
            rng,
            best_dev_acc,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {}",
                c.format
            )));
        }
        if c.config.hash() != c.config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match the stored configuration".into(),
            ));
        }
        c.params.reindex();
        c.vocab.reindex();
        if !c.adam.matches(&c.params) {
            return Err(Error::Checkpoint(
                "optimizer moments do not match parameters".into(),
            ));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> Result<FocalModel> {
        FocalModel::from_parts(self.config.clone(), self.vocab.clone(), self.params.clone())
    }
}
