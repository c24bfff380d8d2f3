//! Recurrent encoder-decoder over count-grid sequences.
//!
//! Per step, the observed counts are concatenated with static terrain and
//! faction embeddings, encoded to a vector, fed through a latent LSTM whose
//! state spans the game, and decoded per cell back to counts (as a delta on
//! the observation) and per type to existence logits.

mod config;
mod net;
mod train;

pub use config::{BlockKind, EncoderKind, ModelConfig};
pub use net::{ForwardPass, LossValues, LossVars, Model};
pub use train::{predict_all, train, validate, TrainConfig, TrainOutcome, Validation};

use std::path::Path;

use defog_tensor::{read_checkpoint, write_checkpoint};

use crate::error::{Error, Result};

pub fn save_model(path: &Path, model: &Model<f32>) -> Result<()> {
    write_checkpoint(path, &model.config().to_text(), model.params())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    let ckpt = read_checkpoint(path).map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
    let config = ModelConfig::from_text(&ckpt.meta)?;
    Model::with_params(config, ckpt.params)
}
