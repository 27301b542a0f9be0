pub mod ablate;
pub mod fig2;
pub mod sparsify;
pub mod theory;
pub mod train;

use std::path::Path;

use anyhow::{bail, Context, Result};
use dalab::assets::{bundled_model, default_model_config, RANDOM_WORDS, SENTENCE, TRAIN_CORPUS};
use dalab::checkpoint::Checkpoint;
use dalab::model::{tokenize, ToyTransformer};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn read_text(path: Option<&Path>, bundled: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read corpus {}", p.display())),
        None => Ok(bundled.to_string()),
    }
}

pub fn train_text(config: &RunConfig) -> Result<String> {
    read_text(config.corpus.train.as_deref(), TRAIN_CORPUS)
}

pub fn sentence_tokens(config: &RunConfig) -> Result<Vec<usize>> {
    Ok(tokenize(read_text(config.corpus.sentence.as_deref(), SENTENCE)?.trim_end()))
}

pub fn random_word_tokens(config: &RunConfig) -> Result<Vec<usize>> {
    Ok(tokenize(read_text(config.corpus.random_words.as_deref(), RANDOM_WORDS)?.trim_end()))
}

/// The configured checkpoint, or the bundled trained model for the default
/// architecture of `model.ffn_kind` (whatever the model seed).
pub fn load_model(config: &RunConfig) -> Result<ToyTransformer> {
    match &config.checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
            let ckpt = Checkpoint::from_json(&text).with_context(|| format!("invalid checkpoint {}", path.display()))?;
            Ok(ToyTransformer::from_checkpoint(&ckpt)?)
        }
        None => {
            let kind = config.model.ffn_kind;
            let arch = dalab::model::ModelConfig {
                seed: config.model.seed,
                ..default_model_config(kind)
            };
            if config.model != arch {
                bail!("no bundled checkpoint for a non-default model config; set `checkpoint`");
            }
            Ok(bundled_model(kind)?)
        }
    }
}

pub fn model_hash(model: &ToyTransformer) -> String {
    hex::encode(Sha256::digest(model.to_checkpoint().to_json().as_bytes()))
}
