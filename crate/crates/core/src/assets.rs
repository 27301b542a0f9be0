//! Bundled corpora and the default desk-scale training recipe.

use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::model::{chunk, tokenize, train_toy, FfnKind, ModelConfig, ToyTransformer, TrainConfig};

pub const TRAIN_CORPUS: &str = include_str!("../assets/train_corpus.txt");
/// One English sentence.
pub const SENTENCE: &str = include_str!("../assets/sentence.txt");
/// Unrelated content words separated by spaces.
pub const RANDOM_WORDS: &str = include_str!("../assets/random_words.txt");

/// Length of the chunks the bundled corpora are cut into.
pub const CHUNK_LEN: usize = 64;
/// Fraction of the training text reserved as held-out data (taken from the end).
pub const HELD_OUT_FRACTION: f64 = 0.1;

pub fn sentence_tokens() -> Vec<usize> {
    tokenize(SENTENCE.trim_end())
}

pub fn random_word_tokens() -> Vec<usize> {
    tokenize(RANDOM_WORDS.trim_end())
}

const RELU_CHECKPOINT: &str = include_str!("../assets/model_relu.json");
const SWIGLU_CHECKPOINT: &str = include_str!("../assets/model_swiglu.json");

fn held_out_cut(tokens: &[usize]) -> usize {
    ((1.0 - HELD_OUT_FRACTION) * tokens.len() as f64).round() as usize
}

/// Splits text into training and held-out chunk sets.
pub fn split_corpus(text: &str) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let tokens = tokenize(text);
    let cut = held_out_cut(&tokens);
    (chunk(&tokens[..cut], CHUNK_LEN), chunk(&tokens[cut..], CHUNK_LEN))
}

/// Training part of `text` as one contiguous sequence, so sampled windows
/// may span the full context length.
pub fn training_stream(text: &str) -> Vec<Vec<usize>> {
    let tokens = tokenize(text);
    let cut = held_out_cut(&tokens);
    vec![tokens[..cut].to_vec()]
}

pub fn train_split() -> Vec<Vec<usize>> {
    split_corpus(TRAIN_CORPUS).0
}

pub fn held_out_split() -> Vec<Vec<usize>> {
    split_corpus(TRAIN_CORPUS).1
}

pub fn default_model_config(kind: FfnKind) -> ModelConfig {
    ModelConfig::default().with_kind(kind)
}

/// Default model of the given kind trained on the bundled corpus with the
/// default recipe. Deterministic; takes one to two minutes.
pub fn trained_model(kind: FfnKind) -> Result<ToyTransformer> {
    let init = ToyTransformer::init(&default_model_config(kind))?;
    let (model, _) = train_toy(&init, &training_stream(TRAIN_CORPUS), &TrainConfig::default())?;
    Ok(model)
}

/// Checkpoint shipped with the crate, identical to [`trained_model`].
pub fn bundled_model(kind: FfnKind) -> Result<ToyTransformer> {
    let text = match kind {
        FfnKind::Relu => RELU_CHECKPOINT,
        FfnKind::Swiglu => SWIGLU_CHECKPOINT,
    };
    ToyTransformer::from_checkpoint(&Checkpoint::from_json(text)?)
}
