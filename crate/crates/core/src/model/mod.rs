//! Model backends: a masked LM that proposes substitutes, a seq2seq
//! paraphrase model and a causal LM used as black-box sentence scorers.
//!
//! The bundled implementations are small word-level networks that run on a
//! CPU in milliseconds. They stand in for BERT/BART-sized checkpoints behind
//! the same traits.

mod causal;
mod mlm;
mod seq2seq;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use causal::TinyCausalLm;
pub use mlm::TinyMlm;
pub use seq2seq::TinySeq2Seq;

use crate::nn::Activation;
use crate::sentence::Sentence;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("MODEL_FAILURE: position {position} out of range for {len} tokens")]
    BadPosition { position: usize, len: usize },
    #[error("LENGTH_OVERFLOW: {len} tokens exceeds context window of {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("MODEL_FAILURE: empty input")]
    EmptyInput,
    #[error("MODEL_FAILURE: checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("MODEL_FAILURE: checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// A model that predicts the token at a masked position.
pub trait MaskedLm: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Logits over the whole vocabulary for `position` with that token masked.
    fn masked_logits(&self, sentence: &Sentence, position: usize) -> Result<Vec<f64>, ModelError>;
}

/// A masked LM whose parameters can be updated from logit gradients.
pub trait TrainableMlm: MaskedLm + Clone {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Forward pass keeping intermediates; dropout applies when `rate > 0`.
    fn forward_train(
        &self,
        sentence: &Sentence,
        position: usize,
        dropout: Option<(f64, &mut rand_chacha::ChaCha8Rng)>,
    ) -> Result<Activation, ModelError>;

    /// Accumulates `dL/dθ` for a sparse `dL/dlogits`.
    fn backward(&self, act: &Activation, dlogits: &[(usize, f64)], grad: &mut [f64]);

    fn save(&self, path: &Path) -> Result<(), ModelError>;
}

/// A conditional model `p(target | source)` scored token by token.
pub trait Seq2SeqLm: Send + Sync {
    fn vocab(&self) -> &Vocab;
    fn max_len(&self) -> usize;

    /// Log-probabilities over the vocabulary for the next target token.
    fn step_log_probs(&self, source: &[usize], prefix: &[usize]) -> Vec<f64>;

    /// Teacher-forced log-probability of each target token.
    fn sequence_log_probs(&self, source: &[usize], target: &[usize]) -> Vec<f64>;
}

/// A left-to-right language model.
pub trait CausalLm: Send + Sync {
    fn vocab(&self) -> &Vocab;
    fn max_len(&self) -> usize;

    fn step_log_probs(&self, prefix: &[usize]) -> Vec<f64>;

    /// Log-probability of each of `tokens[start..]` given everything before it.
    fn sequence_log_probs(&self, tokens: &[usize], start: usize) -> Vec<f64>;
}

pub fn ids(vocab: &Vocab, tokens: &[String]) -> Vec<usize> {
    tokens.iter().map(|t| vocab.id_or_unk(t)).collect()
}

pub(crate) fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(value)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub(crate) fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ModelError> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
