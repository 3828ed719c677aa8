//! Model-based sentence quality scores.
//!
//! The seq2seq backend returns the conditional log-likelihood of the
//! modified sentence given the original one, summed (or averaged) over the
//! modified sentence's tokens. The prompted causal-LM backend scores only
//! the modified-sentence region of a paraphrase prompt.

mod cache;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheError, CacheKey, ScoreCache};

use crate::model::{ids, CausalLm, ModelError, Seq2SeqLm, TinyCausalLm, TinySeq2Seq};
use crate::sentence::{tokenize, Sentence};

/// Paraphrase prompt used for prompted causal-LM scoring.
pub const ORIGINAL_SLOT: &str = "{original sentence}";
pub const MODIFIED_SLOT: &str = "{the modified sentence}";

pub const GPTSCORE_PARAPHRASE_TEMPLATE: &str =
    "Rewrite the following text with the same semantics. {original sentence} In other words, {the modified sentence}";

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("BACKEND_FAILURE: {0}")]
    BackendFailure(String),
    #[error("LENGTH_OVERFLOW: {len} tokens exceeds context window of {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("invalid scorer config: {0}")]
    InvalidConfig(String),
    #[error("EMPTY_INPUT: batch of modified sentences is empty")]
    EmptyBatch,
}

impl From<ModelError> for ScorerError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::LengthOverflow { len, max } => ScorerError::LengthOverflow { len, max },
            other => ScorerError::BackendFailure(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backend {
    Seq2seqLl,
    CausalLmPrompted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub backend: Backend,
    pub model_id: String,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub prompt_template: Option<String>,
}

impl ScorerConfig {
    /// Seq2seq log-likelihood scoring, no prompt, summed over tokens.
    pub fn seq2seq(model_id: impl Into<String>) -> Self {
        Self {
            backend: Backend::Seq2seqLl,
            model_id: model_id.into(),
            aggregation: Aggregation::Sum,
            prompt_template: None,
        }
    }

    /// Causal-LM scoring under the paraphrase prompt.
    pub fn gptscore(model_id: impl Into<String>) -> Self {
        Self {
            backend: Backend::CausalLmPrompted,
            model_id: model_id.into(),
            aggregation: Aggregation::Sum,
            prompt_template: Some(GPTSCORE_PARAPHRASE_TEMPLATE.to_string()),
        }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        match (self.backend, &self.prompt_template) {
            (Backend::Seq2seqLl, Some(_)) => Err(ScorerError::InvalidConfig(
                "SEQ2SEQ_LL takes no prompt_template".into(),
            )),
            (Backend::CausalLmPrompted, None) => Err(ScorerError::InvalidConfig(
                "CAUSAL_LM_PROMPTED requires a prompt_template".into(),
            )),
            (Backend::CausalLmPrompted, Some(t)) if !t.contains(MODIFIED_SLOT) => Err(
                ScorerError::InvalidConfig("prompt_template lacks a {the modified sentence} slot".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Identifier that separates cached values of different configurations.
    pub fn scorer_id(&self) -> String {
        match (&self.backend, &self.prompt_template) {
            (Backend::Seq2seqLl, _) => format!("seq2seq_ll:{}:{}", self.model_id, self.aggregation),
            (Backend::CausalLmPrompted, t) => format!(
                "causal_lm_prompted:{}:{}:{:016x}",
                self.model_id,
                self.aggregation,
                fnv1a(t.as_deref().unwrap_or("").as_bytes())
            ),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x100000001b3)
    })
}

#[derive(Clone)]
pub enum ScoringModel {
    Seq2Seq(Arc<dyn Seq2SeqLm>),
    Causal(Arc<dyn CausalLm>),
}

impl fmt::Debug for ScoringModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoringModel::Seq2Seq(_) => f.write_str("Seq2Seq(..)"),
            ScoringModel::Causal(_) => f.write_str("Causal(..)"),
        }
    }
}

/// A frozen scoring model with its configuration and optional cache.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScorerConfig,
    scorer_id: String,
    model: ScoringModel,
    cache: Option<Arc<ScoreCache>>,
}

impl Scorer {
    pub fn new(config: ScorerConfig, model: ScoringModel) -> Result<Self, ScorerError> {
        config.validate()?;
        match (config.backend, &model) {
            (Backend::Seq2seqLl, ScoringModel::Seq2Seq(_))
            | (Backend::CausalLmPrompted, ScoringModel::Causal(_)) => {}
            _ => {
                return Err(ScorerError::InvalidConfig(
                    "backend kind does not match the supplied model".into(),
                ))
            }
        }
        Ok(Self {
            scorer_id: config.scorer_id(),
            config,
            model,
            cache: None,
        })
    }

    /// Loads the bundled checkpoint type matching `config.backend`.
    pub fn from_checkpoint(config: ScorerConfig, path: &Path) -> Result<Self, ScorerError> {
        let model = match config.backend {
            Backend::Seq2seqLl => ScoringModel::Seq2Seq(Arc::new(
                TinySeq2Seq::load(path).map_err(|e| ScorerError::BackendFailure(e.to_string()))?,
            )),
            Backend::CausalLmPrompted => ScoringModel::Causal(Arc::new(
                TinyCausalLm::load(path).map_err(|e| ScorerError::BackendFailure(e.to_string()))?,
            )),
        };
        Self::new(config, model)
    }

    pub fn with_cache(mut self, cache: Arc<ScoreCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn cache(&self) -> Option<&Arc<ScoreCache>> {
        self.cache.as_ref()
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    /// M(modified | original) under the configured backend.
    pub fn score(&self, original: &Sentence, modified: &Sentence) -> Result<f64, ScorerError> {
        let key = self
            .cache
            .as_ref()
            .map(|_| CacheKey::new(&self.scorer_id, original.text(), modified.text()));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(v) = cache.lookup(key) {
                return Ok(v);
            }
        }
        let value = self.compute(original, modified)?;
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            if let Err(e) = cache.store(key, value) {
                log::warn!("score cache write failed, continuing without persistence: {e}");
            }
        }
        Ok(value)
    }

    /// Scores every modified sentence against the same original, in order.
    /// Any failure aborts the whole batch.
    pub fn score_batch(&self, original: &Sentence, modified: &[Sentence]) -> Result<Vec<f64>, ScorerError> {
        if modified.is_empty() {
            return Err(ScorerError::EmptyBatch);
        }
        modified.iter().map(|m| self.score(original, m)).collect()
    }

    /// Paraphrase-prompted causal-LM score; requires the prompted backend.
    pub fn gptscore_paraphrase(&self, original: &Sentence, modified: &Sentence) -> Result<f64, ScorerError> {
        if self.config.backend != Backend::CausalLmPrompted {
            return Err(ScorerError::InvalidConfig(
                "gptscore_paraphrase requires the CAUSAL_LM_PROMPTED backend".into(),
            ));
        }
        self.score(original, modified)
    }

    fn compute(&self, original: &Sentence, modified: &Sentence) -> Result<f64, ScorerError> {
        let log_probs = match &self.model {
            ScoringModel::Seq2Seq(m) => {
                let src = ids(m.vocab(), original.tokens());
                let tgt = ids(m.vocab(), modified.tokens());
                let len = src.len().max(tgt.len());
                if len > m.max_len() {
                    return Err(ScorerError::LengthOverflow { len, max: m.max_len() });
                }
                m.sequence_log_probs(&src, &tgt)
            }
            ScoringModel::Causal(m) => {
                let template = self.config.prompt_template.as_deref().unwrap_or_default();
                let (all, start) = prompt_token_ids(m.vocab(), template, original, modified);
                if all.len() > m.max_len() {
                    return Err(ScorerError::LengthOverflow {
                        len: all.len(),
                        max: m.max_len(),
                    });
                }
                m.sequence_log_probs(&all, start)
            }
        };
        if log_probs.is_empty() {
            return Err(ScorerError::BackendFailure("nothing to score".into()));
        }
        let total: f64 = log_probs.iter().sum();
        let value = match self.config.aggregation {
            Aggregation::Sum => total,
            Aggregation::Mean => total / log_probs.len() as f64,
        };
        if !value.is_finite() {
            return Err(ScorerError::BackendFailure(format!("non-finite score {value}")));
        }
        Ok(value)
    }
}

/// Fills the prompt and returns its token ids together with the index of
/// the first token of the modified-sentence region.
pub fn prompt_token_ids(
    vocab: &crate::vocab::Vocab,
    template: &str,
    original: &Sentence,
    modified: &Sentence,
) -> (Vec<usize>, usize) {
    let (head, _tail) = template.split_once(MODIFIED_SLOT).unwrap_or((template, ""));
    let head = head.replace(ORIGINAL_SLOT, original.text());
    let mut all = match tokenize(&head) {
        Ok(s) => ids(vocab, s.tokens()),
        Err(_) => Vec::new(),
    };
    let start = all.len();
    all.extend(ids(vocab, modified.tokens()));
    (all, start)
}

/// Fills the paraphrase prompt as a string.
pub fn fill_prompt(template: &str, original: &str, modified: &str) -> String {
    template
        .replace(ORIGINAL_SLOT, original)
        .replace(MODIFIED_SLOT, modified)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocab;

    fn seq2seq_scorer() -> Scorer {
        let vocab = Vocab::new(["the", "cat", "dog", "sat"]);
        let m = TinySeq2Seq::new(vocab, 6, 8, 8, 11);
        Scorer::new(ScorerConfig::seq2seq("tiny"), ScoringModel::Seq2Seq(Arc::new(m))).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = ScorerConfig::seq2seq("x");
        c.prompt_template = Some("p".into());
        assert!(c.validate().is_err());
        let mut g = ScorerConfig::gptscore("y");
        assert!(g.validate().is_ok());
        g.prompt_template = None;
        assert!(g.validate().is_err());
        assert_ne!(
            ScorerConfig::seq2seq("x").scorer_id(),
            ScorerConfig::seq2seq("x").with_aggregation(Aggregation::Mean).scorer_id()
        );
    }

    #[test]
    fn self_paraphrase_deterministic_and_nonpositive() {
        let s = seq2seq_scorer();
        let x = tokenize("the cat sat").unwrap();
        let a = s.score(&x, &x).unwrap();
        assert_eq!(a.to_bits(), s.score(&x, &x).unwrap().to_bits());
        assert!(a <= 0.0);
    }

    #[test]
    fn batch_of_one() {
        let s = seq2seq_scorer();
        let x = tokenize("the cat sat").unwrap();
        let y = tokenize("the dog sat").unwrap();
        assert_eq!(s.score_batch(&x, &[y.clone()]).unwrap(), vec![s.score(&x, &y).unwrap()]);
        let twice = s.score_batch(&x, &[x.clone(), x.clone()]).unwrap();
        assert_eq!(twice[0].to_bits(), twice[1].to_bits());
        assert!(matches!(s.score_batch(&x, &[]), Err(ScorerError::EmptyBatch)));
    }

    #[test]
    fn overflow_is_reported() {
        let s = seq2seq_scorer();
        let x = tokenize("the cat sat the cat sat the cat sat").unwrap();
        assert!(matches!(s.score(&x, &x), Err(ScorerError::LengthOverflow { len: 9, max: 8 })));
    }

    #[test]
    fn cache_is_transparent() {
        let plain = seq2seq_scorer();
        let cached = seq2seq_scorer().with_cache(Arc::new(ScoreCache::in_memory()));
        let x = tokenize("the cat sat").unwrap();
        let y = tokenize("the dog sat").unwrap();
        for _ in 0..2 {
            assert_eq!(plain.score(&x, &y).unwrap(), cached.score(&x, &y).unwrap());
        }
        assert_eq!(cached.cache().unwrap().hits(), 1);
    }

    #[test]
    fn gptscore_requires_prompted_backend() {
        let s = seq2seq_scorer();
        let x = tokenize("the cat").unwrap();
        assert!(s.gptscore_paraphrase(&x, &x).is_err());
    }

    #[test]
    fn prompt_region_starts_after_prefix() {
        let vocab = Vocab::new(["a", "b"]);
        let x = tokenize("a b").unwrap();
        let y = tokenize("b a").unwrap();
        let (all, start) = prompt_token_ids(&vocab, GPTSCORE_PARAPHRASE_TEMPLATE, &x, &y);
        // 8 template words + "." + 2 original + "In other words ," (4) = 15
        assert_eq!(start, 15);
        assert_eq!(all.len(), 17);
        assert_eq!(
            fill_prompt(GPTSCORE_PARAPHRASE_TEMPLATE, "a b", "b a"),
            "Rewrite the following text with the same semantics. a b In other words, b a"
        );
    }
}
