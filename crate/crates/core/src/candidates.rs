//! Token-site sampling and top-K candidate pools from a masked LM.

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MaskedLm, ModelError};
use crate::nn::log_sum_exp;
use crate::sentence::{Sentence, TokenSite};
use crate::types::{CandidatePool, TypeError};
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("NO_ELIGIBLE_SITES: sentence has no substitutable token")]
    NoEligibleSites,
    #[error("MODEL_FAILURE: {0}")]
    Model(#[from] ModelError),
    #[error("VOCAB_EXHAUSTED: no admissible vocabulary items")]
    VocabExhausted,
    #[error("invalid sampling plan: {0}")]
    BadPlan(&'static str),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Which tokens may be chosen as substitution sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityFilter {
    /// Alphabetic whole words of at least two characters.
    AlphabeticWord,
    /// As above, and the lower-cased word is a single vocabulary item.
    #[default]
    InVocabulary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    #[serde(default = "default_sites")]
    pub sites_per_sentence: usize,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub eligibility_filter: EligibilityFilter,
}

fn default_sites() -> usize {
    5
}

fn default_pool() -> usize {
    5
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            sites_per_sentence: default_sites(),
            pool_size: default_pool(),
            rng_seed: 0,
            eligibility_filter: EligibilityFilter::default(),
        }
    }
}

impl SamplingPlan {
    /// A plan that selects every eligible site.
    pub fn all_sites(pool_size: usize) -> Self {
        Self {
            sites_per_sentence: usize::MAX,
            pool_size,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CandidateError> {
        if self.sites_per_sentence == 0 {
            return Err(CandidateError::BadPlan("sites_per_sentence must be >= 1"));
        }
        if self.pool_size == 0 {
            return Err(CandidateError::BadPlan("pool_size must be >= 1"));
        }
        Ok(())
    }
}

pub fn is_eligible(token: &str, filter: EligibilityFilter, vocab: Option<&Vocab>) -> bool {
    let word = token.chars().count() >= 2 && token.chars().all(char::is_alphabetic);
    match filter {
        EligibilityFilter::AlphabeticWord => word,
        EligibilityFilter::InVocabulary => {
            word && vocab.is_none_or(|v| v.id(token).is_some_and(|id| v.is_admissible(id)))
        }
    }
}

pub fn eligible_positions(sentence: &Sentence, filter: EligibilityFilter, vocab: Option<&Vocab>) -> Vec<usize> {
    sentence
        .tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| is_eligible(t, filter, vocab))
        .map(|(i, _)| i)
        .collect()
}

/// Uniform sample without replacement of eligible sites, returned in token
/// order. Deterministic in `plan.rng_seed`.
pub fn sample_token_sites(
    sentence: &Arc<Sentence>,
    plan: &SamplingPlan,
    vocab: Option<&Vocab>,
) -> Result<Vec<TokenSite>, CandidateError> {
    plan.validate()?;
    let eligible = eligible_positions(sentence, plan.eligibility_filter, vocab);
    if eligible.is_empty() {
        return Err(CandidateError::NoEligibleSites);
    }
    let amount = plan.sites_per_sentence.min(eligible.len());
    let mut picked: Vec<usize> = if amount == eligible.len() {
        eligible
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);
        index::sample(&mut rng, eligible.len(), amount)
            .into_iter()
            .map(|i| eligible[i])
            .collect()
    };
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|p| TokenSite::new(Arc::clone(sentence), p).map_err(|_| CandidateError::NoEligibleSites))
        .collect()
}

/// Vocabulary ids of the admissible items ranked by descending logit
/// (lower id first on ties), plus the log-normalizer over all of them.
pub fn rank_admissible(vocab: &Vocab, logits: &[f64]) -> (Vec<usize>, f64) {
    let mut admissible: Vec<usize> = (0..logits.len()).filter(|&i| vocab.is_admissible(i)).collect();
    let adm_logits: Vec<f64> = admissible.iter().map(|&i| logits[i]).collect();
    let lse = log_sum_exp(&adm_logits);
    admissible.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    (admissible, lse)
}

/// Masks `site`, runs the model and keeps the top `k` admissible words.
///
/// Probabilities are softmax-normalized over the whole admissible
/// vocabulary; the original token's probability is carried along when it
/// is admissible. Returns fewer than `k` candidates if the vocabulary runs
/// out.
pub fn build_candidate_pool<M: MaskedLm + ?Sized>(
    model: &M,
    site: &TokenSite,
    k: usize,
) -> Result<CandidatePool, CandidateError> {
    let logits = model.masked_logits(site.sentence(), site.position())?;
    pool_from_logits(model.vocab(), site, &logits, k)
}

pub fn pool_from_logits(
    vocab: &Vocab,
    site: &TokenSite,
    logits: &[f64],
    k: usize,
) -> Result<CandidatePool, CandidateError> {
    if k == 0 {
        return Err(CandidateError::BadPlan("pool_size must be >= 1"));
    }
    let (ranked, lse) = rank_admissible(vocab, logits);
    if ranked.is_empty() {
        return Err(CandidateError::VocabExhausted);
    }
    if ranked.len() < k {
        log::debug!("VOCAB_EXHAUSTED: only {} admissible items for K={k}", ranked.len());
    }
    let top = &ranked[..k.min(ranked.len())];
    let candidates = top.iter().map(|&i| vocab.word(i).to_string()).collect();
    let pool_logits: Vec<f64> = top.iter().map(|&i| logits[i]).collect();
    let probabilities = pool_logits.iter().map(|l| (l - lse).exp()).collect();
    let original_probability = vocab
        .id(site.original_token())
        .filter(|&id| vocab.is_admissible(id))
        .map(|id| (logits[id] - lse).exp());
    Ok(CandidatePool::new(
        site.clone(),
        candidates,
        pool_logits,
        probabilities,
        original_probability,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentence::tokenize;

    /// A fixed-logit model for tests.
    struct Table {
        vocab: Vocab,
        logits: Vec<f64>,
    }

    impl MaskedLm for Table {
        fn vocab(&self) -> &Vocab {
            &self.vocab
        }
        fn masked_logits(&self, _: &Sentence, _: usize) -> Result<Vec<f64>, ModelError> {
            Ok(self.logits.clone())
        }
    }

    fn table() -> Table {
        let vocab = Vocab::new(["cat", "dog", "cow", "##s", ",", "emu"]);
        // specials get high logits to check they are filtered out
        let logits = vec![9.0, 9.0, 9.0, 9.0, 9.0, 1.0, 3.0, 2.0, 8.0, 8.0, 0.5];
        Table { vocab, logits }
    }

    #[test]
    fn pool_excludes_specials_and_is_sorted() {
        let m = table();
        let s = Arc::new(tokenize("the cat sat").unwrap());
        let pool = build_candidate_pool(&m, &s.site(1).unwrap(), 3).unwrap();
        assert_eq!(pool.candidates(), ["dog", "cow", "cat"]);
        assert!(pool.logits().windows(2).all(|w| w[0] > w[1]));
        let z: f64 = [1.0f64, 3.0, 2.0, 0.5].iter().map(|x| x.exp()).sum();
        assert!((pool.probabilities()[0] - 3f64.exp() / z).abs() < 1e-12);
        assert!((pool.original_probability().unwrap() - 1f64.exp() / z).abs() < 1e-12);
    }

    #[test]
    fn singleton_pool() {
        let m = table();
        let s = Arc::new(tokenize("cat").unwrap());
        let pool = build_candidate_pool(&m, &s.site(0).unwrap(), 1).unwrap();
        assert_eq!(pool.len(), 1);
        assert!((pool.pool_normalized()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exhausted_vocab_returns_what_exists() {
        let m = table();
        let s = Arc::new(tokenize("cat").unwrap());
        let pool = build_candidate_pool(&m, &s.site(0).unwrap(), 50).unwrap();
        assert_eq!(pool.len(), 4);
    }

    #[test]
    fn site_sampling_clamps_and_is_deterministic() {
        let s = Arc::new(tokenize("The cat, 42 dogs and a emu.").unwrap());
        let plan = SamplingPlan::default().with_seed(3);
        let sites = sample_token_sites(&s, &plan, None).unwrap();
        let pos: Vec<usize> = sites.iter().map(|t| t.position()).collect();
        // eligible: The, cat, dogs, and, emu ("a" too short, "42" not alphabetic)
        assert_eq!(pos, vec![0, 1, 4, 5, 7]);
        let plan = SamplingPlan {
            sites_per_sentence: 2,
            ..plan
        };
        let a = sample_token_sites(&s, &plan, None).unwrap();
        let b = sample_token_sites(&s, &plan, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn no_eligible_sites() {
        let s = Arc::new(tokenize("1 , 2 .").unwrap());
        assert!(matches!(
            sample_token_sites(&s, &SamplingPlan::default(), None),
            Err(CandidateError::NoEligibleSites)
        ));
    }

    #[test]
    fn vocabulary_filter() {
        let v = Vocab::new(["cat"]);
        assert!(is_eligible("Cat", EligibilityFilter::InVocabulary, Some(&v)));
        assert!(!is_eligible("dog", EligibilityFilter::InVocabulary, Some(&v)));
        assert!(is_eligible("dog", EligibilityFilter::AlphabeticWord, Some(&v)));
    }
}
