//! Shared domain records: candidate pools, score records, decisions and
//! annotated tokens.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sentence::TokenSite;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("candidate pool must be non-empty")]
    EmptyPool,
    #[error("LENGTH_MISMATCH: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("duplicate candidate {0:?}")]
    DuplicateCandidate(String),
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("probabilities are not monotone in logits")]
    NonMonotone,
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("annotator suggestions contain the original token {0:?}")]
    SuggestionIsOriginal(String),
    #[error("inconsistent decision: {0}")]
    BadDecision(&'static str),
}

/// Top-K substitutes for one site with their logits and probabilities.
///
/// `probabilities` are normalized over whatever set produced the pool (the
/// admissible vocabulary for model pools), so they need not sum to one here.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    site: TokenSite,
    candidates: Vec<String>,
    logits: Vec<f64>,
    probabilities: Vec<f64>,
    original_probability: Option<f64>,
}

impl CandidatePool {
    pub fn new(
        site: TokenSite,
        candidates: Vec<String>,
        logits: Vec<f64>,
        probabilities: Vec<f64>,
        original_probability: Option<f64>,
    ) -> Result<Self, TypeError> {
        let k = candidates.len();
        if k == 0 {
            return Err(TypeError::EmptyPool);
        }
        for (what, len) in [("logits", logits.len()), ("probabilities", probabilities.len())] {
            if len != k {
                return Err(TypeError::LengthMismatch {
                    what,
                    got: len,
                    expected: k,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for c in &candidates {
            if !seen.insert(c.as_str()) {
                return Err(TypeError::DuplicateCandidate(c.clone()));
            }
        }
        for &p in probabilities.iter().chain(original_probability.iter()) {
            if !(0.0..=1.0).contains(&p) {
                return Err(TypeError::BadProbability(p));
            }
        }
        for i in 0..k {
            for j in 0..k {
                if logits[i] > logits[j] && probabilities[i] < probabilities[j] {
                    return Err(TypeError::NonMonotone);
                }
            }
        }
        Ok(Self {
            site,
            candidates,
            logits,
            probabilities,
            original_probability,
        })
    }

    pub fn site(&self) -> &TokenSite {
        &self.site
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Probability of the site's original token on the same scale as the
    /// candidates, when the producing model knows it.
    pub fn original_probability(&self) -> Option<f64> {
        self.original_probability
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Probabilities rescaled to sum to one over the pool itself.
    pub fn pool_normalized(&self) -> Vec<f64> {
        let z: f64 = self.probabilities.iter().sum();
        self.probabilities.iter().map(|p| p / z).collect()
    }

    /// Index of the highest-probability candidate; first wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probabilities)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores of the modified sentences of a pool plus the original sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub original_score: f64,
    pub candidate_scores: Vec<f64>,
    pub scorer_id: String,
}

impl ScoreRecord {
    pub fn new(
        original_score: f64,
        candidate_scores: Vec<f64>,
        scorer_id: impl Into<String>,
    ) -> Result<Self, TypeError> {
        for &s in std::iter::once(&original_score).chain(&candidate_scores) {
            if !s.is_finite() {
                return Err(TypeError::NonFiniteScore(s));
            }
        }
        Ok(Self {
            original_score,
            candidate_scores,
            scorer_id: scorer_id.into(),
        })
    }

    pub fn check_aligned(&self, pool: &CandidatePool) -> Result<(), TypeError> {
        if self.candidate_scores.len() != pool.len() {
            return Err(TypeError::LengthMismatch {
                what: "candidate_scores",
                got: self.candidate_scores.len(),
                expected: pool.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Replace,
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionDecision {
    site: TokenSite,
    action: Action,
    replacement: Option<String>,
    chosen_probability: f64,
    original_probability: f64,
}

impl SubstitutionDecision {
    pub fn replace(
        site: TokenSite,
        replacement: String,
        chosen_probability: f64,
        original_probability: f64,
    ) -> Result<Self, TypeError> {
        if chosen_probability <= original_probability {
            return Err(TypeError::BadDecision(
                "replacement must be strictly more probable than the original",
            ));
        }
        if replacement.to_lowercase() == site.original_token().to_lowercase() {
            return Err(TypeError::BadDecision("replacement equals the original token"));
        }
        Ok(Self {
            site,
            action: Action::Replace,
            replacement: Some(replacement),
            chosen_probability,
            original_probability,
        })
    }

    pub fn keep(site: TokenSite, chosen_probability: f64, original_probability: f64) -> Self {
        Self {
            site,
            action: Action::Keep,
            replacement: None,
            chosen_probability,
            original_probability,
        }
    }

    pub fn site(&self) -> &TokenSite {
        &self.site
    }

    pub fn action(&self) -> Action {
        self.action
    }

    pub fn replacement(&self) -> Option<&str> {
        self.replacement.as_deref()
    }

    pub fn chosen_probability(&self) -> f64 {
        self.chosen_probability
    }

    pub fn original_probability(&self) -> f64 {
        self.original_probability
    }

    pub fn is_replace(&self) -> bool {
        self.action == Action::Replace
    }
}

/// A token with annotator suggestions and the model's decision, the input to
/// stratification.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedToken {
    pub(crate) annotator_suggestions: BTreeSet<String>,
    pub(crate) model_decision: SubstitutionDecision,
}

impl AnnotatedToken {
    pub fn new(
        annotator_suggestions: BTreeSet<String>,
        model_decision: SubstitutionDecision,
    ) -> Result<Self, TypeError> {
        let original = model_decision.site().original_token();
        if annotator_suggestions.contains(original) {
            return Err(TypeError::SuggestionIsOriginal(original.to_string()));
        }
        Ok(Self {
            annotator_suggestions,
            model_decision,
        })
    }

    pub fn site(&self) -> &TokenSite {
        self.model_decision.site()
    }

    pub fn annotator_suggestions(&self) -> &BTreeSet<String> {
        &self.annotator_suggestions
    }

    pub fn model_decision(&self) -> &SubstitutionDecision {
        &self.model_decision
    }
}
