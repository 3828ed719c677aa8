//! Substitution decisions: replace a token only with a candidate the model
//! finds strictly more probable than the original.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{build_candidate_pool, sample_token_sites, CandidateError, SamplingPlan};
use crate::model::MaskedLm;
use crate::sentence::{match_case, Sentence, TokenSite};
use crate::types::{Action, CandidatePool, SubstitutionDecision, TypeError};

#[derive(Debug, Error)]
pub enum SubstError {
    #[error("MISSING_ORIGINAL_PROB: no probability for the original token {0:?}")]
    MissingOriginalProb(String),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

fn same_word(a: &str, b: &str) -> bool {
    a == b || a.to_lowercase() == b.to_lowercase()
}

/// Applies the substitution rule to a pool.
///
/// Among candidates other than the original word whose probability is
/// strictly above the original's, the most probable one is chosen. Exact
/// ties keep the original.
pub fn decide(pool: &CandidatePool) -> Result<SubstitutionDecision, SubstError> {
    let site = pool.site().clone();
    let original = site.original_token().to_string();
    let p_orig = pool
        .original_probability()
        .or_else(|| {
            pool.candidates()
                .iter()
                .position(|c| same_word(c, &original))
                .map(|i| pool.probabilities()[i])
        })
        .ok_or_else(|| SubstError::MissingOriginalProb(original.clone()))?;

    let mut best: Option<usize> = None;
    for (i, (cand, &p)) in pool.candidates().iter().zip(pool.probabilities()).enumerate() {
        if same_word(cand, &original) || p <= p_orig {
            continue;
        }
        if best.is_none_or(|b| p > pool.probabilities()[b]) {
            best = Some(i);
        }
    }
    Ok(match best {
        Some(i) => SubstitutionDecision::replace(
            site,
            match_case(&original, &pool.candidates()[i]),
            pool.probabilities()[i],
            p_orig,
        )?,
        None => {
            let top = pool
                .candidates()
                .iter()
                .zip(pool.probabilities())
                .filter(|(c, _)| !same_word(c, &original))
                .map(|(_, &p)| p)
                .fold(0.0, f64::max);
            SubstitutionDecision::keep(site, top, p_orig)
        }
    })
}

/// Second most probable candidate that differs from the original token.
pub fn top2(pool: &CandidatePool) -> Option<String> {
    let original = pool.site().original_token();
    let mut ranked: Vec<usize> = (0..pool.len())
        .filter(|&i| !same_word(&pool.candidates()[i], original))
        .collect();
    ranked.sort_by(|&a, &b| {
        pool.probabilities()[b]
            .total_cmp(&pool.probabilities()[a])
            .then(a.cmp(&b))
    });
    ranked.get(1).map(|&i| pool.candidates()[i].clone())
}

#[derive(Debug, Clone)]
pub struct Suggestion {
    pub site: TokenSite,
    pub decision: SubstitutionDecision,
    pub pool: CandidatePool,
}

/// Builds a pool and a decision for each selected site, in token order.
pub fn suggest<M: MaskedLm + ?Sized>(
    sentence: &Arc<Sentence>,
    model: &M,
    plan: &SamplingPlan,
) -> Result<Vec<Suggestion>, SubstError> {
    let sites = sample_token_sites(sentence, plan, Some(model.vocab()))?;
    sites
        .into_iter()
        .map(|site| {
            let pool = build_candidate_pool(model, &site, plan.pool_size)?;
            let decision = decide(&pool)?;
            Ok(Suggestion { site, decision, pool })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub token: String,
    pub prob: f64,
}

/// One JSON-lines record of suggestion output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub sentence_id: String,
    pub position: usize,
    pub original: String,
    pub action: Action,
    pub replacement: Option<String>,
    pub candidates: Vec<CandidateEntry>,
}

impl SuggestionRecord {
    pub fn new(sentence_id: &str, s: &Suggestion) -> Self {
        Self {
            sentence_id: sentence_id.to_string(),
            position: s.site.position(),
            original: s.site.original_token().to_string(),
            action: s.decision.action(),
            replacement: s.decision.replacement().map(str::to_string),
            candidates: s
                .pool
                .candidates()
                .iter()
                .zip(s.pool.probabilities())
                .map(|(t, &p)| CandidateEntry {
                    token: t.clone(),
                    prob: p,
                })
                .collect(),
        }
    }
}
