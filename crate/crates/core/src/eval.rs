//! Pool scoring and per-site evaluation of a masked LM against a scorer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{build_candidate_pool, eligible_positions, sample_token_sites, CandidateError, SamplingPlan};
use crate::data::DatasetRecord;
use crate::metrics::{abr, aggregate, cs, top2_ratio, CsProbabilities, MetricError, MetricReport, DEFAULT_BINS};
use crate::model::MaskedLm;
use crate::scorer::{Scorer, ScorerError};
use crate::sentence::{apply_substitution, match_case, Sentence, SentenceError};
use crate::stats::{stratify, top_candidate_pvalue, StatsError, StratificationRecord};
use crate::subst::{decide, top2, SubstError};
use crate::types::{AnnotatedToken, CandidatePool, ScoreRecord, TypeError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Sentence(#[from] SentenceError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Subst(#[from] SubstError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// The sentence with `candidate` (case-matched) at the pool's site.
pub fn modified_sentence(pool: &CandidatePool, candidate: &str) -> Result<Sentence, SentenceError> {
    let site = pool.site();
    apply_substitution(site.sentence(), site, &match_case(site.original_token(), candidate))
}

/// Scores the original sentence and every candidate substitution.
pub fn score_pool(scorer: &Scorer, pool: &CandidatePool) -> Result<ScoreRecord, EvalError> {
    let original = pool.site().sentence();
    let modified = pool
        .candidates()
        .iter()
        .map(|c| modified_sentence(pool, c))
        .collect::<Result<Vec<_>, _>>()?;
    let original_score = scorer.score(original, original)?;
    let scores = scorer.score_batch(original, &modified)?;
    Ok(ScoreRecord::new(original_score, scores, scorer.scorer_id())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEvaluation {
    pub sentence_id: String,
    pub position: usize,
    pub original: String,
    pub candidates: Vec<String>,
    pub probabilities: Vec<f64>,
    pub scores: Vec<f64>,
    pub original_score: f64,
    pub cs: Option<f64>,
    pub abr: Option<f64>,
    pub top2_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub sites: Vec<SiteEvaluation>,
    pub skipped_sentences: usize,
}

impl Evaluation {
    pub fn cs_values(&self) -> Vec<f64> {
        self.sites.iter().filter_map(|s| s.cs).collect()
    }

    pub fn abr_values(&self) -> Vec<f64> {
        self.sites.iter().filter_map(|s| s.abr).collect()
    }

    pub fn top2_values(&self) -> Vec<f64> {
        self.sites.iter().filter_map(|s| s.top2_ratio).collect()
    }

    pub fn median_cs(&self) -> Option<f64> {
        aggregate(&self.cs_values(), DEFAULT_BINS).ok().map(|s| s.median)
    }

    pub fn median_abr(&self) -> Option<f64> {
        aggregate(&self.abr_values(), DEFAULT_BINS).ok().map(|s| s.median)
    }

    pub fn report(&self, dataset: &str, model: &str, distribution_files: Vec<String>) -> MetricReport {
        MetricReport {
            dataset: dataset.to_string(),
            model: model.to_string(),
            cs_median: self.median_cs(),
            abr_median: self.median_abr(),
            n_tokens: self.sites.len(),
            n_cs_excluded: self.sites.iter().filter(|s| s.cs.is_none()).count(),
            top2_ratio_median: aggregate(&self.top2_values(), DEFAULT_BINS).ok().map(|s| s.median),
            distribution_files,
        }
    }
}

/// Evaluates one already-built pool.
pub fn evaluate_pool(
    sentence_id: &str,
    pool: &CandidatePool,
    scorer: &Scorer,
    probs: CsProbabilities,
) -> Result<SiteEvaluation, EvalError> {
    let record = score_pool(scorer, pool)?;
    let cs_value = match cs(pool, &record, probs) {
        Ok(v) => Some(v),
        Err(e) => {
            log::debug!("{sentence_id}@{}: CS excluded: {e}", pool.site().position());
            None
        }
    };
    let abr_value = abr(&record).ok();
    let top2_value = match top2(pool) {
        Some(word) => {
            let s = scorer.score(pool.site().sentence(), &modified_sentence(pool, &word)?)?;
            top2_ratio(record.original_score, s).ok()
        }
        None => None,
    };
    Ok(SiteEvaluation {
        sentence_id: sentence_id.to_string(),
        position: pool.site().position(),
        original: pool.site().original_token().to_string(),
        candidates: pool.candidates().to_vec(),
        probabilities: pool.probabilities().to_vec(),
        scores: record.candidate_scores,
        original_score: record.original_score,
        cs: cs_value,
        abr: abr_value,
        top2_ratio: top2_value,
    })
}

/// Samples sites with `plan`, builds pools with `model` and scores them.
/// Sentences without eligible sites are skipped and counted.
pub fn evaluate_model<M: MaskedLm + ?Sized>(
    model: &M,
    sentences: &[(String, Arc<Sentence>)],
    scorer: &Scorer,
    plan: &SamplingPlan,
    probs: CsProbabilities,
) -> Result<Evaluation, EvalError> {
    let mut out = Evaluation::default();
    for (id, sentence) in sentences {
        let sites = match sample_token_sites(sentence, plan, Some(model.vocab())) {
            Ok(s) => s,
            Err(CandidateError::NoEligibleSites) => {
                out.skipped_sentences += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for site in sites {
            let pool = build_candidate_pool(model, &site, plan.pool_size)?;
            out.sites.push(evaluate_pool(id, &pool, scorer, probs)?);
        }
    }
    Ok(out)
}

/// Stratifies every eligible or annotated token of each record and computes
/// the p-value of the model's top candidate among its first `k_s`
/// candidates. `p_value` is `None` where fewer than two candidates exist.
pub fn stratify_records<M: MaskedLm + ?Sized>(
    model: &M,
    records: &[DatasetRecord],
    scorer: &Scorer,
    plan: &SamplingPlan,
    k_s: usize,
) -> Result<Vec<StratificationRecord>, EvalError> {
    let mut out = Vec::new();
    for rec in records {
        let mut positions = eligible_positions(&rec.sentence, plan.eligibility_filter, Some(model.vocab()));
        positions.extend(rec.annotations.iter().map(|a| a.target_position));
        positions.sort_unstable();
        positions.dedup();
        for pos in positions {
            let site = rec.sentence.site(pos)?;
            let pool = build_candidate_pool(model, &site, k_s.max(plan.pool_size))?;
            let decision = decide(&pool)?;
            let token = AnnotatedToken::new(rec.suggestions_at(pos), decision)?;
            let n = pool.len().min(k_s);
            let p_value = if n >= 2 {
                let scores = pool.candidates()[..n]
                    .iter()
                    .map(|c| scorer.score(&rec.sentence, &modified_sentence(&pool, c)?).map_err(EvalError::from))
                    .collect::<Result<Vec<_>, _>>()?;
                top_candidate_pvalue(&scores, k_s)?.map(|r| r.p_value)
            } else {
                None
            };
            out.push(StratificationRecord {
                group: stratify(&token),
                p_value,
                sentence_id: rec.sentence_id.clone(),
                position: pos,
            });
        }
    }
    Ok(out)
}
