//! Reference-distribution p-values, significance proportions, token
//! stratification and rank correlation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Action, AnnotatedToken};

/// Significance level used throughout the evaluation.
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Candidate count of the cross-model benchmark protocol.
pub const K_S_BENCHMARK: usize = 3;
/// Candidate count of the deep statistic.
pub const K_S_DEEP: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("EMPTY_REFERENCE: no reference scores")]
    EmptyReference,
    #[error("EMPTY_INPUT")]
    EmptyInput,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("p-value {0} outside [0, 1]")]
    BadPValue(f64),
    #[error("alpha {0} outside (0, 1)")]
    BadAlpha(f64),
    #[error("LENGTH_MISMATCH: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("CONSTANT_INPUT: correlation undefined for a constant vector")]
    ConstantInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueResult {
    pub p_value: f64,
    pub k_s: usize,
    pub target_score: f64,
    pub n_exceeding: usize,
}

/// Fraction of reference scores strictly greater than `target_score`.
///
/// `reference_scores` holds the K_s − 1 alternatives; ties do not count
/// against the target.
pub fn reference_pvalue(target_score: f64, reference_scores: &[f64]) -> Result<PValueResult, StatsError> {
    if reference_scores.is_empty() {
        return Err(StatsError::EmptyReference);
    }
    if let Some(&bad) = std::iter::once(&target_score)
        .chain(reference_scores)
        .find(|v| !v.is_finite())
    {
        return Err(StatsError::NonFinite(bad));
    }
    let n_exceeding = reference_scores.iter().filter(|&&s| s > target_score).count();
    Ok(PValueResult {
        p_value: n_exceeding as f64 / reference_scores.len() as f64,
        k_s: reference_scores.len() + 1,
        target_score,
        n_exceeding,
    })
}

/// p-value of the first (top-ranked) candidate against the rest of a
/// ranked list truncated to `k_s`. Returns `None` when fewer than two
/// candidates remain.
pub fn top_candidate_pvalue(ranked_scores: &[f64], k_s: usize) -> Result<Option<PValueResult>, StatsError> {
    let n = ranked_scores.len().min(k_s);
    if n < 2 {
        return Ok(None);
    }
    reference_pvalue(ranked_scores[0], &ranked_scores[1..n]).map(Some)
}

/// Fraction of p-values strictly below `alpha`.
pub fn significance_proportion(p_values: &[f64], alpha: f64) -> Result<f64, StatsError> {
    if p_values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::BadPValue(bad));
    }
    let below = p_values.iter().filter(|&&p| p < alpha).count();
    Ok(below as f64 / p_values.len() as f64)
}

/// Agreement stratum of a token between annotator and model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupLabel {
    /// Both changed and the model's replacement is among the suggestions.
    CA,
    /// Both changed but the replacement is not among the suggestions.
    CD,
    /// Neither changed.
    NCA,
    /// Only the model changed.
    OMC,
    /// Only the annotator changed.
    OAC,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 5] = [
        GroupLabel::CA,
        GroupLabel::CD,
        GroupLabel::NCA,
        GroupLabel::OMC,
        GroupLabel::OAC,
    ];
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn stratify(token: &AnnotatedToken) -> GroupLabel {
    let annotator_changed = !token.annotator_suggestions().is_empty();
    let decision = token.model_decision();
    match (annotator_changed, decision.action()) {
        (false, Action::Keep) => GroupLabel::NCA,
        (true, Action::Keep) => GroupLabel::OAC,
        (false, Action::Replace) => GroupLabel::OMC,
        (true, Action::Replace) => {
            let chosen = decision.replacement().unwrap_or_default();
            let agreed = token
                .annotator_suggestions()
                .iter()
                .any(|s| s == chosen || s.to_lowercase() == chosen.to_lowercase());
            if agreed {
                GroupLabel::CA
            } else {
                GroupLabel::CD
            }
        }
    }
}

/// Group counts over a corpus with row-normalized proportions: the
/// annotator-changed row splits into OAC / CA / CD and the unchanged row
/// into NCA / OMC.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StratificationTable {
    pub counts: BTreeMap<GroupLabel, usize>,
}

impl StratificationTable {
    pub fn from_labels<I: IntoIterator<Item = GroupLabel>>(labels: I) -> Self {
        let mut counts: BTreeMap<GroupLabel, usize> = GroupLabel::ALL.iter().map(|&g| (g, 0)).collect();
        for l in labels {
            *counts.entry(l).or_default() += 1;
        }
        Self { counts }
    }

    pub fn count(&self, g: GroupLabel) -> usize {
        self.counts.get(&g).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Proportion of `g` within its row; `None` for an empty row.
    pub fn row_proportion(&self, g: GroupLabel) -> Option<f64> {
        let row: usize = match g {
            GroupLabel::OAC | GroupLabel::CA | GroupLabel::CD => {
                self.count(GroupLabel::OAC) + self.count(GroupLabel::CA) + self.count(GroupLabel::CD)
            }
            GroupLabel::NCA | GroupLabel::OMC => self.count(GroupLabel::NCA) + self.count(GroupLabel::OMC),
        };
        (row > 0).then(|| self.count(g) as f64 / row as f64)
    }
}

/// One line of the stratification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationRecord {
    pub group: GroupLabel,
    pub p_value: Option<f64>,
    pub sentence_id: String,
    pub position: usize,
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::EmptyInput);
    }
    if let Some(&bad) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(bad));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
