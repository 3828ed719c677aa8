//! Alignment (CS) and quality (ABR, top-2 ratio) metrics plus summary
//! statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CandidatePool, ScoreRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ZERO_VECTOR: cosine undefined for an all-zero vector")]
    ZeroVector,
    #[error("LENGTH_MISMATCH: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ZERO_ORIGINAL_SCORE: ratio undefined when M(X) = 0")]
    ZeroOriginalScore,
    #[error("EMPTY_INPUT")]
    EmptyInput,
    #[error("pool needs at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("probability {0} must be > 0 to take its log")]
    NonPositiveProbability(f64),
}

/// Which probabilities enter the log-prediction vector of CS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsProbabilities {
    /// As normalized by the producing model over its vocabulary.
    #[default]
    Vocabulary,
    /// Renormalized to sum to one within the pool.
    Pool,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity between log pool probabilities and candidate scores.
pub fn cs(pool: &CandidatePool, record: &ScoreRecord, probs: CsProbabilities) -> Result<f64, MetricError> {
    if pool.len() != record.candidate_scores.len() {
        return Err(MetricError::LengthMismatch(pool.len(), record.candidate_scores.len()));
    }
    if pool.len() < 2 {
        return Err(MetricError::TooFewCandidates(pool.len()));
    }
    let p = match probs {
        CsProbabilities::Vocabulary => pool.probabilities().to_vec(),
        CsProbabilities::Pool => pool.pool_normalized(),
    };
    if let Some(&bad) = p.iter().find(|&&x| x <= 0.0) {
        return Err(MetricError::NonPositiveProbability(bad));
    }
    let logs: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    cosine(&logs, &record.candidate_scores)
}

/// Mean of M(X̃_k) / M(X) over the pool.
pub fn abr(record: &ScoreRecord) -> Result<f64, MetricError> {
    if record.original_score == 0.0 {
        return Err(MetricError::ZeroOriginalScore);
    }
    if record.candidate_scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let k = record.candidate_scores.len() as f64;
    Ok(record
        .candidate_scores
        .iter()
        .map(|s| s / record.original_score)
        .sum::<f64>()
        / k)
}

pub fn top2_ratio(original_score: f64, top2_score: f64) -> Result<f64, MetricError> {
    if original_score == 0.0 {
        return Err(MetricError::ZeroOriginalScore);
    }
    Ok(top2_score / original_score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
    pub histogram: Vec<HistogramBin>,
}

pub const DEFAULT_BINS: usize = 50;

/// Median (lower middle for even counts), mean, sample SD and a uniform
/// histogram over the observed range.
pub fn aggregate(values: &[f64], bins: usize) -> Result<Summary, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = sorted[(n - 1) / 2];
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        n,
        median,
        mean,
        sd,
        histogram: histogram(&sorted, bins.max(1)),
    })
}

fn histogram(sorted: &[f64], bins: usize) -> Vec<HistogramBin> {
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins && hi > lo { hi } else { lo + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in sorted {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

/// Writes `bin_left,bin_right,count` rows.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_left,bin_right,count\n");
    for b in bins {
        s.push_str(&format!("{},{},{}\n", b.left, b.right, b.count));
    }
    s
}

/// Evaluation summary of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub model: String,
    pub cs_median: Option<f64>,
    pub abr_median: Option<f64>,
    pub n_tokens: usize,
    #[serde(default)]
    pub n_cs_excluded: usize,
    #[serde(default)]
    pub top2_ratio_median: Option<f64>,
    pub distribution_files: Vec<String>,
}
