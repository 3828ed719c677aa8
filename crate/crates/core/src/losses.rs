//! Per-site training objectives over a pool of K candidate logits.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to the policy logits. Batches are ordered best-scored first.
//!
//! | loss | value |
//! |------|-------|
//! | MR   | Σ_{k<j} max(0, s_j − s_k + λ(j−k)) |
//! | AS   | −Σ_k softmax(s)_k · M_k |
//! | BS   | max(0, (M(X) − M_1) · f(s)) |
//! | DPO  | −Σ_k [δr_k − log Σ_{j≥k} exp(δr_j)] |
//! | DPO* | −Σ_{k<K} (s_k − ŝ_k − s_{k+1} + ŝ_{k+1}) |
//! | σDPO*| −Σ_{k<K} log σ(s_k − ŝ_k − s_{k+1} + ŝ_{k+1}) |
//! | CE   | −log softmax(s)_best |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{log_sigmoid, log_sum_exp, sigmoid, softmax};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("LENGTH_MISMATCH: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("UNSORTED_BATCH: scores must be non-increasing")]
    UnsortedBatch,
    #[error("MISSING_REFERENCE: reference logits required")]
    MissingReference,
    #[error("INDEX_OUT_OF_RANGE: {index} for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("pool too small: need at least {need} candidates, got {got}")]
    TooFewCandidates { need: usize, got: usize },
    #[error("invalid hyperparameter: {0}")]
    BadHyperparameter(&'static str),
}

/// Loss value plus `dL/ds` for the policy logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossOutput {
    fn zero(k: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; k],
        }
    }
}

/// How the top candidate's hinge in the BS loss is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsWeight {
    /// Pool-normalized probability of the top candidate.
    #[default]
    PoolSoftmax,
    /// The raw top logit.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CombinedMode {
    MrAs,
    MrBs,
}

/// Logits, reference logits and scores for one site, best-scored first.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub logits: Vec<f64>,
    pub ref_logits: Option<Vec<f64>>,
    pub scores: Vec<f64>,
    pub original_score: f64,
    pub margin_unit: f64,
    pub mix_weight: f64,
    pub dpo_scale: f64,
    pub bs_weight: BsWeight,
}

impl LossBatch {
    /// Validates lengths, ordering and hyperparameters.
    pub fn new(
        logits: Vec<f64>,
        ref_logits: Option<Vec<f64>>,
        scores: Vec<f64>,
        original_score: f64,
    ) -> Result<Self, LossError> {
        let k = logits.len();
        if k == 0 {
            return Err(LossError::TooFewCandidates { need: 1, got: 0 });
        }
        if scores.len() != k {
            return Err(LossError::LengthMismatch {
                what: "scores",
                got: scores.len(),
                expected: k,
            });
        }
        if let Some(r) = &ref_logits {
            if r.len() != k {
                return Err(LossError::LengthMismatch {
                    what: "ref_logits",
                    got: r.len(),
                    expected: k,
                });
            }
        }
        if scores.windows(2).any(|w| w[0] < w[1]) {
            return Err(LossError::UnsortedBatch);
        }
        Ok(Self {
            logits,
            ref_logits,
            scores,
            original_score,
            margin_unit: 0.5,
            mix_weight: 1.0,
            dpo_scale: 1.0,
            bs_weight: BsWeight::PoolSoftmax,
        })
    }

    /// Sorts unsorted pool data into a batch.
    pub fn from_unsorted(
        logits: &[f64],
        ref_logits: Option<&[f64]>,
        scores: &[f64],
        original_score: f64,
    ) -> Result<(Self, Vec<usize>), LossError> {
        let order = sort_for_ranking(logits, scores)?;
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        if let Some(r) = ref_logits {
            if r.len() != logits.len() {
                return Err(LossError::LengthMismatch {
                    what: "ref_logits",
                    got: r.len(),
                    expected: logits.len(),
                });
            }
        }
        let batch = Self::new(pick(logits), ref_logits.map(pick), pick(scores), original_score)?;
        Ok((batch, order))
    }

    pub fn with_margin(mut self, lambda: f64) -> Self {
        self.margin_unit = lambda;
        self
    }

    pub fn with_mix(mut self, gamma: f64) -> Self {
        self.mix_weight = gamma;
        self
    }

    pub fn with_dpo_scale(mut self, delta: f64) -> Self {
        self.dpo_scale = delta;
        self
    }

    pub fn with_bs_weight(mut self, w: BsWeight) -> Self {
        self.bs_weight = w;
        self
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    fn check_sorted(&self) -> Result<(), LossError> {
        if self.scores.windows(2).any(|w| w[0] < w[1]) {
            return Err(LossError::UnsortedBatch);
        }
        Ok(())
    }

    fn reference(&self) -> Result<&[f64], LossError> {
        self.ref_logits.as_deref().ok_or(LossError::MissingReference)
    }
}

/// Permutation putting candidates in non-increasing score order; ties go to
/// the higher logit, then to the lower original index.
pub fn sort_for_ranking(logits: &[f64], scores: &[f64]) -> Result<Vec<usize>, LossError> {
    if logits.len() != scores.len() {
        return Err(LossError::LengthMismatch {
            what: "scores",
            got: scores.len(),
            expected: logits.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(logits[b].total_cmp(&logits[a]))
            .then(a.cmp(&b))
    });
    Ok(order)
}

pub fn margin_ranking_loss(batch: &LossBatch) -> Result<LossOutput, LossError> {
    batch.check_sorted()?;
    let k = batch.len();
    if k < 2 {
        return Err(LossError::TooFewCandidates { need: 2, got: k });
    }
    if batch.margin_unit < 0.0 {
        return Err(LossError::BadHyperparameter("margin_unit must be >= 0"));
    }
    let s = &batch.logits;
    let mut out = LossOutput::zero(k);
    for hi in 0..k {
        for lo in hi + 1..k {
            let margin = batch.margin_unit * (lo - hi) as f64;
            let v = s[lo] - s[hi] + margin;
            if v > 0.0 {
                out.value += v;
                out.grad[lo] += 1.0;
                out.grad[hi] -= 1.0;
            }
        }
    }
    Ok(out)
}

pub fn avg_score_loss(batch: &LossBatch) -> Result<LossOutput, LossError> {
    let p = softmax(&batch.logits);
    let mean: f64 = p.iter().zip(&batch.scores).map(|(p, m)| p * m).sum();
    let grad = p
        .iter()
        .zip(&batch.scores)
        .map(|(p, m)| -p * (m - mean))
        .collect();
    Ok(LossOutput { value: -mean, grad })
}

pub fn best_score_loss(batch: &LossBatch) -> Result<LossOutput, LossError> {
    let k = batch.len();
    let deficit = batch.original_score - batch.scores[0];
    let (weight, dweight): (f64, Vec<f64>) = match batch.bs_weight {
        BsWeight::PoolSoftmax => {
            let p = softmax(&batch.logits);
            let p1 = p[0];
            let d = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| if i == 0 { p1 * (1.0 - p1) } else { -p1 * pi })
                .collect();
            (p1, d)
        }
        BsWeight::Identity => {
            let mut d = vec![0.0; k];
            d[0] = 1.0;
            (batch.logits[0], d)
        }
    };
    let v = deficit * weight;
    if v > 0.0 {
        Ok(LossOutput {
            value: v,
            grad: dweight.into_iter().map(|g| deficit * g).collect(),
        })
    } else {
        Ok(LossOutput::zero(k))
    }
}

pub fn combined_loss(batch: &LossBatch, mode: CombinedMode) -> Result<LossOutput, LossError> {
    let mr = margin_ranking_loss(batch)?;
    if batch.mix_weight == 0.0 {
        return Ok(mr);
    }
    let extra = match mode {
        CombinedMode::MrAs => avg_score_loss(batch)?,
        CombinedMode::MrBs => best_score_loss(batch)?,
    };
    let g = batch.mix_weight;
    Ok(LossOutput {
        value: mr.value + g * extra.value,
        grad: mr.grad.iter().zip(&extra.grad).map(|(a, b)| a + g * b).collect(),
    })
}

/// Plackett-Luce preference loss over implicit rewards
/// `r_k = policy_k − reference_k`, preferred candidate first.
/// The gradient is with respect to `policy_logliks`.
pub fn dpo_pl_loss(policy_logliks: &[f64], ref_logliks: &[f64], delta: f64) -> Result<LossOutput, LossError> {
    let k = policy_logliks.len();
    if ref_logliks.len() != k {
        return Err(LossError::LengthMismatch {
            what: "ref_logliks",
            got: ref_logliks.len(),
            expected: k,
        });
    }
    if k == 0 {
        return Err(LossError::TooFewCandidates { need: 1, got: 0 });
    }
    if !(delta > 0.0) {
        return Err(LossError::BadHyperparameter("dpo_scale must be > 0"));
    }
    let z: Vec<f64> = policy_logliks
        .iter()
        .zip(ref_logliks)
        .map(|(p, r)| delta * (p - r))
        .collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    for start in 0..k {
        let tail = &z[start..];
        let lse = log_sum_exp(tail);
        value -= z[start] - lse;
        grad[start] -= delta;
        for (j, &zj) in tail.iter().enumerate() {
            grad[start + j] += delta * (zj - lse).exp();
        }
    }
    Ok(LossOutput { value, grad })
}

fn adjacent_margins(batch: &LossBatch) -> Result<Vec<f64>, LossError> {
    batch.check_sorted()?;
    let r = batch.reference()?;
    let k = batch.len();
    if k < 2 {
        return Err(LossError::TooFewCandidates { need: 2, got: k });
    }
    let s = &batch.logits;
    Ok((0..k - 1)
        .map(|i| (s[i] - r[i]) - (s[i + 1] - r[i + 1]))
        .collect())
}

pub fn dpo_star_loss(batch: &LossBatch) -> Result<LossOutput, LossError> {
    let d = adjacent_margins(batch)?;
    let k = batch.len();
    let mut grad = vec![0.0; k];
    for i in 0..k - 1 {
        grad[i] -= 1.0;
        grad[i + 1] += 1.0;
    }
    Ok(LossOutput {
        value: -d.iter().sum::<f64>(),
        grad,
    })
}

pub fn sigma_dpo_star_loss(batch: &LossBatch) -> Result<LossOutput, LossError> {
    let d = adjacent_margins(batch)?;
    let k = batch.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    for (i, &di) in d.iter().enumerate() {
        value -= log_sigmoid(di);
        // d/dx −log σ(x) = −σ(−x)
        let g = -sigmoid(-di);
        grad[i] += g;
        grad[i + 1] -= g;
    }
    Ok(LossOutput { value, grad })
}

pub fn cross_entropy_best(logits: &[f64], best_index: usize) -> Result<LossOutput, LossError> {
    if best_index >= logits.len() {
        return Err(LossError::IndexOutOfRange {
            index: best_index,
            len: logits.len(),
        });
    }
    let lse = log_sum_exp(logits);
    let mut grad = softmax(logits);
    grad[best_index] -= 1.0;
    Ok(LossOutput {
        value: lse - logits[best_index],
        grad,
    })
}

/// Training objectives selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossMode {
    Ce,
    Mr,
    MrAs,
    MrBs,
    Dpo,
    DpoStar,
    SigmaDpoStar,
}

impl LossMode {
    pub fn needs_reference(self) -> bool {
        matches!(self, LossMode::Dpo | LossMode::DpoStar | LossMode::SigmaDpoStar)
    }

    /// Modes that compare candidates pairwise and need K ≥ 2.
    pub fn is_ranking(self) -> bool {
        !matches!(self, LossMode::Ce)
    }

    /// Evaluates the mode on a sorted batch. For DPO the policy and
    /// reference log-likelihoods are approximated by the logits.
    pub fn evaluate(self, batch: &LossBatch) -> Result<LossOutput, LossError> {
        match self {
            LossMode::Ce => cross_entropy_best(&batch.logits, 0),
            LossMode::Mr => margin_ranking_loss(batch),
            LossMode::MrAs => combined_loss(batch, CombinedMode::MrAs),
            LossMode::MrBs => combined_loss(batch, CombinedMode::MrBs),
            LossMode::Dpo => dpo_pl_loss(&batch.logits, batch.reference()?, batch.dpo_scale),
            LossMode::DpoStar => dpo_star_loss(batch),
            LossMode::SigmaDpoStar => sigma_dpo_star_loss(batch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    fn batch(logits: &[f64], scores: &[f64]) -> LossBatch {
        LossBatch::new(logits.to_vec(), None, scores.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn sort_examples() {
        assert_eq!(sort_for_ranking(&[0.0, 0.0], &[-2.0, -1.0]).unwrap(), vec![1, 0]);
        assert_eq!(sort_for_ranking(&[0.0, 0.0, 0.0], &[-1.0, -2.0, -3.0]).unwrap(), vec![0, 1, 2]);
        assert_eq!(sort_for_ranking(&[0.1, 0.9], &[-3.0, -3.0]).unwrap(), vec![1, 0]);
        assert!(sort_for_ranking(&[0.1], &[-3.0, -3.0]).is_err());
    }

    #[test]
    fn unsorted_batch_rejected() {
        assert_eq!(
            LossBatch::new(vec![0.0, 0.0], None, vec![-2.0, -1.0], 0.0).unwrap_err(),
            LossError::UnsortedBatch
        );
        let mut b = batch(&[0.0, 0.0], &[-1.0, -2.0]);
        b.scores = vec![-2.0, -1.0];
        assert_eq!(margin_ranking_loss(&b).unwrap_err(), LossError::UnsortedBatch);
    }

    #[test]
    fn margin_ranking_examples() {
        let b = |l: &[f64]| batch(l, &vec![-1.0; l.len()]).with_margin(0.5);
        close(margin_ranking_loss(&b(&[3.0, 2.0, 1.0])).unwrap().value, 0.0);
        close(margin_ranking_loss(&b(&[1.0, 2.0])).unwrap().value, 1.5);
        close(margin_ranking_loss(&b(&[0.0, 0.0, 0.0])).unwrap().value, 2.0);
    }

    #[test]
    fn avg_score_examples() {
        close(avg_score_loss(&batch(&[0.3], &[-4.2])).unwrap().value, 4.2);
        close(avg_score_loss(&batch(&[0.0, 0.0], &[-2.0, -4.0])).unwrap().value, 3.0);
        close(avg_score_loss(&batch(&[3f64.ln(), 0.0], &[-2.0, -4.0])).unwrap().value, 2.5);
    }

    #[test]
    fn best_score_examples() {
        let mut b = batch(&[0.0], &[-3.0]);
        b.original_score = -4.0;
        close(best_score_loss(&b).unwrap().value, 0.0);
        let mut b = batch(&[0.7], &[-5.0]);
        b.original_score = -3.0;
        close(best_score_loss(&b).unwrap().value, 2.0);
        let mut b = batch(&[0.0, 0.0], &[-4.0, -6.0]);
        b.original_score = -3.0;
        close(best_score_loss(&b).unwrap().value, 0.5);
    }

    #[test]
    fn combined_examples() {
        let b = batch(&[1.0, 2.0], &[-2.0, -4.0]).with_margin(0.5).with_mix(0.0);
        assert_eq!(
            combined_loss(&b, CombinedMode::MrAs).unwrap(),
            margin_ranking_loss(&b).unwrap()
        );
        let b = b.with_mix(1.0);
        let expected = 1.5 + (E / (1.0 + E) * 4.0 + 1.0 / (1.0 + E) * 2.0);
        close(combined_loss(&b, CombinedMode::MrAs).unwrap().value, expected);
        assert!((expected - 4.9621).abs() < 1e-4);
        let mut b = batch(&[1.0, 2.0], &[-2.0, -4.0]).with_margin(0.5);
        b.original_score = -2.5;
        assert_eq!(
            combined_loss(&b, CombinedMode::MrBs).unwrap().value,
            margin_ranking_loss(&b).unwrap().value
        );
    }

    #[test]
    fn dpo_pl_examples() {
        close(dpo_pl_loss(&[0.4], &[0.1], 1.0).unwrap().value, 0.0);
        close(dpo_pl_loss(&[1.0, 1.0, 1.0], &[0.0; 3], 1.0).unwrap().value, 6f64.ln());
        close(dpo_pl_loss(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap().value, -(E / (E + 1.0)).ln());
        assert!(dpo_pl_loss(&[1.0], &[], 1.0).is_err());
        let big = dpo_pl_loss(&[800.0, -800.0, 0.0], &[0.0; 3], 1.0).unwrap();
        assert!(big.value.is_finite() && big.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn dpo_star_examples() {
        let b = |s: &[f64], r: &[f64]| {
            LossBatch::new(s.to_vec(), Some(r.to_vec()), vec![-1.0; s.len()], 0.0).unwrap()
        };
        close(dpo_star_loss(&b(&[0.3, -1.0], &[0.3, -1.0])).unwrap().value, 0.0);
        close(dpo_star_loss(&b(&[2.0, 1.0], &[0.0, 0.0])).unwrap().value, -1.0);
        close(dpo_star_loss(&b(&[0.0; 3], &[3.0, 2.0, 1.0])).unwrap().value, 2.0);
        assert_eq!(
            dpo_star_loss(&batch(&[1.0, 0.0], &[-1.0, -2.0])).unwrap_err(),
            LossError::MissingReference
        );
    }

    #[test]
    fn sigma_dpo_star_examples() {
        let b = |s: &[f64], r: &[f64]| {
            LossBatch::new(s.to_vec(), Some(r.to_vec()), vec![-1.0; s.len()], 0.0).unwrap()
        };
        let s = [0.1, 0.5, -0.2, 2.0, 1.0];
        close(sigma_dpo_star_loss(&b(&s, &s)).unwrap().value, 4.0 * 2f64.ln());
        close(
            sigma_dpo_star_loss(&b(&[2.0, 1.0], &[0.0, 0.0])).unwrap().value,
            -(1.0 / (1.0 + (-1f64).exp())).ln(),
        );
        let sat = sigma_dpo_star_loss(&b(&[1000.0, 0.0], &[0.0, 0.0])).unwrap().value;
        assert!(sat >= 0.0 && sat < 1e-300);
    }

    #[test]
    fn cross_entropy_examples() {
        close(cross_entropy_best(&[0.0, 0.0], 0).unwrap().value, 2f64.ln());
        assert!(cross_entropy_best(&[50.0, 0.0], 0).unwrap().value < 1e-20);
        close(cross_entropy_best(&[1.0, 0.0], 1).unwrap().value, -(1.0 / (1.0 + E)).ln());
        assert_eq!(
            cross_entropy_best(&[1.0], 1).unwrap_err(),
            LossError::IndexOutOfRange { index: 1, len: 1 }
        );
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn sorted(mut v: Vec<f64>) -> Vec<f64> {
            v.sort_by(|a, b| b.total_cmp(a));
            v
        }

        proptest! {
            #[test]
            fn mr_zero_set(logits in prop::collection::vec(-5.0f64..5.0, 2..8), lambda in 0.0f64..1.0) {
                let k = logits.len();
                let b = LossBatch::new(logits.clone(), None, vec![-1.0; k], 0.0).unwrap().with_margin(lambda);
                let v = margin_ranking_loss(&b).unwrap().value;
                let satisfied = (0..k).all(|i| (i + 1..k).all(|j| logits[i] - logits[j] >= lambda * (j - i) as f64));
                prop_assert_eq!(v == 0.0, satisfied);
            }

            #[test]
            fn shift_invariance(logits in prop::collection::vec(-5.0f64..5.0, 2..8), refs in prop::collection::vec(-5.0f64..5.0, 8), scores in prop::collection::vec(-30.0f64..-1.0, 8), c in -3.0f64..3.0) {
                let k = logits.len();
                let scores = sorted(scores[..k].to_vec());
                let refs = refs[..k].to_vec();
                let base = LossBatch::new(logits.clone(), Some(refs.clone()), scores.clone(), -10.0).unwrap();
                let shifted = LossBatch::new(
                    logits.iter().map(|x| x + c).collect(),
                    Some(refs.iter().map(|x| x + c).collect()),
                    scores,
                    -10.0,
                ).unwrap();
                for mode in [LossMode::Mr, LossMode::DpoStar, LossMode::SigmaDpoStar] {
                    let a = mode.evaluate(&base).unwrap().value;
                    let b = mode.evaluate(&shifted).unwrap().value;
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
                }
                for f in [avg_score_loss, best_score_loss] {
                    let a = f(&base).unwrap().value;
                    let b = f(&shifted).unwrap().value;
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
                }
                let a = cross_entropy_best(&base.logits, 0).unwrap().value;
                let b = cross_entropy_best(&shifted.logits, 0).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }

            #[test]
            fn sigma_dpo_star_nonnegative(logits in prop::collection::vec(-50.0f64..50.0, 2..8), refs in prop::collection::vec(-50.0f64..50.0, 8)) {
                let k = logits.len();
                let b = LossBatch::new(logits, Some(refs[..k].to_vec()), vec![-1.0; k], 0.0).unwrap();
                prop_assert!(sigma_dpo_star_loss(&b).unwrap().value >= 0.0);
            }
        }
    }
}
