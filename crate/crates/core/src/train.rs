//! Fine-tuning harness: candidate pools from the policy, scores from a
//! frozen scorer, a ranking loss on the pool logits and Adam updates.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{pool_from_logits, sample_token_sites, CandidateError, EligibilityFilter, SamplingPlan};
use crate::eval::{evaluate_model, score_pool, EvalError};
use crate::losses::{BsWeight, LossBatch, LossError, LossMode};
use crate::metrics::CsProbabilities;
use crate::model::{MaskedLm, ModelError, TrainableMlm};
use crate::nn::{clip_grad_norm, Adam};
use crate::scorer::Scorer;
use crate::sentence::Sentence;
use crate::vocab::Vocab;

/// Default clip norm. Small enough that updates barely move the weights.
pub const GRAD_CLIP_DEFAULT: f64 = 1e-5;
/// Conventional clip norm used by the smoke and direction runs.
pub const GRAD_CLIP_PRACTICAL: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("EMPTY_CORPUS: nothing to train on")]
    EmptyCorpus,
    #[error("DIVERGENCE: non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip_max_norm: f64,
    pub dropout_rate: f64,
    pub lambda_margin: f64,
    pub gamma_mix: f64,
    pub dpo_scale: f64,
    pub bs_weight: BsWeight,
    pub sites_per_sentence: usize,
    pub pool_size: usize,
    pub corpus_sample: usize,
    pub rng_seed: u64,
    pub eligibility_filter: EligibilityFilter,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::MrAs,
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.0007,
            grad_clip_max_norm: GRAD_CLIP_DEFAULT,
            dropout_rate: 0.1,
            lambda_margin: 0.5,
            gamma_mix: 1.0,
            dpo_scale: 1.0,
            bs_weight: BsWeight::default(),
            sites_per_sentence: 5,
            pool_size: 5,
            corpus_sample: 100_000,
            rng_seed: 0,
            eligibility_filter: EligibilityFilter::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.sites_per_sentence == 0 || self.corpus_sample == 0 {
            return bad("epochs, batch_size, sites_per_sentence and corpus_sample must be >= 1");
        }
        if self.pool_size < 2 && self.loss_mode.is_ranking() {
            return bad("ranking losses need pool_size >= 2");
        }
        if self.pool_size == 0 {
            return bad("pool_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.grad_clip_max_norm > 0.0) {
            return bad("grad_clip_max_norm must be > 0");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(self.lambda_margin > 0.0 && self.gamma_mix >= 0.0 && self.dpo_scale > 0.0) {
            return bad("lambda_margin and dpo_scale must be > 0, gamma_mix >= 0");
        }
        Ok(())
    }

    fn plan(&self, seed: u64) -> SamplingPlan {
        SamplingPlan {
            sites_per_sentence: self.sites_per_sentence,
            pool_size: self.pool_size,
            rng_seed: seed,
            eligibility_filter: self.eligibility_filter,
        }
    }
}

/// FNV-1a over the bit patterns of a parameter vector.
pub fn param_fingerprint(params: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

/// A read-only copy of a model taken before training starts.
#[derive(Debug, Clone)]
pub struct FrozenReference<M> {
    model: M,
    fingerprint: u64,
}

impl<M: TrainableMlm> FrozenReference<M> {
    pub fn model(&self) -> &M {
        &self.model
    }

    /// Fingerprint recorded at freezing time.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn current_fingerprint(&self) -> u64 {
        param_fingerprint(self.model.params())
    }
}

impl<M: TrainableMlm> MaskedLm for FrozenReference<M> {
    fn vocab(&self) -> &Vocab {
        self.model.vocab()
    }

    fn masked_logits(&self, sentence: &Sentence, position: usize) -> Result<Vec<f64>, ModelError> {
        self.model.masked_logits(sentence, position)
    }
}

pub fn freeze_reference<M: TrainableMlm>(model: &M) -> FrozenReference<M> {
    let model = model.clone();
    let fingerprint = param_fingerprint(model.params());
    FrozenReference { model, fingerprint }
}

/// Loss and gradient accumulated over the sites of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss_sum: f64,
    pub sites: usize,
    pub skipped: usize,
}

/// Runs pools, scoring and the loss for each sampled site of `sentence`
/// and adds `dL/dθ` (summed over sites) into `grad`. The scorer and the
/// reference only ever see read-only calls.
#[allow(clippy::too_many_arguments)]
pub fn make_training_step<M: TrainableMlm>(
    policy: &M,
    reference: Option<&FrozenReference<M>>,
    sentence: &Arc<Sentence>,
    plan: &SamplingPlan,
    scorer: &Scorer,
    config: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    grad: &mut [f64],
) -> Result<StepOutput, TrainError> {
    let mode = config.loss_mode;
    if mode.needs_reference() && reference.is_none() {
        return Err(LossError::MissingReference.into());
    }
    let mut out = StepOutput {
        loss_sum: 0.0,
        sites: 0,
        skipped: 0,
    };
    let sites = match sample_token_sites(sentence, plan, Some(policy.vocab())) {
        Ok(s) => s,
        Err(CandidateError::NoEligibleSites) => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    let vocab = policy.vocab();
    for site in sites {
        let clean = policy.masked_logits(sentence, site.position())?;
        let pool = pool_from_logits(vocab, &site, &clean, plan.pool_size)?;
        if pool.len() < 2 && mode.is_ranking() {
            log::warn!(
                "skipping site {} of {:?}: pool of {} under a ranking loss",
                site.position(),
                sentence.text(),
                pool.len()
            );
            out.skipped += 1;
            continue;
        }
        let cand_ids: Vec<usize> = pool
            .candidates()
            .iter()
            .map(|c| vocab.id(c).expect("pool words come from the vocabulary"))
            .collect();
        let record = score_pool(scorer, &pool)?;
        let dropout = (config.dropout_rate > 0.0).then_some((config.dropout_rate, &mut *dropout_rng));
        let act = policy.forward_train(sentence, site.position(), dropout)?;
        let logits: Vec<f64> = cand_ids.iter().map(|&i| act.logits[i]).collect();
        let ref_logits = match reference {
            Some(r) if mode.needs_reference() => {
                let full = r.masked_logits(sentence, site.position())?;
                Some(cand_ids.iter().map(|&i| full[i]).collect::<Vec<f64>>())
            }
            _ => None,
        };
        let (batch, order) = LossBatch::from_unsorted(
            &logits,
            ref_logits.as_deref(),
            &record.candidate_scores,
            record.original_score,
        )?;
        let batch = batch
            .with_margin(config.lambda_margin)
            .with_mix(config.gamma_mix)
            .with_dpo_scale(config.dpo_scale)
            .with_bs_weight(config.bs_weight);
        let loss = mode.evaluate(&batch)?;
        let dlogits: Vec<(usize, f64)> = order
            .iter()
            .zip(&loss.grad)
            .map(|(&orig_idx, &g)| (cand_ids[orig_idx], g))
            .collect();
        policy.backward(&act, &dlogits, grad);
        out.loss_sum += loss.value;
        out.sites += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub applied_norm: f64,
    pub sites: usize,
    pub cs_heldout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub optimizer: String,
    pub steps: Vec<StepLog>,
    pub epoch_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
    pub reference_fingerprint: Option<(u64, u64)>,
}

#[derive(Serialize)]
struct MetricsLine {
    step: usize,
    loss: f64,
    cs_heldout: Option<f64>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the site sample of sentence `index` in `epoch`.
pub fn site_seed(rng_seed: u64, epoch: usize, index: usize) -> u64 {
    splitmix(splitmix(rng_seed ^ splitmix(epoch as u64)) ^ index as u64)
}

/// Median held-out CS with sites drawn from a fixed seed.
pub fn heldout_cs<M: MaskedLm + ?Sized>(
    model: &M,
    heldout: &[(String, Arc<Sentence>)],
    scorer: &Scorer,
    plan: &SamplingPlan,
) -> Result<Option<f64>, TrainError> {
    if heldout.is_empty() {
        return Ok(None);
    }
    Ok(evaluate_model(model, heldout, scorer, plan, CsProbabilities::Vocabulary)?.median_cs())
}

fn write_checkpoint<M: TrainableMlm>(
    dir: &Path,
    policy: &M,
    config: &TrainConfig,
    lines: &[StepLog],
) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    policy.save(&dir.join("model.json"))?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(config).expect("config serializes"),
    )?;
    let mut f = fs::File::create(dir.join("metrics.jsonl"))?;
    for l in lines {
        let rec = MetricsLine {
            step: l.step,
            loss: l.loss,
            cs_heldout: l.cs_heldout,
        };
        writeln!(f, "{}", serde_json::to_string(&rec).expect("metrics serialize"))?;
    }
    Ok(())
}

/// Trains `policy` in place.
///
/// Each epoch reshuffles the corpus and resamples sites with the epoch
/// folded into the seed. One optimizer step per batch of sentences, using
/// the mean loss over the batch's sites. Held-out CS is computed at every
/// epoch end. With `out_dir`, checkpoints go to
/// `out_dir/checkpoints/epoch-{n}/`. A non-finite loss aborts with
/// `DIVERGENCE`, leaving earlier checkpoints untouched and the policy at
/// its last good parameters.
pub fn fine_tune<M: TrainableMlm>(
    policy: &mut M,
    corpus: &[Arc<Sentence>],
    heldout: &[(String, Arc<Sentence>)],
    scorer: &Scorer,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let reference = config.loss_mode.needs_reference().then(|| freeze_reference(policy));
    let n_params = policy.params().len();
    let mut opt = Adam::new(n_params, config.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix(config.rng_seed));
    let heldout_plan = config.plan(config.rng_seed);
    let mut report = TrainReport {
        optimizer: format!(
            "adam(lr={}, beta1={}, beta2={}, eps={})",
            opt.lr, opt.beta1, opt.beta2, opt.eps
        ),
        steps: Vec::new(),
        epoch_losses: Vec::new(),
        checkpoints: Vec::new(),
        reference_fingerprint: None,
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(site_seed(config.rng_seed, epoch, usize::MAX));
        let epoch_start = report.steps.len();
        let (mut epoch_loss, mut epoch_sites) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; n_params];
            let (mut loss_sum, mut sites) = (0.0, 0usize);
            for &i in chunk {
                let plan = config.plan(site_seed(config.rng_seed, epoch, i));
                let out = make_training_step(
                    policy,
                    reference.as_ref(),
                    &corpus[i],
                    &plan,
                    scorer,
                    config,
                    &mut dropout_rng,
                    &mut grad,
                )?;
                loss_sum += out.loss_sum;
                sites += out.sites;
            }
            let loss = if sites > 0 { loss_sum / sites as f64 } else { 0.0 };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Divergence { step });
            }
            let (grad_norm, applied_norm) = if sites > 0 {
                let scale = 1.0 / sites as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                let pre = clip_grad_norm(&mut grad, config.grad_clip_max_norm);
                let post = crate::nn::l2_norm(&grad);
                opt.step(policy.params_mut(), &grad);
                (pre, post)
            } else {
                (0.0, 0.0)
            };
            log::info!("epoch {epoch} step {step}: loss {loss:.6} over {sites} sites, |g| {grad_norm:.3e}");
            report.steps.push(StepLog {
                epoch,
                step,
                loss,
                grad_norm,
                applied_norm,
                sites,
                cs_heldout: None,
            });
            epoch_loss += loss_sum;
            epoch_sites += sites;
            step += 1;
        }
        let cs = heldout_cs(&*policy, heldout, scorer, &heldout_plan)?;
        if let Some(last) = report.steps.last_mut() {
            last.cs_heldout = cs;
        }
        report
            .epoch_losses
            .push(if epoch_sites > 0 { epoch_loss / epoch_sites as f64 } else { 0.0 });
        if let Some(dir) = out_dir {
            let ckpt = dir.join("checkpoints").join(format!("epoch-{}", epoch + 1));
            write_checkpoint(&ckpt, policy, config, &report.steps[epoch_start..])?;
            report.checkpoints.push(ckpt);
        }
    }
    report.reference_fingerprint = reference.map(|r| (r.fingerprint(), r.current_fingerprint()));
    Ok(report)
}
