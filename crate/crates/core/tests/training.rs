mod common;

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use subrank::losses::LossMode;
use subrank::model::{MaskedLm, ModelError, TinyMlm, TrainableMlm};
use subrank::nn::Activation;
use subrank::train::{
    fine_tune, freeze_reference, make_training_step, param_fingerprint, TrainConfig, TrainError, GRAD_CLIP_DEFAULT,
    GRAD_CLIP_PRACTICAL,
};
use subrank::{SamplingPlan, Sentence, Vocab};

fn cfg(mode: LossMode) -> TrainConfig {
    TrainConfig {
        loss_mode: mode,
        grad_clip_max_norm: GRAD_CLIP_PRACTICAL,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn default_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch_size, c.sites_per_sentence, c.pool_size), (5, 64, 5, 5));
    assert_eq!(c.learning_rate, 0.0007);
    assert_eq!(c.grad_clip_max_norm, GRAD_CLIP_DEFAULT);
    assert_eq!((c.dropout_rate, c.lambda_margin, c.gamma_mix), (0.1, 0.5, 1.0));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 2, "bogus": 1}"#).is_err());
    let parsed: TrainConfig = serde_json::from_str(r#"{"loss_mode": "SIGMA_DPO_STAR"}"#).unwrap();
    assert_eq!(parsed.loss_mode, LossMode::SigmaDpoStar);
    assert!(TrainConfig { pool_size: 1, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { dropout_rate: 1.0, ..c }.validate().is_err());
}

#[test]
fn reference_is_a_frozen_copy() {
    let f = common::fixture();
    let mut policy = f.mlm.clone();
    let reference = freeze_reference(&policy);
    let s = &common::train_corpus(1)[0];
    assert_eq!(policy.masked_logits(s, 2).unwrap(), reference.masked_logits(s, 2).unwrap());
    let before = reference.masked_logits(s, 2).unwrap();
    policy.params_mut()[0] += 1.0;
    for p in policy.params_mut().iter_mut().step_by(7) {
        *p *= 0.5;
    }
    assert_ne!(policy.masked_logits(s, 2).unwrap(), before);
    assert_eq!(reference.masked_logits(s, 2).unwrap(), before);
    assert_eq!(reference.fingerprint(), reference.current_fingerprint());
}

#[test]
fn dpo_star_is_zero_at_step_zero() {
    let f = common::fixture();
    let scorer = common::scorer();
    let reference = freeze_reference(&f.mlm);
    let config = TrainConfig {
        dropout_rate: 0.0,
        ..cfg(LossMode::DpoStar)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in common::train_corpus(10) {
        let mut grad = vec![0.0; f.mlm.params().len()];
        let out = make_training_step(
            &f.mlm,
            Some(&reference),
            &s,
            &SamplingPlan::default(),
            &scorer,
            &config,
            &mut rng,
            &mut grad,
        )
        .unwrap();
        assert_eq!(out.loss_sum, 0.0);
        assert!(out.sites > 0);
    }
}

#[test]
fn training_step_is_deterministic() {
    let f = common::fixture();
    let s = &common::train_corpus(3)[2];
    let run = || {
        let scorer = common::scorer();
        let mut grad = vec![0.0; f.mlm.params().len()];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = make_training_step(
            &f.mlm,
            None,
            s,
            &SamplingPlan::default().with_seed(3),
            &scorer,
            &cfg(LossMode::MrAs),
            &mut rng,
            &mut grad,
        )
        .unwrap();
        (out.loss_sum.to_bits(), param_fingerprint(&grad))
    };
    assert_eq!(run(), run());
}

#[test]
fn missing_reference_is_an_error() {
    let f = common::fixture();
    let mut grad = vec![0.0; f.mlm.params().len()];
    let err = make_training_step(
        &f.mlm,
        None,
        &common::train_corpus(1)[0],
        &SamplingPlan::default(),
        &common::scorer(),
        &cfg(LossMode::Dpo),
        &mut ChaCha8Rng::seed_from_u64(0),
        &mut grad,
    );
    assert!(err.is_err());
}

#[test]
fn zero_learning_rate_leaves_weights_bitwise_unchanged() {
    let f = common::fixture();
    let mut m = f.mlm.clone();
    let config = TrainConfig {
        epochs: 1,
        learning_rate: 0.0,
        ..cfg(LossMode::MrAs)
    };
    fine_tune(&mut m, &common::train_corpus(10), &[], &common::scorer(), &config, None).unwrap();
    assert_eq!(param_fingerprint(m.params()), param_fingerprint(f.mlm.params()));
    assert!(m.params().iter().zip(f.mlm.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn smoke_run_bookkeeping_and_checkpoints() {
    let f = common::fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut m = f.mlm.clone();
    let corpus = common::train_corpus(200);
    let config = cfg(LossMode::MrAs);
    let report = fine_tune(&mut m, &corpus, &common::heldout(20), &common::scorer(), &config, Some(dir.path())).unwrap();

    println!("MR+AS epoch losses: {:?}", report.epoch_losses);
    assert!(report.epoch_losses.windows(2).all(|w| w[1] <= w[0]));
    let batches = corpus.len().div_ceil(config.batch_size);
    assert_eq!(report.steps.len(), config.epochs * batches);
    assert!(report
        .steps
        .iter()
        .all(|s| s.applied_norm <= config.grad_clip_max_norm + 1e-12));
    assert!(report.optimizer.starts_with("adam"));

    for epoch in 1..=config.epochs {
        let ckpt = dir.path().join("checkpoints").join(format!("epoch-{epoch}"));
        let loaded = TinyMlm::load(&ckpt.join("model.json")).unwrap();
        let saved: TrainConfig = serde_json::from_str(&std::fs::read_to_string(ckpt.join("config.json")).unwrap()).unwrap();
        assert_eq!(saved, config);
        let lines: Vec<serde_json::Value> = std::fs::read_to_string(ckpt.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), batches);
        assert!(lines.iter().all(|l| l["step"].is_u64() && l["loss"].is_f64()));
        assert!(lines.last().unwrap()["cs_heldout"].is_f64());
        assert!(lines[0]["cs_heldout"].is_null());
        if epoch == config.epochs {
            assert_eq!(loaded, m);
        }
    }
}

#[test]
fn reference_fingerprint_survives_dpo_training() {
    let f = common::fixture();
    let mut m = f.mlm.clone();
    let config = TrainConfig {
        epochs: 2,
        ..cfg(LossMode::SigmaDpoStar)
    };
    let report = fine_tune(&mut m, &common::train_corpus(30), &[], &common::scorer(), &config, None).unwrap();
    let (before, after) = report.reference_fingerprint.unwrap();
    assert_eq!(before, after);
    assert_eq!(before, param_fingerprint(f.mlm.params()));
    assert_ne!(param_fingerprint(m.params()), before);
}

#[test]
fn cache_hit_rate_rises_over_repeated_sentences() {
    let f = common::fixture();
    let scorer = common::scorer();
    let once = common::train_corpus(4);
    let repeated: Vec<Arc<Sentence>> = once.iter().chain(&once).chain(&once).cloned().collect();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 4,
        learning_rate: 0.0,
        ..cfg(LossMode::Mr)
    };
    let mut rates = Vec::new();
    let mut m = f.mlm.clone();
    for chunk in repeated.chunks(4) {
        fine_tune(&mut m, chunk, &[], &scorer, &config, None).unwrap();
        rates.push(scorer.cache().unwrap().hit_rate());
    }
    assert!(rates.windows(2).all(|w| w[1] > w[0]), "{rates:?}");
}

/// Masked LM whose training forward pass yields NaN logits.
#[derive(Clone)]
struct Poisoned(TinyMlm);

impl MaskedLm for Poisoned {
    fn vocab(&self) -> &Vocab {
        self.0.vocab()
    }
    fn masked_logits(&self, s: &Sentence, p: usize) -> Result<Vec<f64>, ModelError> {
        self.0.masked_logits(s, p)
    }
}

impl TrainableMlm for Poisoned {
    fn params(&self) -> &[f64] {
        self.0.params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.0.params_mut()
    }
    fn forward_train(
        &self,
        s: &Sentence,
        p: usize,
        d: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Activation, ModelError> {
        let mut act = self.0.forward_train(s, p, d)?;
        act.logits.iter_mut().for_each(|l| *l = f64::NAN);
        Ok(act)
    }
    fn backward(&self, act: &Activation, dl: &[(usize, f64)], g: &mut [f64]) {
        self.0.backward(act, dl, g)
    }
    fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.0.save(path)
    }
}

#[test]
fn non_finite_loss_aborts_with_divergence() {
    let f = common::fixture();
    let mut m = Poisoned(f.mlm.clone());
    let dir = tempfile::tempdir().unwrap();
    let err = fine_tune(
        &mut m,
        &common::train_corpus(10),
        &[],
        &common::scorer(),
        &cfg(LossMode::Ce),
        Some(dir.path()),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::Divergence { step: 0 }), "{err}");
    assert_eq!(param_fingerprint(m.params()), param_fingerprint(f.mlm.params()));
    assert!(!dir.path().join("checkpoints").exists());
}
