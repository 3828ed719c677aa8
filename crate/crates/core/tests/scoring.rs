mod common;

use std::sync::Arc;

use subrank::eval::{evaluate_model, score_pool};
use subrank::metrics::CsProbabilities;
use subrank::model::{CausalLm, TinyCausalLm};
use subrank::scorer::{
    prompt_token_ids, Aggregation, ScoreCache, Scorer, ScorerConfig, ScorerError, ScoringModel,
};
use subrank::stats::spearman;
use subrank::toy::ToyTraining;
use subrank::{build_candidate_pool, tokenize, SamplingPlan};

fn gptscore(model: Arc<TinyCausalLm>) -> Scorer {
    Scorer::new(ScorerConfig::gptscore("toy-causal"), ScoringModel::Causal(model)).unwrap()
}

#[test]
fn scorer_prefers_high_quality_synonyms() {
    let f = common::fixture();
    let scorer = common::scorer();
    let s = &common::train_corpus(1)[0];
    let site = s.site(1).unwrap();
    let syn = f.world.synonyms(site.original_token()).unwrap();
    let scores: Vec<f64> = syn
        .iter()
        .map(|w| scorer.score(s, &subrank::sentence::substitute_at(s, 1, w).unwrap()).unwrap())
        .collect();
    let quality: Vec<f64> = syn.iter().map(|w| f.world.quality(w).unwrap()).collect();
    assert!(spearman(&scores, &quality).unwrap() > 0.7, "{scores:?} vs {quality:?}");
}

#[test]
fn gptscore_backend_scores_only_the_modified_region() {
    let f = common::fixture();
    let budget = ToyTraining {
        causal_pairs: 100,
        causal_epochs: 1,
        ..ToyTraining::default()
    };
    let model = Arc::new(f.world.causal_model(&budget, 5));
    let scorer = gptscore(model.clone());
    let s = &common::train_corpus(1)[0];
    let t = subrank::sentence::substitute_at(s, 2, &f.world.synonyms(&s.tokens()[2]).unwrap()[0]).unwrap();
    let (ids, start) = prompt_token_ids(model.vocab(), &scorer.config().prompt_template.clone().unwrap(), s, &t);
    let oracle: f64 = model.sequence_log_probs(&ids, start).iter().sum();
    assert_eq!(ids.len() - start, t.len());
    assert!((scorer.gptscore_paraphrase(s, &t).unwrap() - oracle).abs() < 1e-9);
    assert!(common::scorer().gptscore_paraphrase(s, &t).is_err());
}

#[test]
fn mean_aggregation_divides_by_length() {
    let f = common::fixture();
    let sum = common::scorer();
    let mean = Scorer::new(
        ScorerConfig::seq2seq("toy-paraphrase").with_aggregation(Aggregation::Mean),
        ScoringModel::Seq2Seq(f.scorer_model.clone()),
    )
    .unwrap();
    assert_ne!(sum.scorer_id(), mean.scorer_id());
    let s = &common::train_corpus(1)[0];
    assert!((mean.score(s, s).unwrap() * s.len() as f64 - sum.score(s, s).unwrap()).abs() < 1e-9);
}

#[test]
fn over_long_input_is_rejected() {
    let scorer = common::scorer();
    let long = tokenize(&"word ".repeat(40)).unwrap();
    assert!(matches!(scorer.score(&long, &long), Err(ScorerError::LengthOverflow { .. })));
}

#[test]
fn persistent_cache_serves_a_second_process() {
    let f = common::fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.jsonl");
    let make = || {
        Scorer::new(
            ScorerConfig::seq2seq("toy-paraphrase"),
            ScoringModel::Seq2Seq(f.scorer_model.clone()),
        )
        .unwrap()
        .with_cache(Arc::new(ScoreCache::open(&path).unwrap()))
    };
    let s = common::train_corpus(1)[0].clone();
    let pool = build_candidate_pool(&f.mlm, &s.site(1).unwrap(), 5).unwrap();
    let first = score_pool(&make(), &pool).unwrap();
    let second_scorer = make();
    let second = score_pool(&second_scorer, &pool).unwrap();
    assert_eq!(first, second);
    assert_eq!(second_scorer.cache().unwrap().misses(), 0);
}

#[test]
fn evaluation_counts_sites() {
    let f = common::fixture();
    let held = common::heldout(5);
    let e = evaluate_model(&f.mlm, &held, &common::scorer(), &SamplingPlan::default(), CsProbabilities::Vocabulary).unwrap();
    assert_eq!(e.sites.len(), 25);
    let r = e.report("toy", "base", vec![]);
    assert_eq!(r.n_tokens, 25);
    assert!(r.cs_median.unwrap() > 0.0 && r.cs_median.unwrap() <= 1.0);
    let pool_probs =
        evaluate_model(&f.mlm, &held, &common::scorer(), &SamplingPlan::default(), CsProbabilities::Pool).unwrap();
    assert_ne!(pool_probs.cs_values(), e.cs_values());
    assert_eq!(pool_probs.abr_values(), e.abr_values());
}
