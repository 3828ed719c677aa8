#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use subrank::scorer::{ScoreCache, Scorer, ScorerConfig, ScoringModel};
use subrank::toy::{ToyConfig, ToyTraining, ToyWorld};
use subrank::{model::TinyMlm, model::TinySeq2Seq, Sentence};

pub struct Fixture {
    pub world: ToyWorld,
    pub mlm: TinyMlm,
    pub scorer_model: Arc<TinySeq2Seq>,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let world = ToyWorld::new(ToyConfig::default());
        let budget = ToyTraining::default();
        let mlm = world.base_mlm(&budget, 1);
        let scorer_model = Arc::new(world.scorer_model(&budget, 2));
        Fixture {
            world,
            mlm,
            scorer_model,
        }
    })
}

/// A fresh scorer with its own in-memory cache.
pub fn scorer() -> Scorer {
    Scorer::new(
        ScorerConfig::seq2seq("toy-paraphrase"),
        ScoringModel::Seq2Seq(fixture().scorer_model.clone()),
    )
    .unwrap()
    .with_cache(Arc::new(ScoreCache::in_memory()))
}

pub fn train_corpus(n: usize) -> Vec<Arc<Sentence>> {
    fixture().world.corpus(n, 100)
}

pub fn heldout(n: usize) -> Vec<(String, Arc<Sentence>)> {
    fixture()
        .world
        .corpus(n, 200)
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("held-{i}"), s))
        .collect()
}
