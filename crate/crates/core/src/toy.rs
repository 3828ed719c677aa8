//! A small synthetic language for tests, demos and the CLI `init-models`
//! command.
//!
//! Sentences follow `DET w0 w1 w2 DET w3 w4 .` where every content slot is
//! filled from a synonym set fixed by the sentence's topic. Each synonym
//! set has a quality profile, which the paraphrase scorer learns, and a
//! frequency profile (a permutation of the quality profile), which the
//! corpus used to pretrain the masked LM follows. The two disagree, so a
//! pretrained masked LM ranks candidates by frequency and not by score.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ids, TinyCausalLm, TinyMlm, TinySeq2Seq};
use crate::scorer::{fill_prompt, GPTSCORE_PARAPHRASE_TEMPLATE};
use crate::sentence::{tokenize, Sentence};
use crate::vocab::Vocab;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const DETERMINERS: [&str; 2] = ["the", "a"];
const QUALITY: [f64; 4] = [0.55, 0.25, 0.13, 0.07];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub topics: usize,
    pub slots: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            topics: 12,
            slots: 5,
            seed: 7,
        }
    }
}

/// Model sizes and training budgets for the toy models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTraining {
    pub mlm_sentences: usize,
    pub mlm_epochs: usize,
    pub scorer_pairs: usize,
    pub scorer_epochs: usize,
    pub causal_pairs: usize,
    pub causal_epochs: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl Default for ToyTraining {
    fn default() -> Self {
        Self {
            mlm_sentences: 2000,
            mlm_epochs: 6,
            scorer_pairs: 3000,
            scorer_epochs: 6,
            causal_pairs: 600,
            causal_epochs: 4,
            dim: 16,
            hidden: 32,
        }
    }
}

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i % CONSONANTS.len()] as char;
    let v = VOWELS[(i / CONSONANTS.len()) % VOWELS.len()] as char;
    format!("{c}{v}")
}

fn pseudo_word(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    format!("{}{}{}", syllable(i / n / n), syllable((i / n) % n), syllable(i % n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorld {
    config: ToyConfig,
    /// `[topic][slot][synonym]`.
    words: Vec<Vec<Vec<String>>>,
    /// `[topic][slot][synonym]` corpus frequency weights.
    frequency: Vec<Vec<Vec<f64>>>,
}

impl ToyWorld {
    pub fn new(config: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut next = 0usize;
        let mut words = Vec::with_capacity(config.topics);
        let mut frequency = Vec::with_capacity(config.topics);
        for _ in 0..config.topics {
            let mut tw = Vec::with_capacity(config.slots);
            let mut tf = Vec::with_capacity(config.slots);
            for _ in 0..config.slots {
                tw.push(
                    (0..QUALITY.len())
                        .map(|_| {
                            next += 1;
                            pseudo_word(next * 37 + 5)
                        })
                        .collect(),
                );
                let mut f = QUALITY.to_vec();
                f.shuffle(&mut rng);
                tf.push(f);
            }
            words.push(tw);
            frequency.push(tf);
        }
        Self {
            config,
            words,
            frequency,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    /// Function words, content words and the scorer prompt words.
    pub fn vocab(&self) -> Vocab {
        let mut all: Vec<String> = DETERMINERS.iter().map(|s| s.to_string()).collect();
        all.push(".".into());
        for t in &self.words {
            for s in t {
                all.extend(s.iter().cloned());
            }
        }
        let prompt = fill_prompt(GPTSCORE_PARAPHRASE_TEMPLATE, "", "");
        for tok in tokenize(&prompt).expect("template is non-empty").tokens() {
            let t = tok.to_lowercase();
            if !all.contains(&t) {
                all.push(t);
            }
        }
        Vocab::new(all)
    }

    /// Quality weight of a content word, if it is one.
    pub fn quality(&self, word: &str) -> Option<f64> {
        let w = word.to_lowercase();
        self.words
            .iter()
            .flatten()
            .find_map(|syn| syn.iter().position(|x| *x == w).map(|j| QUALITY[j]))
    }

    /// Synonym set containing `word`.
    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        let w = word.to_lowercase();
        self.words.iter().flatten().find(|syn| syn.contains(&w)).map(|s| s.as_slice())
    }

    fn render(&self, dets: [usize; 2], content: &[String]) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(content.len() + 3);
        parts.push(DETERMINERS[dets[0]]);
        for (i, w) in content.iter().enumerate() {
            if i == 3 {
                parts.push(DETERMINERS[dets[1]]);
            }
            parts.push(w);
        }
        let mut text = parts.join(" ");
        text.push_str(" .");
        let mut c = text.chars();
        match c.next() {
            Some(f) => f.to_uppercase().chain(c).collect(),
            None => text,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, weights: impl Fn(usize, usize) -> Vec<f64>) -> (usize, [usize; 2], Vec<String>) {
        let topic = rng.gen_range(0..self.config.topics);
        let dets = [rng.gen_range(0..2), rng.gen_range(0..2)];
        let content = (0..self.config.slots)
            .map(|s| {
                let dist = WeightedIndex::new(weights(topic, s)).expect("positive weights");
                self.words[topic][s][dist.sample(rng)].clone()
            })
            .collect();
        (topic, dets, content)
    }

    /// Sentences drawn with the corpus frequency profile.
    pub fn corpus(&self, n: usize, seed: u64) -> Vec<Arc<Sentence>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (_, dets, content) = self.draw(&mut rng, |t, s| self.frequency[t][s].clone());
                Arc::new(tokenize(&self.render(dets, &content)).expect("non-empty"))
            })
            .collect()
    }

    /// Paraphrase pairs: the target resamples every content word from its
    /// synonym set by quality.
    pub fn paraphrase_pairs(&self, n: usize, seed: u64) -> Vec<(Sentence, Sentence)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = WeightedIndex::new(QUALITY).expect("positive weights");
        (0..n)
            .map(|_| {
                let (topic, dets, src) = self.draw(&mut rng, |t, s| self.frequency[t][s].clone());
                let tgt: Vec<String> = (0..self.config.slots)
                    .map(|s| self.words[topic][s][q.sample(&mut rng)].clone())
                    .collect();
                (
                    tokenize(&self.render(dets, &src)).expect("non-empty"),
                    tokenize(&self.render(dets, &tgt)).expect("non-empty"),
                )
            })
            .collect()
    }

    pub fn max_len(&self) -> usize {
        self.config.slots + 3
    }

    /// Masked LM pretrained on the frequency-profile corpus.
    pub fn base_mlm(&self, budget: &ToyTraining, seed: u64) -> TinyMlm {
        let mut m = TinyMlm::new(self.vocab(), budget.dim, budget.hidden, 2, seed);
        let corpus: Vec<Sentence> = self
            .corpus(budget.mlm_sentences, seed ^ 0x11)
            .into_iter()
            .map(|s| (*s).clone())
            .collect();
        m.pretrain(&corpus, budget.mlm_epochs, 0.01, 32, seed);
        m
    }

    /// Paraphrase scorer trained on quality-resampled pairs.
    pub fn scorer_model(&self, budget: &ToyTraining, seed: u64) -> TinySeq2Seq {
        let mut m = TinySeq2Seq::new(self.vocab(), budget.dim, budget.hidden, self.max_len() + 2, seed);
        let pairs = self.paraphrase_pairs(budget.scorer_pairs, seed ^ 0x22);
        m.train(&pairs, budget.scorer_epochs, 0.01, 32, seed);
        m
    }

    /// Causal LM trained on filled paraphrase prompts.
    pub fn causal_model(&self, budget: &ToyTraining, seed: u64) -> TinyCausalLm {
        let vocab = self.vocab();
        let pairs = self.paraphrase_pairs(budget.causal_pairs, seed ^ 0x33);
        let seqs: Vec<Vec<usize>> = pairs
            .iter()
            .map(|(s, t)| {
                let text = fill_prompt(GPTSCORE_PARAPHRASE_TEMPLATE, s.text(), t.text());
                ids(&vocab, tokenize(&text).expect("non-empty").tokens())
            })
            .collect();
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0) + 4;
        let mut m = TinyCausalLm::new(vocab, budget.dim, budget.hidden, max_len, seed);
        m.train(&seqs, budget.causal_epochs, 0.01, 32, seed);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::eligible_positions;
    use crate::candidates::EligibilityFilter;

    #[test]
    fn words_are_unique_and_admissible() {
        let w = ToyWorld::new(ToyConfig::default());
        let v = w.vocab();
        let content: Vec<&String> = w.words.iter().flatten().flatten().collect();
        let mut dedup = content.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), content.len());
        assert!(content.iter().all(|c| v.id(c).is_some_and(|i| v.is_admissible(i))));
    }

    #[test]
    fn sentences_have_five_content_sites() {
        let w = ToyWorld::new(ToyConfig::default());
        let v = w.vocab();
        for s in w.corpus(20, 1) {
            assert_eq!(s.len(), w.max_len());
            let e = eligible_positions(&s, EligibilityFilter::InVocabulary, Some(&v));
            assert!(e.len() >= 5);
            assert!(s.text().chars().next().unwrap().is_uppercase());
        }
    }

    #[test]
    fn pairs_keep_topic() {
        let w = ToyWorld::new(ToyConfig::default());
        for (s, t) in w.paraphrase_pairs(20, 2) {
            for p in [1, 2, 3, 5, 6] {
                assert_eq!(w.synonyms(&s.tokens()[p]), w.synonyms(&t.tokens()[p]));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ToyWorld::new(ToyConfig::default());
        let b = ToyWorld::new(ToyConfig::default());
        assert_eq!(a, b);
        assert_eq!(a.corpus(5, 3), b.corpus(5, 3));
    }
}
