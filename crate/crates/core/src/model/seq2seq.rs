use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ids, load_json, save_json, ModelError, Seq2SeqLm};
use crate::nn::{self, Adam, FeatureNet, Slot};
use crate::sentence::Sentence;
use crate::vocab::Vocab;

/// Word-level paraphrase model `p(y_n | y_{n-2}, y_{n-1}, X)`.
///
/// The source enters through a bag-of-words and through the source token at
/// the same position, which makes copying and near-copying cheap to learn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinySeq2Seq {
    vocab: Vocab,
    max_len: usize,
    net: FeatureNet,
}

impl TinySeq2Seq {
    pub fn new(vocab: Vocab, dim: usize, hidden: usize, max_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = FeatureNet::new(vocab.len(), dim, hidden, 4, &mut rng);
        Self { vocab, max_len, net }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        load_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_json(self, path)
    }

    fn source_bag(&self, source: &[usize]) -> Slot {
        if source.is_empty() {
            return vec![(self.vocab.pad(), 1.0)];
        }
        let wt = 1.0 / source.len() as f64;
        source.iter().map(|&id| (id, wt)).collect()
    }

    fn step_slots(&self, bag: &Slot, source: &[usize], prefix: &[usize]) -> Vec<Slot> {
        let n = prefix.len();
        let prev = |back: usize| -> usize {
            if n >= back {
                prefix[n - back]
            } else if n + 1 == back {
                self.vocab.bos()
            } else {
                self.vocab.pad()
            }
        };
        let aligned = source.get(n).copied().unwrap_or(self.vocab.eos());
        vec![
            vec![(prev(1), 1.0)],
            vec![(prev(2), 1.0)],
            bag.clone(),
            vec![(aligned, 1.0)],
        ]
    }

    /// Teacher-forced cross-entropy training on (source, target) pairs.
    pub fn train(&mut self, pairs: &[(Sentence, Sentence)], epochs: usize, lr: f64, batch: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(self.net.param_count(), lr);
        let encoded: Vec<(Vec<usize>, Vec<usize>)> = pairs
            .iter()
            .map(|(s, t)| (ids(&self.vocab, s.tokens()), ids(&self.vocab, t.tokens())))
            .collect();
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut count = 0usize;
            for chunk in order.chunks(batch.max(1)) {
                let mut grad = vec![0.0; self.net.param_count()];
                let n_tokens: usize = chunk.iter().map(|&i| encoded[i].1.len()).sum();
                let scale = 1.0 / n_tokens.max(1) as f64;
                for &i in chunk {
                    let (src, tgt) = &encoded[i];
                    let bag = self.source_bag(src);
                    for n in 0..tgt.len() {
                        let act = self
                            .net
                            .forward::<ChaCha8Rng>(self.step_slots(&bag, src, &tgt[..n]), None);
                        let probs = nn::softmax(&act.logits);
                        total -= probs[tgt[n]].ln();
                        count += 1;
                        let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                        d[tgt[n]] -= scale;
                        self.net.backward_dense(&act, &d, &mut grad);
                    }
                }
                opt.step(&mut self.net.params, &grad);
            }
            history.push(total / count.max(1) as f64);
        }
        history
    }
}

impl Seq2SeqLm for TinySeq2Seq {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn step_log_probs(&self, source: &[usize], prefix: &[usize]) -> Vec<f64> {
        let bag = self.source_bag(source);
        let act = self
            .net
            .forward::<ChaCha8Rng>(self.step_slots(&bag, source, prefix), None);
        nn::log_softmax(&act.logits)
    }

    fn sequence_log_probs(&self, source: &[usize], target: &[usize]) -> Vec<f64> {
        let bag = self.source_bag(source);
        (0..target.len())
            .map(|n| {
                let act = self
                    .net
                    .forward::<ChaCha8Rng>(self.step_slots(&bag, source, &target[..n]), None);
                let lse = nn::log_sum_exp(&act.logits);
                act.logits[target[n]] - lse
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentence::tokenize;

    #[test]
    fn learns_to_copy() {
        let words = ["a", "b", "c", "d"];
        let vocab = Vocab::new(words);
        let mut m = TinySeq2Seq::new(vocab.clone(), 8, 16, 32, 1);
        let pairs: Vec<(Sentence, Sentence)> = ["a b c", "b c d", "c d a", "d a b"]
            .iter()
            .map(|t| (tokenize(t).unwrap(), tokenize(t).unwrap()))
            .collect();
        let hist = m.train(&pairs, 60, 0.02, 4, 2);
        assert!(hist.last().unwrap() < &(hist[0] * 0.5));
        let src = ids(&vocab, tokenize("a b c").unwrap().tokens());
        let copy: f64 = m.sequence_log_probs(&src, &src).iter().sum();
        let other = ids(&vocab, tokenize("a d c").unwrap().tokens());
        let changed: f64 = m.sequence_log_probs(&src, &other).iter().sum();
        assert!(copy > changed);
    }
}
