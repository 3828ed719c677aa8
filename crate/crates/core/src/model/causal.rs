use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_json, save_json, CausalLm, ModelError};
use crate::nn::{self, Adam, FeatureNet, Slot};
use crate::vocab::Vocab;

/// Left-to-right LM over the three previous tokens plus a running
/// bag-of-words of the whole prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyCausalLm {
    vocab: Vocab,
    max_len: usize,
    net: FeatureNet,
}

impl TinyCausalLm {
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

    fn slots(&self, prefix: &[usize]) -> Vec<Slot> {
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
        let bag = if n == 0 {
            vec![(self.vocab.bos(), 1.0)]
        } else {
            let wt = 1.0 / n as f64;
            prefix.iter().map(|&id| (id, wt)).collect()
        };
        vec![
            vec![(prev(1), 1.0)],
            vec![(prev(2), 1.0)],
            vec![(prev(3), 1.0)],
            bag,
        ]
    }

    /// Next-token cross-entropy training over token-id sequences.
    pub fn train(&mut self, sequences: &[Vec<usize>], epochs: usize, lr: f64, batch: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(self.net.param_count(), lr);
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut count = 0usize;
            for chunk in order.chunks(batch.max(1)) {
                let mut grad = vec![0.0; self.net.param_count()];
                let n_tokens: usize = chunk.iter().map(|&i| sequences[i].len()).sum();
                let scale = 1.0 / n_tokens.max(1) as f64;
                for &i in chunk {
                    let seq = &sequences[i];
                    for n in 0..seq.len() {
                        let act = self.net.forward::<ChaCha8Rng>(self.slots(&seq[..n]), None);
                        let probs = nn::softmax(&act.logits);
                        total -= probs[seq[n]].ln();
                        count += 1;
                        let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                        d[seq[n]] -= scale;
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

impl CausalLm for TinyCausalLm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn step_log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        let act = self.net.forward::<ChaCha8Rng>(self.slots(prefix), None);
        nn::log_softmax(&act.logits)
    }

    fn sequence_log_probs(&self, tokens: &[usize], start: usize) -> Vec<f64> {
        (start..tokens.len())
            .map(|n| {
                let act = self.net.forward::<ChaCha8Rng>(self.slots(&tokens[..n]), None);
                act.logits[tokens[n]] - nn::log_sum_exp(&act.logits)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_probs_normalize() {
        let m = TinyCausalLm::new(Vocab::new(["a", "b"]), 4, 4, 16, 0);
        let lp = m.step_log_probs(&[5, 6]);
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(lp.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn training_reduces_loss() {
        let mut m = TinyCausalLm::new(Vocab::new(["a", "b", "c"]), 6, 8, 16, 0);
        let seqs = vec![vec![5, 6, 7, 5, 6, 7], vec![6, 7, 5, 6, 7, 5]];
        let hist = m.train(&seqs, 40, 0.02, 2, 0);
        assert!(hist.last().unwrap() < &hist[0]);
    }
}
