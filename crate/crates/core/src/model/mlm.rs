use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ids, load_json, save_json, MaskedLm, ModelError, TrainableMlm};
use crate::nn::{self, Activation, Adam, FeatureNet, Slot};
use crate::sentence::Sentence;
use crate::vocab::Vocab;

/// Windowed masked LM: embeddings of the `window` tokens on each side of
/// the masked position plus a bag-of-words over the rest of the sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyMlm {
    vocab: Vocab,
    window: usize,
    net: FeatureNet,
}

impl TinyMlm {
    pub fn new(vocab: Vocab, dim: usize, hidden: usize, window: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = FeatureNet::new(vocab.len(), dim, hidden, 2 * window + 1, &mut rng);
        Self { vocab, window, net }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        load_json(path)
    }

    fn context(&self, token_ids: &[usize], position: usize) -> Vec<Slot> {
        let w = self.window as isize;
        let n = token_ids.len() as isize;
        let at = |i: isize| -> usize {
            if i == -1 {
                self.vocab.bos()
            } else if i == n {
                self.vocab.eos()
            } else if i < 0 || i > n {
                self.vocab.pad()
            } else {
                token_ids[i as usize]
            }
        };
        let p = position as isize;
        let mut slots: Vec<Slot> = (-w..0)
            .chain(1..=w)
            .map(|o| vec![(at(p + o), 1.0)])
            .collect();
        let others = token_ids.len().saturating_sub(1);
        let bag = if others == 0 {
            vec![(self.vocab.mask(), 1.0)]
        } else {
            let wt = 1.0 / others as f64;
            token_ids
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != position)
                .map(|(_, &id)| (id, wt))
                .collect()
        };
        slots.push(bag);
        slots
    }

    /// Masked-token cross-entropy pretraining over every in-vocabulary
    /// position of every sentence. Returns the mean loss of each epoch.
    pub fn pretrain(&mut self, corpus: &[Sentence], epochs: usize, lr: f64, batch: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(self.net.param_count(), lr);
        let mut examples: Vec<(usize, usize)> = corpus
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                let vocab = &self.vocab;
                s.tokens()
                    .iter()
                    .enumerate()
                    .filter(move |(_, t)| vocab.id(t).is_some())
                    .map(move |(p, _)| (si, p))
            })
            .collect();
        let encoded: Vec<Vec<usize>> = corpus.iter().map(|s| ids(&self.vocab, s.tokens())).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            examples.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in examples.chunks(batch.max(1)) {
                let mut grad = vec![0.0; self.net.param_count()];
                for &(si, pos) in chunk {
                    let act = self.net.forward::<ChaCha8Rng>(self.context(&encoded[si], pos), None);
                    let probs = nn::softmax(&act.logits);
                    let target = encoded[si][pos];
                    total -= probs[target].ln();
                    let scale = 1.0 / chunk.len() as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    d[target] -= scale;
                    self.net.backward_dense(&act, &d, &mut grad);
                }
                opt.step(&mut self.net.params, &grad);
            }
            history.push(total / examples.len().max(1) as f64);
        }
        history
    }
}

impl MaskedLm for TinyMlm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn masked_logits(&self, sentence: &Sentence, position: usize) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_train(sentence, position, None)?.logits)
    }
}

impl TrainableMlm for TinyMlm {
    fn params(&self) -> &[f64] {
        &self.net.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.net.params
    }

    fn forward_train(
        &self,
        sentence: &Sentence,
        position: usize,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Activation, ModelError> {
        if position >= sentence.len() {
            return Err(ModelError::BadPosition {
                position,
                len: sentence.len(),
            });
        }
        let token_ids = ids(&self.vocab, sentence.tokens());
        Ok(self.net.forward(self.context(&token_ids, position), dropout))
    }

    fn backward(&self, act: &Activation, dlogits: &[(usize, f64)], grad: &mut [f64]) {
        self.net.backward(act, dlogits, grad);
    }

    fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_json(self, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentence::tokenize;

    fn corpus() -> Vec<Sentence> {
        ["the cat sat on the mat", "the dog sat on the rug", "a cat ran", "a dog ran"]
            .iter()
            .map(|t| tokenize(t).unwrap())
            .collect()
    }

    #[test]
    fn masked_position_does_not_leak() {
        let vocab = Vocab::new(["the", "cat", "dog", "sat", "on", "mat", "rug", "a", "ran"]);
        let m = TinyMlm::new(vocab, 8, 8, 2, 3);
        let a = tokenize("the cat sat").unwrap();
        let b = tokenize("the dog sat").unwrap();
        assert_eq!(m.masked_logits(&a, 1).unwrap(), m.masked_logits(&b, 1).unwrap());
        assert_ne!(m.masked_logits(&a, 0).unwrap(), m.masked_logits(&b, 0).unwrap());
        assert!(m.masked_logits(&a, 3).is_err());
    }

    #[test]
    fn pretraining_reduces_loss() {
        let vocab = Vocab::new(["the", "cat", "dog", "sat", "on", "mat", "rug", "a", "ran"]);
        let mut m = TinyMlm::new(vocab, 8, 16, 2, 3);
        let hist = m.pretrain(&corpus(), 30, 0.01, 4, 1);
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::new(["x", "y"]);
        let m = TinyMlm::new(vocab, 4, 4, 1, 9);
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(TinyMlm::load(&path).unwrap(), m);
    }
}
