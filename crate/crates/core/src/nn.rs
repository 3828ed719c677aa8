//! Small dense building blocks: stable softmax helpers, an embedding + MLP
//! feature network with hand-written backprop, and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x) without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so its L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// One input slot: a weighted sum of embedding rows.
pub type Slot = Vec<(usize, f64)>;

/// Embedding table followed by `tanh` hidden layer and a vocabulary-sized
/// output layer. All weights live in one flat vector.
///
/// Layout: `emb[vocab*dim] | w[hidden*slots*dim] | b[hidden] | u[vocab*hidden] | c[vocab]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub slots: usize,
    pub params: Vec<f64>,
}

/// Forward-pass intermediates needed by [`FeatureNet::backward`].
#[derive(Debug, Clone)]
pub struct Activation {
    slots: Vec<Slot>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl FeatureNet {
    pub fn new<R: Rng>(vocab: usize, dim: usize, hidden: usize, slots: usize, rng: &mut R) -> Self {
        let mut net = Self {
            vocab,
            dim,
            hidden,
            slots,
            params: Vec::new(),
        };
        let n = net.param_count();
        net.params = vec![0.0; n];
        let in_dim = slots * dim;
        let emb_a = 0.5;
        let w_a = (6.0 / (in_dim + hidden) as f64).sqrt();
        let u_a = (6.0 / (hidden + vocab) as f64).sqrt();
        let (e0, w0, b0, u0, c0) = net.offsets();
        for p in &mut net.params[e0..w0] {
            *p = rng.gen_range(-emb_a..emb_a);
        }
        for p in &mut net.params[w0..b0] {
            *p = rng.gen_range(-w_a..w_a);
        }
        for p in &mut net.params[u0..c0] {
            *p = rng.gen_range(-u_a..u_a);
        }
        net
    }

    pub fn param_count(&self) -> usize {
        let in_dim = self.slots * self.dim;
        self.vocab * self.dim + self.hidden * in_dim + self.hidden + self.vocab * self.hidden + self.vocab
    }

    fn offsets(&self) -> (usize, usize, usize, usize, usize) {
        let e0 = 0;
        let w0 = e0 + self.vocab * self.dim;
        let b0 = w0 + self.hidden * self.slots * self.dim;
        let u0 = b0 + self.hidden;
        let c0 = u0 + self.vocab * self.hidden;
        (e0, w0, b0, u0, c0)
    }

    /// Runs the network. With `dropout = Some((rate, rng))`, hidden units are
    /// dropped with inverted scaling.
    pub fn forward<R: Rng>(&self, slots: Vec<Slot>, dropout: Option<(f64, &mut R)>) -> Activation {
        debug_assert_eq!(slots.len(), self.slots);
        let (_, w0, b0, u0, c0) = self.offsets();
        let d = self.dim;
        let in_dim = self.slots * d;
        let p = &self.params;
        let mut input = vec![0.0; in_dim];
        for (s, slot) in slots.iter().enumerate() {
            let dst = &mut input[s * d..(s + 1) * d];
            for &(id, wt) in slot {
                let row = &p[id * d..(id + 1) * d];
                for (x, e) in dst.iter_mut().zip(row) {
                    *x += wt * e;
                }
            }
        }
        let mut hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &p[w0 + h * in_dim..w0 + (h + 1) * in_dim];
                let z: f64 = row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>() + p[b0 + h];
                z.tanh()
            })
            .collect();
        let mask = dropout.and_then(|(rate, rng)| {
            if rate <= 0.0 {
                return None;
            }
            let keep = 1.0 - rate;
            let m: Vec<f64> = (0..self.hidden)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            hidden.iter_mut().zip(&m).for_each(|(h, s)| *h *= s);
            Some(m)
        });
        let logits = (0..self.vocab)
            .map(|v| {
                let row = &p[u0 + v * self.hidden..u0 + (v + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + p[c0 + v]
            })
            .collect();
        Activation {
            slots,
            input,
            hidden,
            mask,
            logits,
        }
    }

    /// Accumulates parameter gradients for a sparse upstream gradient on the
    /// logits, given as `(vocab id, dL/dlogit)` pairs.
    pub fn backward(&self, act: &Activation, dlogits: &[(usize, f64)], grad: &mut [f64]) {
        let (_, w0, b0, u0, c0) = self.offsets();
        let d = self.dim;
        let in_dim = self.slots * d;
        let p = &self.params;
        let mut dhidden = vec![0.0; self.hidden];
        for &(v, g) in dlogits {
            if g == 0.0 {
                continue;
            }
            grad[c0 + v] += g;
            let row = u0 + v * self.hidden;
            for h in 0..self.hidden {
                grad[row + h] += g * act.hidden[h];
                dhidden[h] += g * p[row + h];
            }
        }
        let mut dinput = vec![0.0; in_dim];
        for h in 0..self.hidden {
            let mut g = dhidden[h];
            if let Some(mask) = &act.mask {
                g *= mask[h];
            }
            if g == 0.0 {
                continue;
            }
            // hidden already carries the dropout scale, undo it for tanh'
            let pre_tanh = match &act.mask {
                Some(mask) if mask[h] != 0.0 => act.hidden[h] / mask[h],
                Some(_) => continue,
                None => act.hidden[h],
            };
            let dz = g * (1.0 - pre_tanh * pre_tanh);
            grad[b0 + h] += dz;
            let row = w0 + h * in_dim;
            for i in 0..in_dim {
                grad[row + i] += dz * act.input[i];
                dinput[i] += dz * p[row + i];
            }
        }
        for (s, slot) in act.slots.iter().enumerate() {
            let src = &dinput[s * d..(s + 1) * d];
            for &(id, wt) in slot {
                let dst = &mut grad[id * d..(id + 1) * d];
                for (g, x) in dst.iter_mut().zip(src) {
                    *g += wt * x;
                }
            }
        }
    }

    /// Dense variant: upstream gradient for every logit.
    pub fn backward_dense(&self, act: &Activation, dlogits: &[f64], grad: &mut [f64]) {
        let sparse: Vec<(usize, f64)> = dlogits.iter().copied().enumerate().collect();
        self.backward(act, &sparse, grad);
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn stable_helpers() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sigmoid(0.0) + 2f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert_eq!(log_sigmoid(800.0), 0.0);
        let s = softmax(&[0.0, 0.0]);
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((l2_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = FeatureNet::new(9, 3, 4, 2, &mut rng);
        let slots = || vec![vec![(5, 1.0)], vec![(6, 0.5), (7, 0.5)]];
        // loss = sum_v coef_v * logit_v
        let coef: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |net: &FeatureNet| {
            let a = net.forward::<ChaCha8Rng>(slots(), None);
            a.logits.iter().zip(&coef).map(|(l, c)| l * c).sum::<f64>()
        };
        let act = net.forward::<ChaCha8Rng>(slots(), None);
        let mut grad = vec![0.0; net.param_count()];
        net.backward_dense(&act, &coef, &mut grad);
        let h = 1e-6;
        for i in 0..net.param_count() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = loss(&net);
            net.params[i] = orig - h;
            let down = loss(&net);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut p = vec![0.1, -0.2];
        let before = p.clone();
        let mut opt = Adam::new(2, 0.0);
        opt.step(&mut p, &[1.0, -3.0]);
        assert_eq!(p, before);
    }
}
