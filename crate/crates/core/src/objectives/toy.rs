//! A tiny trainable language model.
//!
//! The feature at a position is the mean embedding of the last `window`
//! tokens of the prefix; logits are `feature · W + b`. The feature doubles
//! as the hidden state exposed to retrieval grounding.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decoder::LanguageModel;
use crate::objectives::ObjectiveError;
use crate::seed;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    vocab_size: usize,
    width: usize,
    window: usize,
    /// `[embedding (V×h) | output weights (h×V) | bias (V)]`, row-major.
    params: Vec<f64>,
}

impl ToyLm {
    pub fn new(vocab_size: usize, width: usize, window: usize, seed: u64) -> Result<Self, ObjectiveError> {
        if vocab_size == 0 || width == 0 || window == 0 {
            return Err(ObjectiveError::Shape(format!(
                "toy model vocab={vocab_size} width={width} window={window}"
            )));
        }
        let mut rng = seed::rng_for(seed, "toy-init");
        let emb = Normal::new(0.0, 1.0).unwrap();
        let out = Normal::new(0.0, 0.1).unwrap();
        let mut params = Vec::with_capacity(2 * vocab_size * width + vocab_size);
        params.extend((0..vocab_size * width).map(|_| emb.sample(&mut rng)));
        params.extend((0..vocab_size * width).map(|_| out.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, vocab_size));
        Ok(ToyLm {
            vocab_size,
            width,
            window,
            params,
        })
    }

    /// Rebuilds a model from a flat parameter vector.
    pub fn from_params(
        vocab_size: usize,
        width: usize,
        window: usize,
        params: Vec<f64>,
    ) -> Result<Self, ObjectiveError> {
        let want = 2 * vocab_size * width + vocab_size;
        if params.len() != want || window == 0 {
            return Err(ObjectiveError::Shape(format!(
                "expected {want} parameters, got {}",
                params.len()
            )));
        }
        Ok(ToyLm {
            vocab_size,
            width,
            window,
            params,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn out_offset(&self) -> usize {
        self.vocab_size * self.width
    }

    fn bias_offset(&self) -> usize {
        2 * self.vocab_size * self.width
    }

    fn window_of<'p>(&self, prefix: &'p [TokenId]) -> &'p [TokenId] {
        &prefix[prefix.len().saturating_sub(self.window)..]
    }

    /// Mean embedding of the trailing window; zeros for an empty prefix.
    pub fn feature(&self, prefix: &[TokenId]) -> Vec<f64> {
        let toks = self.window_of(prefix);
        let mut f = vec![0.0; self.width];
        if toks.is_empty() {
            return f;
        }
        for &t in toks {
            let row = &self.params[t as usize * self.width..(t as usize + 1) * self.width];
            for (a, &e) in f.iter_mut().zip(row) {
                *a += e;
            }
        }
        let inv = 1.0 / toks.len() as f64;
        f.iter_mut().for_each(|x| *x *= inv);
        f
    }

    pub fn logits_from_feature(&self, f: &[f64]) -> Vec<f64> {
        let mut z = self.params[self.bias_offset()..].to_vec();
        let w = &self.params[self.out_offset()..self.bias_offset()];
        for (a, &fa) in f.iter().enumerate() {
            let row = &w[a * self.vocab_size..(a + 1) * self.vocab_size];
            for (zv, &wv) in z.iter_mut().zip(row) {
                *zv += fa * wv;
            }
        }
        z
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂logits` at one position.
    pub fn backprop_logits(&self, prefix: &[TokenId], feature: &[f64], d_logits: &[f64], grad: &mut [f64]) {
        let v = self.vocab_size;
        let (oo, bo) = (self.out_offset(), self.bias_offset());
        for (g, &d) in grad[bo..].iter_mut().zip(d_logits) {
            *g += d;
        }
        let mut d_feature = vec![0.0; self.width];
        for a in 0..self.width {
            let w = &self.params[oo + a * v..oo + (a + 1) * v];
            let gw = &mut grad[oo + a * v..oo + (a + 1) * v];
            let mut acc = 0.0;
            for t in 0..v {
                gw[t] += feature[a] * d_logits[t];
                acc += w[t] * d_logits[t];
            }
            d_feature[a] = acc;
        }
        self.backprop_feature(prefix, &d_feature, grad);
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂feature`.
    pub fn backprop_feature(&self, prefix: &[TokenId], d_feature: &[f64], grad: &mut [f64]) {
        let toks = self.window_of(prefix);
        if toks.is_empty() {
            return;
        }
        let inv = 1.0 / toks.len() as f64;
        for &t in toks {
            let g = &mut grad[t as usize * self.width..(t as usize + 1) * self.width];
            for (gi, &d) in g.iter_mut().zip(d_feature) {
                *gi += d * inv;
            }
        }
    }
}

impl LanguageModel for ToyLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.logits_from_feature(&self.feature(prefix))
    }

    fn hidden(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.feature(prefix)
    }
}
