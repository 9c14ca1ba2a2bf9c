//! Small models for fixtures, fuzzing and benchmarks.

use std::fmt;

use crate::decoder::LanguageModel;
use crate::seed;
use crate::TokenId;

/// Equal logits for every token and a zero hidden vector.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel {
    pub vocab_size: usize,
    pub hidden_width: usize,
}

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn logits(&self, _prefix: &[TokenId]) -> Vec<f64> {
        vec![0.0; self.vocab_size]
    }
    fn hidden(&self, _prefix: &[TokenId]) -> Vec<f64> {
        vec![0.0; self.hidden_width]
    }
}

/// Pseudo-random logits that are a pure function of `(seed, prefix)`.
///
/// `bias` adds a constant to selected token logits, which lets a fuzz
/// campaign make `<SOI>` likely enough to produce item segments.
#[derive(Debug, Clone)]
pub struct RandomLogitModel {
    pub vocab_size: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub scale: f64,
    pub bias: Vec<(TokenId, f64)>,
}

impl RandomLogitModel {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        RandomLogitModel {
            vocab_size,
            hidden_width: 8,
            seed,
            scale: 4.0,
            bias: Vec::new(),
        }
    }

    pub fn with_bias(mut self, token: TokenId, bias: f64) -> Self {
        self.bias.push((token, bias));
        self
    }

    fn prefix_key(&self, prefix: &[TokenId]) -> u64 {
        prefix.iter().fold(seed::mix(self.seed, prefix.len() as u64), |h, &t| {
            seed::mix(h, u64::from(t))
        })
    }

    fn unit(h: u64) -> f64 {
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl LanguageModel for RandomLogitModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        let key = self.prefix_key(prefix);
        let mut out: Vec<f64> = (0..self.vocab_size as u64)
            .map(|t| (2.0 * Self::unit(seed::mix(key, t)) - 1.0) * self.scale)
            .collect();
        for &(t, b) in &self.bias {
            if let Some(x) = out.get_mut(t as usize) {
                *x += b;
            }
        }
        out
    }

    fn hidden(&self, prefix: &[TokenId]) -> Vec<f64> {
        let key = seed::mix(self.prefix_key(prefix), 0x0068_6964);
        (0..self.hidden_width as u64)
            .map(|i| 2.0 * Self::unit(seed::mix(key, i)) - 1.0)
            .collect()
    }
}

type LogitFn = dyn Fn(&[TokenId]) -> Vec<f64> + Send + Sync;

/// Wraps a closure as a model. Handy for scripted behaviour in tests.
pub struct FnModel {
    vocab_size: usize,
    hidden_width: usize,
    f: Box<LogitFn>,
}

impl FnModel {
    pub fn new(
        vocab_size: usize,
        hidden_width: usize,
        f: impl Fn(&[TokenId]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        FnModel {
            vocab_size,
            hidden_width,
            f: Box::new(f),
        }
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("vocab_size", &self.vocab_size)
            .finish_non_exhaustive()
    }
}

impl LanguageModel for FnModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        (self.f)(prefix)
    }
    fn hidden(&self, _prefix: &[TokenId]) -> Vec<f64> {
        vec![0.0; self.hidden_width]
    }
}
