//! Two-layer projection from model hidden states into item-embedding space:
//! `GELU(h·W1)·W2`, with `W1: d × d/2` and `W2: d/2 × c`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::objectives::ObjectiveError;
use crate::seed;

const GELU_C: f64 = 0.797_884_560_8;
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    input: usize,
    inner: usize,
    output: usize,
    /// Row-major `input × inner`.
    w1: Vec<f64>,
    /// Row-major `inner × output`.
    w2: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ProjectionTrace {
    pub pre_activation: Vec<f64>,
    pub activation: Vec<f64>,
    pub output: Vec<f64>,
}

impl ProjectionParams {
    /// Inner width is `input / 2` (at least 1).
    pub fn new(input: usize, output: usize, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self, ObjectiveError> {
        let inner = (input / 2).max(1);
        if input == 0 || output == 0 {
            return Err(ObjectiveError::Shape(format!("projection {input} -> {output}")));
        }
        if w1.len() != input * inner || w2.len() != inner * output {
            return Err(ObjectiveError::Shape(format!(
                "W1 has {} entries (want {}), W2 has {} (want {})",
                w1.len(),
                input * inner,
                w2.len(),
                inner * output
            )));
        }
        if w1.iter().chain(&w2).any(|x| !x.is_finite()) {
            return Err(ObjectiveError::Shape("non-finite projection weight".into()));
        }
        Ok(ProjectionParams {
            input,
            inner,
            output,
            w1,
            w2,
        })
    }

    /// Gaussian init with fan-in scaling.
    pub fn random(input: usize, output: usize, seed: u64) -> Result<Self, ObjectiveError> {
        let inner = (input / 2).max(1);
        let mut rng = seed::rng_for(seed, "projection-init");
        let n1 = Normal::new(0.0, 1.0 / (input as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, 1.0 / (inner as f64).sqrt()).unwrap();
        let w1 = (0..input * inner).map(|_| n1.sample(&mut rng)).collect();
        let w2 = (0..inner * output).map(|_| n2.sample(&mut rng)).collect();
        Self::new(input, output, w1, w2)
    }

    pub fn input_width(&self) -> usize {
        self.input
    }
    pub fn inner_width(&self) -> usize {
        self.inner
    }
    pub fn output_width(&self) -> usize {
        self.output
    }
    pub fn w1(&self) -> &[f64] {
        &self.w1
    }
    pub fn w2(&self) -> &[f64] {
        &self.w2
    }
    pub fn w1_mut(&mut self) -> &mut [f64] {
        &mut self.w1
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        &mut self.w2
    }

    /// Caller guarantees `h.len() == input_width()`.
    pub fn forward_trace(&self, h: &[f64]) -> ProjectionTrace {
        let mut pre = vec![0.0; self.inner];
        for (i, &hi) in h.iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            let row = &self.w1[i * self.inner..(i + 1) * self.inner];
            for (p, &w) in pre.iter_mut().zip(row) {
                *p += hi * w;
            }
        }
        let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
        let mut out = vec![0.0; self.output];
        for (j, &g) in act.iter().enumerate() {
            let row = &self.w2[j * self.output..(j + 1) * self.output];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += g * w;
            }
        }
        ProjectionTrace {
            pre_activation: pre,
            activation: act,
            output: out,
        }
    }

    pub fn forward(&self, h: &[f64]) -> Vec<f64> {
        self.forward_trace(h).output
    }

    /// Accumulates gradients given `d_out = ∂L/∂output`. Returns `∂L/∂h`.
    pub fn backward(
        &self,
        h: &[f64],
        trace: &ProjectionTrace,
        d_out: &[f64],
        grad_w1: &mut [f64],
        grad_w2: &mut [f64],
    ) -> Vec<f64> {
        let mut d_act = vec![0.0; self.inner];
        for j in 0..self.inner {
            let row = &self.w2[j * self.output..(j + 1) * self.output];
            let grow = &mut grad_w2[j * self.output..(j + 1) * self.output];
            let g = trace.activation[j];
            let mut acc = 0.0;
            for k in 0..self.output {
                grow[k] += g * d_out[k];
                acc += row[k] * d_out[k];
            }
            d_act[j] = acc;
        }
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&trace.pre_activation)
            .map(|(d, &x)| d * gelu_derivative(x))
            .collect();
        let mut d_h = vec![0.0; self.input];
        for i in 0..self.input {
            let row = &self.w1[i * self.inner..(i + 1) * self.inner];
            let grow = &mut grad_w1[i * self.inner..(i + 1) * self.inner];
            let mut acc = 0.0;
            for j in 0..self.inner {
                grow[j] += h[i] * d_pre[j];
                acc += row[j] * d_pre[j];
            }
            d_h[i] = acc;
        }
        d_h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // 0.5 * (1 + tanh(0.7978845608 * 1.044715))
        let expected = 0.5 * (1.0 + (0.797_884_560_8f64 * 1.044_715).tanh());
        assert!((gelu(1.0) - expected).abs() < 1e-15);
        assert!(gelu(-10.0).abs() < 1e-10);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for i in -30..=30 {
            let x = i as f64 * 0.2;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn shape_checks() {
        assert!(ProjectionParams::new(4, 3, vec![0.0; 8], vec![0.0; 6]).is_ok());
        assert!(ProjectionParams::new(4, 3, vec![0.0; 7], vec![0.0; 6]).is_err());
        let p = ProjectionParams::random(6, 5, 1).unwrap();
        assert_eq!((p.input_width(), p.inner_width(), p.output_width()), (6, 3, 5));
        assert_eq!(p, ProjectionParams::random(6, 5, 1).unwrap());
    }
}
