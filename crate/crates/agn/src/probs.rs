//! Classifier output distributions.

use ndarray::Array1;

use crate::error::{AgnError, Result};
use crate::scalar::Scalar;

const SUM_TOL: f64 = 1e-6;

/// Nonnegative vector summing to 1 (within 1e-6).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<F: Scalar> {
    probs: Array1<F>,
}

impl<F: Scalar> ProbVector<F> {
    pub fn new(probs: Array1<F>) -> Result<Self> {
        if probs.is_empty() {
            return Err(AgnError::EmptyInput("probability vector".into()));
        }
        let mut sum = 0.0;
        for &p in probs.iter() {
            let p = p.to_f64_lossy();
            if !(0.0..=1.0 + SUM_TOL).contains(&p) {
                return Err(AgnError::InvalidValue(format!("probability {p} out of range")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(AgnError::InvalidValue(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, class: usize) -> F {
        self.probs[class]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> F {
        self.probs[self.argmax()]
    }

    pub fn as_array(&self) -> &Array1<F> {
        &self.probs
    }
}
