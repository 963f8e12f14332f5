//! Adam optimizer.

use ndarray::ArrayD;

use super::Net;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr: F::from_f64(lr),
            beta1: F::from_f64(beta1),
            beta2: F::from_f64(beta2),
            eps: F::from_f64(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update from the gradients currently accumulated in `net`,
    /// then zero them.
    pub fn step(&mut self, net: &mut Net<F>) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut idx = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_params_mut(|p| {
            if m.len() == idx {
                m.push(ArrayD::zeros(p.value.raw_dim()));
                v.push(ArrayD::zeros(p.value.raw_dim()));
            }
            let mi = &mut m[idx];
            let vi = &mut v[idx];
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(mi)
                .and(vi)
                .for_each(|w, &g, mm, vv| {
                    *mm = b1 * *mm + (F::one() - b1) * g;
                    *vv = b2 * *vv + (F::one() - b2) * g * g;
                    let mhat = *mm / bc1;
                    let vhat = *vv / bc2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                });
            p.zero_grad();
            idx += 1;
        });
    }
}
