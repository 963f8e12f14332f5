//! Fully connected, reshape, and dropout layers.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Init, Param};
use crate::scalar::Scalar;

/// Fully connected layer: flattens (B,C,H,W) to (B, in_dim), emits
/// (B, out_dim, 1, 1).
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Param<F>, // (out_dim, in_dim)
    pub bias: Param<F>,   // (out_dim,)
    in_dim: usize,
    out_dim: usize,
    cache_x: Option<Array2<F>>,
    cache_shape: Option<(usize, usize, usize, usize)>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, init: Init, rng: &mut impl Rng) -> Self {
        let std = match init {
            Init::He => (2.0 / in_dim as f64).sqrt(),
            Init::Dcgan => 0.02,
        };
        let std = F::from_f64(std);
        let mut w = ndarray::ArrayD::<F>::zeros(vec![out_dim, in_dim]);
        for v in w.iter_mut() {
            *v = F::sample_standard_normal(rng) * std;
        }
        Self {
            weight: Param::new(w),
            bias: Param::new(ndarray::ArrayD::zeros(vec![out_dim])),
            in_dim,
            out_dim,
            cache_x: None,
            cache_shape: None,
        }
    }

    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let shape = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let b = shape.0;
        assert_eq!(
            shape.1 * shape.2 * shape.3,
            self.in_dim,
            "linear expects {} features",
            self.in_dim
        );
        let xmat = x.into_shape_with_order((b, self.in_dim)).unwrap();
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_dim, self.in_dim))
            .unwrap();
        let mut y = xmat.dot(&wmat.t());
        let bias = self.bias.value.view().into_shape_with_order(self.out_dim).unwrap();
        for mut row in y.rows_mut() {
            row.iter_mut().zip(bias.iter()).for_each(|(v, &bn)| *v = *v + bn);
        }
        self.cache_x = Some(xmat);
        self.cache_shape = Some(shape);
        y.into_shape_with_order((b, self.out_dim, 1, 1)).unwrap()
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let shape = self.cache_shape.expect("forward before backward");
        let b = x.shape()[0];
        let dymat = dy.into_shape_with_order((b, self.out_dim)).unwrap();
        let mut dwmat = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_dim, self.in_dim))
            .unwrap();
        general_mat_mul(F::one(), &dymat.t(), &x.view(), F::one(), &mut dwmat);
        let mut dbias = self.bias.grad.view_mut().into_shape_with_order(self.out_dim).unwrap();
        for o in 0..self.out_dim {
            dbias[o] = dbias[o] + dymat.column(o).sum();
        }
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_dim, self.in_dim))
            .unwrap();
        let dx = dymat.dot(&wmat);
        dx.into_shape_with_order(shape).unwrap()
    }

    pub fn clear_cache(&mut self) {
        self.cache_x = None;
    }
}

/// (B, D, 1, 1) -> (B, C, H, W).
#[derive(Debug, Clone)]
pub struct Reshape<F: Scalar> {
    channels: usize,
    height: usize,
    width: usize,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> Reshape<F> {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let b = x.shape()[0];
        x.into_shape_with_order((b, self.channels, self.height, self.width))
            .unwrap()
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let b = dy.shape()[0];
        let d = self.channels * self.height * self.width;
        dy.into_shape_with_order((b, d, 1, 1)).unwrap()
    }

    pub fn clear_cache(&mut self) {}
}

/// Inverted dropout with an internal deterministic stream.
#[derive(Debug, Clone)]
pub struct Dropout<F: Scalar> {
    prob: f64,
    rng: ChaCha8Rng,
    cache_mask: Option<Array4<F>>,
}

impl<F: Scalar> Dropout<F> {
    pub fn new(prob: f64, seed: u64) -> Self {
        Self {
            prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache_mask: None,
        }
    }

    pub fn forward(&mut self, x: Array4<F>, mode: super::Mode) -> Array4<F> {
        if mode == super::Mode::Eval || self.prob == 0.0 {
            self.cache_mask = None;
            return x;
        }
        let keep = 1.0 - self.prob;
        let scale = F::from_f64(1.0 / keep);
        let mut mask = Array4::<F>::zeros(x.raw_dim());
        for v in mask.iter_mut() {
            if self.rng.gen::<f64>() < keep {
                *v = scale;
            }
        }
        let y = &x * &mask;
        self.cache_mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        match &self.cache_mask {
            None => dy,
            Some(mask) => &dy * mask,
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache_mask = None;
    }
}
