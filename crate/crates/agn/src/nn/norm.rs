//! Spatial batch normalization.

use ndarray::{Array1, Array4, ArrayD};

use super::{Mode, Param};
use crate::scalar::Scalar;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: ArrayD<F>,
    pub running_var: ArrayD<F>,
    channels: usize,
    cache: Option<BnCache<F>>,
}

#[derive(Debug, Clone)]
struct BnCache<F: Scalar> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
    mode: Mode,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::from_elem(vec![channels], F::one())),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: ArrayD::zeros(vec![channels]),
            running_var: ArrayD::from_elem(vec![channels], F::one()),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Array4<F>, mode: Mode) -> Array4<F> {
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(c, self.channels);
        let m = F::from_f64((b * h * w) as f64);
        let eps = F::from_f64(EPS);
        let gamma = self.gamma.value.view().into_shape_with_order(c).unwrap().to_owned();
        let beta = self.beta.value.view().into_shape_with_order(c).unwrap().to_owned();
        let mut y = Array4::<F>::zeros((b, c, h, w));
        let mut xhat = Array4::<F>::zeros((b, c, h, w));
        let mut inv_std = Array1::<F>::zeros(c);
        for ci in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let slice = x.slice(ndarray::s![.., ci, .., ..]);
                    let mean = slice.sum() / m;
                    let var = slice.mapv(|v| (v - mean) * (v - mean)).sum() / m;
                    // Exponential running stats, torch-style momentum.
                    let mom = F::from_f64(MOMENTUM);
                    let keep = F::one() - mom;
                    self.running_mean[ci] = keep * self.running_mean[ci] + mom * mean;
                    self.running_var[ci] = keep * self.running_var[ci] + mom * var;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ci], self.running_var[ci]),
            };
            let istd = F::one() / (var + eps).sqrt();
            inv_std[ci] = istd;
            let g = gamma[ci];
            let bta = beta[ci];
            for bi in 0..b {
                for r in 0..h {
                    for cc in 0..w {
                        let xh = (x[[bi, ci, r, cc]] - mean) * istd;
                        xhat[[bi, ci, r, cc]] = xh;
                        y[[bi, ci, r, cc]] = g * xh + bta;
                    }
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, mode });
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let cache = self.cache.as_ref().expect("forward before backward");
        let (b, c, h, w) = (dy.shape()[0], dy.shape()[1], dy.shape()[2], dy.shape()[3]);
        let m = F::from_f64((b * h * w) as f64);
        let gamma = self
            .gamma
            .value
            .view()
            .into_shape_with_order(c)
            .unwrap()
            .to_owned();
        let mut dgamma = self.gamma.grad.view_mut().into_shape_with_order(c).unwrap();
        let mut dbeta = self.beta.grad.view_mut().into_shape_with_order(c).unwrap();
        let mut dx = Array4::<F>::zeros((b, c, h, w));
        for ci in 0..c {
            let dy_c = dy.slice(ndarray::s![.., ci, .., ..]);
            let xhat_c = cache.xhat.slice(ndarray::s![.., ci, .., ..]);
            let sum_dy = dy_c.sum();
            let sum_dy_xhat = dy_c
                .iter()
                .zip(xhat_c.iter())
                .fold(F::zero(), |acc, (&g, &xh)| acc + g * xh);
            dgamma[ci] = dgamma[ci] + sum_dy_xhat;
            dbeta[ci] = dbeta[ci] + sum_dy;
            let g = gamma[ci];
            let istd = cache.inv_std[ci];
            let mut dx_c = dx.slice_mut(ndarray::s![.., ci, .., ..]);
            match cache.mode {
                Mode::Train => {
                    // dx = gamma*istd/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                    let k = g * istd / m;
                    ndarray::Zip::from(&mut dx_c)
                        .and(&dy_c)
                        .and(&xhat_c)
                        .for_each(|d, &gy, &xh| {
                            *d = k * (m * gy - sum_dy - xh * sum_dy_xhat);
                        });
                }
                Mode::Eval => {
                    let k = g * istd;
                    ndarray::Zip::from(&mut dx_c).and(&dy_c).for_each(|d, &gy| {
                        *d = k * gy;
                    });
                }
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
