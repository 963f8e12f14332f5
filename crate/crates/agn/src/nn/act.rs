//! Pointwise activations and max pooling.

use ndarray::Array4;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Default)]
pub struct Relu<F: Scalar> {
    cache_y: Option<Array4<F>>,
}

impl<F: Scalar> Relu<F> {
    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let y = x.mapv(|v| v.max(F::zero()));
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let y = self.cache_y.as_ref().expect("forward before backward");
        let mut dx = dy;
        dx.zip_mut_with(y, |g, &v| {
            if v <= F::zero() {
                *g = F::zero();
            }
        });
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_y = None;
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu<F: Scalar> {
    slope: F,
    cache_x_neg: Option<Array4<bool>>,
}

impl<F: Scalar> LeakyRelu<F> {
    pub fn new(slope: f64) -> Self {
        Self {
            slope: F::from_f64(slope),
            cache_x_neg: None,
        }
    }

    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let neg = x.mapv(|v| v < F::zero());
        let slope = self.slope;
        let y = x.mapv(|v| if v < F::zero() { v * slope } else { v });
        self.cache_x_neg = Some(neg);
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let neg = self.cache_x_neg.as_ref().expect("forward before backward");
        let slope = self.slope;
        let mut dx = dy;
        dx.zip_mut_with(neg, |g, &n| {
            if n {
                *g = *g * slope;
            }
        });
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_x_neg = None;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh<F: Scalar> {
    cache_y: Option<Array4<F>>,
}

impl<F: Scalar> Tanh<F> {
    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let y = x.mapv(|v| v.tanh());
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let y = self.cache_y.as_ref().expect("forward before backward");
        let mut dx = dy;
        dx.zip_mut_with(y, |g, &t| *g = *g * (F::one() - t * t));
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_y = None;
    }
}

/// (tanh(x)+1)/2, mapping onto [0,1] for image-valued outputs.
#[derive(Debug, Clone, Default)]
pub struct UnitTanh<F: Scalar> {
    cache_y: Option<Array4<F>>,
}

impl<F: Scalar> UnitTanh<F> {
    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let half = F::from_f64(0.5);
        let y = x.mapv(|v| (v.tanh() + F::one()) * half);
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let y = self.cache_y.as_ref().expect("forward before backward");
        let half = F::from_f64(0.5);
        let two = F::from_f64(2.0);
        let mut dx = dy;
        dx.zip_mut_with(y, |g, &u| {
            let t = two * u - F::one();
            *g = *g * (F::one() - t * t) * half;
        });
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_y = None;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<F: Scalar> {
    cache_y: Option<Array4<F>>,
}

impl<F: Scalar> Sigmoid<F> {
    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let y = x.mapv(|v| F::one() / (F::one() + (-v).exp()));
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let y = self.cache_y.as_ref().expect("forward before backward");
        let mut dx = dy;
        dx.zip_mut_with(y, |g, &s| *g = *g * s * (F::one() - s));
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_y = None;
    }
}

/// Row-wise L2 normalization of (B, D, 1, 1) feature vectors onto the unit
/// sphere.
#[derive(Debug, Clone, Default)]
pub struct UnitSphere<F: Scalar> {
    cache: Option<(Array4<F>, Vec<F>)>, // (y, norms)
}

impl<F: Scalar> UnitSphere<F> {
    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let b = x.shape()[0];
        let d = x.len() / b;
        let eps = F::from_f64(1e-12);
        let mut y = x;
        let mut norms = Vec::with_capacity(b);
        for bi in 0..b {
            let mut row = y.slice_mut(ndarray::s![bi, .., .., ..]);
            let norm = row.iter().fold(F::zero(), |acc, &v| acc + v * v).sqrt() + eps;
            row.mapv_inplace(|v| v / norm);
            norms.push(norm);
            debug_assert_eq!(row.len(), d);
        }
        self.cache = Some((y.clone(), norms));
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let (y, norms) = self.cache.as_ref().expect("forward before backward");
        let b = dy.shape()[0];
        let mut dx = dy;
        for bi in 0..b {
            let yrow = y.slice(ndarray::s![bi, .., .., ..]);
            let mut grow = dx.slice_mut(ndarray::s![bi, .., .., ..]);
            let dot = yrow
                .iter()
                .zip(grow.iter())
                .fold(F::zero(), |acc, (&yv, &gv)| acc + yv * gv);
            let inv = F::one() / norms[bi];
            ndarray::Zip::from(&mut grow).and(&yrow).for_each(|g, &yv| {
                *g = (*g - yv * dot) * inv;
            });
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Max pooling; backward routes gradients to the argmax positions.
#[derive(Debug, Clone)]
pub struct MaxPool2d<F: Scalar> {
    kernel: usize,
    stride: usize,
    cache_argmax: Option<(Vec<u32>, (usize, usize, usize, usize))>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> MaxPool2d<F> {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            cache_argmax: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let oh = (h - self.kernel) / self.stride + 1;
        let ow = (w - self.kernel) / self.stride + 1;
        let mut y = Array4::<F>::zeros((b, c, oh, ow));
        let mut argmax = vec![0u32; b * c * oh * ow];
        let xs = x.as_slice().expect("standard layout");
        let ys = y.as_slice_mut().unwrap();
        let mut oi = 0;
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                for ohr in 0..oh {
                    for owc in 0..ow {
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0usize;
                        for kr in 0..self.kernel {
                            let r = ohr * self.stride + kr;
                            let row = plane + r * w + owc * self.stride;
                            for kc in 0..self.kernel {
                                let v = xs[row + kc];
                                if v > best {
                                    best = v;
                                    best_idx = r * w + owc * self.stride + kc;
                                }
                            }
                        }
                        ys[oi] = best;
                        argmax[oi] = best_idx as u32;
                        oi += 1;
                    }
                }
            }
        }
        self.cache_argmax = Some((argmax, (b, c, h, w)));
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let (argmax, (b, c, h, w)) = self.cache_argmax.as_ref().expect("forward before backward");
        let mut dx = Array4::<F>::zeros((*b, *c, *h, *w));
        let dxs = dx.as_slice_mut().unwrap();
        let dys = dy.as_slice().expect("standard layout");
        let per_plane = dy.shape()[2] * dy.shape()[3];
        for (oi, &g) in dys.iter().enumerate() {
            let plane = oi / per_plane;
            let idx = plane * h * w + argmax[oi] as usize;
            dxs[idx] = dxs[idx] + g;
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_argmax = None;
    }
}
