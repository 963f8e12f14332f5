//! Convolution and transposed convolution via im2col + GEMM.
//!
//! Unrolled columns are stored transposed, (C*K*K, rows), so the inner
//! im2col/col2im loops copy contiguous output-width runs. Batches are
//! processed in fixed-size chunks to bound the buffer; backward re-runs
//! im2col instead of caching it.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::{Init, Param};
use crate::scalar::Scalar;

/// Batch rows per unrolled-column buffer.
const CHUNK: usize = 64;

fn init_weight<F: Scalar>(
    shape: &[usize],
    fan_in: usize,
    init: Init,
    rng: &mut impl Rng,
) -> Param<F> {
    let std = match init {
        Init::He => (2.0 / fan_in as f64).sqrt(),
        Init::Dcgan => 0.02,
    };
    let std = F::from_f64(std);
    let mut w = ndarray::ArrayD::<F>::zeros(shape.to_vec());
    for v in w.iter_mut() {
        *v = F::sample_standard_normal(rng) * std;
    }
    Param::new(w)
}

fn conv_out_size(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - kernel) / stride + 1
}

/// Fill `cols` (C*K*K, bs*oh*ow) from `x[b0..b0+bs]`.
#[allow(clippy::too_many_arguments)]
fn im2col_t<F: Scalar>(
    x: &Array4<F>,
    b0: usize,
    bs: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    mut cols: ArrayViewMut2<F>,
) {
    let (c_in, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let xs = x.as_slice().expect("x standard layout");
    let m = bs * oh * ow;
    let cs = cols.as_slice_mut().expect("cols standard layout");
    for c in 0..c_in {
        for kr in 0..kernel {
            for kc in 0..kernel {
                let dst_base = ((c * kernel + kr) * kernel + kc) * m;
                for bi in 0..bs {
                    let plane = ((b0 + bi) * c_in + c) * h;
                    for ohr in 0..oh {
                        let ir = (ohr * stride + kr) as isize - pad as isize;
                        let dst = dst_base + (bi * oh + ohr) * ow;
                        if ir < 0 || ir >= h as isize {
                            cs[dst..dst + ow].fill(F::zero());
                            continue;
                        }
                        let src_row = (plane + ir as usize) * w;
                        let ic0 = kc as isize - pad as isize;
                        if stride == 1 {
                            // Contiguous run with edge clipping.
                            let lo = (-ic0).max(0) as usize;
                            let hi_excl =
                                ow.min(((w as isize - ic0).max(0)) as usize);
                            for d in 0..lo {
                                cs[dst + d] = F::zero();
                            }
                            if hi_excl > lo {
                                let src0 = (src_row as isize + ic0 + lo as isize) as usize;
                                cs[dst + lo..dst + hi_excl]
                                    .copy_from_slice(&xs[src0..src0 + (hi_excl - lo)]);
                            }
                            for d in hi_excl..ow {
                                cs[dst + d] = F::zero();
                            }
                        } else {
                            for owc in 0..ow {
                                let ic = (owc * stride) as isize + ic0;
                                cs[dst + owc] = if ic < 0 || ic >= w as isize {
                                    F::zero()
                                } else {
                                    xs[src_row + ic as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `dcols` (C*K*K, bs*oh*ow) back into `dx[b0..b0+bs]`.
#[allow(clippy::too_many_arguments)]
fn col2im_add_t<F: Scalar>(
    dcols: ArrayView2<F>,
    b0: usize,
    bs: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut Array4<F>,
) {
    let (c_in, h, w) = (dx.shape()[1], dx.shape()[2], dx.shape()[3]);
    let ds = dcols.as_slice().expect("dcols standard layout");
    let xs = dx.as_slice_mut().expect("dx standard layout");
    let m = bs * oh * ow;
    for c in 0..c_in {
        for kr in 0..kernel {
            for kc in 0..kernel {
                let src_base = ((c * kernel + kr) * kernel + kc) * m;
                for bi in 0..bs {
                    let plane = ((b0 + bi) * c_in + c) * h;
                    for ohr in 0..oh {
                        let ir = (ohr * stride + kr) as isize - pad as isize;
                        if ir < 0 || ir >= h as isize {
                            continue;
                        }
                        let dst_row = (plane + ir as usize) * w;
                        let src = src_base + (bi * oh + ohr) * ow;
                        let ic0 = kc as isize - pad as isize;
                        for owc in 0..ow {
                            let ic = (owc * stride) as isize + ic0;
                            if ic >= 0 && ic < w as isize {
                                let di = dst_row + ic as usize;
                                xs[di] = xs[di] + ds[src + owc];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub weight: Param<F>, // (out_ch, in_ch*k*k)
    pub bias: Param<F>,   // (out_ch,)
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache_x: Option<Array4<F>>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: init_weight(&[out_ch, fan_in], fan_in, init, rng),
            bias: Param::new(ndarray::ArrayD::zeros(vec![out_ch])),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let oh = conv_out_size(h, self.kernel, self.stride, self.pad);
        let ow = conv_out_size(w, self.kernel, self.stride, self.pad);
        let row_len = self.in_ch * self.kernel * self.kernel;
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_ch, row_len))
            .unwrap();
        let bias = self
            .bias
            .value
            .view()
            .into_shape_with_order(self.out_ch)
            .unwrap();
        let mut y = Array4::<F>::zeros((b, self.out_ch, oh, ow));
        let mut b0 = 0;
        while b0 < b {
            let bs = CHUNK.min(b - b0);
            let m = bs * oh * ow;
            let mut cols = Array2::<F>::zeros((row_len, m));
            im2col_t(&x, b0, bs, self.kernel, self.stride, self.pad, oh, ow, cols.view_mut());
            // (out_ch, row_len) x (row_len, m)
            let prod = wmat.dot(&cols);
            let ps = prod.as_slice().unwrap();
            let ys = y.as_slice_mut().unwrap();
            let plane = oh * ow;
            for oc in 0..self.out_ch {
                let bn = bias[oc];
                for bi in 0..bs {
                    let src = oc * m + bi * plane;
                    let dst = ((b0 + bi) * self.out_ch + oc) * plane;
                    for i in 0..plane {
                        ys[dst + i] = ps[src + i] + bn;
                    }
                }
            }
            b0 += bs;
        }
        self.cache_x = Some(x);
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
        let row_len = self.in_ch * self.kernel * self.kernel;
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_ch, row_len))
            .unwrap();
        let mut dwmat = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_ch, row_len))
            .unwrap();
        let mut dx = Array4::<F>::zeros((b, self.in_ch, h, w));
        let dys = dy.as_slice().expect("dy standard layout");
        let plane = oh * ow;
        let mut b0 = 0;
        while b0 < b {
            let bs = CHUNK.min(b - b0);
            let m = bs * oh * ow;
            let mut cols = Array2::<F>::zeros((row_len, m));
            im2col_t(x, b0, bs, self.kernel, self.stride, self.pad, oh, ow, cols.view_mut());
            let mut dy_mat = Array2::<F>::zeros((self.out_ch, m));
            {
                let dms = dy_mat.as_slice_mut().unwrap();
                for oc in 0..self.out_ch {
                    for bi in 0..bs {
                        let src = ((b0 + bi) * self.out_ch + oc) * plane;
                        let dst = oc * m + bi * plane;
                        dms[dst..dst + plane].copy_from_slice(&dys[src..src + plane]);
                    }
                }
            }
            // dW += dy . cols^T
            general_mat_mul(F::one(), &dy_mat.view(), &cols.view().t(), F::one(), &mut dwmat);
            // dcols = W^T . dy
            let dcols = wmat.t().dot(&dy_mat);
            col2im_add_t(dcols.view(), b0, bs, self.kernel, self.stride, self.pad, oh, ow, &mut dx);
            b0 += bs;
        }
        let mut dbias = self
            .bias
            .grad
            .view_mut()
            .into_shape_with_order(self.out_ch)
            .unwrap();
        for oc in 0..self.out_ch {
            let s = dy.slice(ndarray::s![.., oc, .., ..]).sum();
            dbias[oc] = dbias[oc] + s;
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_x = None;
    }
}

/// x chunk as (in_ch, bs*h*w).
fn chunk_matrix<F: Scalar>(x: &Array4<F>, in_ch: usize, b0: usize, bs: usize) -> Array2<F> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let plane = h * w;
    let mut xmat = Array2::<F>::zeros((in_ch, bs * plane));
    let xs = x.as_slice().unwrap();
    let xm = xmat.as_slice_mut().unwrap();
    for c in 0..in_ch {
        for bi in 0..bs {
            let src = ((b0 + bi) * in_ch + c) * plane;
            let dst = c * (bs * plane) + bi * plane;
            xm[dst..dst + plane].copy_from_slice(&xs[src..src + plane]);
        }
    }
    xmat
}

/// 2-D transposed convolution (fractionally strided).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Scalar> {
    pub weight: Param<F>, // (in_ch, out_ch*k*k)
    pub bias: Param<F>,   // (out_ch,)
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache_x: Option<Array4<F>>,
}

impl<F: Scalar> ConvTranspose2d<F> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel / (stride * stride).max(1);
        Self {
            weight: init_weight(&[in_ch, out_ch * kernel * kernel], fan_in, init, rng),
            bias: Param::new(ndarray::ArrayD::zeros(vec![out_ch])),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            cache_x: None,
        }
    }

    pub fn output_size(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel - 2 * self.pad
    }

    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (self.output_size(h), self.output_size(w));
        let kk = self.kernel * self.kernel;
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.in_ch, self.out_ch * kk))
            .unwrap();
        let bias = self
            .bias
            .value
            .view()
            .into_shape_with_order(self.out_ch)
            .unwrap();
        let mut y = Array4::<F>::zeros((b, self.out_ch, oh, ow));
        for bi in 0..b {
            for oc in 0..self.out_ch {
                y.slice_mut(ndarray::s![bi, oc, .., ..]).fill(bias[oc]);
            }
        }
        let mut b0 = 0;
        while b0 < b {
            let bs = CHUNK.min(b - b0);
            let xmat = chunk_matrix(&x, self.in_ch, b0, bs);
            // (out_ch*k*k, bs*h*w)
            let prod = wmat.t().dot(&xmat);
            let ps = prod.as_slice().unwrap();
            let ys = y.as_slice_mut().unwrap();
            let m = bs * h * w;
            for oc in 0..self.out_ch {
                for kr in 0..self.kernel {
                    for kc in 0..self.kernel {
                        let src_base = ((oc * self.kernel + kr) * self.kernel + kc) * m;
                        for bi in 0..bs {
                            let out_plane = ((b0 + bi) * self.out_ch + oc) * oh;
                            for hr in 0..h {
                                let orow = (hr * self.stride + kr) as isize - self.pad as isize;
                                if orow < 0 || orow >= oh as isize {
                                    continue;
                                }
                                let dst_row = (out_plane + orow as usize) * ow;
                                let src = src_base + (bi * h + hr) * w;
                                let oc0 = kc as isize - self.pad as isize;
                                for wc in 0..w {
                                    let ocol = (wc * self.stride) as isize + oc0;
                                    if ocol >= 0 && ocol < ow as isize {
                                        let di = dst_row + ocol as usize;
                                        ys[di] = ys[di] + ps[src + wc];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            b0 += bs;
        }
        self.cache_x = Some(x);
        y
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
        let kk = self.kernel * self.kernel;
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.in_ch, self.out_ch * kk))
            .unwrap();
        let mut dwmat = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.in_ch, self.out_ch * kk))
            .unwrap();
        let mut dx = Array4::<F>::zeros((b, self.in_ch, h, w));
        let dys = dy.as_slice().unwrap();
        let mut b0 = 0;
        while b0 < b {
            let bs = CHUNK.min(b - b0);
            let m = bs * h * w;
            // Gather dP (out_ch*k*k, m) from dy.
            let mut dp = Array2::<F>::zeros((self.out_ch * kk, m));
            {
                let dps = dp.as_slice_mut().unwrap();
                for oc in 0..self.out_ch {
                    for kr in 0..self.kernel {
                        for kc in 0..self.kernel {
                            let dst_base = ((oc * self.kernel + kr) * self.kernel + kc) * m;
                            for bi in 0..bs {
                                let in_plane = ((b0 + bi) * self.out_ch + oc) * oh;
                                for hr in 0..h {
                                    let orow =
                                        (hr * self.stride + kr) as isize - self.pad as isize;
                                    let dst = dst_base + (bi * h + hr) * w;
                                    if orow < 0 || orow >= oh as isize {
                                        continue;
                                    }
                                    let src_row = (in_plane + orow as usize) * ow;
                                    let oc0 = kc as isize - self.pad as isize;
                                    for wc in 0..w {
                                        let ocol = (wc * self.stride) as isize + oc0;
                                        if ocol >= 0 && ocol < ow as isize {
                                            dps[dst + wc] = dys[src_row + ocol as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let xmat = chunk_matrix(x, self.in_ch, b0, bs);
            // dW += x . dP^T
            general_mat_mul(F::one(), &xmat.view(), &dp.view().t(), F::one(), &mut dwmat);
            // dX = W . dP
            let dxmat = wmat.dot(&dp);
            let dxs = dx.as_slice_mut().unwrap();
            let dms = dxmat.as_slice().unwrap();
            let plane = h * w;
            for c in 0..self.in_ch {
                for bi in 0..bs {
                    let src = c * m + bi * plane;
                    let dst = ((b0 + bi) * self.in_ch + c) * plane;
                    dxs[dst..dst + plane].copy_from_slice(&dms[src..src + plane]);
                }
            }
            b0 += bs;
        }
        let mut dbias = self
            .bias
            .grad
            .view_mut()
            .into_shape_with_order(self.out_ch)
            .unwrap();
        for oc in 0..self.out_ch {
            let s = dy.slice(ndarray::s![.., oc, .., ..]).sum();
            dbias[oc] = dbias[oc] + s;
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache_x = None;
    }
}
