//! The masked-overlay primitive: pixels of the (aligned) masked region take
//! the patch's values exactly, all other base pixels pass through untouched.
//!
//! Overlay output is linear in patch values, so the VJP back to the patch is
//! the transpose of the same sampling weights.

use ndarray::{Array2, Array3};

use crate::error::{AgnError, Result};
use crate::geometry::{plan_warp, Homography, WarpPlan};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

/// Precomputed overlay of a patch/mask pair onto a base frame.
///
/// Build once per (mask, alignment, base size) and reuse across patches; all
/// applications share the resampling plan.
#[derive(Debug, Clone)]
pub struct OverlayPlan {
    patch_h: usize,
    patch_w: usize,
    base_h: usize,
    base_w: usize,
    /// None = identity placement (patch/mask sized like the base).
    warp: Option<WarpPlan>,
    mask: Mask,
}

impl OverlayPlan {
    pub fn new(
        mask: &Mask,
        alignment: Option<&Homography>,
        base_h: usize,
        base_w: usize,
    ) -> Result<Self> {
        match alignment {
            None => {
                if mask.height() != base_h || mask.width() != base_w {
                    return Err(AgnError::DimensionMismatch(format!(
                        "mask {}x{} vs base {base_h}x{base_w} without alignment",
                        mask.height(),
                        mask.width()
                    )));
                }
                Ok(Self {
                    patch_h: mask.height(),
                    patch_w: mask.width(),
                    base_h,
                    base_w,
                    warp: None,
                    mask: mask.clone(),
                })
            }
            Some(h) => {
                let plan = plan_warp(mask.stencil(), h, base_h, base_w)?;
                Ok(Self {
                    patch_h: mask.height(),
                    patch_w: mask.width(),
                    base_h,
                    base_w,
                    warp: Some(plan),
                    mask: mask.clone(),
                })
            }
        }
    }

    /// The region of the base image the overlay replaces.
    pub fn footprint(&self) -> Array2<bool> {
        match &self.warp {
            None => self.mask.stencil().clone(),
            Some(plan) => plan.footprint.clone(),
        }
    }

    /// Overlay `patch` onto `base`, both as C x H x W arrays.
    pub fn apply_chw<F: Scalar>(&self, base: &Array3<F>, patch: &Array3<F>) -> Result<Array3<F>> {
        let channels = base.shape()[0];
        if base.shape()[1] != self.base_h || base.shape()[2] != self.base_w {
            return Err(AgnError::DimensionMismatch(format!(
                "base is {}x{}, plan expects {}x{}",
                base.shape()[1],
                base.shape()[2],
                self.base_h,
                self.base_w
            )));
        }
        if patch.shape()[0] != channels
            || patch.shape()[1] != self.patch_h
            || patch.shape()[2] != self.patch_w
        {
            return Err(AgnError::DimensionMismatch(format!(
                "patch is {}x{}x{}, plan expects {}x{}x{}",
                patch.shape()[0],
                patch.shape()[1],
                patch.shape()[2],
                channels,
                self.patch_h,
                self.patch_w
            )));
        }
        let mut out = base.clone();
        match &self.warp {
            None => {
                let stencil = self.mask.stencil();
                for r in 0..self.base_h {
                    for c in 0..self.base_w {
                        if stencil[[r, c]] {
                            for ch in 0..channels {
                                out[[ch, r, c]] = patch[[ch, r, c]];
                            }
                        }
                    }
                }
            }
            Some(plan) => {
                for tap in &plan.taps {
                    for ch in 0..channels {
                        let mut acc = F::zero();
                        for &(pr, pc, w) in &tap.taps {
                            acc = acc + patch[[ch, pr, pc]] * F::from_f64(w);
                        }
                        out[[ch, tap.base_r, tap.base_c]] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Pull a gradient at the overlay output back to the patch.
    pub fn vjp_to_patch<F: Scalar>(&self, grad_out: &Array3<F>) -> Array3<F> {
        let channels = grad_out.shape()[0];
        let mut grad_patch = Array3::zeros((channels, self.patch_h, self.patch_w));
        match &self.warp {
            None => {
                let stencil = self.mask.stencil();
                for r in 0..self.base_h {
                    for c in 0..self.base_w {
                        if stencil[[r, c]] {
                            for ch in 0..channels {
                                grad_patch[[ch, r, c]] = grad_out[[ch, r, c]];
                            }
                        }
                    }
                }
            }
            Some(plan) => {
                for tap in &plan.taps {
                    for ch in 0..channels {
                        let g = grad_out[[ch, tap.base_r, tap.base_c]];
                        for &(pr, pc, w) in &tap.taps {
                            grad_patch[[ch, pr, pc]] =
                                grad_patch[[ch, pr, pc]] + g * F::from_f64(w);
                        }
                    }
                }
            }
        }
        grad_patch
    }
}

/// One-shot overlay on images.
pub fn overlay<F: Scalar>(
    base: &Image<F>,
    patch: &Image<F>,
    mask: &Mask,
    alignment: Option<&Homography>,
) -> Result<Image<F>> {
    if patch.height() != mask.height() || patch.width() != mask.width() {
        return Err(AgnError::DimensionMismatch(format!(
            "patch {}x{} vs mask {}x{}",
            patch.height(),
            patch.width(),
            mask.height(),
            mask.width()
        )));
    }
    if patch.channels() != base.channels() {
        return Err(AgnError::DimensionMismatch(format!(
            "patch has {} channels, base has {}",
            patch.channels(),
            base.channels()
        )));
    }
    let plan = OverlayPlan::new(mask, alignment, base.height(), base.width())?;
    let out = plan.apply_chw(&base.to_chw(), &patch.to_chw())?;
    Ok(Image::from_chw(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn img(h: usize, w: usize, v: f64) -> Image<f64> {
        Image::filled(h, w, 3, v).unwrap()
    }

    #[test]
    fn identity_overlay_matches_definition() {
        let base = img(8, 8, 0.25);
        let patch = img(8, 8, 0.75);
        let mask = Mask::from_fn(8, 8, |r, c| (r + c) % 2 == 0).unwrap();
        let out = overlay(&base, &patch, &mask, None).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                for ch in 0..3 {
                    let expect = if mask.get(r, c) { 0.75 } else { 0.25 };
                    assert_eq!(out.data()[[r, c, ch]], expect);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let base = img(8, 8, 0.5);
        let patch = img(4, 4, 0.5);
        let mask = Mask::from_fn(8, 8, |_, _| true).unwrap();
        assert!(overlay(&base, &patch, &mask, None).is_err());
    }

    #[test]
    fn translated_overlay_places_patch() {
        let base = img(16, 16, 0.0);
        let patch = Image::<f64>::from_data_unchecked(Array3::from_shape_fn(
            (4, 4, 3),
            |(r, c, _)| (r * 4 + c) as f64 / 15.0,
        ));
        let mask = Mask::from_fn(4, 4, |_, _| true).unwrap();
        let h = Homography::translation(6.0, 3.0);
        let out = overlay(&base, &patch, &mask, Some(&h)).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let v = out.data()[[r + 6, c + 3, 0]];
                assert!((v - patch.data()[[r, c, 0]]).abs() < 1e-9);
            }
        }
        // A pixel outside the footprint is untouched.
        assert_eq!(out.data()[[0, 0, 0]], 0.0);
    }

    #[test]
    fn vjp_transposes_apply() {
        // <J u, v> == <u, J^T v> for random u (patch-shaped) and v (base-shaped).
        let mask = Mask::from_fn(6, 6, |r, c| r >= 1 && c >= 1 && r < 5 && c < 5).unwrap();
        let h = Homography::scale_then_translate(1.3, 2.2, 1.7);
        let plan = OverlayPlan::new(&mask, Some(&h), 12, 12).unwrap();
        let mut seed = 42u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 33) as f64) / (u32::MAX as f64)
        };
        let u = Array3::from_shape_fn((3, 6, 6), |_| next());
        let v = Array3::from_shape_fn((3, 12, 12), |_| next());
        let base = Array3::zeros((3, 12, 12));
        let ju = plan.apply_chw(&base, &u).unwrap();
        let jtv = plan.vjp_to_patch(&v);
        let lhs: f64 = ju.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(jtv.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
