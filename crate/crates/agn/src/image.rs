//! Images, masks, and PNG I/O.
//!
//! All pixel math happens on reals in [0,1]; 8-bit files are converted on
//! load/save. Images are stored H x W x C with C in {1, 3}.

use ndarray::{Array2, Array3, Array4, Axis};
use std::path::Path;

use crate::error::{AgnError, Result};
use crate::scalar::Scalar;

/// H x W x C image with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F: Scalar> {
    data: Array3<F>,
}

impl<F: Scalar> Image<F> {
    /// Wrap an H x W x C array, validating range and channel count.
    pub fn new(data: Array3<F>) -> Result<Self> {
        let c = data.shape()[2];
        if c != 1 && c != 3 {
            return Err(AgnError::InvalidValue(format!(
                "channel count must be 1 or 3, got {c}"
            )));
        }
        for &v in data.iter() {
            if !v.is_finite() || v < F::zero() || v > F::one() {
                return Err(AgnError::InvalidValue(format!(
                    "pixel value {} outside [0,1]",
                    v.to_f64_lossy()
                )));
            }
        }
        Ok(Self { data })
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, channels: usize, value: F) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value))
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<F> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<F> {
        self.data
    }

    /// Reinterpret without revalidating. Caller keeps values in [0,1].
    pub fn from_data_unchecked(data: Array3<F>) -> Self {
        Self { data }
    }

    /// C x H x W view used at the network boundary.
    pub fn to_chw(&self) -> Array3<F> {
        self.data.clone().permuted_axes([2, 0, 1]).as_standard_layout().to_owned()
    }

    pub fn from_chw(chw: &Array3<F>) -> Self {
        let hwc = chw.clone().permuted_axes([1, 2, 0]).as_standard_layout().to_owned();
        Self { data: hwc }
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image {
            data: self.data.mapv(|v| T::from_f64(v.to_f64_lossy())),
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?;
        let out = match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                let mut data = Array3::zeros((h, w, 1));
                for (x, y, p) in g.enumerate_pixels() {
                    data[[y as usize, x as usize, 0]] = F::from_f64(p.0[0] as f64 / 255.0);
                }
                data
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                let mut data = Array3::zeros((h, w, 3));
                for (x, y, p) in rgb.enumerate_pixels() {
                    for c in 0..3 {
                        data[[y as usize, x as usize, c]] = F::from_f64(p.0[c] as f64 / 255.0);
                    }
                }
                data
            }
        };
        Ok(Self { data: out })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = (self.height() as u32, self.width() as u32);
        let quant = |v: F| -> u8 { (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8 };
        if self.channels() == 1 {
            let mut buf = image::GrayImage::new(w, h);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                p.0[0] = quant(self.data[[y as usize, x as usize, 0]]);
            }
            buf.save(path)?;
        } else {
            let mut buf = image::RgbImage::new(w, h);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                for c in 0..3 {
                    p.0[c] = quant(self.data[[y as usize, x as usize, c]]);
                }
            }
            buf.save(path)?;
        }
        Ok(())
    }
}

/// Boolean per-pixel stencil marking the attacker-controllable region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    stencil: Array2<bool>,
}

impl Mask {
    pub fn new(stencil: Array2<bool>) -> Result<Self> {
        if !stencil.iter().any(|&b| b) {
            return Err(AgnError::EmptyInput("mask has no true pixels".into()));
        }
        Ok(Self { stencil })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), |(r, c)| f(r, c)))
    }

    pub fn height(&self) -> usize {
        self.stencil.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.stencil.shape()[1]
    }

    pub fn stencil(&self) -> &Array2<bool> {
        &self.stencil
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.stencil[[r, c]]
    }

    pub fn count_true(&self) -> usize {
        self.stencil.iter().filter(|&&b| b).count()
    }

    /// Nonzero pixels of a single-channel PNG are mask-true.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img: Image<f32> = Image::load_png(path)?;
        let (h, w) = (img.height(), img.width());
        let stencil = Array2::from_shape_fn((h, w), |(r, c)| {
            (0..img.channels()).any(|ch| img.data()[[r, c, ch]] > 0.0)
        });
        Self::new(stencil)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = Image::<f32>::from_data_unchecked(Array3::from_shape_fn(
            (self.height(), self.width(), 1),
            |(r, c, _)| if self.stencil[[r, c]] { 1.0 } else { 0.0 },
        ));
        img.save_png(path)
    }
}

/// Stack images (all same shape) into a B x C x H x W batch tensor.
pub fn batch_chw<F: Scalar>(images: &[Image<F>]) -> Result<Array4<F>> {
    let first = images
        .first()
        .ok_or_else(|| AgnError::EmptyInput("no images to batch".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.height() != h || img.width() != w || img.channels() != c {
            return Err(AgnError::DimensionMismatch(format!(
                "image {i} is {}x{}x{}, expected {h}x{w}x{c}",
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        out.index_axis_mut(Axis(0), i).assign(&img.to_chw());
    }
    Ok(out)
}

/// Split a B x C x H x W tensor back into images, clamping into [0,1].
pub fn unbatch_chw<F: Scalar>(batch: &Array4<F>) -> Vec<Image<F>> {
    (0..batch.shape()[0])
        .map(|i| {
            let chw = batch
                .index_axis(Axis(0), i)
                .mapv(|v| v.max(F::zero()).min(F::one()));
            Image::from_chw(&chw)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        let arr = Array3::from_elem((2, 2, 3), 1.5f32);
        assert!(Image::new(arr).is_err());
    }

    #[test]
    fn rejects_bad_channel_count() {
        let arr = Array3::from_elem((2, 2, 2), 0.5f32);
        assert!(Image::new(arr).is_err());
    }

    #[test]
    fn mask_requires_a_true_pixel() {
        assert!(Mask::new(Array2::from_elem((4, 4), false)).is_err());
        assert!(Mask::from_fn(4, 4, |r, c| r == c).is_ok());
    }

    #[test]
    fn png_roundtrip_is_exact_at_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Image::<f32>::from_data_unchecked(Array3::from_shape_fn(
            (5, 7, 3),
            |(r, c, ch)| ((r * 31 + c * 7 + ch * 3) % 256) as f32 / 255.0,
        ));
        img.save_png(&path).unwrap();
        let back: Image<f32> = Image::load_png(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn chw_roundtrip() {
        let img = Image::<f64>::from_data_unchecked(Array3::from_shape_fn(
            (3, 4, 3),
            |(r, c, ch)| (r as f64 + 10.0 * c as f64 + 100.0 * ch as f64) / 500.0,
        ));
        let back = Image::from_chw(&img.to_chw());
        assert_eq!(img, back);
    }
}
