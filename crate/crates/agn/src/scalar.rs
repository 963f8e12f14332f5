//! Scalar abstraction so the numeric core runs in `f32` (training speed) or
//! `f64` (reference math, finite-difference checks) from the same code.

use ndarray::NdFloat;
use rand::distributions::uniform::SampleUniform;
use rand::Rng;

/// Element type accepted by tensors, images, and model parameters.
pub trait Scalar: NdFloat + SampleUniform + Default + Send + Sync + 'static {
    /// Draw from the standard normal distribution.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn from_f64(v: f64) -> Self {
        Self::from(v).expect("f64 conversion")
    }

    fn to_f64_lossy(self) -> f64;

    /// Raw little-endian bytes, for bit-exact checkpoint serialization.
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const BYTE_WIDTH: usize;
    const DTYPE_NAME: &'static str;
}

impl Scalar for f32 {
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f32, _>(rand_distr::StandardNormal)
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    const BYTE_WIDTH: usize = 4;
    const DTYPE_NAME: &'static str = "f32";
}

impl Scalar for f64 {
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    const BYTE_WIDTH: usize = 8;
    const DTYPE_NAME: &'static str = "f64";
}
