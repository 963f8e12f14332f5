//! Adversarial generative nets: generators trained jointly against a
//! discriminator (for realism) and a frozen classifier (for evasion), plus
//! the surrounding pipelines: GAN pretraining, universal attacks with greedy
//! coverage selection, printability math, texture-synthesis data prep, and
//! evaluation.
//!
//! The numeric core is generic over the scalar type; `f32` aliases are the
//! working set for training and `f64` is used by reference math and tests.

// Link the system BLAS for ndarray's GEMM paths.
extern crate blas_src;

pub mod agn;
pub mod dataprep;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gan;
pub mod geometry;
pub mod goal;
pub mod image;
pub mod latent;
pub mod mnist;
pub mod models;
pub mod nn;
pub mod overlay;
pub mod physical;
pub mod probs;
pub mod run;
pub mod scalar;
pub mod universal;

pub use error::{AgnError, Result};
pub use scalar::Scalar;

/// Default training scalar.
pub type Real = f32;

/// Concrete aliases for the common working types.
pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type Dataset32 = dataset::LabeledDataset<f32>;
pub type Dataset64 = dataset::LabeledDataset<f64>;

use std::sync::Once;

static COMPUTE_INIT: Once = Once::new();

/// Tune the BLAS runtime once per process.
///
/// The distro OpenBLAS mis-detects some hypervisor-masked CPUIDs and falls
/// back to a slow kernel; pinning the core type recovers a 3-6x GEMM speedup.
/// Must run before the first BLAS call in the process.
pub fn init_compute() {
    COMPUTE_INIT.call_once(|| {
        #[cfg(target_arch = "x86_64")]
        if std::env::var_os("OPENBLAS_CORETYPE").is_none() {
            if is_x86_feature_detected!("avx512f") {
                std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
            } else if is_x86_feature_detected!("avx2") {
                std::env::set_var("OPENBLAS_CORETYPE", "HASWELL");
            }
        }
    });
}
