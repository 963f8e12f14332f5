//! Target classifiers, generator/discriminator architectures, the attack
//! detector, and decision-threshold calibration.

mod checkpoint;
mod detector;
mod train;

pub use checkpoint::{checkpoint_kind, read_checkpoint, write_checkpoint, CheckpointHeader};
pub use detector::{
    build_detector, detector_precision_recall, train_detector, DetectorModel, ADVERSARIAL,
    NON_ADVERSARIAL,
};
pub use train::{
    calibrate_from_scores, calibrate_threshold, classifier_accuracy, plan_batches,
    train_classifier, Augmentation, ThresholdReport, TrainReport,
};

use ndarray::{Array1, Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{AgnError, Result};
use crate::image::{batch_chw, Image};
use crate::latent::LATENT_DIM;
use crate::nn::{softmax_rows, Init, LayerSpec, Mode, Net};
use crate::probs::ProbVector;
use crate::scalar::Scalar;

/// Calibrated acceptance threshold on the max-probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThreshold {
    pub value: f64,
}

/// A softmax classifier exposing both logits and probabilities, plus the
/// intermediate taps the detector and clustering stages read.
#[derive(Debug, Clone)]
pub struct ClassifierModel<F: Scalar> {
    pub net: Net<F>,
    pub class_count: usize,
    /// (height, width, channels) of accepted inputs.
    pub input_shape: (usize, usize, usize),
    pub labels: Vec<String>,
    /// Layer index whose input feature map feeds the attack detector.
    pub detector_tap: usize,
    /// Layer count producing the embedding (exclusive end of the prefix).
    pub embed_end: usize,
    pub embedding_dim: usize,
    pub threshold: Option<DecisionThreshold>,
}

impl<F: Scalar> ClassifierModel<F> {
    pub fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if x.shape()[1] != c || x.shape()[2] != h || x.shape()[3] != w {
            return Err(AgnError::DimensionMismatch(format!(
                "classifier expects {h}x{w}x{c}, got {}x{}x{}",
                x.shape()[2],
                x.shape()[3],
                x.shape()[1]
            )));
        }
        Ok(())
    }

    /// Logits for a batch, (B, classes).
    pub fn logits(&mut self, x: &Array4<F>, mode: Mode) -> Result<Array2<F>> {
        self.check_input(x)?;
        let y = self.net.forward(x.clone(), mode);
        let b = y.shape()[0];
        Ok(y.into_shape_with_order((b, self.class_count)).unwrap())
    }

    /// Softmax probabilities for a batch.
    pub fn probabilities(&mut self, x: &Array4<F>) -> Result<Array2<F>> {
        Ok(softmax_rows(&self.logits(x, Mode::Eval)?))
    }

    /// Probabilities for a single image.
    pub fn classify(&mut self, img: &Image<F>) -> Result<ProbVector<F>> {
        let batch = batch_chw(std::slice::from_ref(img))?;
        let probs = self.probabilities(&batch)?;
        ProbVector::new(probs.index_axis(Axis(0), 0).to_owned())
    }

    /// Embedding vectors, (B, embedding_dim): output of the embedding prefix.
    pub fn embed(&mut self, x: &Array4<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        let y = self.net.forward_part(0, self.embed_end, x.clone(), Mode::Eval);
        let b = y.shape()[0];
        let d = y.len() / b;
        if d != self.embedding_dim {
            return Err(AgnError::DimensionMismatch(format!(
                "embedding is {d}-dimensional, expected {}",
                self.embedding_dim
            )));
        }
        Ok(y.into_shape_with_order((b, d)).unwrap())
    }

    /// Feature map at the detector attachment point.
    pub fn feature_map(&mut self, x: &Array4<F>) -> Result<Array4<F>> {
        self.check_input(x)?;
        if self.detector_tap == 0 || self.detector_tap >= self.net.layers.len() {
            return Err(AgnError::InvalidValue(format!(
                "detector tap {} invalid for a {}-layer net",
                self.detector_tap,
                self.net.layers.len()
            )));
        }
        Ok(self.net.forward_part(0, self.detector_tap, x.clone(), Mode::Eval))
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({
            "specs": self.net.specs,
            "class_count": self.class_count,
            "input_shape": self.input_shape,
            "labels": self.labels,
            "detector_tap": self.detector_tap,
            "embed_end": self.embed_end,
            "embedding_dim": self.embedding_dim,
            "threshold": self.threshold,
        });
        write_checkpoint(path, "classifier", &meta, &mut self.net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, net) = read_checkpoint::<F>(path, "classifier")?;
        let meta = header.meta;
        Ok(Self {
            net,
            class_count: serde_json::from_value(meta["class_count"].clone())?,
            input_shape: serde_json::from_value(meta["input_shape"].clone())?,
            labels: serde_json::from_value(meta["labels"].clone())?,
            detector_tap: serde_json::from_value(meta["detector_tap"].clone())?,
            embed_end: serde_json::from_value(meta["embed_end"].clone())?,
            embedding_dim: serde_json::from_value(meta["embedding_dim"].clone())?,
            threshold: serde_json::from_value(meta["threshold"].clone())?,
        })
    }
}

/// Latent-to-image generator.
#[derive(Debug, Clone)]
pub struct GeneratorModel<F: Scalar> {
    pub net: Net<F>,
    pub latent_dim: usize,
    /// (channels, height, width) of emitted images.
    pub output_shape: (usize, usize, usize),
}

impl<F: Scalar> GeneratorModel<F> {
    /// Map latents (B, latent_dim) to images (B, C, H, W) in [0,1].
    pub fn generate(&mut self, latents: &Array2<F>, mode: Mode) -> Result<Array4<F>> {
        if latents.shape()[1] != self.latent_dim {
            return Err(AgnError::DimensionMismatch(format!(
                "latent dim {} != {}",
                latents.shape()[1],
                self.latent_dim
            )));
        }
        let b = latents.shape()[0];
        let x = latents
            .clone()
            .into_shape_with_order((b, self.latent_dim, 1, 1))
            .unwrap();
        Ok(self.net.forward(x, mode))
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({
            "specs": self.net.specs,
            "latent_dim": self.latent_dim,
            "output_shape": self.output_shape,
        });
        write_checkpoint(path, "generator", &meta, &mut self.net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, net) = read_checkpoint::<F>(path, "generator")?;
        Ok(Self {
            net,
            latent_dim: serde_json::from_value(header.meta["latent_dim"].clone())?,
            output_shape: serde_json::from_value(header.meta["output_shape"].clone())?,
        })
    }
}

/// Real-vs-generated discriminator with scalar output in (0,1).
#[derive(Debug, Clone)]
pub struct DiscriminatorModel<F: Scalar> {
    pub net: Net<F>,
}

impl<F: Scalar> DiscriminatorModel<F> {
    /// D(x) for a batch, clamped away from {0,1} by the final sigmoid.
    pub fn score(&mut self, x: &Array4<F>, mode: Mode) -> Array1<F> {
        let y = self.net.forward(x.clone(), mode);
        let b = y.shape()[0];
        y.into_shape_with_order(b).unwrap()
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({ "specs": self.net.specs });
        write_checkpoint(path, "discriminator", &meta, &mut self.net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (_, net) = read_checkpoint::<F>(path, "discriminator")?;
        Ok(Self { net })
    }
}

/// Filter-depth scale for the DCGAN pair; layer depths are multiples of it.
pub const DEFAULT_GAN_BASE_CHANNELS: usize = 8;

/// Generator for 64x176x3 eyeglass patches (4x11 seed, four doublings).
pub fn build_eyeglass_generator<F: Scalar>(base: usize, seed: u64) -> GeneratorModel<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c1, c2, c3, c4) = (base, base * 2, base * 4, base * 8);
    let specs = vec![
        LayerSpec::Linear {
            in_dim: LATENT_DIM,
            out_dim: c4 * 4 * 11,
        },
        LayerSpec::Reshape {
            channels: c4,
            height: 4,
            width: 11,
        },
        LayerSpec::BatchNorm { channels: c4 },
        LayerSpec::Relu,
        LayerSpec::Deconv {
            in_ch: c4,
            out_ch: c3,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::BatchNorm { channels: c3 },
        LayerSpec::Relu,
        LayerSpec::Deconv {
            in_ch: c3,
            out_ch: c2,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::BatchNorm { channels: c2 },
        LayerSpec::Relu,
        LayerSpec::Deconv {
            in_ch: c2,
            out_ch: c1,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::BatchNorm { channels: c1 },
        LayerSpec::Relu,
        LayerSpec::Deconv {
            in_ch: c1,
            out_ch: 3,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::UnitTanh,
    ];
    GeneratorModel {
        net: Net::build(specs, Init::Dcgan, &mut rng),
        latent_dim: LATENT_DIM,
        output_shape: (3, 64, 176),
    }
}

/// Discriminator for 64x176x3 patches.
pub fn build_eyeglass_discriminator<F: Scalar>(base: usize, seed: u64) -> DiscriminatorModel<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c1, c2, c3, c4) = (base, base * 2, base * 4, base * 8);
    let conv = |in_ch, out_ch| LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel: 6,
        stride: 2,
        pad: 2,
    };
    let specs = vec![
        conv(3, c1),
        LayerSpec::LeakyRelu { slope: 0.2 },
        conv(c1, c2),
        LayerSpec::LeakyRelu { slope: 0.2 },
        conv(c2, c3),
        LayerSpec::LeakyRelu { slope: 0.2 },
        conv(c3, c4),
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Linear {
            in_dim: c4 * 4 * 11,
            out_dim: 1,
        },
        LayerSpec::Sigmoid,
    ];
    DiscriminatorModel {
        net: Net::build(specs, Init::Dcgan, &mut rng),
    }
}

/// Generator for 28x28x1 digit images (7x7 seed, two doublings).
pub fn build_digit_generator<F: Scalar>(base: usize, seed: u64) -> GeneratorModel<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c1, c2) = (base, base * 2);
    let specs = vec![
        LayerSpec::Linear {
            in_dim: LATENT_DIM,
            out_dim: c2 * 7 * 7,
        },
        LayerSpec::Reshape {
            channels: c2,
            height: 7,
            width: 7,
        },
        LayerSpec::BatchNorm { channels: c2 },
        LayerSpec::Relu,
        LayerSpec::Deconv {
            in_ch: c2,
            out_ch: c1,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::BatchNorm { channels: c1 },
        LayerSpec::Relu,
        LayerSpec::Deconv {
            in_ch: c1,
            out_ch: 1,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::UnitTanh,
    ];
    GeneratorModel {
        net: Net::build(specs, Init::Dcgan, &mut rng),
        latent_dim: LATENT_DIM,
        output_shape: (1, 28, 28),
    }
}

/// Discriminator for 28x28x1 images.
pub fn build_digit_discriminator<F: Scalar>(base: usize, seed: u64) -> DiscriminatorModel<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c1, c2) = (base, base * 2);
    let specs = vec![
        LayerSpec::Conv {
            in_ch: 1,
            out_ch: c1,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Conv {
            in_ch: c1,
            out_ch: c2,
            kernel: 6,
            stride: 2,
            pad: 2,
        },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Linear {
            in_dim: c2 * 7 * 7,
            out_dim: 1,
        },
        LayerSpec::Sigmoid,
    ];
    DiscriminatorModel {
        net: Net::build(specs, Init::Dcgan, &mut rng),
    }
}

/// Small convolutional digit classifier for 28x28x1 inputs, 10 classes:
/// paired 3x3 conv blocks with max pooling, then fully connected layers.
pub fn build_digit_classifier<F: Scalar>(seed: u64) -> ClassifierModel<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = |in_ch, out_ch| LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel: 3,
        stride: 1,
        pad: 0,
    };
    let specs = vec![
        conv(1, 16),                                 // 0: 28 -> 26
        LayerSpec::Relu,                             // 1
        conv(16, 16),                                // 2: 26 -> 24
        LayerSpec::Relu,                             // 3
        LayerSpec::MaxPool { kernel: 2, stride: 2 }, // 4: 24 -> 12
        conv(16, 32),                                // 5: 12 -> 10
        LayerSpec::Relu,                             // 6
        conv(32, 32),                                // 7: 10 -> 8
        LayerSpec::Relu,                             // 8
        LayerSpec::MaxPool { kernel: 2, stride: 2 }, // 9: 8 -> 4
        LayerSpec::Linear {
            in_dim: 32 * 4 * 4,
            out_dim: 128,
        }, // 10
        LayerSpec::Relu,    // 11
        LayerSpec::Dropout { prob: 0.5 }, // 12
        LayerSpec::Linear {
            in_dim: 128,
            out_dim: 10,
        }, // 13
    ];
    ClassifierModel {
        net: Net::build(specs, Init::He, &mut rng),
        class_count: 10,
        input_shape: (28, 28, 1),
        labels: (0..10).map(|d| d.to_string()).collect(),
        detector_tap: 10, // after the second max-pooling
        embed_end: 12,    // 128-d hidden layer
        embedding_dim: 128,
        threshold: None,
    }
}

/// Substitute face classifier: strided-conv embedding CNN plus a softmax
/// head over `class_count` identities. Accepts square RGB inputs of
/// `input_size` pixels (multiple of 16).
pub fn build_face_classifier<F: Scalar>(
    class_count: usize,
    embedding_dim: usize,
    input_size: usize,
    sphere_embedding: bool,
    seed: u64,
) -> Result<ClassifierModel<F>> {
    if class_count < 2 {
        return Err(AgnError::InvalidValue("need at least 2 classes".into()));
    }
    if input_size % 16 != 0 || input_size == 0 {
        return Err(AgnError::InvalidValue(
            "input size must be a positive multiple of 16".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = |in_ch, out_ch| LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let final_hw = input_size / 16;
    let mut specs = vec![
        conv(3, 16),  // 0: s -> s/2
        LayerSpec::Relu, // 1
        conv(16, 32), // 2: -> s/4
        LayerSpec::Relu, // 3
        conv(32, 64), // 4: -> s/8
        LayerSpec::Relu, // 5
        conv(64, 64), // 6: -> s/16
        LayerSpec::Relu, // 7
        LayerSpec::Linear {
            in_dim: 64 * final_hw * final_hw,
            out_dim: embedding_dim,
        }, // 8
        LayerSpec::Relu, // 9
    ];
    if sphere_embedding {
        specs.push(LayerSpec::UnitSphere);
    }
    let embed_end = specs.len();
    specs.push(LayerSpec::Linear {
        in_dim: embedding_dim,
        out_dim: class_count,
    });
    Ok(ClassifierModel {
        net: Net::build(specs, Init::He, &mut rng),
        class_count,
        input_shape: (input_size, input_size, 3),
        labels: (0..class_count).map(|i| format!("subject{i:02}")).collect(),
        detector_tap: 6, // feature map after the penultimate downsampling conv
        embed_end,
        embedding_dim,
        threshold: None,
    })
}
