//! Attack detector: a small convolutional head reading an intermediate
//! feature map of the protected classifier and emitting
//! {non-adversarial, adversarial} probabilities.

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ClassifierModel;
use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::image::{batch_chw, Image};
use crate::nn::{
    cross_entropy_grad, cross_entropy_loss, softmax_rows, Adam, Init, LayerSpec, Mode, Net,
};
use crate::scalar::Scalar;

/// Output class indices.
pub const NON_ADVERSARIAL: usize = 0;
pub const ADVERSARIAL: usize = 1;

#[derive(Debug, Clone)]
pub struct DetectorModel<F: Scalar> {
    pub net: Net<F>,
    /// (channels, height, width) of the feature map it reads.
    pub input_shape: (usize, usize, usize),
    pub threshold: f64,
}

impl<F: Scalar> DetectorModel<F> {
    /// Logits over {non-adversarial, adversarial} for a feature-map batch.
    pub fn logits(&mut self, features: &Array4<F>, mode: Mode) -> Result<Array2<F>> {
        let (c, h, w) = self.input_shape;
        if features.shape()[1] != c || features.shape()[2] != h || features.shape()[3] != w {
            return Err(AgnError::DimensionMismatch(format!(
                "detector expects feature maps {c}x{h}x{w}, got {}x{}x{}",
                features.shape()[1],
                features.shape()[2],
                features.shape()[3]
            )));
        }
        let y = self.net.forward(features.clone(), mode);
        let b = y.shape()[0];
        Ok(y.into_shape_with_order((b, 2)).unwrap())
    }

    pub fn probabilities(&mut self, features: &Array4<F>) -> Result<Array2<F>> {
        Ok(softmax_rows(&self.logits(features, Mode::Eval)?))
    }

    /// P(non-adversarial) for each image, evaluated through the classifier's
    /// feature extractor.
    pub fn score_images(
        &mut self,
        classifier: &mut ClassifierModel<F>,
        images: &[Image<F>],
    ) -> Result<Vec<f64>> {
        let feats = classifier.feature_map(&batch_chw(images)?)?;
        let probs = self.probabilities(&feats)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| r[NON_ADVERSARIAL].to_f64_lossy())
            .collect())
    }

    pub fn save(&mut self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let meta = serde_json::json!({
            "specs": self.net.specs,
            "input_shape": self.input_shape,
            "threshold": self.threshold,
        });
        super::write_checkpoint(path, "detector", &meta, &mut self.net)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (header, net) = super::read_checkpoint::<F>(path, "detector")?;
        Ok(Self {
            net,
            input_shape: serde_json::from_value(header.meta["input_shape"].clone())?,
            threshold: serde_json::from_value(header.meta["threshold"].clone())?,
        })
    }
}

/// Build a detector head sized to `classifier`'s tap feature map.
pub fn build_detector<F: Scalar>(
    classifier: &mut ClassifierModel<F>,
    probe: &Image<F>,
    seed: u64,
) -> Result<DetectorModel<F>> {
    let feats = classifier.feature_map(&batch_chw(std::slice::from_ref(probe))?)?;
    let (c, mut h, mut w) = (feats.shape()[1], feats.shape()[2], feats.shape()[3]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::new();
    let mut in_ch = c;
    // Strided 3x3 convs down to a small grid, then a linear head.
    while h.min(w) >= 4 {
        specs.push(LayerSpec::Conv {
            in_ch,
            out_ch: 32,
            kernel: 3,
            stride: 2,
            pad: 1,
        });
        specs.push(LayerSpec::Relu);
        in_ch = 32;
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    specs.push(LayerSpec::Linear {
        in_dim: in_ch * h * w,
        out_dim: 2,
    });
    Ok(DetectorModel {
        net: Net::build(specs, Init::He, &mut rng),
        input_shape: (c, feats.shape()[2], feats.shape()[3]),
        threshold: 0.5,
    })
}

/// Train the detector on benign vs. adversarial images (labels are taken
/// from set membership, not from the datasets' class labels).
pub fn train_detector<F: Scalar>(
    classifier: &mut ClassifierModel<F>,
    detector: &mut DetectorModel<F>,
    benign: &LabeledDataset<F>,
    adversarial: &LabeledDataset<F>,
    epochs: usize,
    learning_rate: f64,
    rng_seed: u64,
) -> Result<()> {
    if benign.is_empty() || adversarial.is_empty() {
        return Err(AgnError::EmptyInput(
            "detector training needs both benign and adversarial sets".into(),
        ));
    }
    let mut items: Vec<(&Image<F>, usize)> = Vec::new();
    items.extend(benign.images().map(|i| (i, NON_ADVERSARIAL)));
    items.extend(adversarial.images().map(|i| (i, ADVERSARIAL)));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // Detector phase runs Adam with beta1 = 0.99.
    let mut opt = Adam::<F>::new(learning_rate, 0.99, 0.999);
    let batch = 32usize;
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let images: Vec<Image<F>> = chunk.iter().map(|&i| items[i].0.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| items[i].1).collect();
            let feats = classifier.feature_map(&batch_chw(&images)?)?;
            let logits = detector.logits(&feats, Mode::Train)?;
            let loss = cross_entropy_loss(&logits, &labels).to_f64_lossy();
            if !loss.is_finite() {
                return Err(AgnError::Diverged("detector loss non-finite".into()));
            }
            let grad = cross_entropy_grad(&logits, &labels);
            let b = labels.len();
            detector
                .net
                .backward(grad.into_shape_with_order((b, 2, 1, 1)).unwrap());
            opt.step(&mut detector.net);
        }
    }
    detector.net.clear_caches();
    classifier.net.clear_caches();
    Ok(())
}

/// Precision and recall of the adversarial class on held-out pairs.
pub fn detector_precision_recall<F: Scalar>(
    classifier: &mut ClassifierModel<F>,
    detector: &mut DetectorModel<F>,
    benign: &[Image<F>],
    adversarial: &[Image<F>],
) -> Result<(f64, f64)> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for img in adversarial {
        let p_nonadv = detector.score_images(classifier, std::slice::from_ref(img))?[0];
        if p_nonadv < detector.threshold {
            tp += 1;
        } else {
            fne += 1;
        }
    }
    for img in benign {
        let p_nonadv = detector.score_images(classifier, std::slice::from_ref(img))?[0];
        if p_nonadv < detector.threshold {
            fp += 1;
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fne == 0 {
        0.0
    } else {
        tp as f64 / (tp + fne) as f64
    };
    Ok((precision, recall))
}
