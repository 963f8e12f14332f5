//! Classifier training (optionally with eyeglass augmentation) and
//! decision-threshold calibration.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierModel, DecisionThreshold, GeneratorModel};
use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::geometry::Homography;
use crate::image::{batch_chw, Image, Mask};
use crate::latent::sample_latents_with;
use crate::nn::{cross_entropy_grad, cross_entropy_loss, Adam, Mode};
use crate::overlay::OverlayPlan;
use crate::scalar::Scalar;

/// Eyeglass augmentation: overlays generator-sampled patches onto training
/// images before fitting the classifier.
#[derive(Debug, Clone)]
pub struct Augmentation<F: Scalar> {
    pub generator: GeneratorModel<F>,
    pub mask: Mask,
    /// Patch-to-face placement.
    pub alignment: Homography,
    /// Augmented variants generated per original image.
    pub variants_per_image: usize,
}

impl<F: Scalar> Augmentation<F> {
    pub fn new(generator: GeneratorModel<F>, mask: Mask, alignment: Homography) -> Self {
        Self {
            generator,
            mask,
            alignment,
            variants_per_image: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy per processed mini-batch.
    pub batch_losses: Vec<f64>,
    pub epochs_run: usize,
}

/// Train `model` by cross-entropy with Adam.
///
/// With augmentation, every original image contributes
/// `variants_per_image` eyeglass-wearing variants, and each mini-batch is
/// composed of ceil(b/2) raw and floor(b/2) augmented samples.
pub fn train_classifier<F: Scalar>(
    model: &mut ClassifierModel<F>,
    dataset: &LabeledDataset<F>,
    augmentation: Option<&mut Augmentation<F>>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng_seed: u64,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(AgnError::EmptyInput("training dataset".into()));
    }
    let mut report = TrainReport {
        batch_losses: Vec::new(),
        epochs_run: 0,
    };
    if epochs == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // Materialize augmented variants up front so epochs resample batches,
    // not patches.
    let augmented: Vec<(Image<F>, usize)> = match augmentation {
        None => Vec::new(),
        Some(aug) => {
            let (h, w, _) = model.input_shape;
            let plan = OverlayPlan::new(&aug.mask, Some(&aug.alignment), h, w)?;
            let k = aug.variants_per_image.max(1);
            let latents =
                sample_latents_with::<F>(dataset.len() * k, aug.generator.latent_dim, &mut rng)?;
            let patches = aug.generator.generate(&latents, Mode::Eval)?;
            let mut out = Vec::with_capacity(dataset.len() * k);
            for (i, (img, label)) in dataset.items().iter().enumerate() {
                for v in 0..k {
                    let patch = patches.index_axis(Axis(0), i * k + v).to_owned();
                    let combined = plan.apply_chw(&img.to_chw(), &patch)?;
                    out.push((Image::from_chw(&combined), *label));
                }
            }
            out
        }
    };

    let mut opt = Adam::<F>::new(learning_rate, 0.9, 0.999);
    for _ in 0..epochs {
        for (raw_slice, aug_slice) in
            plan_batches(dataset.len(), augmented.len(), batch_size, &mut rng)
        {
            let mut images: Vec<Image<F>> = Vec::with_capacity(batch_size);
            let mut labels: Vec<usize> = Vec::with_capacity(batch_size);
            for i in raw_slice {
                let (img, label) = &dataset.items()[i];
                images.push(img.clone());
                labels.push(*label);
            }
            for i in aug_slice {
                let (img, label) = &augmented[i];
                images.push(img.clone());
                labels.push(*label);
            }
            let x = batch_chw(&images)?;
            let logits = model.logits(&x, Mode::Train)?;
            let loss = cross_entropy_loss(&logits, &labels).to_f64_lossy();
            if !loss.is_finite() {
                return Err(AgnError::Diverged(format!("non-finite loss {loss}")));
            }
            report.batch_losses.push(loss);
            let grad = cross_entropy_grad(&logits, &labels);
            let b_sz = labels.len();
            let dy = grad
                .into_shape_with_order((b_sz, model.class_count, 1, 1))
                .unwrap();
            model.net.backward(dy);
            opt.step(&mut model.net);
        }
        report.epochs_run += 1;
    }
    model.net.clear_caches();
    Ok(report)
}

/// Mini-batch composition for one epoch: raw-index and augmented-index
/// slices per batch. With augmentation, every full batch holds exactly
/// ceil(b/2) raw and floor(b/2) augmented samples; without it, batches are
/// plain raw slices.
pub fn plan_batches(
    n_raw: usize,
    n_aug: usize,
    batch_size: usize,
    rng: &mut impl rand::Rng,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let raw_per_batch = if n_aug == 0 {
        batch_size
    } else {
        batch_size.div_ceil(2)
    };
    let aug_per_batch = batch_size - raw_per_batch;
    let mut raw_idx: Vec<usize> = (0..n_raw).collect();
    raw_idx.shuffle(rng);
    let mut aug_idx: Vec<usize> = (0..n_aug).collect();
    aug_idx.shuffle(rng);
    let batches = n_raw.div_ceil(raw_per_batch);
    let mut out = Vec::with_capacity(batches);
    for b in 0..batches {
        let raw: Vec<usize> = raw_idx
            .iter()
            .skip(b * raw_per_batch)
            .take(raw_per_batch)
            .copied()
            .collect();
        if raw.is_empty() {
            continue;
        }
        let aug: Vec<usize> = if n_aug == 0 {
            Vec::new()
        } else {
            (0..aug_per_batch)
                .map(|j| aug_idx[(b * aug_per_batch + j) % n_aug])
                .collect()
        };
        out.push((raw, aug));
    }
    out
}

/// Fraction of items whose argmax matches the label.
pub fn classifier_accuracy<F: Scalar>(
    model: &mut ClassifierModel<F>,
    dataset: &LabeledDataset<F>,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(AgnError::EmptyInput("evaluation dataset".into()));
    }
    let mut correct = 0usize;
    for chunk in dataset.items().chunks(64) {
        let images: Vec<Image<F>> = chunk.iter().map(|(i, _)| i.clone()).collect();
        let probs = model.probabilities(&batch_chw(&images)?)?;
        for (row, (_, label)) in probs.rows().into_iter().zip(chunk) {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if argmax == *label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: DecisionThreshold,
    pub tpr: f64,
    pub fpr: f64,
    /// False when no threshold met the constraint and 1.0 was returned.
    pub satisfiable: bool,
}

/// Smallest threshold t with FPR(t) <= max_fpr.
///
/// A prediction counts only when its max-probability is >= t; TPR counts
/// accepted-and-correct items, FPR accepted-and-wrong items, both over the
/// whole set. Candidates are the observed confidences (ties resolved toward
/// the smaller t, which maximizes TPR).
pub fn calibrate_threshold<F: Scalar>(
    model: &mut ClassifierModel<F>,
    validation: &LabeledDataset<F>,
    max_fpr: f64,
) -> Result<ThresholdReport> {
    if validation.is_empty() {
        return Err(AgnError::EmptyInput("validation dataset".into()));
    }
    if !(0.0..1.0).contains(&max_fpr) {
        return Err(AgnError::InvalidValue("max_fpr must lie in [0,1)".into()));
    }
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(validation.len());
    for chunk in validation.items().chunks(64) {
        let images: Vec<Image<F>> = chunk.iter().map(|(i, _)| i.clone()).collect();
        let probs = model.probabilities(&batch_chw(&images)?)?;
        for (row, (_, label)) in probs.rows().into_iter().zip(chunk) {
            let (argmax, conf) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, &v)| (i, v.to_f64_lossy()))
                .unwrap();
            scored.push((conf, argmax == *label));
        }
    }
    let report = calibrate_from_scores(&scored, max_fpr);
    model.threshold = Some(report.threshold);
    Ok(report)
}

/// Threshold selection on raw (confidence, correct) pairs.
pub fn calibrate_from_scores(scored: &[(f64, bool)], max_fpr: f64) -> ThresholdReport {
    let n = scored.len() as f64;
    let rates = |t: f64| {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for &(conf, correct) in scored {
            if conf >= t {
                if correct {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        (tp as f64 / n, fp as f64 / n)
    };
    let mut candidates: Vec<f64> = scored.iter().map(|&(c, _)| c).collect();
    candidates.push(1.0);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    for &t in &candidates {
        let (tpr, fpr) = rates(t);
        if fpr <= max_fpr {
            return ThresholdReport {
                threshold: DecisionThreshold { value: t },
                tpr,
                fpr,
                satisfiable: true,
            };
        }
    }
    let (tpr, fpr) = rates(1.0);
    ThresholdReport {
        threshold: DecisionThreshold { value: 1.0 },
        tpr,
        fpr,
        satisfiable: false,
    }
}
