//! Attack evaluation: dodging/impersonation rates, cross-model transfer
//! matrices, the digit generate-and-filter pipeline, and the diversity
//! metric.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::agn::attack_succeeded;
use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::goal::{AttackGoal, AttackMode};
use crate::image::Image;
use crate::latent::sample_latents;
use crate::models::{
    ClassifierModel, DecisionThreshold, DetectorModel, DiscriminatorModel, GeneratorModel,
};
use crate::nn::Mode;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DodgingReport {
    pub rate: f64,
    pub mean_true_prob: f64,
}

/// Fraction of (image, true class) pairs satisfying the dodge criterion,
/// with the mean probability assigned to the correct class alongside.
pub fn dodging_rate<F: Scalar>(
    classifier: &mut ClassifierModel<F>,
    mut detector: Option<&mut DetectorModel<F>>,
    images: &[(Image<F>, usize)],
    goal: &AttackGoal,
) -> Result<DodgingReport> {
    if images.is_empty() {
        return Err(AgnError::EmptyInput("evaluation images".into()));
    }
    if goal.mode != AttackMode::Dodge {
        return Err(AgnError::InvalidValue("dodging_rate needs a dodge goal".into()));
    }
    let mut hits = 0usize;
    let mut mean_p = 0.0;
    for (img, true_class) in images {
        let det = detector.as_deref_mut();
        if attack_succeeded(classifier, det, img, *true_class, goal, 0.5)? {
            hits += 1;
        }
        mean_p += classifier.classify(img)?.get(*true_class).to_f64_lossy() / images.len() as f64;
    }
    Ok(DodgingReport {
        rate: hits as f64 / images.len() as f64,
        mean_true_prob: mean_p,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImpersonationReport {
    pub rate: f64,
    /// Fraction additionally clearing the calibrated decision threshold.
    pub high_confidence_rate: f64,
    pub mean_target_prob: f64,
}

pub fn impersonation_rate<F: Scalar>(
    classifier: &mut ClassifierModel<F>,
    images: &[Image<F>],
    target_class: usize,
    goal: &AttackGoal,
    threshold: Option<DecisionThreshold>,
) -> Result<ImpersonationReport> {
    if images.is_empty() {
        return Err(AgnError::EmptyInput("evaluation images".into()));
    }
    let mut rate = 0.0;
    let mut hc = 0.0;
    let mut mean_p = 0.0;
    for img in images {
        let probs = classifier.classify(img)?;
        let p_t = probs.get(target_class).to_f64_lossy();
        mean_p += p_t / images.len() as f64;
        let classified_as_target = probs.argmax() == target_class;
        if classified_as_target && p_t > goal.impersonate_threshold {
            rate += 1.0 / images.len() as f64;
            let t = threshold.map(|t| t.value).unwrap_or(goal.impersonate_threshold);
            if p_t >= t {
                hc += 1.0 / images.len() as f64;
            }
        }
    }
    Ok(ImpersonationReport {
        rate,
        high_confidence_rate: hc,
        mean_target_prob: mean_p,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub model_names: Vec<String>,
    /// rates[i][j]: fraction of attacks successful against model i that
    /// also succeed against model j; diagonal is 1 by construction.
    pub rates: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())
            .map_err(|e| AgnError::InvalidValue(format!("csv: {e}")))?;
        let mut header = vec!["from\\to".to_string()];
        header.extend(self.model_names.iter().cloned());
        w.write_record(&header)
            .map_err(|e| AgnError::InvalidValue(format!("csv: {e}")))?;
        for (i, row) in self.rates.iter().enumerate() {
            let mut rec = vec![self.model_names[i].clone()];
            rec.extend(row.iter().map(|r| format!("{r:.4}")));
            w.write_record(&rec)
                .map_err(|e| AgnError::InvalidValue(format!("csv: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cross-model dodging transfer: attacks successful against the row model
/// re-scored against each column model.
pub fn transfer_matrix<F: Scalar>(
    attacks: &[(String, Vec<(Image<F>, usize)>)],
    models: &mut [(String, ClassifierModel<F>)],
    goal: &AttackGoal,
) -> Result<TransferMatrix> {
    if attacks.is_empty() || models.is_empty() {
        return Err(AgnError::EmptyInput("transfer inputs".into()));
    }
    let names: Vec<String> = models.iter().map(|(n, _)| n.clone()).collect();
    let mut rates = vec![vec![0.0; models.len()]; attacks.len()];
    for (i, (from_name, images)) in attacks.iter().enumerate() {
        if images.is_empty() {
            return Err(AgnError::EmptyInput(format!("attack list for {from_name}")));
        }
        for (j, (to_name, model)) in models.iter_mut().enumerate() {
            if from_name == to_name {
                rates[i][j] = 1.0; // successful attacks by definition
                continue;
            }
            let mut hits = 0usize;
            for (img, true_class) in images {
                if attack_succeeded(model, None, img, *true_class, goal, 0.5)? {
                    hits += 1;
                }
            }
            rates[i][j] = hits as f64 / images.len() as f64;
        }
    }
    Ok(TransferMatrix {
        model_names: names,
        rates,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterStats {
    pub generated: usize,
    pub misclassified: usize,
    pub misclassified_fraction: f64,
    pub kept: usize,
}

/// Generate `per_class_samples` digits from each class generator, keep the
/// misclassified ones, rank by discriminator output times the probability
/// of the intended class, and keep the top `keep_fraction` globally.
pub fn mnist_generate_and_filter<F: Scalar>(
    generators: &mut [GeneratorModel<F>],
    discriminators: &mut [DiscriminatorModel<F>],
    classifier: &mut ClassifierModel<F>,
    per_class_samples: usize,
    keep_fraction: f64,
    rng_seed: u64,
) -> Result<(LabeledDataset<F>, FilterStats)> {
    if generators.len() != 10 || discriminators.len() != 10 {
        return Err(AgnError::InvalidValue(
            "expected one generator and discriminator per digit class".into(),
        ));
    }
    if per_class_samples == 0 || !(0.0..=1.0).contains(&keep_fraction) || keep_fraction <= 0.0 {
        return Err(AgnError::InvalidValue(
            "need positive sample count and keep_fraction in (0,1]".into(),
        ));
    }
    let mut candidates: Vec<(f64, Image<F>, usize)> = Vec::new();
    let mut generated = 0usize;
    const BATCH: usize = 250;
    for class in 0..10 {
        let mut remaining = per_class_samples;
        let mut batch_idx = 0u64;
        while remaining > 0 {
            let n = remaining.min(BATCH);
            let seed = rng_seed
                .wrapping_add(class as u64 * 1_000_003)
                .wrapping_add(batch_idx);
            let z = sample_latents::<F>(n, generators[class].latent_dim, seed)?;
            let imgs = generators[class].generate(&z, Mode::Eval)?;
            let probs = crate::nn::softmax_rows(&classifier.logits(&imgs, Mode::Eval)?);
            let d_scores = discriminators[class].score(&imgs, Mode::Eval);
            for k in 0..n {
                generated += 1;
                let row = probs.index_axis(Axis(0), k);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                if argmax != class {
                    let p_intended = row[class].to_f64_lossy();
                    let score = d_scores[k].to_f64_lossy() * p_intended;
                    let chw = imgs.index_axis(Axis(0), k).to_owned();
                    candidates.push((score, Image::from_chw(&chw), class));
                }
            }
            remaining -= n;
            batch_idx += 1;
        }
        generators[class].net.clear_caches();
        discriminators[class].net.clear_caches();
    }
    classifier.net.clear_caches();
    let misclassified = candidates.len();
    if misclassified == 0 {
        return Err(AgnError::EmptyInput(
            "no generated samples were misclassified".into(),
        ));
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let keep = ((misclassified as f64) * keep_fraction).round().max(1.0) as usize;
    let kept: Vec<(Image<F>, usize)> = candidates
        .into_iter()
        .take(keep.min(misclassified))
        .map(|(_, img, class)| (img, class))
        .collect();
    let stats = FilterStats {
        generated,
        misclassified,
        misclassified_fraction: misclassified as f64 / generated as f64,
        kept: kept.len(),
    };
    Ok((LabeledDataset::new(kept, 10)?, stats))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Mean of per-class mean pairwise distances (the headline number).
    pub per_class_mean: f64,
    /// All same-class pairs pooled before averaging.
    pub pooled_mean: f64,
    pub classes_counted: usize,
}

/// Mean Euclidean distance between same-class pairs, pixels flattened.
/// Classes with fewer than two members are skipped.
pub fn diversity_mean_distance<F: Scalar>(dataset: &LabeledDataset<F>) -> Result<DiversityReport> {
    let mut class_means: Vec<f64> = Vec::new();
    let mut pooled_sum = 0.0f64;
    let mut pooled_pairs = 0usize;
    for class in 0..dataset.class_count() {
        let members = dataset.filter_class(class);
        let n = members.len();
        if n < 2 {
            continue;
        }
        let dim = members[0].data().len();
        let mut x = Array2::<f64>::zeros((n, dim));
        for (i, img) in members.iter().enumerate() {
            for (j, &v) in img.data().iter().enumerate() {
                x[[i, j]] = v.to_f64_lossy();
            }
        }
        let sq_norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
        // Blocked Gram products keep memory bounded on large classes.
        const BLOCK: usize = 512;
        let mut sum = 0.0f64;
        let mut pairs = 0usize;
        let mut i0 = 0;
        while i0 < n {
            let ib = BLOCK.min(n - i0);
            let xi = x.slice(ndarray::s![i0..i0 + ib, ..]);
            let gram = xi.dot(&x.t()); // (ib, n)
            for bi in 0..ib {
                let i = i0 + bi;
                for j in (i + 1)..n {
                    let d2 = (sq_norms[i] + sq_norms[j] - 2.0 * gram[[bi, j]]).max(0.0);
                    sum += d2.sqrt();
                    pairs += 1;
                }
            }
            i0 += ib;
        }
        class_means.push(sum / pairs as f64);
        pooled_sum += sum;
        pooled_pairs += pairs;
    }
    if class_means.is_empty() {
        return Err(AgnError::EmptyInput(
            "no class has two or more members".into(),
        ));
    }
    Ok(DiversityReport {
        per_class_mean: class_means.iter().sum::<f64>() / class_means.len() as f64,
        pooled_mean: pooled_sum / pooled_pairs as f64,
        classes_counted: class_means.len(),
    })
}

/// Sample `count` artifacts from a generator deterministically.
pub fn sample_artifacts<F: Scalar>(
    generator: &mut GeneratorModel<F>,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<Image<F>>> {
    let z = sample_latents::<F>(count, generator.latent_dim, rng_seed)?;
    let out = generator.generate(&z, Mode::Eval)?;
    generator.net.clear_caches();
    Ok(crate::image::unbatch_chw(&out))
}

/// Tile images into a grid sheet (row-major), padding with black.
pub fn grid_sheet<F: Scalar>(images: &[Image<F>], columns: usize) -> Result<Image<F>> {
    if images.is_empty() || columns == 0 {
        return Err(AgnError::EmptyInput("grid images".into()));
    }
    let (h, w, c) = (
        images[0].height(),
        images[0].width(),
        images[0].channels(),
    );
    let rows = images.len().div_ceil(columns);
    let mut sheet = ndarray::Array3::<F>::zeros((rows * h, columns * w, c));
    for (i, img) in images.iter().enumerate() {
        if img.height() != h || img.width() != w || img.channels() != c {
            return Err(AgnError::DimensionMismatch("grid images must match".into()));
        }
        let (gr, gc) = (i / columns, i % columns);
        sheet
            .slice_mut(ndarray::s![gr * h..(gr + 1) * h, gc * w..(gc + 1) * w, ..])
            .assign(img.data());
    }
    Ok(Image::from_data_unchecked(sheet))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn img_of(v: f64) -> Image<f64> {
        Image::filled(2, 2, 1, v).unwrap()
    }

    #[test]
    fn diversity_zero_for_identical_pair() {
        let ds = LabeledDataset::new(vec![(img_of(0.5), 0), (img_of(0.5), 0)], 1).unwrap();
        let rep = diversity_mean_distance(&ds).unwrap();
        assert_eq!(rep.per_class_mean, 0.0);
    }

    #[test]
    fn diversity_matches_bruteforce_oracle() {
        // Five small images in one class; oracle is an explicit double loop.
        let imgs: Vec<Image<f64>> = (0..5)
            .map(|i| {
                Image::from_data_unchecked(Array3::from_shape_fn((3, 3, 1), |(r, c, _)| {
                    ((i * 7 + r * 3 + c) % 11) as f64 / 11.0
                }))
            })
            .collect();
        let ds = LabeledDataset::new(imgs.iter().map(|i| (i.clone(), 0)).collect(), 1).unwrap();
        let rep = diversity_mean_distance(&ds).unwrap();
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..5 {
            for j in (i + 1)..5 {
                let d: f64 = imgs[i]
                    .data()
                    .iter()
                    .zip(imgs[j].data().iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                sum += d;
                pairs += 1;
            }
        }
        let oracle = sum / pairs as f64;
        assert!((rep.per_class_mean - oracle).abs() < 1e-12);
        assert!((rep.pooled_mean - oracle).abs() < 1e-12);
    }

    #[test]
    fn diversity_is_permutation_invariant() {
        let imgs: Vec<(Image<f64>, usize)> = (0..6)
            .map(|i| {
                (
                    Image::from_data_unchecked(Array3::from_shape_fn((2, 2, 1), |(r, c, _)| {
                        ((i + r + c) % 5) as f64 / 5.0
                    })),
                    i % 2,
                )
            })
            .collect();
        let ds1 = LabeledDataset::new(imgs.clone(), 2).unwrap();
        let mut rev = imgs.clone();
        rev.reverse();
        let ds2 = LabeledDataset::new(rev, 2).unwrap();
        let a = diversity_mean_distance(&ds1).unwrap();
        let b = diversity_mean_distance(&ds2).unwrap();
        assert!((a.per_class_mean - b.per_class_mean).abs() < 1e-12);
    }

    #[test]
    fn grid_sheet_tiles() {
        let imgs: Vec<Image<f64>> = (0..5).map(|i| img_of(i as f64 / 5.0)).collect();
        let sheet = grid_sheet(&imgs, 3).unwrap();
        assert_eq!((sheet.height(), sheet.width()), (4, 6));
        assert_eq!(sheet.data()[[0, 0, 0]], 0.0);
        // Row 2 col 2 falls in grid cell (1,1) = image 4.
        assert_eq!(sheet.data()[[2, 2, 0]], 4.0 / 5.0);
    }
}
