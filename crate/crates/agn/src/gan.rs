//! Non-adversarial GAN pretraining: the generator learns to emit realistic
//! artifacts before any attack training starts.

use ndarray::{Array1, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::image::batch_chw;
use crate::latent::sample_latents_with;
use crate::models::{DiscriminatorModel, GeneratorModel};
use crate::nn::{Adam, Mode};
use crate::scalar::Scalar;

/// Discriminator outputs are clamped into [EPS, 1-EPS] before logs.
pub const D_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Soft label the discriminator is trained toward on real samples.
    pub real_label: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 2e-4,
            batch_size: 260,
            beta1: 0.5,
            beta2: 0.999,
            real_label: 0.9,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.real_label > 0.5 && self.real_label <= 1.0) {
            return Err(AgnError::InvalidValue(format!(
                "real_label {} outside (0.5, 1]",
                self.real_label
            )));
        }
        if self.batch_size == 0 {
            return Err(AgnError::InvalidValue("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Generator objective on raw discriminator scores: sum of log(1 - d).
pub fn loss_g_from_scores<F: Scalar>(scores: &Array1<F>) -> F {
    let eps = F::from_f64(D_CLAMP_EPS);
    scores.iter().fold(F::zero(), |acc, &d| {
        acc + (F::one() - d).max(eps).ln()
    })
}

/// Soft-label discriminator objective on raw scores. With `real_label` = 1
/// this is exactly sum(log d_real) + sum(log(1 - d_gen)); the general form
/// replaces the real-sample term by the cross-entropy realization
/// r*log(d) + (1-r)*log(1-d), whose maximizer drives d -> r.
pub fn gain_d_from_scores<F: Scalar>(
    real_scores: &Array1<F>,
    gen_scores: &Array1<F>,
    real_label: f64,
) -> F {
    let eps = F::from_f64(D_CLAMP_EPS);
    let r = F::from_f64(real_label);
    let real_term = real_scores.iter().fold(F::zero(), |acc, &d| {
        let d_c = d.max(eps);
        let omd = (F::one() - d).max(eps);
        acc + r * d_c.ln() + (F::one() - r) * omd.ln()
    });
    let gen_term = gen_scores.iter().fold(F::zero(), |acc, &d| {
        acc + (F::one() - d).max(eps).ln()
    });
    real_term + gen_term
}

/// Run the discriminator over a generated batch and evaluate the generator
/// objective.
pub fn loss_g<F: Scalar>(
    discriminator: &mut DiscriminatorModel<F>,
    generated_batch: &Array4<F>,
) -> Result<F> {
    if generated_batch.shape()[0] == 0 {
        return Err(AgnError::EmptyInput("generated batch".into()));
    }
    let scores = discriminator.score(generated_batch, Mode::Eval);
    Ok(loss_g_from_scores(&scores))
}

/// Run the discriminator over real and generated batches and evaluate the
/// soft-label discriminator objective.
pub fn gain_d<F: Scalar>(
    discriminator: &mut DiscriminatorModel<F>,
    real_batch: &Array4<F>,
    generated_batch: &Array4<F>,
    real_label: f64,
) -> Result<F> {
    if real_batch.shape()[0] == 0 || generated_batch.shape()[0] == 0 {
        return Err(AgnError::EmptyInput("discriminator batches".into()));
    }
    let real_scores = discriminator.score(real_batch, Mode::Eval);
    let gen_scores = discriminator.score(generated_batch, Mode::Eval);
    Ok(gain_d_from_scores(&real_scores, &gen_scores, real_label))
}

/// d(-gain_d)/d(score) for one real sample, mean-scaled by `n`.
pub(crate) fn real_score_grad<F: Scalar>(d: F, real_label: f64, n: usize) -> F {
    let eps = F::from_f64(D_CLAMP_EPS);
    let r = F::from_f64(real_label);
    let d_c = d.max(eps).min(F::one() - eps);
    let g = r / d_c - (F::one() - r) / (F::one() - d_c);
    -g / F::from_f64(n as f64)
}

/// d(-gain_d)/d(score) for one generated sample, mean-scaled by `n`.
pub(crate) fn gen_score_grad_for_d<F: Scalar>(d: F, n: usize) -> F {
    let eps = F::from_f64(D_CLAMP_EPS);
    let d_c = d.max(eps).min(F::one() - eps);
    (F::one() / (F::one() - d_c)) / F::from_f64(n as f64)
}

/// d(loss_g)/d(score) for one generated sample, mean-scaled by `n`.
pub(crate) fn gen_score_grad_for_g<F: Scalar>(d: F, n: usize) -> F {
    let eps = F::from_f64(D_CLAMP_EPS);
    let d_c = d.max(eps).min(F::one() - eps);
    (-(F::one() / (F::one() - d_c))) / F::from_f64(n as f64)
}

/// One discriminator ascent step on (real, generated); returns gain_d.
pub(crate) fn update_discriminator<F: Scalar>(
    discriminator: &mut DiscriminatorModel<F>,
    opt: &mut Adam<F>,
    real: &Array4<F>,
    generated: &Array4<F>,
    real_label: f64,
) -> F {
    let n_real = real.shape()[0];
    let n_gen = generated.shape()[0];
    let real_scores = discriminator.net.forward(real.clone(), Mode::Train);
    let gain_real: F = {
        let flat = real_scores.view().into_shape_with_order(n_real).unwrap();
        let eps = F::from_f64(D_CLAMP_EPS);
        let r = F::from_f64(real_label);
        flat.iter().fold(F::zero(), |acc, &d| {
            acc + r * d.max(eps).ln() + (F::one() - r) * (F::one() - d).max(eps).ln()
        })
    };
    let mut dreal = Array4::<F>::zeros(real_scores.raw_dim());
    for (g, &d) in dreal.iter_mut().zip(real_scores.iter()) {
        *g = real_score_grad(d, real_label, n_real);
    }
    discriminator.net.backward(dreal);

    let gen_scores = discriminator.net.forward(generated.clone(), Mode::Train);
    let gain_gen: F = {
        let flat = gen_scores.view().into_shape_with_order(n_gen).unwrap();
        let eps = F::from_f64(D_CLAMP_EPS);
        flat.iter()
            .fold(F::zero(), |acc, &d| acc + (F::one() - d).max(eps).ln())
    };
    let mut dgen = Array4::<F>::zeros(gen_scores.raw_dim());
    for (g, &d) in dgen.iter_mut().zip(gen_scores.iter()) {
        *g = gen_score_grad_for_d(d, n_gen);
    }
    discriminator.net.backward(dgen);
    opt.step(&mut discriminator.net);
    gain_real + gain_gen
}

/// Gradient of the (mean-scaled) generator objective w.r.t. the generated
/// images, via one discriminator forward/backward. Leaves the
/// discriminator's parameter gradients untouched (they are zeroed).
pub(crate) fn realism_input_grad<F: Scalar>(
    discriminator: &mut DiscriminatorModel<F>,
    generated: &Array4<F>,
) -> (Array4<F>, F) {
    let n = generated.shape()[0];
    let scores = discriminator.net.forward(generated.clone(), Mode::Train);
    let loss: F = {
        let eps = F::from_f64(D_CLAMP_EPS);
        scores
            .iter()
            .fold(F::zero(), |acc, &d| acc + (F::one() - d).max(eps).ln())
    };
    let mut dscores = Array4::<F>::zeros(scores.raw_dim());
    for (g, &d) in dscores.iter_mut().zip(scores.iter()) {
        *g = gen_score_grad_for_g(d, n);
    }
    let dinput = discriminator.net.backward(dscores);
    discriminator.net.zero_grads();
    (dinput, loss)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PretrainReport {
    pub d_gains: Vec<f64>,
    pub g_losses: Vec<f64>,
    pub epochs_run: usize,
}

/// Pretrain the pair: per mini-batch, one discriminator ascent step on
/// gain_d and one generator descent step on loss_g.
pub fn pretrain_gan<F: Scalar>(
    generator: &mut GeneratorModel<F>,
    discriminator: &mut DiscriminatorModel<F>,
    dataset: &LabeledDataset<F>,
    config: &PretrainConfig,
    rng_seed: u64,
) -> Result<PretrainReport> {
    config.validate()?;
    let mut report = PretrainReport::default();
    if config.epochs == 0 {
        return Ok(report);
    }
    if dataset.is_empty() {
        return Err(AgnError::EmptyInput("pretraining dataset".into()));
    }
    let (c, h, w) = generator.output_shape;
    {
        let first = &dataset.items()[0].0;
        if first.height() != h || first.width() != w || first.channels() != c {
            return Err(AgnError::DimensionMismatch(format!(
                "dataset images {}x{}x{} vs generator output {h}x{w}x{c}",
                first.height(),
                first.width(),
                first.channels()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut opt_d = Adam::<F>::new(config.learning_rate, config.beta1, config.beta2);
    let mut opt_g = Adam::<F>::new(config.learning_rate, config.beta1, config.beta2);

    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let images: Vec<_> = chunk.iter().map(|&i| dataset.items()[i].0.clone()).collect();
            let real = batch_chw(&images)?;
            let n = images.len();

            // Discriminator step.
            let z = sample_latents_with::<F>(n, generator.latent_dim, &mut rng)?;
            let gen = generator.generate(&z, Mode::Train)?;
            let gain = update_discriminator(discriminator, &mut opt_d, &real, &gen, config.real_label);
            report.d_gains.push(gain.to_f64_lossy());

            // Generator step on fresh latents.
            let z = sample_latents_with::<F>(n, generator.latent_dim, &mut rng)?;
            let gen = generator.generate(&z, Mode::Train)?;
            let (dgen, g_loss) = realism_input_grad(discriminator, &gen);
            if !g_loss.to_f64_lossy().is_finite() {
                return Err(AgnError::Diverged("generator loss non-finite".into()));
            }
            generator.net.backward(dgen);
            opt_g.step(&mut generator.net);
            report.g_losses.push(g_loss.to_f64_lossy());
        }
        report.epochs_run += 1;
    }
    generator.net.clear_caches();
    discriminator.net.clear_caches();
    Ok(report)
}

/// Fraction of sampled generator outputs the discriminator accepts (D > 0.5).
pub fn discriminator_acceptance<F: Scalar>(
    generator: &mut GeneratorModel<F>,
    discriminator: &mut DiscriminatorModel<F>,
    samples: usize,
    rng_seed: u64,
) -> Result<f64> {
    let z = crate::latent::sample_latents::<F>(samples, generator.latent_dim, rng_seed)?;
    let gen = generator.generate(&z, Mode::Eval)?;
    let scores = discriminator.score(&gen, Mode::Eval);
    let half = F::from_f64(0.5);
    let accepted = scores.iter().filter(|&&d| d > half).count();
    Ok(accepted as f64 / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn loss_g_closed_form() {
        let scores = array![0.5f64, 0.5, 0.5, 0.5];
        let l = loss_g_from_scores(&scores);
        assert!((l - 4.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_g_clamped_at_limit() {
        let scores = array![1.0f64, 1.0, 1.0, 1.0];
        let l = loss_g_from_scores(&scores);
        assert!((l - 4.0 * D_CLAMP_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn gain_d_reduces_to_plain_objective_with_hard_labels() {
        let real = array![0.9f64];
        let gen = array![0.1f64];
        let g = gain_d_from_scores(&real, &gen, 1.0);
        assert!((g - (0.9f64.ln() + 0.9f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gain_d_nonpositive_with_hard_labels() {
        let mut seed = 7u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 33) as f64 / u32::MAX as f64).clamp(1e-6, 1.0 - 1e-6)
        };
        for _ in 0..50 {
            let real = array![next(), next(), next()];
            let gen = array![next(), next()];
            assert!(gain_d_from_scores(&real, &gen, 1.0) <= 1e-12);
        }
    }

    #[test]
    fn soft_label_maximizer_sits_at_real_label() {
        // 1-D grid search over the discriminator's output on a single real
        // sample; the soft-label term must peak at d = 0.9.
        let gen = array![];
        let mut best = (f64::MIN, 0.0);
        for i in 1..1000 {
            let d = i as f64 / 1000.0;
            let g = gain_d_from_scores(&array![d], &gen, 0.9);
            if g > best.0 {
                best = (g, d);
            }
        }
        assert!((best.1 - 0.9).abs() < 1.5e-3, "peak at {}", best.1);
    }
}
