//! Adversarial generator training against a fixed classifier: the attack
//! losses, the norm-matched gradient blend, and the alternating training
//! loop with its early-stop test.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::gan::{realism_input_grad, update_discriminator};
use crate::geometry::Homography;
use crate::goal::{
    AttackGoal, AttackMode, MULTI_IMAGE_DODGE_MEAN, MULTI_IMAGE_IMPERSONATE_MEAN,
};
use crate::image::{batch_chw, Image, Mask};
use crate::latent::sample_latents_with;
use crate::models::{ClassifierModel, DetectorModel, DiscriminatorModel, GeneratorModel};
use crate::nn::{softmax_rows, Adam, Mode};
use crate::overlay::OverlayPlan;
use crate::physical::{apply_ptm_chw, LuminanceModel};
use crate::probs::ProbVector;
use crate::scalar::Scalar;

/// Untargeted attack loss on probabilities: sum of non-true minus true,
/// which equals 1 - 2*p_true on the simplex. Maximizing it suppresses the
/// correct class.
pub fn loss_f_untargeted<F: Scalar>(probs: &ProbVector<F>, true_class: usize) -> F {
    let mut others = F::zero();
    for i in 0..probs.len() {
        if i != true_class {
            others = others + probs.get(i);
        }
    }
    others - probs.get(true_class)
}

/// Targeted attack loss: target minus sum of non-target, i.e.
/// 2*p_target - 1. Maximizing it promotes the target class.
pub fn loss_f_targeted<F: Scalar>(probs: &ProbVector<F>, target_class: usize) -> F {
    let mut others = F::zero();
    for i in 0..probs.len() {
        if i != target_class {
            others = others + probs.get(i);
        }
    }
    probs.get(target_class) - others
}

/// Logit-margin loss: max over non-target logits minus the target logit.
/// Provided as an alternative attack loss; shift-invariant in the logits.
pub fn cw_logit_loss<F: Scalar>(logits: &Array1<F>, target_class: usize) -> F {
    assert!(logits.len() >= 2, "need at least two classes");
    let mut best = F::neg_infinity();
    for (i, &l) in logits.iter().enumerate() {
        if i != target_class && l > best {
            best = l;
        }
    }
    best - logits[target_class]
}

/// Detector evasion loss on {non-adversarial, adversarial} probabilities:
/// p_adv - p_nonadv (= 2*p_adv - 1). Minimizing it pushes the detector
/// toward "non-adversarial".
pub fn detector_evasion_loss<F: Scalar>(detector_probs: &ProbVector<F>) -> F {
    assert_eq!(detector_probs.len(), 2, "detector emits two classes");
    detector_probs.get(crate::models::ADVERSARIAL)
        - detector_probs.get(crate::models::NON_ADVERSARIAL)
}

/// Rescale both gradients to the smaller Euclidean norm, then combine with
/// weight `kappa` on the realism gradient `d1`.
///
/// Both gradients zero yields the zero tensor.
pub fn combine_gradients<F: Scalar>(d1: &Array4<F>, d2: &Array4<F>, kappa: f64) -> Array4<F> {
    assert_eq!(d1.shape(), d2.shape(), "gradient shapes must agree");
    let n1 = d1.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
    let n2 = d2.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
    if n1 == F::zero() && n2 == F::zero() {
        return Array4::zeros(d1.raw_dim());
    }
    let m = n1.min(n2);
    let s1 = if n1 > F::zero() { m / n1 } else { F::zero() };
    let s2 = if n2 > F::zero() { m / n2 } else { F::zero() };
    let k = F::from_f64(kappa);
    let mut out = Array4::zeros(d1.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(d1)
        .and(d2)
        .for_each(|o, &a, &b| {
            *o = k * (a * s1) + (F::one() - k) * (b * s2);
        });
    out
}

/// Which attack loss drives the classifier gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttackLoss {
    /// The probability-difference losses (default; converges fastest here).
    #[default]
    ProbDiff,
    /// The logit-margin alternative.
    LogitMargin,
}

#[derive(Clone)]
pub struct AgnConfig<F: Scalar> {
    /// Weight on the realism gradient in [0,1].
    pub kappa: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub stop_goal: AttackGoal,
    pub detector: Option<DetectorModel<F>>,
    pub detector_threshold: f64,
    pub loss: AttackLoss,
    pub beta1: f64,
    pub beta2: f64,
    /// Soft label for discriminator updates inside the loop.
    pub real_label: f64,
}

impl<F: Scalar> AgnConfig<F> {
    pub fn new(stop_goal: AttackGoal, batch_size: usize) -> Self {
        Self {
            kappa: 0.25,
            learning_rate: 5e-5,
            max_epochs: 1,
            batch_size,
            stop_goal,
            detector: None,
            detector_threshold: 0.5,
            loss: AttackLoss::ProbDiff,
            beta1: 0.5,
            beta2: 0.999,
            real_label: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(AgnError::InvalidValue(format!(
                "kappa {} outside [0,1]",
                self.kappa
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(AgnError::InvalidValue(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        self.stop_goal.validate()
    }
}

/// The images Algorithm 1 attacks, with optional per-image alignment and
/// luminance tags.
#[derive(Debug, Clone)]
pub struct AttackerSet<F: Scalar> {
    pub images: Vec<Image<F>>,
    pub true_classes: Vec<usize>,
    /// Per-image patch-to-image placement; None = identity.
    pub alignments: Option<Vec<Homography>>,
    /// Per-image index into `luminance_models`.
    pub luminance_levels: Option<Vec<usize>>,
    pub luminance_models: Vec<LuminanceModel>,
}

impl<F: Scalar> AttackerSet<F> {
    pub fn single(image: Image<F>, true_class: usize, alignment: Option<Homography>) -> Self {
        Self {
            images: vec![image],
            true_classes: vec![true_class],
            alignments: alignment.map(|a| vec![a]),
            luminance_levels: None,
            luminance_models: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(AgnError::EmptyInput("attacker image set".into()));
        }
        if self.true_classes.len() != self.images.len() {
            return Err(AgnError::DimensionMismatch(
                "one true class per attacker image".into(),
            ));
        }
        if let Some(a) = &self.alignments {
            if a.len() != self.images.len() {
                return Err(AgnError::DimensionMismatch(
                    "one alignment per attacker image".into(),
                ));
            }
        }
        if let Some(l) = &self.luminance_levels {
            if l.len() != self.images.len() {
                return Err(AgnError::DimensionMismatch(
                    "one luminance tag per attacker image".into(),
                ));
            }
            if let Some(&bad) = l.iter().find(|&&i| i >= self.luminance_models.len()) {
                return Err(AgnError::InvalidValue(format!(
                    "luminance tag {bad} has no fitted model"
                )));
            }
        }
        Ok(())
    }
}

/// What the generated patch lands on.
pub enum AttackSurface<F: Scalar> {
    /// Patches are overlaid onto attacker images through the mask.
    Overlay {
        attacker: AttackerSet<F>,
        mask: Mask,
    },
    /// Generated images feed the classifier directly (digit attacks);
    /// `true_class` is the intended class of the generator.
    Direct { true_class: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgnIterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    /// "d" or "g".
    pub phase: String,
    pub gain_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_f: Option<f64>,
    /// Mean probability of the true class (dodge) or target class
    /// (impersonation) on the current attack batch.
    pub goal_prob: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct AgnReport {
    pub records: Vec<AgnIterationRecord>,
    pub stopped_early: bool,
    pub epochs_run: usize,
    pub g_updates: usize,
    /// Best mean goal probability reached (lowest for dodge, highest for
    /// impersonation).
    pub best_goal_prob: f64,
}

/// Outcome of one Algorithm-1 run; the generator argument holds the
/// returned weights (early-stop weights, or best-so-far on exhaustion).
pub struct AgnOutcome<F: Scalar> {
    pub report: AgnReport,
    /// The generated patches that satisfied the stop criterion, when the
    /// run stopped early.
    pub trigger_patches: Option<Vec<Image<F>>>,
}

/// Algorithm 1. Per mini-batch of real artifacts: sample latents, generate;
/// even iterations update the discriminator by ascending its gain; odd
/// iterations first test the stop criterion, then backpropagate the attack
/// loss through the attack surface, blend with the realism gradient at the
/// matched norm, and descend the generator. Classifier weights are never
/// modified.
pub fn train_agn<F: Scalar>(
    surface: &AttackSurface<F>,
    generator: &mut GeneratorModel<F>,
    discriminator: &mut DiscriminatorModel<F>,
    classifier: &mut ClassifierModel<F>,
    real_dataset: &LabeledDataset<F>,
    config: &mut AgnConfig<F>,
    rng_seed: u64,
) -> Result<AgnOutcome<F>> {
    config.validate()?;
    if real_dataset.is_empty() {
        return Err(AgnError::EmptyInput("real artifact dataset".into()));
    }
    let (pc, ph, pw) = generator.output_shape;
    {
        let first = &real_dataset.items()[0].0;
        if first.channels() != pc || first.height() != ph || first.width() != pw {
            return Err(AgnError::DimensionMismatch(
                "real dataset does not match generator output shape".into(),
            ));
        }
    }
    let mut plans: Vec<OverlayPlan> = Vec::new();
    if let AttackSurface::Overlay { attacker, mask } = surface {
        attacker.validate()?;
        if mask.height() != ph || mask.width() != pw {
            return Err(AgnError::DimensionMismatch(format!(
                "mask {}x{} vs generator output {ph}x{pw}",
                mask.height(),
                mask.width()
            )));
        }
        let (bh, bw, _) = classifier.input_shape;
        for i in 0..attacker.images.len() {
            let alignment = attacker.alignments.as_ref().map(|a| &a[i]);
            plans.push(OverlayPlan::new(mask, alignment, bh, bw)?);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut opt_d = Adam::<F>::new(config.learning_rate, config.beta1, config.beta2);
    let mut opt_g = Adam::<F>::new(config.learning_rate, config.beta1, config.beta2);

    let dodge = config.stop_goal.mode == AttackMode::Dodge;
    let mut report = AgnReport {
        best_goal_prob: if dodge { f64::INFINITY } else { f64::NEG_INFINITY },
        ..Default::default()
    };
    let mut best_net: Option<crate::nn::Net<F>> = None;
    let mut iteration = 0usize;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..real_dataset.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for chunk in order.chunks(config.batch_size) {
            let s_b = chunk.len();
            let z = sample_latents_with::<F>(s_b, generator.latent_dim, &mut rng)?;
            let gen = generator.generate(&z, Mode::Train)?;

            if iteration % 2 == 0 {
                // Discriminator update on (real minibatch, generated).
                let images: Vec<Image<F>> = chunk
                    .iter()
                    .map(|&i| real_dataset.items()[i].0.clone())
                    .collect();
                let real = batch_chw(&images)?;
                let gain = update_discriminator(
                    discriminator,
                    &mut opt_d,
                    &real,
                    &gen,
                    config.real_label,
                );
                generator.net.zero_grads();
                report.records.push(AgnIterationRecord {
                    iteration,
                    epoch,
                    phase: "d".into(),
                    gain_d: Some(gain.to_f64_lossy()),
                    loss_g: None,
                    loss_f: None,
                    goal_prob: None,
                });
            } else {
                // Attack pass: pair each generated patch with an attacker
                // image, run the classifier (and detector), and test the
                // stop criterion before updating.
                let pairing: Vec<usize> = match surface {
                    AttackSurface::Overlay { attacker, .. } => (0..s_b)
                        .map(|_| rng.gen_range(0..attacker.images.len()))
                        .collect(),
                    AttackSurface::Direct { .. } => vec![0; s_b],
                };
                let attack = forward_attack(surface, classifier, config, &plans, &gen, &pairing)?;
                let goal_prob = attack.mean_goal_prob;
                let improved = if dodge {
                    goal_prob < report.best_goal_prob
                } else {
                    goal_prob > report.best_goal_prob
                };
                if improved {
                    report.best_goal_prob = goal_prob;
                    best_net = Some(generator.net.clone());
                }
                if attack.stop_satisfied {
                    report.stopped_early = true;
                    report.records.push(AgnIterationRecord {
                        iteration,
                        epoch,
                        phase: "g".into(),
                        gain_d: None,
                        loss_g: None,
                        loss_f: Some(attack.mean_loss_f),
                        goal_prob: Some(goal_prob),
                    });
                    report.epochs_run = epoch + 1;
                    classifier.net.clear_caches();
                    generator.net.clear_caches();
                    discriminator.net.clear_caches();
                    return Ok(AgnOutcome {
                        report,
                        trigger_patches: Some(crate::image::unbatch_chw(&gen)),
                    });
                }

                // d1: descent direction on the realism objective.
                let (dgen_realism, g_loss) = realism_input_grad(discriminator, &gen);
                let d1 = dgen_realism.mapv(|v| -v);
                // d2: ascent direction on the attack objective.
                let d2 = backward_attack(surface, classifier, config, &plans, attack, &pairing)?;
                let blended = combine_gradients(&d1, &d2, config.kappa);
                if blended.iter().any(|v| !v.is_finite()) {
                    return Err(AgnError::Diverged(
                        "non-finite blended gradient".into(),
                    ));
                }
                // Backprop -d so the descent step moves along +d.
                generator.net.backward(blended.mapv(|v| -v));
                opt_g.step(&mut generator.net);
                report.g_updates += 1;
                report.records.push(AgnIterationRecord {
                    iteration,
                    epoch,
                    phase: "g".into(),
                    gain_d: None,
                    loss_g: Some(g_loss.to_f64_lossy()),
                    loss_f: None,
                    goal_prob: Some(goal_prob),
                });
            }
            iteration += 1;
        }
        report.epochs_run = epoch + 1;
    }

    // Out of epochs: hand back the best-so-far generator.
    if let Some(net) = best_net {
        generator.net = net;
    }
    classifier.net.clear_caches();
    generator.net.clear_caches();
    discriminator.net.clear_caches();
    Ok(AgnOutcome {
        report,
        trigger_patches: None,
    })
}

struct AttackPass<F: Scalar> {
    /// Classifier inputs (kept for the backward call ordering).
    probs: Array2<F>,
    logits: Array2<F>,
    detector_probs: Option<Array2<F>>,
    ptm_derivs: Vec<Option<Array3<F>>>,
    mean_loss_f: f64,
    mean_goal_prob: f64,
    stop_satisfied: bool,
}

fn forward_attack<F: Scalar>(
    surface: &AttackSurface<F>,
    classifier: &mut ClassifierModel<F>,
    config: &mut AgnConfig<F>,
    plans: &[OverlayPlan],
    gen: &Array4<F>,
    pairing: &[usize],
) -> Result<AttackPass<F>> {
    let s_b = gen.shape()[0];
    let (bh, bw, bc) = classifier.input_shape;
    let mut ptm_derivs: Vec<Option<Array3<F>>> = vec![None; s_b];
    let inputs = match surface {
        AttackSurface::Direct { .. } => gen.clone(),
        AttackSurface::Overlay { attacker, .. } => {
            let mut x = Array4::<F>::zeros((s_b, bc, bh, bw));
            for j in 0..s_b {
                let ai = pairing[j];
                let mut patch = gen.index_axis(Axis(0), j).to_owned();
                if let Some(levels) = &attacker.luminance_levels {
                    let model = &attacker.luminance_models[levels[ai]];
                    let (mapped, deriv) = apply_ptm_chw(&patch, model);
                    patch = mapped;
                    ptm_derivs[j] = Some(deriv);
                }
                let base = attacker.images[ai].to_chw();
                let combined = plans[ai].apply_chw(&base, &patch)?;
                x.index_axis_mut(Axis(0), j).assign(&combined);
            }
            x
        }
    };
    let logits = classifier.logits(&inputs, Mode::Eval)?;
    let probs = softmax_rows(&logits);
    let detector_probs = match config.detector.as_mut() {
        None => None,
        Some(det) => {
            let feats = classifier.feature_map(&inputs)?;
            let logits = det.logits(&feats, Mode::Eval)?;
            Some(softmax_rows(&logits))
        }
    };

    // Mean attack loss and goal probability over the batch.
    let mut mean_loss_f = 0.0;
    let mut mean_goal = 0.0;
    let mut per_sample_success = vec![false; s_b];
    for j in 0..s_b {
        let row = ProbVector::new(probs.index_axis(Axis(0), j).to_owned())?;
        let (true_class, target) = goal_classes(surface, config, pairing[j])?;
        let lf = match config.stop_goal.mode {
            AttackMode::Dodge => loss_f_untargeted(&row, true_class).to_f64_lossy(),
            AttackMode::Impersonate => loss_f_targeted(&row, target.unwrap()).to_f64_lossy(),
        };
        mean_loss_f += lf / s_b as f64;
        let gp = match config.stop_goal.mode {
            AttackMode::Dodge => row.get(true_class).to_f64_lossy(),
            AttackMode::Impersonate => row.get(target.unwrap()).to_f64_lossy(),
        };
        mean_goal += gp / s_b as f64;
        let class_ok = match config.stop_goal.mode {
            AttackMode::Dodge => {
                row.argmax() != true_class && gp < config.stop_goal.dodge_threshold
            }
            AttackMode::Impersonate => gp > config.stop_goal.impersonate_threshold,
        };
        let det_ok = match &detector_probs {
            None => true,
            Some(dp) => {
                dp[[j, crate::models::NON_ADVERSARIAL]].to_f64_lossy() > config.detector_threshold
            }
        };
        per_sample_success[j] = class_ok && det_ok;
    }

    let multi_image = match surface {
        AttackSurface::Overlay { attacker, .. } => attacker.images.len() > 1,
        AttackSurface::Direct { .. } => true,
    };
    let det_mean_ok = match &detector_probs {
        None => true,
        Some(dp) => {
            let mean: f64 = (0..s_b)
                .map(|j| dp[[j, crate::models::NON_ADVERSARIAL]].to_f64_lossy())
                .sum::<f64>()
                / s_b as f64;
            mean > config.detector_threshold
        }
    };
    let stop_satisfied = if multi_image {
        // Mean-probability thresholds for multi-image attacker sets.
        let mean_ok = match config.stop_goal.mode {
            AttackMode::Dodge => mean_goal < MULTI_IMAGE_DODGE_MEAN,
            AttackMode::Impersonate => mean_goal > MULTI_IMAGE_IMPERSONATE_MEAN,
        };
        mean_ok && det_mean_ok
    } else {
        // Single image: any emitted patch reaching the per-attack goal.
        per_sample_success.iter().any(|&s| s)
    };

    Ok(AttackPass {
        probs,
        logits,
        detector_probs,
        ptm_derivs,
        mean_loss_f,
        mean_goal_prob: mean_goal,
        stop_satisfied,
    })
}

fn goal_classes<F: Scalar>(
    surface: &AttackSurface<F>,
    config: &AgnConfig<F>,
    attacker_idx: usize,
) -> Result<(usize, Option<usize>)> {
    let true_class = match surface {
        AttackSurface::Overlay { attacker, .. } => attacker.true_classes[attacker_idx],
        AttackSurface::Direct { true_class } => *true_class,
    };
    match config.stop_goal.mode {
        AttackMode::Dodge => Ok((true_class, None)),
        AttackMode::Impersonate => Ok((true_class, Some(config.stop_goal.target()?))),
    }
}

/// Gradient of the attack objective w.r.t. the generated patches (ascent
/// direction), chained through the classifier, detector, PTM, and overlay.
fn backward_attack<F: Scalar>(
    surface: &AttackSurface<F>,
    classifier: &mut ClassifierModel<F>,
    config: &mut AgnConfig<F>,
    plans: &[OverlayPlan],
    attack: AttackPass<F>,
    pairing: &[usize],
) -> Result<Array4<F>> {
    let s_b = attack.probs.shape()[0];
    let classes = attack.probs.shape()[1];
    let inv_b = F::one() / F::from_f64(s_b as f64);

    // d(mean L_F)/d(logits) via the softmax Jacobian (or directly for the
    // logit-margin loss).
    let mut dlogits = Array2::<F>::zeros((s_b, classes));
    for j in 0..s_b {
        let (true_class, target) = goal_classes(surface, config, pairing[j])?;
        match config.loss {
            AttackLoss::ProbDiff => {
                // u = dL/dp: +1 on summed classes, -1 on the singled-out one.
                let mut u = vec![F::one(); classes];
                match config.stop_goal.mode {
                    AttackMode::Dodge => {
                        u[true_class] = -F::one();
                    }
                    AttackMode::Impersonate => {
                        for (i, v) in u.iter_mut().enumerate() {
                            *v = if i == target.unwrap() { F::one() } else { -F::one() };
                        }
                    }
                }
                let p = attack.probs.index_axis(Axis(0), j);
                let dot = p
                    .iter()
                    .zip(u.iter())
                    .fold(F::zero(), |acc, (&pv, &uv)| acc + pv * uv);
                for k in 0..classes {
                    dlogits[[j, k]] = p[k] * (u[k] - dot) * inv_b;
                }
            }
            AttackLoss::LogitMargin => {
                // Dodge maximizes (max non-true - true); impersonation
                // maximizes -(max non-target - target).
                let row = attack.logits.index_axis(Axis(0), j);
                let (anchor, sign) = match config.stop_goal.mode {
                    AttackMode::Dodge => (true_class, F::one()),
                    AttackMode::Impersonate => (target.unwrap(), -F::one()),
                };
                let mut best = (F::neg_infinity(), 0usize);
                for (i, &l) in row.iter().enumerate() {
                    if i != anchor && l > best.0 {
                        best = (l, i);
                    }
                }
                dlogits[[j, best.1]] = sign * inv_b;
                dlogits[[j, anchor]] = -sign * inv_b;
            }
        }
    }
    let dinputs_cls = classifier.net.backward(
        dlogits
            .into_shape_with_order((s_b, classes, 1, 1))
            .unwrap(),
    );
    classifier.net.zero_grads();

    // Detector contribution: ascend (p_nonadv - p_adv), weight 1.
    let mut dinputs = dinputs_cls;
    if let (Some(det), Some(dp)) = (&mut config.detector, &attack.detector_probs) {
        let mut ddet_logits = Array2::<F>::zeros((s_b, 2));
        for j in 0..s_b {
            let u = [F::one(), -F::one()]; // (non-adv, adv)
            let p = dp.index_axis(Axis(0), j);
            let dot = p[0] * u[0] + p[1] * u[1];
            for k in 0..2 {
                ddet_logits[[j, k]] = p[k] * (u[k] - dot) * inv_b;
            }
        }
        let dfeats = det
            .net
            .backward(ddet_logits.into_shape_with_order((s_b, 2, 1, 1)).unwrap());
        det.net.zero_grads();
        let dtap = classifier
            .net
            .backward_part(classifier.detector_tap, 0, dfeats);
        classifier.net.zero_grads();
        dinputs = dinputs + dtap;
    }

    // Chain back through overlay and PTM into patch space.
    match surface {
        AttackSurface::Direct { .. } => Ok(dinputs),
        AttackSurface::Overlay { .. } => {
            let mut grads: Vec<Array3<F>> = Vec::with_capacity(s_b);
            for j in 0..s_b {
                let g_input = dinputs.index_axis(Axis(0), j).to_owned();
                let mut g_patch = plans[pairing[j]].vjp_to_patch(&g_input);
                if let Some(deriv) = &attack.ptm_derivs[j] {
                    g_patch = &g_patch * deriv;
                }
                grads.push(g_patch);
            }
            let (pc, gh, gw) = (grads[0].shape()[0], grads[0].shape()[1], grads[0].shape()[2]);
            let mut d2 = Array4::<F>::zeros((s_b, pc, gh, gw));
            for (j, g) in grads.into_iter().enumerate() {
                d2.index_axis_mut(Axis(0), j).assign(&g);
            }
            Ok(d2)
        }
    }
}

/// Success test per the digital-attack criteria: dodging needs a
/// misclassification with the true-class probability under the dodge
/// threshold; impersonation needs the target probability above its
/// threshold; a configured detector must also deem the input
/// non-adversarial.
pub fn attack_succeeded<F: Scalar>(
    classifier: &mut ClassifierModel<F>,
    detector: Option<&mut DetectorModel<F>>,
    image: &Image<F>,
    true_class: usize,
    goal: &AttackGoal,
    detector_threshold: f64,
) -> Result<bool> {
    goal.validate()?;
    let probs = classifier.classify(image)?;
    let class_ok = match goal.mode {
        AttackMode::Dodge => {
            probs.argmax() != true_class
                && probs.get(true_class).to_f64_lossy() < goal.dodge_threshold
        }
        AttackMode::Impersonate => {
            probs.get(goal.target()?).to_f64_lossy() > goal.impersonate_threshold
        }
    };
    if !class_ok {
        return Ok(false);
    }
    match detector {
        None => Ok(true),
        Some(det) => {
            let p_nonadv = det.score_images(classifier, std::slice::from_ref(image))?[0];
            Ok(p_nonadv > detector_threshold)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pv(v: Vec<f64>) -> ProbVector<f64> {
        ProbVector::new(Array1::from_vec(v)).unwrap()
    }

    #[test]
    fn untargeted_loss_closed_forms() {
        assert!((loss_f_untargeted(&pv(vec![0.7, 0.2, 0.1]), 0) - (-0.4)).abs() < 1e-12);
        // Uniform over N classes: 1 - 2/N.
        let n = 5;
        let probs = pv(vec![1.0 / n as f64; n]);
        assert!((loss_f_untargeted(&probs, 2) - (1.0 - 2.0 / n as f64)).abs() < 1e-12);
        // p_true = 0 is the maximum.
        assert!((loss_f_untargeted(&pv(vec![0.0, 0.6, 0.4]), 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn targeted_loss_closed_forms() {
        assert!((loss_f_targeted(&pv(vec![0.1, 0.6, 0.3]), 1) - 0.2).abs() < 1e-12);
        assert!((loss_f_targeted(&pv(vec![0.0, 1.0]), 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn targeted_negates_untargeted() {
        let p = pv(vec![0.25, 0.3, 0.45]);
        for t in 0..3 {
            assert!((loss_f_targeted(&p, t) + loss_f_untargeted(&p, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_margin_cases() {
        assert!((cw_logit_loss(&array![2.0f64, 5.0, 1.0], 1) - (-3.0)).abs() < 1e-12);
        assert!((cw_logit_loss(&array![1.5f64, 1.5, 1.5], 0)).abs() < 1e-12);
        // Shift invariance.
        let l = array![0.4f64, -1.2, 3.3, 0.0];
        let shifted = l.mapv(|v| v + 17.5);
        assert!((cw_logit_loss(&l, 2) - cw_logit_loss(&shifted, 2)).abs() < 1e-9);
    }

    #[test]
    fn detector_loss_identities() {
        assert!((detector_evasion_loss(&pv(vec![0.5, 0.5]))).abs() < 1e-12);
        assert!((detector_evasion_loss(&pv(vec![0.9, 0.1])) - (-0.8)).abs() < 1e-12);
        let p = pv(vec![0.3, 0.7]);
        assert!((detector_evasion_loss(&p) - (2.0 * 0.7 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn combine_gradients_worked_example() {
        // d1=(3,4) norm 5, d2=(0,2) norm 2; both rescaled to norm 2:
        // (1.2,1.6) and (0,2); kappa=0.25 -> (0.3, 1.9).
        let d1 = Array4::from_shape_vec((1, 1, 1, 2), vec![3.0f64, 4.0]).unwrap();
        let d2 = Array4::from_shape_vec((1, 1, 1, 2), vec![0.0f64, 2.0]).unwrap();
        let out = combine_gradients(&d1, &d2, 0.25);
        assert!((out[[0, 0, 0, 0]] - 0.3).abs() < 1e-12);
        assert!((out[[0, 0, 0, 1]] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn combine_gradients_endpoints() {
        let d1 = Array4::from_shape_vec((1, 1, 1, 2), vec![3.0f64, 4.0]).unwrap();
        let d2 = Array4::from_shape_vec((1, 1, 1, 2), vec![0.0f64, 2.0]).unwrap();
        let k1 = combine_gradients(&d1, &d2, 1.0);
        assert!((k1[[0, 0, 0, 0]] - 1.2).abs() < 1e-12);
        assert!((k1[[0, 0, 0, 1]] - 1.6).abs() < 1e-12);
        let k0 = combine_gradients(&d1, &d2, 0.0);
        assert!((k0[[0, 0, 0, 0]] - 0.0).abs() < 1e-12);
        assert!((k0[[0, 0, 0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn combine_gradients_equal_norms_plain_blend() {
        let d1 = Array4::from_shape_vec((1, 1, 1, 2), vec![2.0f64, 0.0]).unwrap();
        let d2 = Array4::from_shape_vec((1, 1, 1, 2), vec![0.0f64, 2.0]).unwrap();
        let out = combine_gradients(&d1, &d2, 0.3);
        assert!((out[[0, 0, 0, 0]] - 0.6).abs() < 1e-12);
        assert!((out[[0, 0, 0, 1]] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn combine_gradients_zero_inputs() {
        let z = Array4::<f64>::zeros((1, 1, 1, 3));
        let out = combine_gradients(&z, &z, 0.5);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
