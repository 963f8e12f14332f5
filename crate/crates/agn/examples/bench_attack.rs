// Scratch: attack dynamics probe.
use agn::agn::{train_agn, AgnConfig, AttackSurface, AttackerSet, AttackLoss};
use agn::dataprep::*;
use agn::dataset::LabeledDataset;
use agn::gan::{pretrain_gan, PretrainConfig};
use agn::goal::AttackGoal;
use agn::models::*;

const FACE: usize = 64;

fn main() {
    agn::init_compute();
    let faces = synthetic_face_dataset::<f32>(4, 10, FACE, 100).unwrap();
    for cls_epochs in [4usize, 12] {
        let mut classifier = build_face_classifier::<f32>(4, 32, FACE, false, 7).unwrap();
        train_classifier(&mut classifier, &faces, None, cls_epochs, 16, 1e-3, 3).unwrap();
        let acc = classifier_accuracy(&mut classifier, &faces).unwrap();
        let p0 = classifier.classify(&faces.items()[0].0).unwrap();
        println!("cls_epochs={cls_epochs} acc={acc:.3} p_true(sample)={:.5}", p0.get(faces.items()[0].1));

        let silhouette = default_silhouette();
        let corpus = synthetic_eyeglass_corpus::<f32>(120, &silhouette, 11);
        let glasses = LabeledDataset::new(corpus.into_iter().map(|i| (i, 0usize)).collect(), 1).unwrap();
        let mut generator = build_eyeglass_generator::<f32>(4, 21);
        let mut discriminator = build_eyeglass_discriminator::<f32>(4, 22);
        let cfg = PretrainConfig { epochs: 10, batch_size: 12, ..Default::default() };
        pretrain_gan(&mut generator, &mut discriminator, &glasses, &cfg, 31).unwrap();

        for (loss, lr) in [(AttackLoss::ProbDiff, 2e-4), (AttackLoss::ProbDiff, 1e-3), (AttackLoss::LogitMargin, 2e-4)] {
            let (img, label) = faces.items()[0].clone();
            let attacker = AttackerSet::single(img, label, Some(canonical_alignment(FACE)));
            let surface = AttackSurface::Overlay { attacker, mask: default_silhouette() };
            let mut g = generator.clone();
            let mut d = discriminator.clone();
            let mut cls = classifier.clone();
            let mut cfg = AgnConfig::new(AttackGoal::dodge(), 12);
            cfg.max_epochs = 4;
            cfg.learning_rate = lr;
            cfg.loss = loss;
            let out = train_agn(&surface, &mut g, &mut d, &mut cls, &glasses, &mut cfg, 77).unwrap();
            let probs: Vec<f64> = out.report.records.iter().filter_map(|r| r.goal_prob).collect();
            println!("  loss={loss:?} lr={lr} stopped={} probs={:?}", out.report.stopped_early,
                probs.iter().map(|p| (p*1e4).round()/1e4).collect::<Vec<_>>());
        }
    }
}
