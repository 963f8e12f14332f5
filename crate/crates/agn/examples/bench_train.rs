// Scratch benchmark (not shipped): full digit-classifier training run.
use agn::dataset::LabeledDataset;
use agn::mnist::load_mnist;
use agn::models::{build_digit_classifier, classifier_accuracy, train_classifier};
use std::time::Instant;

fn main() {
    agn::init_compute();
    let mnist = load_mnist::<f32>("data/mnist").unwrap();
    // 55k/5k split per the training protocol.
    let train = LabeledDataset::new(
        mnist.train.items().iter().take(55000).cloned().collect(),
        10,
    )
    .unwrap();
    let mut model = build_digit_classifier::<f32>(42);
    let t0 = Instant::now();
    train_classifier(&mut model, &train, None, 4, 128, 1e-3, 7).unwrap();
    println!("phase1 4 epochs: {:.0}s", t0.elapsed().as_secs_f32());
    let acc = classifier_accuracy(&mut model, &mnist.test).unwrap();
    println!("acc after 4 epochs @1e-3: {:.4}", acc);
    let t0 = Instant::now();
    train_classifier(&mut model, &train, None, 2, 128, 2e-4, 8).unwrap();
    println!("phase2 2 epochs: {:.0}s", t0.elapsed().as_secs_f32());
    let acc = classifier_accuracy(&mut model, &mnist.test).unwrap();
    println!("acc after +2 epochs @2e-4: {:.4}", acc);
}
