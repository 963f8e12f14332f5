//! Finite-difference checks for every layer's backward pass and for the
//! composite attack gradient (classifier loss through overlay and
//! luminance mapping back to the patch).

use agn::geometry::Homography;
use agn::image::{Image, Mask};
use agn::models::{build_digit_discriminator, build_eyeglass_generator};
use agn::nn::{Init, LayerSpec, Mode, Net};
use agn::overlay::OverlayPlan;
use agn::physical::{apply_ptm_chw, LuminanceModel};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar probe loss: fixed random projection of the network output.
fn probe_loss(y: &Array4<f64>, w: &Array4<f64>) -> f64 {
    y.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

/// Check dL/dx against central differences on a sample of coordinates.
fn check_input_grad(specs: Vec<LayerSpec>, input_shape: (usize, usize, usize, usize), tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut net = Net::<f64>::build(specs, Init::He, &mut rng);
    let x = Array4::from_shape_fn(input_shape, |_| rng.gen::<f64>() * 2.0 - 1.0);
    let y = net.forward(x.clone(), Mode::Train);
    let w = Array4::from_shape_fn(y.raw_dim(), |_| rng.gen::<f64>() * 2.0 - 1.0);
    let analytic = net.backward(w.clone());
    net.zero_grads();

    let eps = 1e-5;
    let total = x.len();
    let probes: Vec<usize> = (0..30).map(|i| (i * 7919) % total).collect();
    for &flat in &probes {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[flat] += eps;
        let mut xm = x.clone();
        xm.as_slice_mut().unwrap()[flat] -= eps;
        let lp = probe_loss(&net.forward(xp, Mode::Train), &w);
        let lm = probe_loss(&net.forward(xm, Mode::Train), &w);
        let fd = (lp - lm) / (2.0 * eps);
        let an = analytic.as_slice().unwrap()[flat];
        let denom = an.abs().max(fd.abs()).max(1e-4);
        assert!(
            (fd - an).abs() / denom < tol,
            "input grad mismatch at {flat}: fd={fd} analytic={an}"
        );
    }
}

/// Check dL/dparam against central differences on a sample of parameters.
fn check_param_grad(specs: Vec<LayerSpec>, input_shape: (usize, usize, usize, usize), tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = Net::<f64>::build(specs, Init::He, &mut rng);
    let x = Array4::from_shape_fn(input_shape, |_| rng.gen::<f64>() * 2.0 - 1.0);
    let y = net.forward(x.clone(), Mode::Train);
    let w = Array4::from_shape_fn(y.raw_dim(), |_| rng.gen::<f64>() * 2.0 - 1.0);
    net.zero_grads();
    net.backward(w.clone());

    // Collect analytic grads, then probe parameters one at a time.
    let mut analytic: Vec<(usize, usize, f64)> = Vec::new(); // (param idx, flat, grad)
    {
        let mut pi = 0;
        net.visit_params_mut(|p| {
            let n = p.value.len();
            for k in 0..3.min(n) {
                let flat = (k * 2741) % n;
                analytic.push((pi, flat, p.grad.as_slice().unwrap()[flat]));
            }
            pi += 1;
        });
    }
    let eps = 1e-5;
    for &(pi, flat, an) in &analytic {
        let mut set = |delta: f64, net: &mut Net<f64>| {
            let mut idx = 0;
            net.visit_params_mut(|p| {
                if idx == pi {
                    p.value.as_slice_mut().unwrap()[flat] += delta;
                }
                idx += 1;
            });
        };
        set(eps, &mut net);
        let lp = probe_loss(&net.forward(x.clone(), Mode::Train), &w);
        set(-2.0 * eps, &mut net);
        let lm = probe_loss(&net.forward(x.clone(), Mode::Train), &w);
        set(eps, &mut net);
        let fd = (lp - lm) / (2.0 * eps);
        let denom = an.abs().max(fd.abs()).max(1e-4);
        assert!(
            (fd - an).abs() / denom < tol,
            "param grad mismatch p{pi}[{flat}]: fd={fd} analytic={an}"
        );
    }
}

#[test]
fn conv_gradients() {
    let specs = vec![LayerSpec::Conv {
        in_ch: 3,
        out_ch: 4,
        kernel: 3,
        stride: 2,
        pad: 1,
    }];
    check_input_grad(specs.clone(), (2, 3, 9, 9), 1e-5);
    check_param_grad(specs, (2, 3, 9, 9), 1e-5);
}

#[test]
fn conv_wide_kernel_gradients() {
    let specs = vec![LayerSpec::Conv {
        in_ch: 2,
        out_ch: 3,
        kernel: 6,
        stride: 2,
        pad: 2,
    }];
    check_input_grad(specs.clone(), (2, 2, 12, 16), 1e-5);
    check_param_grad(specs, (2, 2, 12, 16), 1e-5);
}

#[test]
fn deconv_gradients() {
    let specs = vec![LayerSpec::Deconv {
        in_ch: 4,
        out_ch: 2,
        kernel: 6,
        stride: 2,
        pad: 2,
    }];
    check_input_grad(specs.clone(), (2, 4, 5, 7), 1e-5);
    check_param_grad(specs, (2, 4, 5, 7), 1e-5);
}

#[test]
fn linear_gradients() {
    let specs = vec![LayerSpec::Linear {
        in_dim: 3 * 4 * 4,
        out_dim: 5,
    }];
    check_input_grad(specs.clone(), (3, 3, 4, 4), 1e-6);
    check_param_grad(specs, (3, 3, 4, 4), 1e-6);
}

#[test]
fn batchnorm_gradients() {
    let specs = vec![LayerSpec::BatchNorm { channels: 3 }];
    check_input_grad(specs.clone(), (4, 3, 5, 5), 1e-4);
    check_param_grad(specs, (4, 3, 5, 5), 1e-4);
}

#[test]
fn activation_gradients() {
    for spec in [
        LayerSpec::Relu,
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Tanh,
        LayerSpec::UnitTanh,
        LayerSpec::Sigmoid,
    ] {
        check_input_grad(vec![spec], (2, 3, 4, 4), 1e-4);
    }
}

#[test]
fn maxpool_gradients() {
    let specs = vec![LayerSpec::MaxPool { kernel: 2, stride: 2 }];
    check_input_grad(specs, (2, 3, 8, 8), 1e-5);
}

#[test]
fn unit_sphere_gradients() {
    let specs = vec![
        LayerSpec::Linear { in_dim: 8, out_dim: 6 },
        LayerSpec::UnitSphere,
    ];
    check_input_grad(specs, (3, 8, 1, 1), 1e-5);
}

#[test]
fn stacked_generator_style_gradients() {
    let specs = vec![
        LayerSpec::Linear { in_dim: 6, out_dim: 8 * 2 * 3 },
        LayerSpec::Reshape { channels: 8, height: 2, width: 3 },
        LayerSpec::BatchNorm { channels: 8 },
        LayerSpec::Relu,
        LayerSpec::Deconv { in_ch: 8, out_ch: 4, kernel: 6, stride: 2, pad: 2 },
        LayerSpec::BatchNorm { channels: 4 },
        LayerSpec::Relu,
        LayerSpec::Deconv { in_ch: 4, out_ch: 3, kernel: 6, stride: 2, pad: 2 },
        LayerSpec::UnitTanh,
    ];
    check_input_grad(specs.clone(), (2, 6, 1, 1), 1e-4);
    check_param_grad(specs, (2, 6, 1, 1), 1e-4);
}

#[test]
fn discriminator_style_gradients() {
    let specs = vec![
        LayerSpec::Conv { in_ch: 3, out_ch: 4, kernel: 6, stride: 2, pad: 2 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Conv { in_ch: 4, out_ch: 8, kernel: 6, stride: 2, pad: 2 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Linear { in_dim: 8 * 3 * 4, out_dim: 1 },
        LayerSpec::Sigmoid,
    ];
    check_input_grad(specs.clone(), (2, 3, 12, 16), 1e-4);
    check_param_grad(specs, (2, 3, 12, 16), 1e-4);
}

/// Gradient of the generator objective w.r.t. generated pixels matches
/// finite differences of loss_g.
#[test]
fn loss_g_input_gradient_matches_finite_differences() {
    let mut d = build_digit_discriminator::<f64>(4, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gen = Array4::from_shape_fn((3, 1, 28, 28), |_| rng.gen::<f64>());
    // Analytic: mean-scaled; rescale to the sum convention for comparison.
    let analytic = {
        // Gradient of the sum-form loss: d loss_g / d score = -1/(1-d).
        let scores = d.net.forward(gen.clone(), Mode::Train);
        let mut dscores = Array4::<f64>::zeros(scores.raw_dim());
        for (g, &s) in dscores.iter_mut().zip(scores.iter()) {
            *g = -1.0 / (1.0 - s).max(1e-7);
        }
        let di = d.net.backward(dscores);
        d.net.zero_grads();
        di
    };
    let eps = 1e-6;
    for probe in 0..20 {
        let flat = (probe * 10007) % gen.len();
        let mut gp = gen.clone();
        gp.as_slice_mut().unwrap()[flat] += eps;
        let mut gm = gen.clone();
        gm.as_slice_mut().unwrap()[flat] -= eps;
        let lp = agn::gan::loss_g(&mut d, &gp).unwrap();
        let lm = agn::gan::loss_g(&mut d, &gm).unwrap();
        let fd = (lp - lm) / (2.0 * eps);
        let an = analytic.as_slice().unwrap()[flat];
        let denom = an.abs().max(fd.abs()).max(1e-6);
        assert!(
            (fd - an).abs() / denom < 1e-3,
            "loss_g grad at {flat}: fd={fd} analytic={an}"
        );
    }
}

/// Composite check: a scalar function of overlay output differentiated to
/// patch values matches central finite differences, through the projective
/// alignment and the luminance polynomial.
#[test]
fn overlay_ptm_composite_gradient() {
    let mask = Mask::from_fn(8, 12, |r, c| (2..6).contains(&r) && (1..11).contains(&c)).unwrap();
    let h = Homography::scale_then_translate(1.4, 3.0, 2.0);
    let plan = OverlayPlan::new(&mask, Some(&h), 20, 24).unwrap();
    let model = LuminanceModel {
        level: "test".into(),
        coeffs: [
            [0.05, 0.8, 0.1, -0.05],
            [0.0, 0.9, 0.05, 0.0],
            [0.02, 0.7, 0.0, 0.1],
        ],
        residual_rms: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = Array3::from_shape_fn((3, 20, 24), |_| rng.gen::<f64>());
    let patch = Array3::from_shape_fn((3, 8, 12), |_| rng.gen::<f64>() * 0.8 + 0.1);
    let w = Array3::from_shape_fn((3, 20, 24), |_| rng.gen::<f64>() * 2.0 - 1.0);

    let forward = |p: &Array3<f64>| -> f64 {
        let (mapped, _) = apply_ptm_chw(p, &model);
        let out = plan.apply_chw(&base, &mapped).unwrap();
        out.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
    };
    // Analytic: VJP through overlay then PTM derivative.
    let (_, deriv) = apply_ptm_chw(&patch, &model);
    let g_patch = {
        let g = plan.vjp_to_patch(&w);
        &g * &deriv
    };
    let eps = 1e-6;
    for probe in 0..40 {
        let flat = (probe * 131) % patch.len();
        let mut pp = patch.clone();
        pp.as_slice_mut().unwrap()[flat] += eps;
        let mut pm = patch.clone();
        pm.as_slice_mut().unwrap()[flat] -= eps;
        let fd = (forward(&pp) - forward(&pm)) / (2.0 * eps);
        let an = g_patch.as_slice().unwrap()[flat];
        let denom = an.abs().max(fd.abs()).max(1e-6);
        assert!(
            (fd - an).abs() / denom < 1e-3,
            "composite grad at {flat}: fd={fd} analytic={an}"
        );
    }
}

/// The warped overlay agrees with an independently written warping oracle.
#[test]
fn warped_overlay_matches_independent_oracle() {
    let mask = Mask::from_fn(16, 44, |r, c| ((r as i64 - 8).pow(2) + (c as i64 - 22).pow(2)) < 120)
        .unwrap();
    let truth = Homography::from_correspondences(&[
        ((0.0, 0.0), (40.0, 30.0)),
        ((0.0, 43.0), (42.0, 95.0)),
        ((15.0, 0.0), (65.0, 28.0)),
        ((15.0, 43.0), (63.0, 92.0)),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let base_img = Image::<f64>::from_data_unchecked(Array3::from_shape_fn(
        (112, 112, 3),
        |_| rng.gen::<f64>(),
    ));
    let patch_img = Image::<f64>::from_data_unchecked(Array3::from_shape_fn(
        (16, 44, 3),
        |_| rng.gen::<f64>(),
    ));
    let out = agn::overlay::overlay(&base_img, &patch_img, &mask, Some(&truth)).unwrap();

    // Oracle: direct inverse-map bilinear resampling written from scratch.
    let inv = truth.inverse().unwrap();
    let mut checked = 0;
    for br in 0..112 {
        for bc in 0..112 {
            let (pr, pc) = inv.apply(br as f64, bc as f64);
            // Strict interior of the mask only (away from the coverage
            // boundary where thresholding decides ownership).
            let (r0, c0) = (pr.floor() as isize, pc.floor() as isize);
            let corners_in = (0..4).all(|k| {
                let rr = r0 + (k / 2);
                let cc = c0 + (k % 2);
                rr >= 0
                    && cc >= 0
                    && (rr as usize) < 16
                    && (cc as usize) < 44
                    && mask.get(rr as usize, cc as usize)
            });
            if !corners_in {
                continue;
            }
            let (fr, fc) = (pr - r0 as f64, pc - c0 as f64);
            for ch in 0..3 {
                let v00 = patch_img.data()[[r0 as usize, c0 as usize, ch]];
                let v01 = patch_img.data()[[r0 as usize, c0 as usize + 1, ch]];
                let v10 = patch_img.data()[[r0 as usize + 1, c0 as usize, ch]];
                let v11 = patch_img.data()[[r0 as usize + 1, c0 as usize + 1, ch]];
                let expect = v00 * (1.0 - fr) * (1.0 - fc)
                    + v01 * (1.0 - fr) * fc
                    + v10 * fr * (1.0 - fc)
                    + v11 * fr * fc;
                let got = out.data()[[br, bc, ch]];
                assert!(
                    (got - expect).abs() < 1e-6,
                    "({br},{bc},{ch}): got {got} want {expect}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 300, "oracle compared only {checked} samples");
}

/// Eyeglass generator output stays in [0,1] for random latents, and the
/// digit discriminator output stays in (0,1).
#[test]
fn generator_range_and_discriminator_range() {
    let mut g = build_eyeglass_generator::<f64>(4, 3);
    let z = agn::latent::sample_latents::<f64>(6, 25, 123).unwrap();
    let out = g.generate(&z, Mode::Train).unwrap();
    assert_eq!(out.shape(), &[6, 3, 64, 176]);
    assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));

    let mut d = build_digit_discriminator::<f64>(4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array4::from_shape_fn((5, 1, 28, 28), |_| rng.gen::<f64>());
    let scores = d.score(&x, Mode::Eval);
    assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
}
