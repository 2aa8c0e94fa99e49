mod common;

use proptest::prelude::*;
use usgan::data::{build_dataset, generate_dataset, split_dataset, PhantomConfig};
use usgan::gan::{
    loss_discriminator, loss_generator, GanConfig, GanModel, GanNetworks, LatentVector, Variant,
};
use usgan::metrics::{frechet_distance, inception_score, FeatureMatrix};
use usgan::nn::{init_parameters, power_iteration, Ctx, ParameterTree, WeightMatrix};
use usgan::optim::{accuracy, train_classifier, train_stage1, train_stage2, TrainConfig};
use usgan::tensor::{
    self, conv2d, conv2d_output_size, conv_transpose2d, conv_transpose2d_output_size, Tensor,
};

fn tiny(variant: &str) -> GanConfig {
    GanConfig {
        nz: 8,
        ngf: 8,
        ndf: 8,
        r1: 16,
        r2: 32,
        sa_resolution: 8,
        ..GanConfig::default()
    }
    .with_variant(variant.parse().unwrap())
}

fn unit(mut u: Vec<f64>) -> Vec<f64> {
    let n = common::dot(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= n);
    u
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one(shape in prop::collection::vec(1usize..5, 1..4), axis_pick in 0usize..4, seed in any::<u64>()) {
        let axis = axis_pick % shape.len();
        let x = Tensor::<f64>::randn(&shape, seed);
        let y = tensor::softmax(&tensor::scale(&x, 10.0), axis).unwrap();
        let sums = tensor::sum(&y, &[axis]).unwrap();
        for s in sums.data() {
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_shapes_are_total(
        h in 1usize..9, w in 1usize..9, k in 1usize..6, stride in 0usize..4, pad in 0usize..4, cin in 1usize..3,
    ) {
        let x = Tensor::<f64>::randn(&[1, cin, h, w], 1);
        let wt = Tensor::<f64>::randn(&[2, cin, k, k], 2);
        let predicted = conv2d_output_size(h, k, stride, pad).and_then(|oh| Ok((oh, conv2d_output_size(w, k, stride, pad)?)));
        match (conv2d(&x, &wt, None, stride, pad), predicted) {
            (Ok(y), Ok((oh, ow))) => prop_assert_eq!(y.shape(), &[1, 2, oh, ow][..]),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "forward {:?} vs formula {:?}", a.map(|t| t.shape().to_vec()), b),
        }
        let wt = Tensor::<f64>::randn(&[cin, 2, k, k], 3);
        let predicted = conv_transpose2d_output_size(h, k, stride, pad)
            .and_then(|oh| Ok((oh, conv_transpose2d_output_size(w, k, stride, pad)?)));
        match (conv_transpose2d(&x, &wt, None, stride, pad), predicted) {
            (Ok(y), Ok((oh, ow))) => prop_assert_eq!(y.shape(), &[1, 2, oh, ow][..]),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "forward {:?} vs formula {:?}", a.map(|t| t.shape().to_vec()), b),
        }
    }

    #[test]
    fn init_is_a_function_of_seed(seed in any::<u64>()) {
        let decls = GanNetworks::new(&tiny("dcgan_sn_sa")).unwrap().d1.declare();
        let a = init_parameters::<f32>(&decls, seed).unwrap();
        let b = init_parameters::<f32>(&decls, seed).unwrap();
        prop_assert_eq!(a.params().count(), b.params().count());
        for ((na, ta), (nb, tb)) in a.params().chain(a.buffers()).zip(b.params().chain(b.buffers())) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta.data(), tb.data());
        }
    }

    // Uses a converged estimate; a short power iteration can undershoot σ
    // when the top two singular values are close.
    #[test]
    fn normalized_weight_does_not_stretch(rows in 1usize..24, cols in 1usize..48, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let data = common::normal(rows * cols, &mut r);
        let w = WeightMatrix::new(rows, cols, data.clone()).unwrap();
        let mut u = unit(common::normal(rows, &mut r));
        let sigma = power_iteration(&w, &mut u, 20_000).unwrap().sigma;
        for _ in 0..8 {
            let a = common::normal(cols, &mut r);
            let wa: Vec<f64> = (0..rows).map(|i| common::dot(&data[i * cols..(i + 1) * cols], &a) / sigma).collect();
            let ratio = (common::dot(&wa, &wa) / common::dot(&a, &a)).sqrt();
            prop_assert!(ratio <= 1.0 + 5e-3, "ratio {}", ratio);
        }
    }

    #[test]
    fn fid_is_symmetric_and_nonnegative(n in 3usize..40, m in 3usize..40, d in 1usize..6, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let a = FeatureMatrix::new(n, d, common::normal(n * d, &mut r)).unwrap();
        let b = FeatureMatrix::new(m, d, common::normal(m * d, &mut r).iter().map(|v| 2.0 * v + 0.5).collect()).unwrap();
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-6, "{} vs {}", ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-6);
    }

    #[test]
    fn inception_score_is_bounded(k in 2usize..6, per_split in 1usize..8, splits in 1usize..5, seed in any::<u64>()) {
        let n = per_split * splits;
        let mut r = common::rng(seed);
        let probs: Vec<f64> = (0..n)
            .flat_map(|_| {
                let e: Vec<f64> = common::normal(k, &mut r).iter().map(|v| (3.0 * v).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(move |v| v / s)
            })
            .collect();
        let (mean, _) = inception_score(&FeatureMatrix::new(n, k, probs).unwrap(), splits).unwrap();
        prop_assert!(mean >= 1.0 - 1e-9 && mean <= k as f64 + 1e-9, "IS {}", mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn splits_keep_subjects_apart(seed in any::<u64>(), repeat in 0usize..20) {
        let config = PhantomConfig { n_diseased: 10, n_healthy: 9, resolution: 32, ..PhantomConfig::default() };
        let ds = build_dataset(&config, 4).unwrap();
        let plan = split_dataset(&ds, seed, repeat).unwrap();
        prop_assert!(plan.train_subjects.iter().all(|s| !plan.test_subjects.contains(s)));
        let paths = |ids: &[usize]| -> Vec<String> {
            ids.iter().flat_map(|&s| (0..10).map(move |v| usgan::data::PhantomDataset::image_path(s, v))).collect()
        };
        let (train, test) = (paths(&plan.train_subjects), paths(&plan.test_subjects));
        prop_assert!(train.iter().all(|p| !test.contains(p)));
        prop_assert_eq!(plan.train_subjects.len() + plan.test_subjects.len(), 19);
    }
}

#[test]
fn power_iteration_reaches_the_svd_oracle_given_enough_iterations() {
    let mut r = common::rng(7);
    for _ in 0..50 {
        use rand::Rng;
        let (m, n) = (r.random_range(1..=64), r.random_range(1..=256));
        let data = common::normal(m * n, &mut r);
        let mut u = unit(common::normal(m, &mut r));
        let w = WeightMatrix::new(m, n, data.clone()).unwrap();
        let est = power_iteration(&w, &mut u, 20_000).unwrap();
        let oracle = nalgebra::DMatrix::from_row_slice(m, n, &data)
            .singular_values()
            .max();
        assert!(
            (est.sigma - oracle).abs() / oracle < 1e-6,
            "{m}x{n}: {} vs {oracle}",
            est.sigma
        );
    }
}

#[test]
fn every_variant_runs_forward_and_backward_finitely() {
    for variant in Variant::all() {
        let config = tiny(&variant.name());
        let mut model = GanModel::<f64>::new(&config, 5).unwrap();
        let nets = GanNetworks::new(&config).unwrap();
        let z = LatentVector::<f64>::sample(3, config.nz, 6).unwrap().z;
        let mut image = nets.g1.forward(&mut Ctx::train(&mut model.g1), &z).unwrap();
        let mut d_tree = &mut model.d1;
        let mut d_net = &nets.d1;
        if let (Some(g2), Some(g2_tree)) = (&nets.g2, model.g2.as_mut()) {
            let z2 = LatentVector::<f64>::sample(3, config.nz, 7).unwrap().z;
            image = g2.forward(&mut Ctx::train(g2_tree), &image, &z2).unwrap();
            d_tree = model.d2.as_mut().unwrap();
            d_net = nets.d2.as_ref().unwrap();
        }
        let d = d_net.forward(&mut Ctx::train(d_tree), &image).unwrap();
        let loss = loss_generator(&d).unwrap();
        assert!(loss.item().unwrap().is_finite(), "{variant}");
        loss.backward().unwrap();
        let trees: Vec<&ParameterTree<f64>> = [Some(&model.g1), model.g2.as_ref()]
            .into_iter()
            .flatten()
            .collect();
        for tree in trees {
            for (name, p) in tree.params() {
                let g = p
                    .grad()
                    .unwrap_or_else(|| panic!("{variant}: no gradient for {name}"));
                assert!(g.iter().all(|v| v.is_finite()), "{variant}: {name}");
            }
        }
    }
}

#[test]
fn equilibrium_losses_sum_to_three_ln2() {
    let half = Tensor::<f64>::from_vec(vec![0.5; 4], &[4, 1]).unwrap();
    let total = loss_discriminator(&half, &half).unwrap().item().unwrap()
        + loss_generator(&half).unwrap().item().unwrap();
    assert!((total - 3.0 * std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn frozen_discriminator_passes_gradient_to_generator_only() {
    let config = tiny("dcgan_sn_sa");
    let mut model = GanModel::<f64>::new(&config, 1).unwrap();
    let nets = GanNetworks::new(&config).unwrap();
    let z = LatentVector::<f64>::sample(2, config.nz, 2).unwrap().z;
    let fake = nets.g1.forward(&mut Ctx::train(&mut model.g1), &z).unwrap();
    let d = nets
        .d1
        .forward(&mut Ctx::frozen(&mut model.d1), &fake)
        .unwrap();
    loss_generator(&d).unwrap().backward().unwrap();
    assert!(model.d1.params().all(|(_, p)| p.grad().is_none()));
    assert!(model.g1.params().all(|(_, p)| p.grad().is_some()));
    let g_names: Vec<&str> = model.g1.params().map(|(n, _)| n).collect();
    assert!(model.d1.params().all(|(n, _)| !g_names.contains(&n)));
}

fn buffer_bits(tree: &ParameterTree<f64>) -> Vec<(String, Vec<u64>)> {
    tree.buffers()
        .map(|(n, t)| {
            (
                n.to_string(),
                t.data().iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect()
}

#[test]
fn only_train_mode_forwards_touch_buffers() {
    let config = tiny("dcgan_sn_sa_ours");
    let mut model = GanModel::<f64>::new(&config, 3).unwrap();
    for tree in [
        &model.g1,
        &model.d1,
        model.g2.as_ref().unwrap(),
        model.d2.as_ref().unwrap(),
    ] {
        for (name, _) in tree.buffers() {
            assert!(
                ["/running_mean", "/running_var", "/sn_u"]
                    .iter()
                    .any(|s| name.ends_with(s)),
                "unexpected buffer {name}"
            );
        }
    }
    let nets = GanNetworks::new(&config).unwrap();
    let z = LatentVector::<f64>::sample(2, config.nz, 2).unwrap().z;
    let before = buffer_bits(&model.d1);
    let g_before = buffer_bits(&model.g1);
    let img = nets.g1.forward(&mut Ctx::eval(&mut model.g1), &z).unwrap();
    nets.d1
        .forward(&mut Ctx::eval(&mut model.d1), &img)
        .unwrap();
    assert_eq!(buffer_bits(&model.d1), before);
    assert_eq!(buffer_bits(&model.g1), g_before);
    model.synthesize(2, 9).unwrap();
    assert_eq!(buffer_bits(&model.g1), g_before);

    // A backward pass and an optimizer step leave buffers alone; only the
    // train-mode forward moved them.
    nets.d1
        .forward(&mut Ctx::train(&mut model.d1), &img)
        .unwrap();
    let after_forward = buffer_bits(&model.d1);
    assert_ne!(after_forward, before);
    let d = nets
        .d1
        .forward(&mut Ctx::frozen(&mut model.d1), &img.detached(true))
        .unwrap();
    let moved = buffer_bits(&model.d1);
    loss_generator(&d).unwrap().backward().unwrap();
    assert_eq!(buffer_bits(&model.d1), moved);
}

#[test]
fn refined_output_depends_on_second_latent() {
    let config = tiny("dcgan_ours");
    let phantom = PhantomConfig {
        n_diseased: 2,
        n_healthy: 2,
        resolution: 32,
        ..PhantomConfig::default()
    };
    let imgs: Vec<_> = build_dataset(&phantom, 1)
        .unwrap()
        .all_images()
        .into_iter()
        .map(|i| i.image)
        .collect();
    let small = usgan::cli::commands::resize_all(imgs.clone(), 16).unwrap();
    let (s1, _) = train_stage1::<f32>(&small, &config, &TrainConfig::gan(3), 1).unwrap();
    let (mut model, _) = train_stage2::<f32>(&s1, &imgs, &config, &TrainConfig::gan(3), 2).unwrap();
    let nets = GanNetworks::new(&config).unwrap();
    let z1 = LatentVector::<f32>::sample(2, config.nz, 10).unwrap().z;
    let coarse = nets.g1.forward(&mut Ctx::eval(&mut model.g1), &z1).unwrap();
    let g2 = nets.g2.as_ref().unwrap();
    let tree = model.g2.as_mut().unwrap();
    let za = LatentVector::<f32>::sample(2, config.nz, 11).unwrap().z;
    let zb = LatentVector::<f32>::sample(2, config.nz, 12).unwrap().z;
    let a = g2.forward(&mut Ctx::eval(tree), &coarse, &za).unwrap();
    let b = g2.forward(&mut Ctx::eval(tree), &coarse, &zb).unwrap();
    let linf = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(linf > 0.0);
}

#[test]
fn dataset_generation_is_reproducible() {
    let config = PhantomConfig {
        n_diseased: 2,
        n_healthy: 2,
        resolution: 32,
        ..PhantomConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&config, 42, a.path()).unwrap();
    generate_dataset(&config, 42, b.path()).unwrap();
    let manifest = |d: &std::path::Path| std::fs::read(d.join(usgan::data::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest(a.path()), manifest(b.path()));
    for s in 0..4 {
        for v in 0..10 {
            let p = usgan::data::PhantomDataset::image_path(s, v);
            assert_eq!(
                std::fs::read(a.path().join(&p)).unwrap(),
                std::fs::read(b.path().join(&p)).unwrap()
            );
        }
    }
}

#[test]
fn phantom_classes_are_separable() {
    // 27 + 27 subjects: holding out 7 per class leaves 400 training images.
    let config = PhantomConfig {
        n_diseased: 27,
        n_healthy: 27,
        resolution: 32,
        ..PhantomConfig::default()
    };
    let ds = build_dataset(&config, 55).unwrap();
    let plan = split_dataset(&ds, 5, 0).unwrap();
    let (train, test) = (
        ds.images_of(&plan.train_subjects),
        ds.images_of(&plan.test_subjects),
    );
    assert_eq!((train.len(), test.len()), (400, 140));
    let (mut model, _) =
        train_classifier::<f32>(&train, None, &TrainConfig::classifier(600), 9).unwrap();
    let images: Vec<_> = test.iter().map(|i| i.image.clone()).collect();
    let truth: Vec<usize> = test.iter().map(|i| i.label.index()).collect();
    let acc = accuracy(&model.predict(&images).unwrap().labels(), &truth);
    assert!(acc >= 0.9, "held-out accuracy {acc}");
}
