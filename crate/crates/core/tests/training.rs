use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stylespace_core::discriminator::{Conditioning, DiscriminatorConfig, StyleDiscriminator};
use stylespace_core::generator::{GeneratorConfig, StyleGenerator};
use stylespace_core::gram::{BackboneConfig, GramExtractor, PreprocessSpec};
use stylespace_core::nn::gradcheck::check_params;
use stylespace_core::nn::{normal_matrix, Module};
use stylespace_core::style_space::{EmbeddingModel, FitOptions, StyleStore};
use stylespace_core::synthetic;
use stylespace_core::training::losses::{
    accumulate_discriminator_loss, accumulate_generator_loss, accumulate_r1, adversarial_losses, r1_value,
};
use stylespace_core::training::{Checkpoint, Trainer, TrainingConfig, TrainingSet, Variant};
use stylespace_core::Error;

fn tiny_pair(conditioning: Conditioning, seed: u64) -> (StyleGenerator<f64>, StyleDiscriminator<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (conditioning != Conditioning::None).then_some(3);
    let g = StyleGenerator::new(
        GeneratorConfig {
            latent_dim: 4,
            w_dim: 5,
            mapping_layers: 8,
            style_dim: k,
            channels: vec![4, 3],
            mapping_lr_mult: 0.01,
            style_modulations: 4,
            adain_eps: 1e-8,
        },
        &mut rng,
    )
    .unwrap();
    let mut d = StyleDiscriminator::new(
        DiscriminatorConfig {
            resolution: 8,
            channels: vec![3],
            feature_dim: 4,
            conditioning,
            style_dim: k,
        },
        &mut rng,
    )
    .unwrap();
    if let Some(p) = d.projection_mut() {
        p.value = normal_matrix(3, 4, 0.5, &mut rng);
    }
    (g, d)
}

fn view(v: &Option<Array2<f64>>) -> Option<ndarray::ArrayView2<'_, f64>> {
    v.as_ref().map(|v| v.view())
}

fn batch(seed: u64, k: Option<usize>) -> (Array4<f64>, Option<Array2<f64>>, Array2<f64>, Option<Array2<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = normal_matrix::<f64, _>(2, 192, 0.4, &mut rng)
        .into_shape_with_order((2, 3, 8, 8))
        .unwrap();
    let rv = k.map(|k| normal_matrix(2, k, 1.0, &mut rng));
    let z = normal_matrix(2, 4, 1.0, &mut rng);
    let fv = k.map(|k| normal_matrix(2, k, 1.0, &mut rng));
    (real, rv, z, fv)
}

#[test]
fn generator_loss_gradient_matches_central_differences() {
    for cond in [Conditioning::Projection, Conditioning::Concat, Conditioning::None] {
        let (mut g, mut d) = tiny_pair(cond, 1);
        let k = g.config().style_dim;
        let (real, rv, z, fv) = batch(2, k);
        g.zero_grad();
        d.zero_grad();
        accumulate_generator_loss(&mut g, &mut d, z.view(), view(&fv)).unwrap();
        assert!(d.params().iter().all(|(_, p)| p.grad.iter().all(|&x| x == 0.0)));
        let loss = |g: &StyleGenerator<f64>| {
            adversarial_losses(g, &d, real.view(), view(&rv), z.view(), view(&fv)).unwrap().1
        };
        let report = check_params(&mut g, loss, 1e-5, 6, 1e-6);
        assert!(report.max_rel_err < 1e-3, "{cond:?}: {report:?}");
    }
}

#[test]
fn discriminator_loss_gradient_matches_central_differences() {
    for cond in [Conditioning::Projection, Conditioning::Concat] {
        let (g, mut d) = tiny_pair(cond, 3);
        let (real, rv, z, fv) = batch(4, Some(3));
        let fake = g.synthesize(z.view(), fv.as_ref().map(|v| v.view())).unwrap();
        d.zero_grad();
        accumulate_discriminator_loss(
            &mut d,
            real.view(),
            rv.as_ref().map(|v| v.view()),
            fake.view(),
            fv.as_ref().map(|v| v.view()),
        )
        .unwrap();
        let loss = |d: &StyleDiscriminator<f64>| {
            adversarial_losses(&g, d, real.view(), rv.as_ref().map(|v| v.view()), z.view(), fv.as_ref().map(|v| v.view()))
                .unwrap()
                .0
        };
        let report = check_params(&mut d, loss, 1e-5, 6, 1e-6);
        assert!(report.max_rel_err < 1e-3, "{cond:?}: {report:?}");
    }
}

#[test]
fn r1_gradient_matches_central_differences_of_the_penalty() {
    for (seed, cond) in [(5, Conditioning::Projection), (6, Conditioning::Concat), (7, Conditioning::None), (8, Conditioning::Projection)] {
        let (_, mut d) = tiny_pair(cond, seed);
        let (real, rv, _, _) = batch(seed + 10, (cond != Conditioning::None).then_some(3));
        d.zero_grad();
        let value = accumulate_r1(&mut d, real.view(), view(&rv), 10.0).unwrap();
        let direct = r1_value(&mut d.clone(), real.view(), view(&rv), 10.0).unwrap();
        assert!((value - direct).abs() < 1e-12);
        let loss = |d: &StyleDiscriminator<f64>| r1_value(&mut d.clone(), real.view(), view(&rv), 10.0).unwrap();
        let report = check_params(&mut d, loss, 1e-5, 6, 1e-6);
        assert!(report.max_rel_err < 1e-3, "{cond:?}: {report:?}");
    }
}

#[test]
fn zero_logits_give_closed_form_losses() {
    let (g, mut d) = tiny_pair(Conditioning::Projection, 7);
    for (name, p) in d.params_mut() {
        if name.starts_with("head") || name == "projection" {
            p.value.fill(0.0);
        }
    }
    let (real, rv, z, fv) = batch(8, Some(3));
    let (ld, lg) = adversarial_losses(&g, &d, real.view(), rv.as_ref().map(|v| v.view()), z.view(), fv.as_ref().map(|v| v.view())).unwrap();
    assert!((ld - 1.3862943611198906).abs() < 1e-12);
    assert!((lg - 0.6931471805599453).abs() < 1e-12);
}

struct Fixture {
    set: TrainingSet<f32>,
    model: EmbeddingModel<f32>,
}

/// Small embedded synthetic set; the embedding is fit on every image.
fn fixture(n: usize) -> Fixture {
    let samples = synthetic::dataset(n, 32, 9);
    let extractor = GramExtractor::<f32>::load(&BackboneConfig::seeded(0), PreprocessSpec::with_resolution(32)).unwrap();
    let mut descriptors = Array2::<f32>::zeros((n, extractor.descriptor_len()));
    for (mut row, s) in descriptors.rows_mut().into_iter().zip(&samples) {
        row.assign(&extractor.gram_descriptor(&s.id, &s.image).unwrap().values);
    }
    let model = EmbeddingModel::fit(descriptors.view(), FitOptions::default()).unwrap();
    let raw = model.project_rows(descriptors.view()).unwrap();
    let vectors = model.standardization().apply_rows(raw.view());
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let store = StyleStore::new(ids.clone(), vectors).unwrap();
    let rasters: Vec<_> = samples.into_iter().map(|s| s.image).collect();
    Fixture {
        set: TrainingSet::from_rasters(ids, &rasters, Some(store)).unwrap(),
        model,
    }
}

fn small_config(variant: Variant, steps: usize) -> TrainingConfig {
    TrainingConfig {
        variant,
        steps,
        batch_size: 4,
        log_every: 5,
        latent_dim: 8,
        w_dim: 8,
        generator_channels: vec![8, 8, 8, 4],
        discriminator_channels: vec![4, 8, 8],
        feature_dim: 8,
        ..TrainingConfig::default()
    }
}

#[test]
fn every_real_batch_pairs_images_with_their_stored_vectors() {
    let f = fixture(24);
    let store = f.set.styles().unwrap().clone();
    let mut trainer = Trainer::new(small_config(Variant::Controlled, 10), f.set, Some(f.model)).unwrap();
    for _ in 0..15 {
        let b = trainer.next_real_batch();
        trainer.verify_pairing(&b).unwrap();
        for (row, id) in b.styles.as_ref().unwrap().rows().into_iter().zip(&b.ids) {
            assert_eq!(row, store.get(id).unwrap().values.view());
        }
    }
    let mut b = trainer.next_real_batch();
    b.ids.swap(0, 1);
    if b.styles.as_ref().unwrap().row(0) != b.styles.as_ref().unwrap().row(1) {
        assert!(matches!(trainer.verify_pairing(&b), Err(Error::State(_))));
    }
}

#[test]
fn variants_build_the_expected_networks() {
    let f = fixture(24);
    let vanilla = Trainer::new(small_config(Variant::Vanilla, 1), f.set.clone(), Some(f.model.clone())).unwrap();
    assert!(!vanilla.generator().is_conditioned());
    assert!(vanilla.generator().params().iter().all(|(n, _)| !n.starts_with("mapping.style")));
    assert!(!vanilla.discriminator().has_style_parameters());
    assert!(vanilla.conditioning().is_none());

    let concat = Trainer::new(small_config(Variant::ConcatDisc, 1), f.set.clone(), Some(f.model.clone())).unwrap();
    assert_eq!(concat.discriminator().conditioning(), Conditioning::Concat);

    let k = f.model.k();
    let mut random = Trainer::new(small_config(Variant::RandomStyle, 3), f.set.clone(), Some(f.model.clone())).unwrap();
    let assigned = random.conditioning().unwrap().clone();
    assert_eq!(assigned.dim(), k);
    assert_eq!(assigned.ids(), f.set.ids());
    assert_ne!(assigned.vectors(), f.set.styles().unwrap().vectors());
    random.run(None, |_, _| {}).unwrap();
    assert_eq!(random.conditioning().unwrap().vectors(), assigned.vectors());

    let unembedded = TrainingSet::new(f.set.ids().to_vec(), f.set.images().clone(), None).unwrap();
    assert!(matches!(
        Trainer::new(small_config(Variant::Controlled, 1), unembedded.clone(), None),
        Err(Error::Input(_))
    ));
    let cfg = TrainingConfig {
        style_dim: Some(6),
        ..small_config(Variant::RandomStyle, 1)
    };
    assert_eq!(Trainer::new(cfg, unembedded, None).unwrap().generator().config().style_dim, Some(6));
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let f = fixture(16);
    let run = || {
        let mut t = Trainer::new(small_config(Variant::Controlled, 3), f.set.clone(), Some(f.model.clone())).unwrap();
        t.run(None, |_, _| {}).unwrap();
        t.generator().params().iter().map(|(_, p)| p.value.sum()).collect::<Vec<f32>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoints_round_trip_atomically() {
    let f = fixture(16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut t = Trainer::new(small_config(Variant::Controlled, 5), f.set.clone(), Some(f.model.clone())).unwrap();
    t.run(Some(&path), |_, _| {}).unwrap();
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1, "temporary files left behind");
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    let original = t.checkpoint();
    assert_eq!(loaded.step, 5);
    assert_eq!(loaded.history, original.history);
    assert_eq!(loaded.config, original.config);
    assert_eq!(loaded.dataset_fingerprint, f.set.fingerprint());
    assert_eq!(loaded.embedding.as_ref().unwrap().k(), loaded.style_dim().unwrap());
    let z = Array2::<f32>::ones((2, 8));
    let v = loaded.styles.as_ref().unwrap().vectors().slice(ndarray::s![..2, ..]).to_owned();
    assert_eq!(
        loaded.generator.synthesize(z.view(), Some(v.view())).unwrap(),
        original.generator.synthesize(z.view(), Some(v.view())).unwrap()
    );
    std::fs::write(&path, b"not a tar").unwrap();
    assert!(Checkpoint::<f32>::load(&path).is_err());
}

#[test]
fn divergence_rolls_back_to_the_last_good_checkpoint() {
    let f = fixture(16);
    let mut cfg = small_config(Variant::Controlled, 40);
    cfg.log_every = 1;
    cfg.generator_optimizer.learning_rate = 1e30;
    cfg.discriminator_optimizer.learning_rate = 1e30;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut t = Trainer::new(cfg, f.set, Some(f.model)).unwrap();
    let err = t.run(Some(&path), |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    let saved = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(saved.step, t.step_count());
    assert!(saved.history.iter().all(|r| r.d_loss.is_finite() && r.g_loss.is_finite()));
    assert!(saved.generator.params().iter().all(|(_, p)| p.value.iter().all(|v| v.is_finite())));
}

#[test]
fn two_hundred_step_smoke_run_stays_finite() {
    let f = fixture(96);
    let cfg = TrainingConfig {
        steps: 200,
        log_every: 10,
        ..TrainingConfig::default()
    };
    let mut t = Trainer::new(cfg, f.set, Some(f.model)).unwrap();
    t.run(None, |_, s| assert!(s.d_loss.is_finite() && s.g_loss.is_finite())).unwrap();
    assert_eq!(t.history().len(), 20);
    assert!(t.history().iter().all(|r| r.d_loss.is_finite()));
}
