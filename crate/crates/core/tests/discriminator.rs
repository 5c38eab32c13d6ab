use ndarray::{Array2, Array4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stylespace_core::discriminator::{Conditioning, DiscriminatorConfig, StyleDiscriminator};
use stylespace_core::nn::gradcheck::{check_params, numeric_gradient, relative_error};
use stylespace_core::nn::{normal_matrix, Module};

fn tiny(conditioning: Conditioning) -> DiscriminatorConfig {
    DiscriminatorConfig {
        resolution: 8,
        channels: vec![3],
        feature_dim: 5,
        conditioning,
        style_dim: (conditioning != Conditioning::None).then_some(3),
    }
}

fn build(conditioning: Conditioning, seed: u64) -> StyleDiscriminator<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = StyleDiscriminator::new(tiny(conditioning), &mut rng).unwrap();
    if let Some(v) = d.projection_mut() {
        v.value = normal_matrix(3, 5, 1.0, &mut rng);
    }
    d
}

fn images(batch: usize, seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal_matrix::<f64, _>(batch, 3 * 64, 0.5, &mut rng)
        .into_shape_with_order((batch, 3, 8, 8))
        .unwrap()
}

fn styles(batch: usize, seed: u64) -> Array2<f64> {
    normal_matrix(batch, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn parameter_gradients_match_central_differences() {
    for cond in [Conditioning::Projection, Conditioning::Concat, Conditioning::None] {
        let mut d = build(cond, 4);
        let x = images(2, 1);
        let v = (cond != Conditioning::None).then(|| styles(2, 2));
        let weights = Array2::from_shape_vec((2, 1), vec![0.7, -1.3]).unwrap();
        let loss = |d: &StyleDiscriminator<f64>| {
            let l = d.discriminate(x.view(), v.as_ref().map(|v| v.view())).unwrap();
            0.7 * l[0] - 1.3 * l[1]
        };
        let (_, trace) = d.forward(x.view(), v.as_ref().map(|v| v.view())).unwrap();
        d.zero_grad();
        d.backward(&trace, weights.view(), true);
        let report = check_params(&mut d, loss, 1e-5, 8, 1e-6);
        assert!(report.max_rel_err < 1e-3, "{cond:?}: {report:?}");
    }
}

#[test]
fn input_gradients_match_central_differences() {
    for cond in [Conditioning::Projection, Conditioning::Concat] {
        let mut d = build(cond, 8);
        let x = images(2, 3);
        let v = styles(2, 4);
        let (_, trace) = d.forward(x.view(), Some(v.view())).unwrap();
        let grads = d.backward(&trace, Array2::ones((2, 1)).view(), false);
        let total = |x: &Array4<f64>, v: &Array2<f64>| d.discriminate(x.view(), Some(v.view())).unwrap().iter().sum::<f64>();
        let nx = numeric_gradient(x.as_slice().unwrap(), 1e-5, |p| {
            total(&Array4::from_shape_vec(x.raw_dim(), p.to_vec()).unwrap(), &v)
        });
        let nv = numeric_gradient(v.as_slice().unwrap(), 1e-5, |p| {
            total(&x, &Array2::from_shape_vec(v.raw_dim(), p.to_vec()).unwrap())
        });
        let dv = grads.v.expect("conditioned");
        for (a, n) in grads.x.iter().zip(&nx).chain(dv.iter().zip(&nv)) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-3, "{cond:?}: analytic {a}, numeric {n}");
        }
    }
}

#[test]
fn zero_style_leaves_the_unconditional_head() {
    let d = build(Conditioning::Projection, 1);
    let x = images(3, 2);
    let (_, trace) = d.forward(x.view(), Some(Array2::zeros((3, 3)).view())).unwrap();
    let with_zero = d.discriminate(x.view(), Some(Array2::zeros((3, 3)).view())).unwrap();
    // ψ(h) computed by hand from the recorded features
    let params = d.params();
    let head_w = &params.iter().find(|(n, _)| n == "head.weight").unwrap().1.value;
    let head_b = params.iter().find(|(n, _)| n == "head.bias").unwrap().1.value[[0, 0]];
    let gain = 1.0 / (5f64).sqrt();
    for (i, h) in trace.features().rows().into_iter().enumerate() {
        let psi = h.dot(&head_w.row(0)) * gain + head_b;
        assert!((psi - with_zero[i]).abs() < 1e-12);
    }
}

#[test]
fn zero_projection_ignores_style() {
    let mut d = build(Conditioning::Projection, 5);
    d.projection_mut().unwrap().value.fill(0.0);
    let x = images(2, 6);
    let a = d.discriminate(x.view(), Some(styles(2, 1).view())).unwrap();
    let b = d.discriminate(x.view(), Some(styles(2, 2).view())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn concat_planes_follow_style_and_vanish_when_zeroed() {
    let mut d = build(Conditioning::Concat, 7);
    let x = images(1, 1);
    let (v1, v2) = (styles(1, 1), styles(1, 2));
    let (_, t1) = d.forward(x.view(), Some(v1.view())).unwrap();
    let (_, t2) = d.forward(x.view(), Some(v2.view())).unwrap();
    assert_eq!(t1.trunk_input().dim(), (1, 6, 8, 8));
    assert_ne!(t1.trunk_input(), t2.trunk_input());
    let a = d.discriminate(x.view(), Some(v1.view())).unwrap();
    assert_eq!(a, d.discriminate(x.view(), Some(v1.view())).unwrap());
    let planes = d.planes_mut().unwrap();
    planes.weight.value.fill(0.0);
    planes.bias.value.fill(0.0);
    assert_eq!(
        d.discriminate(x.view(), Some(v1.view())).unwrap(),
        d.discriminate(x.view(), Some(v2.view())).unwrap()
    );
}

#[test]
fn rejects_wrong_resolution_and_missing_style() {
    let d = build(Conditioning::Projection, 1);
    let bad = Array4::<f64>::zeros((1, 3, 16, 16));
    assert!(d.discriminate(bad.view(), Some(styles(1, 1).view())).is_err());
    assert!(d.discriminate(images(1, 1).view(), None).is_err());
    let vanilla = build(Conditioning::None, 1);
    assert!(!vanilla.has_style_parameters());
    assert!(vanilla.discriminate(images(1, 1).view(), Some(styles(1, 1).view())).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_term_is_linear_in_style(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let d = build(Conditioning::Projection, seed);
        let x = images(1, seed + 1);
        let (v1, v2) = (styles(1, seed + 2), styles(1, seed + 3));
        let at = |v: &Array2<f64>| d.discriminate(x.view(), Some(v.view())).unwrap()[0];
        let base = at(&Array2::zeros((1, 3)));
        let mixed = at(&(&v1 * a + &v2 * b)) - base;
        let expected = a * (at(&v1) - base) + b * (at(&v2) - base);
        prop_assert!((mixed - expected).abs() <= 1e-5 * (1.0 + expected.abs()));
    }
}
