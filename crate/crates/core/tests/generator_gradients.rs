use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stylespace_core::generator::{GeneratorConfig, StyleGenerator};
use stylespace_core::nn::gradcheck::{check_params, numeric_gradient, relative_error};
use stylespace_core::nn::{normal_matrix, Module};

fn tiny(style_dim: Option<usize>) -> GeneratorConfig {
    GeneratorConfig {
        latent_dim: 4,
        w_dim: 6,
        mapping_layers: 8,
        style_dim,
        channels: vec![4, 3],
        mapping_lr_mult: 0.01,
        style_modulations: 4,
        adain_eps: 1e-8,
    }
}

fn probe(seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal_matrix::<f64, _>(2, 3 * 64, 1.0, &mut rng)
        .into_shape_with_order((2, 3, 8, 8))
        .unwrap()
}

#[test]
fn generator_parameter_gradients_match_central_differences() {
    for style in [Some(3), None] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = StyleGenerator::<f64>::new(tiny(style), &mut rng).unwrap();
        let z = normal_matrix::<f64, _>(2, 4, 1.0, &mut rng);
        let v = style.map(|k| normal_matrix::<f64, _>(2, k, 1.0, &mut rng));
        let r = probe(5);
        let loss = |g: &StyleGenerator<f64>| {
            let img = g.synthesize(z.view(), v.as_ref().map(|v| v.view())).unwrap();
            (&img * &r).sum()
        };
        let (_, trace) = g.forward(z.view(), v.as_ref().map(|v| v.view())).unwrap();
        g.zero_grad();
        g.backward(&trace, r.view());
        let report = check_params(&mut g, loss, 1e-5, 6, 1e-6);
        assert!(report.max_rel_err < 1e-3, "{style:?}: {report:?}");
    }
}

#[test]
fn generator_input_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = StyleGenerator::<f64>::new(tiny(Some(3)), &mut rng).unwrap();
    let z = normal_matrix::<f64, _>(2, 4, 1.0, &mut rng);
    let v = normal_matrix::<f64, _>(2, 3, 1.0, &mut rng);
    let r = probe(9);
    let (_, trace) = g.forward(z.view(), Some(v.view())).unwrap();
    let grads = g.backward(&trace, r.view());
    let loss = |z: &Array2<f64>, v: &Array2<f64>| (&g.synthesize(z.view(), Some(v.view())).unwrap() * &r).sum();
    let nz = numeric_gradient(z.as_slice().unwrap(), 1e-5, |x| {
        loss(&Array2::from_shape_vec((2, 4), x.to_vec()).unwrap(), &v)
    });
    let nv = numeric_gradient(v.as_slice().unwrap(), 1e-5, |x| {
        loss(&z, &Array2::from_shape_vec((2, 3), x.to_vec()).unwrap())
    });
    for (a, n) in grads.z.iter().zip(&nz).chain(grads.v.unwrap().iter().zip(&nv)) {
        assert!(relative_error(*a, *n, 1e-6) < 1e-3, "analytic {a}, numeric {n}");
    }
}

#[test]
fn mapping_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = StyleGenerator::<f64>::new(tiny(Some(3)), &mut rng).unwrap();
    let z = normal_matrix::<f64, _>(1, 4, 1.0, &mut rng);
    for out in 0..6 {
        let mut mapping = g.latent_mapping().clone();
        let (_, trace) = mapping.forward(z.view()).unwrap();
        let mut seed = Array2::zeros((1, 6));
        seed[[0, out]] = 1.0;
        let analytic = mapping.backward(&trace, seed.view(), false);
        let numeric = numeric_gradient(z.as_slice().unwrap(), 1e-4, |x| {
            let x = Array2::from_shape_vec((1, 4), x.to_vec()).unwrap();
            g.map_latent(x.view()).unwrap()[[0, out]]
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-3, "w[{out}]: analytic {a}, numeric {n}");
        }
    }
}
