use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stylespace_core::nn::normal_matrix;
use stylespace_core::style_space::{project_2d, EmbeddingModel, FitOptions, Provenance, StyleStore, StyleVector};

fn descriptors(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = normal_matrix::<f64, _>(6, d, 1.0, &mut rng);
    let coeffs = normal_matrix::<f64, _>(n, 6, 3.0, &mut rng);
    coeffs.dot(&basis) + normal_matrix::<f64, _>(n, d, 0.05, &mut rng) + 2.0
}

fn distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn refitting_gives_the_same_components_up_to_sign() {
    let x = descriptors(50, 120, 1);
    let a = EmbeddingModel::fit(x.view(), FitOptions::explicit(6)).unwrap();
    let b = EmbeddingModel::fit(x.view(), FitOptions::explicit(6)).unwrap();
    for (ra, rb) in a.components().rows().into_iter().zip(b.components().rows()) {
        assert!((ra.dot(&rb).abs() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn projection_is_non_expansive() {
    let x = descriptors(40, 80, 2);
    let model = EmbeddingModel::fit(x.view(), FitOptions::explicit(6)).unwrap();
    let v = model.project_rows(x.view()).unwrap();
    for i in 0..x.nrows() {
        for j in 0..i {
            assert!(distance(v.row(i), v.row(j)) <= distance(x.row(i), x.row(j)) + 1e-9);
        }
    }
}

#[test]
fn scatter_is_non_expansive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = normal_matrix::<f64, _>(60, 7, 1.0, &mut rng);
    let p = project_2d(v.view()).unwrap();
    for i in 0..v.nrows() {
        for j in 0..i {
            let d2 = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
            assert!(d2 <= distance(v.row(i), v.row(j)) + 1e-9);
        }
    }
}

#[test]
fn nearest_agrees_with_a_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vectors = normal_matrix::<f64, _>(1000, 5, 1.0, &mut rng);
    let ids: Vec<String> = (0..1000).map(|i| format!("img-{i:04}")).collect();
    let store = StyleStore::new(ids.clone(), vectors.clone()).unwrap();
    for q in 0..20 {
        let query = normal_matrix::<f64, _>(1, 5, 1.0, &mut rng).row(0).to_owned();
        let mut scan: Vec<(f64, usize)> = (0..1000).map(|i| (distance(vectors.row(i), query.view()), i)).collect();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0));
        let expected: Vec<String> = scan[..7].iter().map(|(_, i)| ids[*i].clone()).collect();
        let got = store.nearest(&StyleVector::new(query, Provenance::External).unwrap(), 7).unwrap();
        assert_eq!(got, expected, "query {q}");
    }
}

#[test]
fn sampling_is_uniform_over_the_store() {
    let store = StyleStore::new((0..10).map(|i| i.to_string()).collect(), Array2::<f64>::eye(10)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 10];
    for _ in 0..10_000 {
        counts[store.sample_index(&mut rng).unwrap()] += 1;
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 0.1).abs() <= 0.05, "{counts:?}");
    }
    let drawn = store.sample_style(&mut rng).unwrap();
    assert_eq!(drawn.provenance, Provenance::Sampled);
    assert_eq!(drawn.values.iter().filter(|v| **v == 1.0).count(), 1);
}

#[test]
fn reconstruction_inverts_projection_on_the_span() {
    let x = descriptors(30, 60, 6);
    let model = EmbeddingModel::fit(x.view(), FitOptions::explicit(6)).unwrap();
    let v = Array1::from(vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.2]);
    let d = model.reconstruct(v.view()).unwrap();
    let back = model.project_values(d.view()).unwrap();
    assert!((&back - &v).iter().all(|e| e.abs() < 1e-9));
}
