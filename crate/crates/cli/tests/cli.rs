mod common;

use std::process::{Command, Output};

use common::{bin, fixture};
use stylespace::pipeline::Embedded;
use stylespace::service::{EmbeddingResponse, GenerateResponse};
use stylespace_core::training::Variant;

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("STYLESPACE_CACHE")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_with_fixed_style_gives_distinct_seeds() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.png");
    let o = run(&[
        "generate", "--checkpoint", s(&f.checkpoint(Variant::Controlled)), "--image-id", "synth-00003",
        "--count", "6", "--seed", "11", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: GenerateResponse = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta.images.len(), 6);
    assert_eq!(meta.z_seeds, (11..17).collect::<Vec<u64>>());
    let pngs = meta.png_bytes().unwrap();
    assert!(pngs.windows(2).any(|w| w[0] != w[1]));
    let emb = Embedded::load(&f.embedding()).unwrap();
    let expected: Vec<f64> = emb.styles.get("synth-00003").unwrap().to_vec_f64();
    assert_eq!(meta.style_vector.unwrap(), expected);
    let grid = stylespace_core::imaging::Raster::open(&out).unwrap();
    assert_eq!((grid.width(), grid.height()), (6 * 16, 16));
}

#[test]
fn interpolation_spec_records_the_mixed_vector() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("mix.json");
    std::fs::write(&spec, r#"{"ids": ["synth-00001", "synth-00002"], "lambda": 0.5}"#).unwrap();
    let out = dir.path().join("mix.png");
    let o = run(&[
        "generate", "--checkpoint", s(&f.checkpoint(Variant::Controlled)), "--interpolate", s(&spec),
        "--count", "2", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: GenerateResponse = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    let emb = Embedded::load(&f.embedding()).unwrap();
    let a = emb.styles.get("synth-00001").unwrap().to_vec_f64();
    let b = emb.styles.get("synth-00002").unwrap().to_vec_f64();
    for ((m, a), b) in meta.style_vector.unwrap().iter().zip(&a).zip(&b) {
        assert!((m - (0.5 * a + 0.5 * b)).abs() < 1e-6);
    }
}

#[test]
fn generate_rejects_unknown_ids_and_conflicting_sources() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.png");
    let ck = f.checkpoint(Variant::Controlled);
    let o = run(&["generate", "--checkpoint", s(&ck), "--image-id", "nope", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
    let v = dir.path().join("v.json");
    std::fs::write(&v, "[0.0]").unwrap();
    let o = run(&["generate", "--checkpoint", s(&ck), "--image-id", "synth-00001", "--vector", s(&v), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["generate", "--checkpoint", s(&ck), "--vector", s(&v), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension"));
    let o = run(&["generate", "--checkpoint", s(&f.checkpoint(Variant::Vanilla)), "--count", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn evaluate_reports_the_directional_delta() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let settings = dir.path().join("eval.json");
    std::fs::write(&settings, r#"{"fid_samples": 40, "fidelity_styles": 5, "fidelity_per_style": 4}"#).unwrap();
    let report = dir.path().join("report.json");
    let o = run(&[
        "evaluate", "--checkpoint", s(&f.checkpoint(Variant::Controlled)), "--checkpoint",
        s(&f.checkpoint(Variant::Vanilla)), "--manifest", s(&f.manifest()), "--config", s(&settings),
        "--out", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("controlled - vanilla"), "{stdout}");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(json["controlled_minus_vanilla"].as_f64().is_some());
    assert_eq!(json["variants"].as_array().unwrap().len(), 2);
}

#[test]
fn visualize_matches_between_embedding_and_checkpoint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert!(run(&["visualize", "--embedding", s(&f.embedding()), "--out", s(&a)]).status.success());
    assert!(run(&["visualize", "--checkpoint", s(&f.checkpoint(Variant::Controlled)), "--out", s(&b)]).status.success());
    let pa: EmbeddingResponse = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    let pb: EmbeddingResponse = serde_json::from_slice(&std::fs::read(&b).unwrap()).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(pa.points.len(), 40);
}

#[test]
fn embedding_a_small_folder_respects_the_rank_bound_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&["synth", "--out", s(&data), "--count", "78", "--size", "32", "--seed", "5"]).status.success());
    let manifest = data.join("manifest.json");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for e in [&e1, &e2] {
        let o = run(&["embed", "--manifest", s(&manifest), "--out", s(e)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let emb = Embedded::load(&e1).unwrap();
    assert_eq!(emb.styles.len(), 78);
    assert!(emb.model.k() <= 77);
    assert_eq!(std::fs::read(e1.join("styles.json")).unwrap(), std::fs::read(e2.join("styles.json")).unwrap());
}

#[test]
fn manifest_problems_are_enumerated() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    std::fs::write(
        &manifest,
        r#"{"root": ".", "images": [{"id": "a", "path": "a.png"}, {"id": "b", "path": "b.png"}, {"id": "a", "path": "c.png"}]}"#,
    )
    .unwrap();
    let o = run(&["embed", "--manifest", s(&manifest), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in ["a.png", "b.png", "c.png", "duplicate id a"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
    std::fs::write(&manifest, r#"{"root": ".", "images": []}"#).unwrap();
    let o = run(&["embed", "--manifest", s(&manifest), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no images"));
}

#[test]
fn config_validation_lists_every_offending_field() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"resolution": 12, "batch_size": 0, "r1_gamma": -1.0}"#).unwrap();
    let o = run(&[
        "train", "--config", s(&cfg), "--manifest", s(&f.manifest()), "--embedding", s(&f.embedding()),
        "--out", s(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for field in ["resolution", "batch_size", "r1_gamma"] {
        assert!(err.contains(field), "{field} missing from {err}");
    }
    std::fs::write(&cfg, r#"{"stepz": 3}"#).unwrap();
    let o = run(&["train", "--config", s(&cfg), "--manifest", s(&f.manifest()), "--out", s(&dir.path().join("x.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"));
}

#[test]
fn controlled_training_requires_an_embedding() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train", "--config", s(&f.config()), "--manifest", s(&f.manifest()), "--variant", "controlled",
        "--out", s(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--embedding"));
}
