use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use mmattn::attention::unimodal_context;
use mmattn::basis::{fit_ridge, make_grid_basis};
use mmattn::em::MixtureParams;
use mmattn::eval::{compare_models, discretize, DensityGrid};
use mmattn::io::load_feature_grid;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn mmattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmattn")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn render_matches_golden_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("golden.pgm");
    let status = mmattn(&[
        "render",
        path_str(&fixture("golden_mixture.json")),
        "--height",
        "16",
        "--width",
        "20",
        "--out",
        path_str(&out),
    ]);
    assert!(status.status.success());
    assert_eq!(
        std::fs::read(out).unwrap(),
        std::fs::read(fixture("golden.pgm")).unwrap()
    );
}

#[test]
fn render_tight_gaussian_lights_one_cell_and_mirrors_symmetric_mixtures() {
    let dir = tempfile::tempdir().unwrap();
    let tight = dir.path().join("tight.json");
    std::fs::write(
        &tight,
        r#"{"components":[{"pi":1.0,"mean":[0.3125,0.5625],"cov":[[1e-6,0.0],[0.0,1e-6]]}]}"#,
    )
    .unwrap();
    let pgm = dir.path().join("tight.pgm");
    assert!(mmattn(&[
        "render",
        path_str(&tight),
        "--height",
        "8",
        "--width",
        "8",
        "--out",
        path_str(&pgm)
    ])
    .status
    .success());
    let bytes = std::fs::read(&pgm).unwrap();
    let pixels = &bytes[bytes.len() - 64..];
    assert_eq!(pixels.iter().filter(|&&p| p == 255).count(), 1);
    assert_eq!(pixels.iter().filter(|&&p| p == 0).count(), 63);
    assert_eq!(pixels[4 * 8 + 2], 255);

    let sym = dir.path().join("sym.json");
    std::fs::write(
        &sym,
        r#"{"components":[
            {"pi":0.5,"mean":[0.25,0.5],"cov":[[0.01,0.0],[0.0,0.02]]},
            {"pi":0.5,"mean":[0.75,0.5],"cov":[[0.01,0.0],[0.0,0.02]]}]}"#,
    )
    .unwrap();
    let pgm = dir.path().join("sym.pgm");
    assert!(mmattn(&[
        "render",
        path_str(&sym),
        "--height",
        "6",
        "--width",
        "10",
        "--out",
        path_str(&pgm)
    ])
    .status
    .success());
    let bytes = std::fs::read(&pgm).unwrap();
    let pixels = &bytes[bytes.len() - 60..];
    for row in pixels.chunks(10) {
        let mirrored: Vec<u8> = row.iter().rev().copied().collect();
        assert_eq!(row, mirrored.as_slice());
    }
}

#[test]
fn render_csv_round_trips_through_compare() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("golden.csv");
    assert!(mmattn(&[
        "render",
        path_str(&fixture("golden_mixture.json")),
        "--out",
        path_str(&csv)
    ])
    .status
    .success());
    let grid = DensityGrid::from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    let m: MixtureParams =
        serde_json::from_str(&std::fs::read_to_string(fixture("golden_mixture.json")).unwrap()).unwrap();
    assert_eq!(grid, discretize(&m, 24, 24).unwrap());
}

#[test]
fn fit_single_blob_selects_one_component_with_provenance() {
    let weights = fixture("single_blob.json");
    let bundle = stdout_json(&mmattn(&["fit", path_str(&weights)]));
    assert_eq!(bundle["chosen_k"], 1);
    assert_eq!(bundle["selection"]["per_k"].as_array().unwrap().len(), 4);
    let config = &bundle["provenance"]["config"];
    assert_eq!(config["lambda"], 5.0);
    assert_eq!(config["k_max"], 4);
    assert_eq!(config["restarts"], 3);
    assert_eq!(config["iters"], 10);
    let digest = hex::encode(Sha256::digest(std::fs::read(&weights).unwrap()));
    assert_eq!(bundle["provenance"]["inputs"][0]["sha256"], digest.as_str());

    // Same inputs and provenance give the same bytes.
    let again = mmattn(&["fit", path_str(&weights)]);
    assert_eq!(mmattn(&["fit", path_str(&weights)]).stdout, again.stdout);
}

#[test]
fn fixed_k_bypasses_selection() {
    let bundle = stdout_json(&mmattn(&["fit", path_str(&fixture("single_blob.json")), "--k", "2"]));
    assert_eq!(bundle["chosen_k"], 2);
    let per_k = bundle["selection"]["per_k"].as_array().unwrap();
    assert_eq!(per_k.len(), 1);
    assert_eq!(per_k[0]["k"], 2);
    assert_eq!(bundle["provenance"]["fixed_k"], 2);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"lambda": 125.0, "k_max": 3, "restarts": 2}"#).unwrap();
    let bundle = stdout_json(&mmattn(&[
        "fit",
        path_str(&fixture("single_blob.json")),
        "--config",
        path_str(&cfg),
        "--lambda",
        "7.5",
    ]));
    let config = &bundle["provenance"]["config"];
    assert_eq!(config["lambda"], 7.5);
    assert_eq!(config["k_max"], 3);
    assert_eq!(config["restarts"], 2);
    assert_eq!(bundle["selection"]["per_k"].as_array().unwrap().len(), 3);
}

#[test]
fn forward_matches_frozen_fixture_and_quadrature() {
    let out = mmattn(&[
        "forward",
        path_str(&fixture("features.csv")),
        path_str(&fixture("forward_mixture.json")),
    ]);
    let got = stdout_json(&out);
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("forward_expected.json")).unwrap()).unwrap();
    let (g, e) = (floats(&got["value"]), floats(&expected["value"]));
    for (a, b) in g.iter().zip(&e) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }

    // The frozen values against 600×600 trapezoidal quadrature over [−1, 2]².
    let grid = load_feature_grid(&fixture("features.csv")).unwrap();
    let basis = make_grid_basis(10, 0.001).unwrap();
    let f = fit_ridge(&grid, &basis, 0.01).unwrap();
    let m: MixtureParams =
        serde_json::from_str(&std::fs::read_to_string(fixture("forward_mixture.json")).unwrap()).unwrap();
    let n = 600;
    let h = 3.0 / n as f64;
    let mut quad = vec![0.0; f.dim()];
    for a in 0..=n {
        for b in 0..=n {
            let x = mmattn::gauss2d::Vec2::new(-1.0 + h * a as f64, -1.0 + h * b as f64);
            let wa = if a == 0 || a == n { 0.5 } else { 1.0 };
            let wb = if b == 0 || b == n { 0.5 } else { 1.0 };
            let p = m.pdf(x) * wa * wb * h * h;
            if p == 0.0 {
                continue;
            }
            let fx = mmattn::basis::eval_feature(&f, x);
            for (q, v) in quad.iter_mut().zip(fx.iter()) {
                *q += p * v;
            }
        }
    }
    for (q, b) in quad.iter().zip(&e) {
        assert!((q - b).abs() <= 1e-4 * q.abs(), "{q} vs {b}");
    }
}

#[test]
fn forward_k1_matches_unimodal_path_and_zero_features_give_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mixture = dir.path().join("k1.json");
    std::fs::write(
        &mixture,
        r#"{"components":[{"pi":1.0,"mean":[0.45,0.55],"cov":[[0.02,0.005],[0.005,0.01]]}]}"#,
    )
    .unwrap();
    let got = stdout_json(&mmattn(&[
        "forward",
        path_str(&fixture("features.csv")),
        path_str(&mixture),
    ]));
    let grid = load_feature_grid(&fixture("features.csv")).unwrap();
    let f = fit_ridge(&grid, &make_grid_basis(10, 0.001).unwrap(), 0.01).unwrap();
    let m: MixtureParams = serde_json::from_str(&std::fs::read_to_string(&mixture).unwrap()).unwrap();
    let uni = unimodal_context(&f, &m.components()[0].gaussian);
    assert_eq!(floats(&got["value"]), uni.value.iter().copied().collect::<Vec<f64>>());

    let zeros = dir.path().join("zeros.csv");
    let mut text = String::from("u,v,f1,f2\n");
    for i in 0..25 {
        text.push_str(&format!("{},{},0,0\n", (i % 5) as f64 / 4.0, (i / 5) as f64 / 4.0));
    }
    std::fs::write(&zeros, text).unwrap();
    let got = stdout_json(&mmattn(&["forward", path_str(&zeros), path_str(&mixture), "--grad"]));
    assert_eq!(floats(&got["value"]), vec![0.0, 0.0]);
    let grads = &got["gradients"][0];
    assert_eq!(grads["vjp_pi"], 0.0);
    assert_eq!(floats(&grads["vjp_cov"]), vec![0.0, 0.0, 0.0]);
}

#[test]
fn forward_gradients_contract_with_upstream() {
    let got = stdout_json(&mmattn(&[
        "forward",
        path_str(&fixture("features.csv")),
        path_str(&fixture("forward_mixture.json")),
        "--upstream",
        "1,-2,0.5",
    ]));
    let up = [1.0, -2.0, 0.5];
    for (k, g) in got["gradients"].as_array().unwrap().iter().enumerate() {
        let ck = floats(&got["per_component"][k]["context"]);
        assert_eq!(floats(&g["d_pi"]), ck);
        let vjp: f64 = ck.iter().zip(&up).map(|(c, u)| c * u).sum();
        assert!((g["vjp_pi"].as_f64().unwrap() - vjp).abs() < 1e-14);
    }
}

#[test]
fn compare_ranks_candidates_like_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let reference = fixture("golden_mixture.json");
    let near = dir.path().join("near.json");
    let far = dir.path().join("far.json");
    std::fs::write(
        &near,
        r#"{"components":[
            {"pi":0.55,"mean":[0.27,0.3],"cov":[[0.01,0.003],[0.003,0.006]]},
            {"pi":0.45,"mean":[0.7,0.72],"cov":[[0.02,-0.005],[-0.005,0.01]]}]}"#,
    )
    .unwrap();
    std::fs::write(
        &far,
        r#"{"components":[{"pi":1.0,"mean":[0.5,0.5],"cov":[[0.05,0.0],[0.0,0.05]]}]}"#,
    )
    .unwrap();
    let got = stdout_json(&mmattn(&[
        "compare",
        path_str(&reference),
        path_str(&far),
        path_str(&reference),
        path_str(&near),
    ]));
    let names: Vec<&str> = got
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, vec![path_str(&reference), path_str(&near), path_str(&far)]);
    assert_eq!(got[0]["js"], 0.0);
    assert_eq!(got[0]["rank"], 1);

    let load = |p: &Path| {
        let m: MixtureParams = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        discretize(&m, 24, 24).unwrap()
    };
    let ranked = compare_models(
        &load(&reference),
        &[
            (path_str(&far).to_string(), load(&far)),
            (path_str(&reference).to_string(), load(&reference)),
            (path_str(&near).to_string(), load(&near)),
        ],
    )
    .unwrap();
    for (row, (name, js)) in got.as_array().unwrap().iter().zip(&ranked) {
        assert_eq!(row["name"].as_str().unwrap(), name);
        assert_eq!(row["js"].as_f64().unwrap(), *js);
    }

    let tsv = mmattn(&["compare", path_str(&reference), path_str(&near), "--format", "tsv"]);
    let text = String::from_utf8(tsv.stdout).unwrap();
    assert!(text.starts_with("rank\tname\tjs\n1\t"));
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.csv");
    std::fs::write(&garbage, "not,a\nnumber,file\n").unwrap();
    let zero = dir.path().join("zero.csv");
    std::fs::write(&zero, "0.5,0.5,0\n0.2,0.2,0\n").unwrap();

    let cases: Vec<Vec<String>> = vec![
        vec!["fit".into(), path_str(&garbage).into()],
        vec!["fit".into(), path_str(&zero).into()],
        vec!["fit".into(), path_str(&dir.path().join("missing.csv")).into()],
        vec![
            "fit".into(),
            path_str(&fixture("single_blob.json")).into(),
            "--lambda".into(),
            "-1".into(),
        ],
        vec!["compare".into(), path_str(&fixture("golden_mixture.json")).into()],
        vec![
            "forward".into(),
            path_str(&fixture("features.csv")).into(),
            path_str(&fixture("forward_mixture.json")).into(),
            "--upstream".into(),
            "1,2".into(),
        ],
        vec![
            "render".into(),
            path_str(&fixture("golden_mixture.json")).into(),
            "--out".into(),
            path_str(&dir.path().join("no/such/dir/x.pgm")).into(),
        ],
        vec!["no-such-command".into()],
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = mmattn(&refs);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn compare_names_the_mismatched_file() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.csv");
    std::fs::write(&small, "0.5,0.5\n0.25,0.25\n").unwrap();
    let out = mmattn(&["compare", path_str(&fixture("golden_mixture.json")), path_str(&small)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("small.csv"));
}

#[test]
fn total_collapse_exits_with_code_3() {
    // The second point carries so little weight that any component placed on
    // it collapses, in every restart.
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.csv");
    std::fs::write(&weights, "0.1,0.1,1\n0.9,0.9,1e-14\n").unwrap();
    let out = mmattn(&["fit", path_str(&weights), "--k", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn demo_writes_tables_and_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = mmattn(&[
            "demo",
            "--trials",
            "5",
            "--train-time-k",
            "--seed",
            "3",
            "--out",
            path_str(dir.path()),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("true_k\ttrials"));
    }
    for name in [
        "summary.json",
        "recovery.tsv",
        "train_time.tsv",
        "k3/fit.json",
        "k3/context.json",
        "k4/fit.pgm",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let train = std::fs::read_to_string(a.path().join("train_time.tsv")).unwrap();
    let rows: Vec<&str> = train.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    for row in rows {
        let sampled: usize = row.split('\t').nth(2).unwrap().parse().unwrap();
        assert!((1..=4).contains(&sampled));
    }

    // The written weight fixture refits to the recorded bundle.
    let refit = mmattn(&[
        "fit",
        path_str(&a.path().join("k2/weights.json")),
        "--seed",
        &trial_seed_arg(a.path(), 2),
    ]);
    let bundle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("k2/fit.json")).unwrap()).unwrap();
    assert_eq!(stdout_json(&refit)["mixture"], bundle["mixture"]);
}

fn trial_seed_arg(dir: &Path, k: usize) -> String {
    let bundle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("k{k}/fit.json"))).unwrap()).unwrap();
    bundle["provenance"]["seed"].as_u64().unwrap().to_string()
}
