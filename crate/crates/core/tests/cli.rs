use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tristyle::cli::config::RunConfig;
use tristyle::cli::weights_file::Weights;

/// Small dimensions so each command finishes quickly.
const SMALL: [&str; 18] = [
    "--layer-count", "4",
    "--inject-layers", "2",
    "--triplane-res", "8",
    "--grid-res", "24",
    "--image-size", "32",
    "--n-surface-points", "2000",
    "--n-ray-samples", "16",
    "--turntable-views", "2",
    "--scene", "sphere",
];

fn tristyle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tristyle")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tristyle(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

fn init_weights(dir: &TempDir, seed: &str) -> PathBuf {
    let path = dir.path().join(format!("w{seed}.tpsw"));
    ok(&with_small(&["init-weights", "--out", s(&path), "--seed", seed]));
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn init_weights_is_seeded_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let a = std::fs::read(init_weights(&dir, "3")).unwrap();
    let b = std::fs::read(dir.path().join("w3.tpsw")).unwrap();
    let again = {
        let p = dir.path().join("again.tpsw");
        ok(&with_small(&["init-weights", "--out", s(&p), "--seed", "3"]));
        std::fs::read(p).unwrap()
    };
    assert_eq!(a, again);
    assert_eq!(a, b);
    assert_ne!(a, std::fs::read(init_weights(&dir, "4")).unwrap());
    assert_eq!(Weights::from_bytes(&a).unwrap().to_bytes(), a);
}

#[test]
fn scene_reconstruct_and_stylize() {
    let dir = TempDir::new().unwrap();
    let w = init_weights(&dir, "7");
    let scene = dir.path().join("scene");
    ok(&with_small(&["make-scene", "--out-dir", s(&scene)]));
    for i in 0..6 {
        assert!(scene.join(format!("view_{i}.ppm")).exists());
    }
    assert!(scene.join("style.ppm").exists() && scene.join("surface.xyz").exists());

    let recon = dir.path().join("recon");
    ok(&with_small(&["reconstruct", "--weights", s(&w), "--views", s(&scene), "--out-dir", s(&recon)]));
    for f in ["triplane.tptr", "mesh.obj", "surface.xyz", "turntable_0.ppm", "turntable_1.ppm"] {
        assert!(recon.join(f).exists(), "{f}");
    }

    let styled = dir.path().join("styled");
    let style = scene.join("style.ppm");
    ok(&with_small(&[
        "stylize", "--weights", s(&w), "--views", s(&scene), "--style", s(&style), "--out-dir", s(&styled),
    ]));
    let report = json(&styled.join("report.json"));
    assert_eq!(report["config"]["alpha"], 0.8);
    assert_eq!(report["config"]["inject_layers"], 2);
    assert_eq!(report["config"]["mode"], "blended_attention");
    assert!(report["chamfer"].as_f64().unwrap() > 0.0);
    assert!(report["extractor_seed"].is_u64());
    assert!(styled.join("timings.json").exists());
    // the unstylized reconstruction is the stylize baseline
    assert_eq!(
        std::fs::read(recon.join("triplane.tptr")).unwrap(),
        std::fs::read(styled.join("base_triplane.tptr")).unwrap()
    );

    let plain = dir.path().join("plain");
    ok(&with_small(&["stylize", "--weights", s(&w), "--views", s(&scene), "--out-dir", s(&plain), "--alpha", "0"]));
    let report = json(&plain.join("report.json"));
    assert_eq!(report["chamfer"], 0.0);
    assert_eq!(report["f_score"], 1.0);
}

#[test]
fn sweep_layers_prepends_unstylized_row() {
    let dir = TempDir::new().unwrap();
    let w = init_weights(&dir, "7");
    let out = dir.path().join("sweep");
    ok(&with_small(&["sweep", "--weights", s(&w), "--axis", "layers", "--out-dir", s(&out)]));
    let table = std::fs::read_to_string(out.join("sweep_layers.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let values: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(values, ["0", "1", "2", "4"]);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);

    let out = dir.path().join("alpha");
    ok(&with_small(&["sweep", "--weights", s(&w), "--axis", "alpha", "--values", "0,0.5", "--out-dir", s(&out)]));
    let report = json(&out.join("sweep_alpha.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(report["rows"][0]["chamfer"], 0.0);

    let bad = tristyle(&with_small(&["sweep", "--weights", s(&w), "--axis", "layers", "--values", "9"]));
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_on_identical_inputs() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("scene");
    ok(&["make-scene", "--out-dir", s(&scene), "--n-surface-points", "500"]);
    let cloud = scene.join("surface.xyz");
    let img = scene.join("view_0.ppm");
    let out = dir.path().join("eval");
    ok(&[
        "eval", "--cloud-a", s(&cloud), "--cloud-b", s(&cloud), "--renders", s(&img), "--style", s(&img),
        "--f-score-tau", "0.05", "--out-dir", s(&out),
    ]);
    let report = json(&out.join("eval.json"));
    assert_eq!(report["chamfer"], 0.0);
    assert_eq!(report["f_score"], 1.0);
    assert_eq!(report["style_fidelity"], 0.0);
    assert_eq!(report["config"]["f_score_tau"], 0.05);
}

#[test]
fn error_exit_codes() {
    let dir = TempDir::new().unwrap();

    let broken = dir.path().join("broken.xyz");
    std::fs::write(&broken, "0 0 0\n1 2\n").unwrap();
    let out = tristyle(&["eval", "--cloud-a", s(&broken), "--cloud-b", s(&broken)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = dir.path().join("missing.tpsw");
    assert_eq!(tristyle(&["stylize", "--weights", s(&missing)]).status.code(), Some(2));

    let bad_magic = dir.path().join("bad.tpsw");
    std::fs::write(&bad_magic, b"NOPE\x01\x00\x00\x00").unwrap();
    let out_dir = dir.path().join("never");
    let out = tristyle(&["stylize", "--weights", s(&bad_magic), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_dir.exists());

    assert_eq!(tristyle(&["stylize", "--weights", s(&missing), "--alpha", "1.5"]).status.code(), Some(1));
    assert_eq!(tristyle(&["stylize", "--weights", s(&missing), "--mode", "mystery"]).status.code(), Some(1));
    assert_eq!(tristyle(&["make-scene", "--style-kind", "plaid"]).status.code(), Some(1));
    assert_eq!(tristyle(&["no-such-verb"]).status.code(), Some(1));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = RunConfig {
        alpha: 0.25,
        f_score_tau: 0.1,
        ..RunConfig::default()
    };
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, format!("# experiment\n{}", cfg.serialize())).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);

    let scene = dir.path().join("scene");
    ok(&["make-scene", "--config", s(&path), "--out-dir", s(&scene), "--n-surface-points", "100"]);
    let cloud = scene.join("surface.xyz");
    let out = dir.path().join("eval");
    ok(&["eval", "--config", s(&path), "--cloud-a", s(&cloud), "--cloud-b", s(&cloud), "--out-dir", s(&out)]);
    let report = json(&out.join("eval.json"));
    assert_eq!(report["config"]["alpha"], 0.25);
    assert_eq!(report["config"]["f_score_tau"], 0.1);
    assert_eq!(report["config"]["n_surface_points"], 16384);

    std::fs::write(&path, "alpha = 0.5\nseed = x\n").unwrap();
    let out = tristyle(&["make-scene", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
