use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use torus_renorm::basis::golden_basis;
use torus_renorm::experiment::{generate_field, FieldGen, ModeSpec, RandomSpec};
use torus_renorm::fourier::{FourierField, MultiIndex};

const BIN: &str = env!("CARGO_BIN_EXE_torus-renorm");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn run_env(args: &[&str], dir: &Path, threads: &str) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("TORUS_RENORM_THREADS", threads)
        .output()
        .unwrap()
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON in {text}"));
    serde_json::from_str(line).unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).unwrap()
}

const EXPERIMENT: &str = r#"{
  "name": "small",
  "basis": "golden",
  "config": { "K": 8, "max_iters": 3 },
  "seeds": [
    { "name": "linear", "preset": "constant" },
    { "name": "bump", "modes": [{ "k": [1, 0], "amp": 1e-4 }, { "k": [2, -1], "amp": 1e-4, "v": [0.0, 1.0] }] },
    { "name": "noise", "random": { "count": 6, "amp": 1.0, "seed": 3, "radius": 4 }, "norm_prime": 1e-4 }
  ],
  "outputs": { "dir": "out" }
}"#;

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn write_field(dir: &Path, name: &str, f: &FourierField) -> String {
    let p = dir.join(name);
    fs::write(&p, f.to_json().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn experiment_outputs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("exp.json"), EXPERIMENT).unwrap();
    let mut snaps = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let root = tmp.path().join(format!("r{i}"));
        fs::create_dir(&root).unwrap();
        let o = run_env(
            &["run", "exp.json", "--root", root.to_str().unwrap()],
            tmp.path(),
            threads,
        );
        assert!(
            o.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        snaps.push(snapshot(&root));
    }
    let names: Vec<&String> = snaps[0].keys().collect();
    for want in [
        "out/spec.json",
        "out/summary.json",
        "out/linear/traj.csv",
        "out/noise/final_field.json",
    ] {
        assert!(
            snaps[0].contains_key(want),
            "missing {want}; have {names:?}"
        );
    }
    assert_eq!(snaps[0], snaps[1]);
    assert_eq!(snaps[0], snaps[2]);

    let summary: Value = serde_json::from_slice(&snaps[0]["out/summary.json"]).unwrap();
    assert_eq!(summary["seeds"][0]["status"], "CONVERGED");
    let csv = String::from_utf8(snaps[0]["out/bump/traj.csv"].clone()).unwrap();
    assert!(csv
        .starts_with("iter,norm_prime,nonconstant_norm,rescale_re,rescale_im,mode_count,status\n"));
}

#[test]
fn malformed_spec_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let bad = EXPERIMENT.replace(r#""K": 8"#, r#""K": "eight""#);
    fs::write(tmp.path().join("bad.json"), bad).unwrap();
    let o = run(&["run", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["path"], "config.K");
    assert!(e["message"].as_str().unwrap().len() > 5);

    let unknown = EXPERIMENT.replace(r#""max_iters": 3"#, r#""max_iter": 3"#);
    fs::write(tmp.path().join("unknown.json"), unknown).unwrap();
    let o = run(&["run", "unknown.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["path"]
        .as_str()
        .unwrap()
        .starts_with("config"));

    let dup = EXPERIMENT.replace(r#""name": "bump""#, r#""name": "linear""#);
    fs::write(tmp.path().join("dup.json"), dup).unwrap();
    let o = run(&["run", "dup.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["path"], "seeds");
}

#[test]
fn missing_input_and_bad_flags_exit_2() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["iterate", "--input", "nope.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["path"]
        .as_str()
        .unwrap()
        .contains("nope.json"));
    assert_eq!(
        run(&["spectrum", "--basis", "silver"], tmp.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run_env(&["spectrum", "--K", "4"], tmp.path(), "many")
            .status
            .code(),
        Some(2)
    );
    // Explicit sigma without kappa.
    assert_eq!(
        run(&["spectrum", "--K", "4", "--sigma", "0.1"], tmp.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn numerical_failure_exits_1() {
    let tmp = TempDir::new().unwrap();
    let b = golden_basis();
    // Zero dual pairing with ω̄ makes the time rescaling degenerate.
    let perp = FourierField::constant(&[b.omega_bar[1], -b.omega_bar[0]], 6);
    let input = write_field(tmp.path(), "perp.json", &perp);
    let o = run(&["iterate", "--input", &input], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_json(&o)["message"]
        .as_str()
        .unwrap()
        .contains("rescale"));
    // The CSV still records the failure.
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAILED"));
}

#[test]
fn generate_then_iterate() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("gen.json"),
        r#"{ "preset": "constant", "modes": [{ "k": [1, 1], "amp": 1e-4 }] }"#,
    )
    .unwrap();
    let o = run(
        &[
            "generate", "--K", "8", "--gen", "gen.json", "--out", "x.json",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let x =
        FourierField::from_json(&fs::read_to_string(tmp.path().join("x.json")).unwrap()).unwrap();
    assert!(x.is_real());
    assert_eq!(x.trunc_radius(), 8);
    assert_eq!(x.mode_count(), 3);

    let o = run(
        &[
            "iterate",
            "--input",
            "x.json",
            "--max-iters",
            "2",
            "--final-field",
            "y.json",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(tmp.path().join("y.json").exists());
}

#[test]
fn eliminate_reports_json() {
    let tmp = TempDir::new().unwrap();
    let b = golden_basis();
    let x = FourierField::constant(&b.omega, 6);
    let input = write_field(tmp.path(), "w.json", &x);
    let v = stdout_json(&run(&["eliminate", "--input", &input], tmp.path()));
    assert!(v.get("u").is_some());
}

#[test]
fn spectrum_reports_the_unstable_eigenvalue() {
    let tmp = TempDir::new().unwrap();
    let v = stdout_json(&run(
        &["spectrum", "--K", "8", "--fd-dirs", "4"],
        tmp.path(),
    ));
    assert_eq!(v["K"], 8);
    let u = v["unstable"].as_array().unwrap();
    assert_eq!(u.len(), 1);
    let re = u[0]
        .as_array()
        .map(|a| a[0].as_f64().unwrap())
        .unwrap_or_else(|| u[0]["re"].as_f64().unwrap());
    assert!((re + 2.618_033_988_749_895).abs() < 1e-12);
    assert!(v["fd"]["max_relative_error"].as_f64().unwrap() < 1e-5);
}

#[test]
fn winding_of_the_linear_flow() {
    let tmp = TempDir::new().unwrap();
    let b = golden_basis();
    let input = write_field(tmp.path(), "w.json", &FourierField::constant(&b.omega, 4));
    let v = stdout_json(&run(
        &[
            "winding", "--input", &input, "--t", "100", "--theta0", "0.1,0.2",
        ],
        tmp.path(),
    ));
    assert_eq!(v["confident"], true);
    let n: f64 = b.omega.iter().map(|x| x.abs()).sum();
    for (w, o) in v["w"].as_array().unwrap().iter().zip(&b.omega) {
        assert!((w.as_f64().unwrap() - o / n).abs() < 1e-12);
    }
}

#[test]
fn conjugacy_residual_is_small() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("gen.json"),
        r#"{ "modes": [{ "k": [1, 0], "amp": 1e-4 }, { "k": [1, -1], "amp": 2e-4 }] }"#,
    )
    .unwrap();
    assert!(run(
        &["generate", "--K", "8", "--gen", "gen.json", "--out", "x.json"],
        tmp.path()
    )
    .status
    .success());
    let v = stdout_json(&run(
        &["conjugacy", "--input", "x.json", "--grid", "12"],
        tmp.path(),
    ));
    assert_eq!(v["grid"], 12);
    assert!(v["residual"].as_f64().unwrap() < 1e-8);
}

fn bundled(name: &str) -> String {
    format!(
        "{}/../../experiments/{name}.json",
        env!("CARGO_MANIFEST_DIR")
    )
}

#[test]
fn bundled_experiments_reach_their_verdicts() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().to_str().unwrap();
    let o = run(
        &["run", &bundled("fixed_point"), "--root", root],
        tmp.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/fixed_point/summary.json")).unwrap())
            .unwrap();
    for seed in s["seeds"].as_array().unwrap() {
        assert_eq!(seed["status"], "CONVERGED", "{seed}");
    }

    let o = run(
        &["run", &bundled("unstable_growth"), "--root", root],
        tmp.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s: Value = serde_json::from_slice(
        &fs::read(tmp.path().join("out/unstable_growth/summary.json")).unwrap(),
    )
    .unwrap();
    for seed in s["seeds"].as_array().unwrap() {
        assert_eq!(seed["status"], "DIVERGED", "{seed}");
        for r in seed["unstable_ratios"].as_array().unwrap() {
            assert!((r.as_f64().unwrap() + 2.618_033_988_749_895).abs() < 1e-3);
        }
    }
}

#[test]
fn generator_examples() {
    let b = golden_basis();
    let omega = FourierField::constant(&b.omega, 8);

    let constant = FieldGen {
        preset: Some("constant".into()),
        ..FieldGen::default()
    };
    let f = generate_field(&constant, &b, 8, 0.6).unwrap();
    assert!(f.is_real());
    assert_eq!(f.sub(&omega).mode_count(), 0);

    let one = FieldGen {
        modes: vec![ModeSpec {
            k: vec![2, -1],
            amp: 1e-3,
            v: None,
            phase: 0.0,
        }],
        ..FieldGen::default()
    };
    let f = generate_field(&one, &b, 8, 0.6).unwrap();
    let pert = f.sub(&omega);
    assert_eq!(pert.mode_count(), 2);
    assert_eq!(pert.coeff(&MultiIndex(vec![2, -1]))[0].re, 1e-3);
    assert_eq!(pert.coeff(&MultiIndex(vec![-2, 1]))[0].re, 1e-3);

    let random = FieldGen {
        random: Some(RandomSpec {
            count: 20,
            amp: 1e-4,
            seed: 7,
            radius: None,
        }),
        ..FieldGen::default()
    };
    let a = generate_field(&random, &b, 8, 0.6).unwrap();
    let again = generate_field(&random, &b, 8, 0.6).unwrap();
    assert_eq!(a.to_json().unwrap(), again.to_json().unwrap());
    assert!(a.is_real() && a.hermitian_defect() == 0.0);
    assert!(a.sub(&omega).mode_count() > 0);
}
