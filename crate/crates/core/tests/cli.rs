use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qht(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qht-gof"))
        .args(args)
        .env_remove("QHT_GOF_CACHE")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn rows(csv: &str) -> Vec<(f64, f64)> {
    csv.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .map(|l| {
            let (x, v) = l.split_once(',').unwrap();
            (x.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn patterns_are_scaled_by_pi() {
    let out = qht(&["patterns", "--j", "0", "--k", "0", "--x-min", "-1", "--x-max", "1", "--step", "0.25"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("# qht-gof "));
    let at0 = rows(&text).into_iter().find(|(x, _)| *x == 0.0).unwrap().1;
    assert!((at0 - 2.0 / std::f64::consts::PI).abs() < 1e-6);
}

#[test]
fn noisy_odd_pattern_is_odd() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f21.csv");
    let out = qht(&[
        "patterns", "--j", "2", "--k", "1", "--eta", "0.9", "--x-min", "-3", "--x-max", "3", "--step", "0.5", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let values = rows(&fs::read_to_string(&path).unwrap());
    assert_eq!(values.len(), 13);
    for i in 0..values.len() {
        let (x, v) = values[i];
        let (mx, mv) = values[values.len() - 1 - i];
        assert_eq!(x, -mx);
        assert!((v + mv).abs() < 1e-9);
    }
}

#[test]
fn invalid_efficiency_is_a_validation_failure() {
    let out = qht(&["patterns", "--j", "0", "--k", "0", "--eta", "0.4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("(1/2, 1]"), "{}", stderr(&out));
    let out = qht(&["simulate", "--state", "vacuum", "-n", "10", "--eta", "1.2", "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn distances() {
    let d = |a: &str, b: &str| -> f64 {
        let out = qht(&["distance", a, b]);
        assert!(out.status.success(), "{}", stderr(&out));
        stdout(&out).trim().parse().unwrap()
    };
    assert_eq!(d("vacuum", "single_photon"), 2.0);
    assert!((d("coherent:3", "cat:3") - 0.9999).abs() < 5e-4);
    assert_eq!(d("cat:3", "cat:3"), 0.0);
    assert_eq!(d(r#"{"kind": "coherent", "q0": 3.0}"#, "coherent:3"), 0.0);
    let bad = qht(&["distance", "vacuum", "banana"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds.csv");
    let out = qht(&["simulate", "--state", "single_photon", "-n", "4000", "--eta", "0.9", "--seed", "3", "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = qht(&["estimate", "--data", data.to_str().unwrap(), "--tau", "vacuum", "-N", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mn: f64 = stdout(&out).trim().parse().unwrap();
    assert!((mn - 2.0).abs() < 0.5, "{mn}");

    fs::write(&data, "# qht-dataset v1, state=vacuum, eta=1, n=1, seed=0\n0.1,7.0\n").unwrap();
    let out = qht(&["estimate", "--data", data.to_str().unwrap(), "--tau", "vacuum", "-N", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_prints_thresholds() {
    let out = qht(&["calibrate", "--tau", "vacuum", "-N", "4", "-n", "300", "--runs", "100", "--seed", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,nu");
    assert_eq!(lines.len(), 3);
    let out = qht(&["calibrate", "--tau", "vacuum", "-N", "4", "-n", "300", "--runs", "50"]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_spec(dir: &Path, runs: usize) -> String {
    let spec = format!(
        r#"{{
  "schema_version": 1,
  "case": "B",
  "tau": {{"kind": "coherent", "q0": 3.0}},
  "alternatives": [{{"kind": "coherent", "q0": 3.0}}, {{"kind": "cat", "q0": 3.0}}],
  "eta": 0.9,
  "N": 4,
  "n": 300,
  "runs": {runs},
  "alphas": [0.01, 0.05],
  "seed": 11,
  "output_dir": "{}"
}}"#,
        dir.join("out").display()
    );
    let path = dir.join("spec.json");
    fs::write(&path, spec).unwrap();
    path.to_str().unwrap().to_string()
}

fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 100);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let out = qht(&["--jobs", "1", "run", "--spec", &spec, "--out", first.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = qht(&["run", "--jobs", "3", "--spec", &spec, "--out", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let a = output_files(&first);
    let b = output_files(&second);
    assert_eq!(a, b);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"summary.csv"));
    assert!(names.contains(&"calibration.csv"));
    assert!(names.contains(&"thresholds.csv"));
    assert!(names.contains(&"replicates_1_cat_3.csv"));
    assert!(names.contains(&"report_0_coherent_3_alpha0.01.json"));
    for (name, bytes) in &a {
        let text = String::from_utf8(bytes.clone()).unwrap();
        if name.ends_with(".csv") {
            assert!(text.starts_with("# qht-gof "), "{name}");
            assert!(text.lines().next().unwrap().contains("spec_sha256="), "{name}");
            assert!(text.lines().next().unwrap().ends_with("seed=11"), "{name}");
        } else {
            let json: serde_json::Value = serde_json::from_str(&text).unwrap();
            let obj = json.as_object().unwrap();
            assert!(text.starts_with("{\n  \"provenance\": {"), "{name}");
            for key in ["case", "state", "tau", "eta", "N", "n", "alpha", "nu", "runs", "median", "mse", "level_or_power", "seed"] {
                assert!(obj.contains_key(key), "{name} lacks {key}");
            }
        }
    }
    let replicate_rows = String::from_utf8(a.iter().find(|(n, _)| n == "replicates_1_cat_3.csv").unwrap().1.clone())
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count();
    assert_eq!(replicate_rows, 101);

    let seeded = dir.path().join("seeded");
    let out = qht(&["run", "--spec", &spec, "--seed", "12", "--out", seeded.to_str().unwrap()]);
    assert!(out.status.success());
    assert_ne!(output_files(&seeded), a);
}

#[test]
fn run_rejects_bad_specs_with_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 0);
    let out = qht(&["run", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`runs`"), "{}", stderr(&out));

    let path = dir.path().join("broken.json");
    fs::write(&path, r#"{"schema_version": 1, "case": "A", "tau": {"kind": "vacuum"}, "alternatives": [{"kind": "cat"}]}"#).unwrap();
    let out = qht(&["run", "--spec", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alternatives[0]"), "{}", stderr(&out));

    let out = qht(&["run", "--spec", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn table_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let data = dir.path().join("ds.csv");
    assert!(qht(&["simulate", "--state", "vacuum", "-n", "500", "--eta", "0.8", "--out", data.to_str().unwrap()])
        .status
        .success());
    let estimate = || {
        Command::new(env!("CARGO_BIN_EXE_qht-gof"))
            .args(["estimate", "--data", data.to_str().unwrap(), "--tau", "vacuum", "-N", "3"])
            .env("QHT_GOF_CACHE", &cache)
            .output()
            .unwrap()
    };
    let first = estimate();
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    let second = estimate();
    assert_eq!(first.stdout, second.stdout);
    let uncached = qht(&["estimate", "--data", data.to_str().unwrap(), "--tau", "vacuum", "-N", "3"]);
    assert_eq!(first.stdout, uncached.stdout);
}
