use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use frgp::cli::{sha256_hex, RunManifest};
use frgp::experiments::{preset, ExperimentConfig};

fn frgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frgp")).args(args).env("FRGP_THREADS", "1").output().expect("spawn frgp")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_config(dir: &Path, name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> String {
    let mut c = ExperimentConfig { iters: 300, burnin: 100, replications: 3, ..preset(name).unwrap() };
    edit(&mut c);
    let p = dir.join(format!("{name}.json"));
    fs::write(&p, c.to_json()).unwrap();
    p.display().to_string()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn check_manifest(dir: &Path) -> RunManifest {
    let m = manifest(dir);
    for a in &m.artifacts {
        let bytes = fs::read(dir.join(&a.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), a.sha256, "{}", a.path);
        assert_eq!(bytes.len() as u64, a.bytes);
    }
    m
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn looks_like_svg(path: &Path) {
    let s = fs::read_to_string(path).unwrap();
    assert!(s.trim_start().starts_with("<svg") || s.starts_with("<?xml"), "{}", path.display());
    assert!(s.trim_end().ends_with("</svg>"));
    assert_eq!(s.matches("<svg").count(), s.matches("</svg>").count());
    assert_eq!(s.matches("<g").count() - s.matches("<g/>").count(), s.matches("</g>").count());
}

#[test]
fn fit_preset_writes_three_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let o = frgp(&["fit", "--preset", "gpi-f1-n200", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["chain.csv", "manifest.json", "predictive.csv"]);
    let m = check_manifest(&out);
    assert_eq!(m.command, "fit");
    assert_eq!(m.seed, 3);
    assert_eq!(m.artifacts.len(), 2);
    let pred = csv_rows(&out.join("predictive.csv"));
    assert_eq!(pred.len(), 201);
    for r in &pred {
        let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3], "{v:?}");
    }
}

#[test]
fn fit_reads_supplied_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    let mut body = String::from("x,y\n");
    for i in 0..40 {
        let x = i as f64 / 39.0;
        body += &format!("{x},{}\n", (4.0 * x).sin());
    }
    fs::write(&data, body).unwrap();
    let cfg = small_config(tmp.path(), "spde-f1-n200", |_| {});
    let out = tmp.path().join("o");
    let o = frgp(&["fit", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pred = csv_rows(&out.join("predictive.csv"));
    let mid: Vec<f64> = pred[100].iter().map(|s| s.parse().unwrap()).collect();
    assert!((mid[1] - 2f64.sin()).abs() < 0.1, "{mid:?}");
}

#[test]
fn malformed_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let cases = [
        ("syntax.json", "{ not json".to_string()),
        ("unknown.json", r#"{"schema_version": 1, "function": "f1", "n": 100, "method": "gpi", "nu": 1.5, "bogus": 1}"#.into()),
        ("version.json", r#"{"schema_version": 9, "function": "f1", "n": 100, "method": "gpi", "nu": 1.5}"#.into()),
        ("burnin.json", r#"{"schema_version": 1, "function": "f1", "n": 100, "method": "gpi", "nu": 1.5, "iters": 10, "burnin": 20}"#.into()),
    ];
    for (name, body) in cases {
        let p = tmp.path().join(name);
        fs::write(&p, body).unwrap();
        let o = frgp(&["fit", "--config", p.to_str().unwrap(), "--out", out]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&frgp(&["fit", "--config", "/no/such/file.json", "--out", out])), 2);
    assert_eq!(code(&frgp(&["fit", "--preset", "gpi-f1-n200", "--config", "x.json", "--out", out])), 2);
    assert_eq!(code(&frgp(&["fit", "--out", out])), 2);
    assert_eq!(code(&frgp(&["bogus"])), 2);
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "gpi-f1-n200", |_| {});
    let run = |dir: &str, seed: &str| {
        let out = tmp.path().join(dir);
        let o = frgp(&["bench", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let fit = tmp.path().join(format!("{dir}-fit"));
        let o = frgp(&["fit", "--config", &cfg, "--seed", seed, "--out", fit.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        [fs::read(out.join("replications.csv")).unwrap(), fs::read(fit.join("chain.csv")).unwrap(), fs::read(fit.join("predictive.csv")).unwrap()]
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_ne!(a[0], c[0]);
}

#[test]
fn scan_table_is_normalized_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scan");
    let o = frgp(&["scan", "--preset", "gpi-f1-n200", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    check_manifest(&out);
    let table: Vec<(usize, f64, f64)> = csv_rows(&out.join("scan_table.csv"))
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    let total: f64 = table.iter().map(|t| t.2).sum();
    assert!((total - 1.0).abs() < 1e-9, "{total}");
    for r in csv_rows(&out.join("p_n.csv")) {
        let n: usize = r[0].parse().unwrap();
        let p: f64 = r[1].parse().unwrap();
        let s: f64 = table.iter().filter(|t| t.0 == n).map(|t| t.2).sum();
        assert!((p - s).abs() < 1e-12);
    }
    for r in csv_rows(&out.join("p_kappa.csv")) {
        let k: f64 = r[0].parse().unwrap();
        let p: f64 = r[1].parse().unwrap();
        let s: f64 = table.iter().filter(|t| t.1 == k).map(|t| t.2).sum();
        assert!((p - s).abs() < 1e-12);
    }
    looks_like_svg(&out.join("p_n.svg"));
    looks_like_svg(&out.join("p_kappa.svg"));
    let exact = frgp(&["scan", "--preset", "exact-f1-n200", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&exact), 2);
}

#[test]
fn bench_writes_rows_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "timing-f1", |c| {
        let t = c.timing.as_mut().unwrap();
        t.n_values = vec![100, 200];
        t.reps = 2;
        t.iters = 5;
        t.samples = 2;
        c.n = 100;
        c.replications = 2;
    });
    let out = tmp.path().join("bench");
    let o = frgp(&["bench", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = check_manifest(&out);
    assert_eq!(m.artifacts.len(), 6);
    assert_eq!(csv_rows(&out.join("replications.csv")).len(), 2);
    assert_eq!(csv_rows(&out.join("replication_times.csv")).len(), 2);
    let c = ExperimentConfig::from_json(&fs::read_to_string(&cfg).unwrap()).unwrap();
    let t = c.timing.unwrap();
    assert_eq!(csv_rows(&out.join("timing.csv")).len(), t.methods.len() * 2 * t.reps);
    assert_eq!(csv_rows(&out.join("timing_summary.csv")).len(), t.methods.len() * 2);
    looks_like_svg(&out.join("amse.svg"));
    looks_like_svg(&out.join("timing.svg"));
}

#[test]
fn diag_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("diag");
    let o = frgp(&["diag", "--suite", "schur", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert_eq!(csv_rows(&out.join("report.csv")).len(), 36);
    check_manifest(&out);
    assert_eq!(code(&frgp(&["diag", "--suite", "eigen", "--out", out.to_str().unwrap()])), 0);
    assert_eq!(code(&frgp(&["diag", "--suite", "nope", "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn presets_are_listed_and_valid() {
    let o = frgp(&["presets"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = String::from_utf8_lossy(&o.stdout).lines().map(String::from).collect();
    assert!(names.len() > 20);
    for n in names {
        let c = preset(&n).unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }
}

#[test]
fn thread_cap_must_be_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_frgp"))
        .args(["diag", "--suite", "eigen", "--out", tmp.path().to_str().unwrap()])
        .env("FRGP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
