use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bbmlab"));
    c.env_remove("BBMLAB_WORKERS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(mut c: Command) -> Output {
    let out = c.output().expect("bbmlab runs");
    if out.status.code() == Some(2) {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

const SMALL: &str = r#"
kind = "bbm-sweep"
p = 2.0
schedule = [0.5, 0.9]

[grid]
h_log2 = -7
half_width = 5.0

[weight]
type = "product"
f = "2 + cos(x)"
f_k = "(1 + 1/k) * (2 + cos(x))"
lipschitz = 1.0
sup = 3.0

[energy]
truncation = 3.0

[tolerances]
trend = false
rel_tol = 1.0

[output]
stem = "small"
"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn worker_count_does_not_change_csv() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let mut csv = Vec::new();
    for workers in ["1", "4"] {
        let out_dir = d.path().join(format!("w{workers}"));
        let mut c = bin();
        c.env("BBMLAB_WORKERS", workers)
            .args(["sweep-bbm", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir);
        assert!(run(c).status.success());
        csv.push(std::fs::read(out_dir.join("small.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn replay_reproduces_report() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let out_dir = d.path().join("run");
    let mut c = bin();
    c.args(["sweep-bbm", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir);
    assert!(run(c).status.success());

    let mut c = bin();
    c.arg("replay").arg(out_dir.join("small.json"));
    let out = run(c);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("identical"));

    // a tampered CSV is reported as different
    let csv = out_dir.join("small.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    std::fs::write(&csv, text.replacen("0.5,", "0.25,", 1)).unwrap();
    let mut c = bin();
    c.arg("replay").arg(out_dir.join("small.json"));
    assert_eq!(run(c).status.code(), Some(1));
}

#[test]
fn json_and_toml_configs_agree() {
    let d = tempfile::tempdir().unwrap();
    let toml_path = small_config(d.path());
    let v: toml::Value = toml::from_str(SMALL).unwrap();
    let json_path = d.path().join("small.json.in");
    std::fs::write(&json_path, serde_json::to_string(&v).unwrap()).unwrap();
    let mut reports = Vec::new();
    for (cfg, sub) in [(&toml_path, "t"), (&json_path, "j")] {
        let mut c = bin();
        c.args(["sweep-bbm", "--config"])
            .arg(cfg)
            .arg("--out")
            .arg(d.path().join(sub));
        assert!(run(c).status.success());
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(d.path().join(sub).join("small.json")).unwrap(),
        )
        .unwrap();
        let csv = std::fs::read(d.path().join(sub).join("small.csv")).unwrap();
        reports.push((json["metadata"]["config_hash"].clone(), csv));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn missing_output_directory_is_created() {
    let d = tempfile::tempdir().unwrap();
    let out_dir = d.path().join("a/b/c");
    let mut c = bin();
    c.args([
        "nonlocal-bbm",
        "--index",
        "1,2,4",
        "--h",
        "0.03125",
        "--half-width",
        "3.5",
        "--trunc",
        "2",
    ])
    .args(["--set", "tolerances.rel_tol=0.5"])
    .arg("--out")
    .arg(&out_dir);
    assert!(run(c).status.success());
    let names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 2, "{names:?}");
    assert!(
        names.iter().any(|n| n.ends_with(".csv")) && names.iter().any(|n| n.ends_with(".json"))
    );
}

#[test]
fn broken_weight_fails_with_witness() {
    let d = tempfile::tempdir().unwrap();
    let mut c = bin();
    c.args(["check", "--config"])
        .arg(configs().join("broken_weight.toml"))
        .arg("--out")
        .arg(d.path());
    let out = run(c);
    assert_eq!(out.status.code(), Some(1));
    let csv = std::fs::read_to_string(d.path().join("broken_weight.csv")).unwrap();
    let row = csv
        .lines()
        .find(|l| l.starts_with("modulus,"))
        .expect("modulus row");
    assert!(row.ends_with(",false") && row.contains(" > "), "{row}");
}

#[test]
fn failing_assertion_sets_exit_status() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let mut c = bin();
    c.args(["sweep-bbm", "--config"])
        .arg(&cfg)
        .args([
            "--set",
            "tolerances.rel_tol=0",
            "--set",
            "tolerances.h_factor=0",
            "--quiet",
        ])
        .arg("--out")
        .arg(d.path());
    assert_eq!(run(c).status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_two() {
    let mut c = bin();
    c.args(["sweep-bbm", "--index", "0.9,0.5"]);
    assert_eq!(c.output().unwrap().status.code(), Some(2));
    let mut c = bin();
    c.args(["energy", "--weight", "expr:w=2 +* x"]);
    assert_eq!(c.output().unwrap().status.code(), Some(2));
    let mut c = bin();
    c.args(["sweep-bbm", "--set", "grid.nope=1"]);
    let out = c.output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn energy_appends_rows() {
    let d = tempfile::tempdir().unwrap();
    let log = d.path().join("log/energies.csv");
    for s in ["0.5", "0.9"] {
        let mut c = bin();
        c.args([
            "energy",
            "--index",
            s,
            "--h",
            "0.015625",
            "--half-width",
            "4",
            "--trunc",
            "2",
            "--append",
        ])
        .arg(&log);
        let out = run(c);
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v["total"].as_f64().unwrap() > 0.0);
    }
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("kernel,index,weight,p,h"));
    assert!(lines[1].contains(",0.5,") && lines[2].contains(",0.9,"));
}

#[test]
fn constant_function_has_zero_energy_rows() {
    let mut c = bin();
    c.args([
        "sweep-bbm",
        "--index",
        "0.5,0.9",
        "--u",
        "constant:value=3",
        "--h",
        "0.0625",
        "--half-width",
        "3",
        "--trunc",
        "2",
    ])
    .args(["--set", r#"bbm.sequences=["identity"]"#]);
    let out = run(c);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let csv: Vec<&str> = text
        .lines()
        .skip_while(|l| !l.starts_with("sequence,"))
        .collect();
    let header: Vec<&str> = csv[0].split(',').collect();
    let (e, t) = (
        header.iter().position(|c| *c == "energy").unwrap(),
        header.iter().position(|c| *c == "target").unwrap(),
    );
    for row in &csv[1..] {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[e], f[t]), ("0.0", "0.0"), "{row}");
    }
}

#[test]
fn eigen_writes_eigenfunction_csv() {
    let d = tempfile::tempdir().unwrap();
    let ef = d.path().join("ef/u.csv");
    let mut c = bin();
    c.args(["eigen", "--index", "0.9", "--n", "32", "--ef-out"])
        .arg(&ef);
    let out = run(c);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["lambda"].as_f64().unwrap() > 0.0);
    assert_eq!(std::fs::read_to_string(&ef).unwrap().lines().count(), 34);
}
