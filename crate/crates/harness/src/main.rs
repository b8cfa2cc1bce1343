use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use bbmlab::config::{apply_override, read_value, set_path, ExperimentConfig, ExperimentKind};
use bbmlab::report::{fmt_num, write_atomic, Report};
use bbmlab::{configure_workers, execute, experiments};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "bbmlab",
    version,
    about = "Weighted nonlocal energies, their local limits and spectral checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One nonlocal energy with its near/mid/far breakdown (JSON on stdout).
    Energy {
        #[command(flatten)]
        common: Common,
        /// Append a row to this CSV file (header written when new).
        #[arg(long)]
        append: Option<PathBuf>,
    },
    /// The local limit energy D(u) (JSON on stdout).
    LimitEnergy(Common),
    /// Limit-measure masses near the origin.
    Mu(Common),
    /// One first eigenpair (JSON on stdout, eigenfunction CSV on disk).
    Eigen {
        #[command(flatten)]
        common: Common,
        /// Where to write the eigenfunction CSV.
        #[arg(long, default_value = "eigenfunction.csv")]
        ef_out: PathBuf,
    },
    /// Energies along an index schedule against the local limit.
    SweepBbm(Common),
    /// First eigenvalues along an index schedule against the local limit.
    SweepEigen(Common),
    /// Poincare inequality along an index schedule on a bank of 20 functions.
    Poincare(Common),
    /// Energies of a nonlocal family converging to a Gagliardo seminorm.
    NonlocalBbm(Common),
    /// The inequality suite.
    Check(Common),
    /// Re-runs the config embedded in a JSON report and compares the CSV.
    Replay {
        report: PathBuf,
        /// Also write the new outputs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON or TOML config file (a JSON report is accepted too).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set grid.h=0.001`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for CSV and JSON reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Kernel spec: JSON, or `type[:key=value,...]`.
    #[arg(long)]
    kernel: Option<String>,
    /// Weight spec: JSON, or `type[:key=value,...]`.
    #[arg(long)]
    weight: Option<String>,
    /// Function spec: JSON, `type[:key=value,...]`, or a `.csv` path.
    #[arg(long)]
    u: Option<String>,
    /// Omega spec: JSON, or `type[:key=value,...]`.
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    half_width: Option<f64>,
    /// Truncation radius of the pair sums.
    #[arg(long)]
    trunc: Option<f64>,
    /// Radius separating the near/mid/far bands.
    #[arg(long)]
    delta: Option<f64>,
    /// Kernel index or comma-separated schedule.
    #[arg(long, value_delimiter = ',')]
    index: Vec<f64>,
    /// Cells per axis across Omega.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Use the local limit energy in `eigen`.
    #[arg(long)]
    local: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the per-check lines.
    #[arg(long)]
    quiet: bool,
}

/// `{...}` as JSON, `x.csv` as a CSV function, otherwise `type[:k=v,...]`.
fn parse_spec(raw: &str, csv_ok: bool) -> Result<Value> {
    let raw = raw.trim();
    if raw.starts_with('{') {
        return serde_json::from_str(raw)
            .with_context(|| format!("spec '{raw}' is not valid JSON"));
    }
    if csv_ok && raw.ends_with(".csv") {
        return Ok(json!({"type": "csv", "path": raw}));
    }
    let (ty, rest) = raw.split_once(':').unwrap_or((raw, ""));
    let mut v = json!({ "type": ty });
    for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
        apply_override(&mut v, kv).map_err(anyhow::Error::from)?;
    }
    Ok(v)
}

fn build_config(c: &Common, kind: ExperimentKind, default_index: bool) -> Result<ExperimentConfig> {
    let mut v = match &c.config {
        Some(p) => read_value(p)?,
        None => json!({}),
    };
    set_path(&mut v, "kind", json!(kind.name()))?;
    let mut put = |key: &str, val: Value| set_path(&mut v, key, val).map_err(anyhow::Error::from);
    if let Some(s) = &c.kernel {
        put("kernel", parse_spec(s, false)?)?;
    }
    if let Some(s) = &c.weight {
        put("weight", parse_spec(s, false)?)?;
    }
    if let Some(s) = &c.u {
        put("function", parse_spec(s, true)?)?;
    }
    if let Some(s) = &c.omega {
        put("omega", parse_spec(s, false)?)?;
    }
    let nums: [(&str, Option<Value>); 11] = [
        ("p", c.p.map(|x| json!(x))),
        ("grid.h", c.h.map(|x| json!(x))),
        ("grid.dim", c.dim.map(|x| json!(x))),
        ("grid.half_width", c.half_width.map(|x| json!(x))),
        ("energy.truncation", c.trunc.map(|x| json!(x))),
        ("energy.delta", c.delta.map(|x| json!(x))),
        ("eigen.n", c.n.map(|x| json!(x))),
        ("eigen.solver", c.solver.as_ref().map(|x| json!(x))),
        ("eigen.tol", c.tol.map(|x| json!(x))),
        ("eigen.max_iter", c.max_iter.map(|x| json!(x))),
        ("seed", c.seed.map(|x| json!(x))),
    ];
    for (key, val) in nums {
        if let Some(val) = val {
            put(key, val)?;
        }
    }
    if c.local {
        put("eigen.local", json!(true))?;
    }
    if !c.index.is_empty() {
        put("schedule", json!(c.index))?;
    }
    for o in &c.set {
        apply_override(&mut v, o)?;
    }
    let has_schedule = v
        .get("schedule")
        .and_then(Value::as_array)
        .is_some_and(|a| !a.is_empty());
    if default_index && !has_schedule {
        set_path(&mut v, "schedule", json!([0.99]))?;
    }
    Ok(ExperimentConfig::from_value(v)?)
}

fn print_checks(report: &Report, quiet: bool) {
    if quiet {
        return;
    }
    for c in &report.checks {
        let tag = match (c.asserted, c.passed) {
            (true, true) => "PASS",
            (true, false) => "FAIL",
            (false, true) => "info ok",
            (false, false) => "info no",
        };
        say!("{tag} {}: {}", c.name, c.detail);
    }
}

fn run_sweep(c: &Common, kind: ExperimentKind) -> Result<ExitCode> {
    let cfg = build_config(c, kind, false)?;
    configure_workers(cfg.workers);
    let (report, written) = execute(&cfg, c.out.as_deref())?;
    print_checks(&report, c.quiet);
    match written {
        Some(w) => say!("wrote {} and {}", w.csv.display(), w.json.display()),
        None => {
            let _ = write!(std::io::stdout().lock(), "{}", report.to_csv());
        }
    }
    Ok(if report.all_asserted_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn append_energy_row(path: &Path, v: &Value) -> Result<()> {
    const COLS: [&str; 14] = [
        "kernel",
        "index",
        "weight",
        "p",
        "h",
        "truncation",
        "delta",
        "rule",
        "total",
        "near",
        "mid",
        "far",
        "diagonal",
        "far_tail_bound",
    ];
    let cell = |key: &str| -> String {
        let x = v
            .get(key)
            .or_else(|| v["params"].get(key))
            .unwrap_or(&Value::Null);
        match x {
            Value::Number(n) => n.as_f64().map(fmt_num).unwrap_or_default(),
            Value::String(s) if s.contains([',', '"']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        }
    };
    let exists = path.exists();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if !exists {
        writeln!(f, "{}", COLS.join(","))?;
    }
    let row: Vec<String> = COLS.iter().map(|c| cell(c)).collect();
    writeln!(f, "{}", row.join(",")).with_context(|| format!("appending to {}", path.display()))?;
    Ok(())
}

fn replay(path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Some(csv_name) = doc["metadata"]["csv_file"].as_str() else {
        bail!("{} is not a bbmlab report", path.display());
    };
    let old_csv_path = path.with_file_name(csv_name);
    let old = std::fs::read_to_string(&old_csv_path)
        .with_context(|| format!("reading {}", old_csv_path.display()))?;
    let cfg = ExperimentConfig::from_value(doc["config"].clone())?;
    configure_workers(cfg.workers);
    if cfg.hash() != doc["metadata"]["config_hash"].as_str().unwrap_or_default() {
        bail!("embedded config does not match its recorded hash");
    }
    let (report, _) = execute(&cfg, out)?;
    if report.to_csv() == old {
        say!("identical: {}", old_csv_path.display());
        Ok(ExitCode::SUCCESS)
    } else {
        say!("differs: {}", old_csv_path.display());
        Ok(ExitCode::from(1))
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Energy { common, append } => {
            let cfg = build_config(&common, ExperimentKind::BbmSweep, true)?;
            configure_workers(cfg.workers);
            let v = experiments::single_energy(&cfg)?;
            if let Some(p) = append {
                append_energy_row(&p, &v)?;
            }
            say!("{}", serde_json::to_string_pretty(&v)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::LimitEnergy(common) => {
            let cfg = build_config(&common, ExperimentKind::BbmSweep, true)?;
            let v = experiments::single_limit_energy(&cfg)?;
            say!("{}", serde_json::to_string_pretty(&v)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Eigen { common, ef_out } => {
            let cfg = build_config(&common, ExperimentKind::EigenSweep, true)?;
            configure_workers(cfg.workers);
            let (v, ef) = experiments::single_eigen(&cfg)?;
            write_atomic(&ef_out, &ef.to_csv())?;
            say!("{}", serde_json::to_string_pretty(&v)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Mu(c) => run_sweep(&c, ExperimentKind::Mu),
        Command::SweepBbm(c) => run_sweep(&c, ExperimentKind::BbmSweep),
        Command::SweepEigen(c) => run_sweep(&c, ExperimentKind::EigenSweep),
        Command::Poincare(c) => run_sweep(&c, ExperimentKind::Poincare),
        Command::NonlocalBbm(c) => run_sweep(&c, ExperimentKind::NonlocalBbm),
        Command::Check(c) => run_sweep(&c, ExperimentKind::InequalitySuite),
        Command::Replay { report, out } => replay(&report, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            // layers that already print their source would repeat it
            let mut msg = String::new();
            for layer in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&layer) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&layer);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
