//! Sweep reports and their CSV/JSON persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::ser::Serializer;
use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::HarnessError;

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Self::Num(x) => fmt_num(*x),
            Self::Int(i) => i.to_string(),
            Self::Bool(b) => b.to_string(),
            Self::Empty => String::new(),
            Self::Text(s) if s.contains([',', '"', '\n']) => {
                format!("\"{}\"", s.replace('"', "\"\""))
            }
            Self::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Self::Num(x) => Some(*x),
            Self::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

/// Shortest round-trip decimal; non-finite values as `NaN`, `inf`, `-inf`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:?}")
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Num(x) if x.is_finite() => s.serialize_f64(*x),
            Self::Num(x) => s.serialize_str(&fmt_num(*x)),
            Self::Int(i) => s.serialize_i64(*i),
            Self::Text(t) => s.serialize_str(t),
            Self::Bool(b) => s.serialize_bool(*b),
            Self::Empty => s.serialize_none(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Num(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Self::Int(x as i64)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Self::Bool(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Self::Text(x.into())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Self::Text(x)
    }
}
impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Self::Empty, Self::Num)
    }
}

/// The core operation and arguments behind a row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Source {
    pub operation: String,
    pub params: BTreeMap<String, Value>,
}

impl Source {
    pub fn new(operation: &str) -> Self {
        Self {
            operation: operation.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, v: impl Serialize) -> Self {
        self.params
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub values: Vec<Cell>,
    pub source: Source,
}

/// A pass/fail verdict. Only asserted checks decide the exit status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub asserted: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub config_hash: String,
    pub git_describe: String,
    pub version: String,
    pub runtime_seconds: f64,
    pub csv_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    /// Scalar results that are not per-row (limits, constants).
    pub summary: BTreeMap<String, Value>,
}

impl Report {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self {
            kind: kind.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            checks: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, values: Vec<Cell>, source: Source) {
        assert_eq!(
            values.len(),
            self.columns.len(),
            "row width differs from header"
        );
        self.rows.push(Row { values, source });
    }

    pub fn check(&mut self, name: &str, asserted: bool, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            asserted,
            passed,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, key: &str, v: impl Serialize) {
        self.summary
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of a numeric column, `None` for non-numeric cells.
    pub fn numbers(&self, name: &str) -> Vec<Option<f64>> {
        match self.column(name) {
            Some(i) => self.rows.iter().map(|r| r.values[i].as_f64()).collect(),
            None => Vec::new(),
        }
    }

    /// Stable sort on the given numeric column.
    pub fn sort_by_column(&mut self, name: &str) {
        if let Some(i) = self.column(name) {
            self.rows.sort_by(|a, b| {
                let x = a.values[i].as_f64().unwrap_or(f64::NAN);
                let y = b.values[i].as_f64().unwrap_or(f64::NAN);
                x.total_cmp(&y)
            });
        }
    }

    pub fn all_asserted_pass(&self) -> bool {
        self.checks.iter().filter(|c| c.asserted).all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.values.iter().map(Cell::csv).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn to_json(&self, cfg: &ExperimentConfig, meta: &Metadata) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(flatten)]
            report: &'a Report,
            metadata: &'a Metadata,
            config: &'a ExperimentConfig,
        }
        let mut s = serde_json::to_string_pretty(&Doc {
            report: self,
            metadata: meta,
            config: cfg,
        })
        .expect("report serializes");
        s.push('\n');
        s
    }
}

/// Writes `text` to `path` through a temporary sibling and a rename,
/// creating parent directories as needed.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.sync_all())
        .map_err(|e| HarnessError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        HarnessError::io(path, e)
    })
}

/// Paths of a persisted report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Written {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`.
pub fn persist(
    report: &Report,
    cfg: &ExperimentConfig,
    dir: &Path,
    runtime_seconds: f64,
) -> Result<Written, HarnessError> {
    let stem = cfg.stem();
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    let meta = Metadata {
        config_hash: cfg.hash(),
        git_describe: crate::GIT_DESCRIBE.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        runtime_seconds,
        csv_file: format!("{stem}.csv"),
    };
    write_atomic(&csv, &report.to_csv())?;
    write_atomic(&json, &report.to_json(cfg, &meta))?;
    Ok(Written { csv, json })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_cells() {
        let mut r = Report::new("t", &["a", "b", "c", "d"]);
        r.push(
            vec![0.1.into(), f64::NAN.into(), "x,y".into(), Cell::Empty],
            Source::new("op").with("k", 3),
        );
        assert_eq!(r.to_csv(), "a,b,c,d\n0.1,NaN,\"x,y\",\n");
        assert_eq!(fmt_num(2.0), "2.0");
        assert_eq!(fmt_num(1e-300), "1e-300");
    }

    #[test]
    fn atomic_write_creates_dirs() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("a/b/c.txt");
        write_atomic(&p, "hi").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "hi");
        let left: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(left.len(), 1);
    }
}
