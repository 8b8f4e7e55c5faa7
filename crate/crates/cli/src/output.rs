//! Staged artifacts and the run manifest.
//!
//! Commands add files to an [`Artifacts`] buffer; nothing touches the disk
//! until [`Artifacts::commit`], so a failing run leaves no partial output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde_json::{json, Map, Value};

pub const SCHEMA: &str = "sca/1";
pub const MANIFEST: &str = "manifest.json";

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

/// JSON number, or `"inf"`, `"-inf"`, `"nan"` for non-finite values.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::String(fmt_f64(v))
    }
}

pub fn nums(v: impl IntoIterator<Item = f64>) -> Value {
    Value::Array(v.into_iter().map(num).collect())
}

/// Comma-separated table with a header row.
#[derive(Debug, Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Table { text }
    }

    pub fn with_columns(header: Vec<String>) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Table { text }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(v) => self.text.push_str(&fmt_f64(*v)),
                Cell::I(v) => write!(self.text, "{v}").expect("string write"),
                Cell::U(v) => write!(self.text, "{v}").expect("string write"),
                Cell::B(v) => self.text.push_str(if *v { "1" } else { "0" }),
            }
        }
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

pub enum Cell {
    F(f64),
    I(i64),
    U(u64),
    B(bool),
}

/// Headerless matrix, the same format the commands read.
pub fn matrix_csv(m: &Array2<f64>) -> Vec<u8> {
    let mut text = String::new();
    for row in m.rows() {
        push_row(&mut text, row);
    }
    text.into_bytes()
}

fn push_row(text: &mut String, row: ArrayView1<'_, f64>) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            text.push(',');
        }
        text.push_str(&fmt_f64(*v));
    }
    text.push('\n');
}

/// Headerless points with an optional trailing label column.
pub fn points_csv(points: &Array2<f64>, labels: Option<&[i64]>) -> Vec<u8> {
    let mut text = String::new();
    for (i, row) in points.rows().into_iter().enumerate() {
        push_row(&mut text, row);
        if let Some(l) = labels {
            text.pop();
            write!(text, ",{}\n", l[i]).expect("string write");
        }
    }
    text.into_bytes()
}

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
    pub invariants: Map<String, Value>,
    pub summary: Map<String, Value>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn summary(&mut self, key: &str, value: Value) {
        self.summary.insert(key.to_string(), value);
    }

    /// Writes every staged file and then the manifest.
    pub fn commit(self, dir: &Path, command: &str, config: Value, seed: u64) -> std::io::Result<()> {
        let manifest = json!({
            "schema": SCHEMA,
            "command": command,
            "seed": seed,
            "config": config,
            "versions": {
                "sca": env!("CARGO_PKG_VERSION"),
            },
            "invariants": Value::Object(self.invariants),
            "warnings": self.warnings,
            "summary": Value::Object(self.summary),
            "outputs": self.files.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
        });
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(dir.join(MANIFEST), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(num(f64::INFINITY), Value::String("inf".into()));
        assert_eq!(num(2.0), json!(2.0));
    }

    #[test]
    fn csv_layouts() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let text = String::from_utf8(points_csv(&m, Some(&[0, 1]))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1.0000000000000000e0,2.0000000000000000e0,0");
        assert_eq!(String::from_utf8(matrix_csv(&m)).unwrap().lines().count(), 2);
        let mut t = Table::new(&["a", "b"]);
        t.row(&[Cell::U(3), Cell::B(true)]);
        assert_eq!(String::from_utf8(t.into_bytes()).unwrap(), "a,b\n3,1\n");
    }

    #[test]
    fn commit_writes_manifest_last() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut a = Artifacts::default();
        a.add("x.csv", b"1\n".to_vec());
        a.warn("w");
        a.commit(&out, "test", json!({"k": 1}), 7).unwrap();
        let m: Value = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m["schema"], SCHEMA);
        assert_eq!(m["seed"], 7);
        assert_eq!(m["outputs"], json!(["x.csv"]));
        assert_eq!(m["warnings"], json!(["w"]));
    }
}
