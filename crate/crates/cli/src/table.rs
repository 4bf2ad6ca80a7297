//! Result tables and their CSV/JSON encodings.
//!
//! CSV files start with `# key=value` metadata lines and `# check=<json>` lines,
//! followed by the fixed header `seed,quantity,index,value,stderr`. Floats are
//! written in Rust's shortest round-trip form, so parsing a file and writing it
//! again reproduces it byte for byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::{Check, Format};
use crate::error::CliError;

pub const COLUMNS: [&str; 5] = ["seed", "quantity", "index", "value", "stderr"];

/// Metadata key excluded from determinism comparisons.
pub const WALL_TIME_KEY: &str = "wall-time-s";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub seed: u64,
    pub quantity: String,
    pub index: Option<u64>,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl Row {
    pub fn scalar(seed: u64, quantity: &str, value: f64) -> Self {
        Self { seed, quantity: quantity.to_string(), index: None, value, stderr: None }
    }

    pub fn indexed(seed: u64, quantity: &str, index: usize, value: f64) -> Self {
        Self { index: Some(index as u64), ..Self::scalar(seed, quantity, value) }
    }

    pub fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub metadata: BTreeMap<String, String>,
    pub checks: Vec<Check>,
    pub rows: Vec<Row>,
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn parse_float(s: &str, what: &str) -> Result<f64, CliError> {
    s.trim().parse().map_err(|_| CliError::validation(format!("cannot parse {what} {s:?}")))
}

fn json_float(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(float(x))
    }
}

fn json_to_float(v: &Value, what: &str) -> Result<f64, CliError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| CliError::validation(format!("{what} is not a float"))),
        Value::String(s) => parse_float(s, what),
        _ => Err(CliError::validation(format!("{what} must be a number"))),
    }
}

impl ResultTable {
    /// Orders rows by `(seed, quantity, index)`.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| (a.seed, &a.quantity, a.index).cmp(&(b.seed, &b.quantity, b.index)));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}={v}\n"));
        }
        for c in &self.checks {
            out.push_str(&format!("# check={}\n", serde_json::to_string(c).expect("checks serialize")));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        for r in &self.rows {
            let index = r.index.map(|i| i.to_string()).unwrap_or_default();
            let stderr = r.stderr.map(float).unwrap_or_default();
            w.write_record([r.seed.to_string(), r.quantity.clone(), index, float(r.value), stderr]).expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("utf-8"));
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "seed": r.seed,
                    "quantity": r.quantity,
                    "index": r.index,
                    "value": json_float(r.value),
                    "stderr": r.stderr.map(json_float),
                })
            })
            .collect();
        let doc = json!({
            "metadata": self.metadata,
            "checks": self.checks,
            "columns": COLUMNS,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("json serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Parses either encoding; JSON is recognised by a leading `{`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let trimmed = text.trim_start();
        if trimmed.is_empty() {
            return Err(CliError::validation("result file is empty"));
        }
        let table = if trimmed.starts_with('{') { Self::parse_json(trimmed)? } else { Self::parse_csv(text)? };
        if table.rows.is_empty() {
            return Err(CliError::validation("result file has no rows"));
        }
        Ok(table)
    }

    fn parse_csv(text: &str) -> Result<Self, CliError> {
        let mut table = Self::default();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let (k, v) = line[1..]
                .trim_start()
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("malformed metadata line {line:?}")))?;
            if k == "check" {
                let c = serde_json::from_str(v).map_err(|e| CliError::validation(format!("malformed check {v:?}: {e}")))?;
                table.checks.push(c);
            } else {
                table.metadata.insert(k.to_string(), v.to_string());
            }
        }
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| CliError::validation(format!("bad header: {e}")))?;
        if header.iter().ne(COLUMNS) {
            return Err(CliError::validation(format!("header must be {}", COLUMNS.join(","))));
        }
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| CliError::validation(format!("row {}: {e}", i + 1)))?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let seed = field(0).parse().map_err(|_| CliError::validation(format!("row {}: bad seed", i + 1)))?;
            let index = match field(2) {
                "" => None,
                s => Some(s.parse().map_err(|_| CliError::validation(format!("row {}: bad index", i + 1)))?),
            };
            let stderr = match field(4) {
                "" => None,
                s => Some(parse_float(s, "stderr")?),
            };
            table.rows.push(Row { seed, quantity: field(1).to_string(), index, value: parse_float(field(3), "value")?, stderr });
        }
        Ok(table)
    }

    fn parse_json(text: &str) -> Result<Self, CliError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| CliError::validation(format!("malformed json: {e}")))?;
        let mut table = Self::default();
        if let Some(meta) = doc.get("metadata").and_then(Value::as_object) {
            for (k, v) in meta {
                let v = v.as_str().ok_or_else(|| CliError::validation(format!("metadata {k} must be a string")))?;
                table.metadata.insert(k.clone(), v.to_string());
            }
        }
        if let Some(checks) = doc.get("checks") {
            table.checks = serde_json::from_value(checks.clone()).map_err(|e| CliError::validation(format!("malformed checks: {e}")))?;
        }
        let rows = doc.get("rows").and_then(Value::as_array).ok_or_else(|| CliError::validation("json result needs a rows array"))?;
        for (i, r) in rows.iter().enumerate() {
            let bad = |what: &str| CliError::validation(format!("row {}: bad {what}", i + 1));
            let seed = r.get("seed").and_then(Value::as_u64).ok_or_else(|| bad("seed"))?;
            let quantity = r.get("quantity").and_then(Value::as_str).ok_or_else(|| bad("quantity"))?.to_string();
            let index = match r.get("index") {
                None | Some(Value::Null) => None,
                Some(v) => Some(v.as_u64().ok_or_else(|| bad("index"))?),
            };
            let value = json_to_float(r.get("value").ok_or_else(|| bad("value"))?, "value")?;
            let stderr = match r.get("stderr") {
                None | Some(Value::Null) => None,
                Some(v) => Some(json_to_float(v, "stderr")?),
            };
            table.rows.push(Row { seed, quantity, index, value, stderr });
        }
        Ok(table)
    }
}

/// Writes through a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let shown = path.display().to_string();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(&shown, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(&shown, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(&shown, e))?;
    tmp.persist(path).map_err(|e| CliError::io(&shown, e.error))?;
    Ok(())
}
