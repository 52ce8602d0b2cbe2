//! CSV and JSON writers. Floats use Rust's shortest round-trip formatting so
//! reruns produce identical bytes.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::RunError;

pub const HISTORY_CSV: &str = "history.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const UNCERTAINTY_CSV: &str = "uncertainty.csv";
pub const ENCODING_CSV: &str = "encoding.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Row-at-a-time CSV file with a fixed header; flushed after every row so a
/// failed run leaves the rows it finished.
pub struct CsvSink {
    writer: csv::Writer<File>,
    width: usize,
    path: PathBuf,
}

impl CsvSink {
    pub fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, RunError> {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| RunError::io(&path, e))?;
        writer.write_record(header).map_err(|e| RunError::io(&path, e))?;
        writer.flush().map_err(|e| RunError::io(&path, e))?;
        Ok(Self {
            writer,
            width: header.len(),
            path,
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), RunError> {
        assert_eq!(fields.len(), self.width, "row width differs from header");
        self.writer.write_record(fields).map_err(|e| RunError::io(&self.path, e))?;
        self.writer.flush().map_err(|e| RunError::io(&self.path, e))
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_summary(dir: &Path, summary: &Value) -> Result<(), RunError> {
    let path = dir.join(SUMMARY_JSON);
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| RunError::io(&path, e))
}

/// JSON number, or `null` for values JSON cannot hold.
pub fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}
