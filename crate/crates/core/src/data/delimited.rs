//! Comma-separated sequence files: one example per row, label first, then
//! `T·D` values in time-major order.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn format_err(path: &Path, message: String) -> Error {
    Error::Format {
        source_name: path.display().to_string(),
        message,
    }
}

pub fn load_delimited_sequences(path: impl AsRef<Path>, steps: usize, channels: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let width = steps * channels;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width + 1 {
            return Err(format_err(
                path,
                format!("line {line}: expected {} fields, found {}", width + 1, record.len()),
            ));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| format_err(path, format!("line {line}: bad label {:?}", &record[0])))?;
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| format_err(path, format!("line {line}: bad value {field:?}")))?;
            if !v.is_finite() {
                return Err(format_err(path, format!("line {line}: non-finite value")));
            }
            data.push(v);
        }
    }
    let n = labels.len();
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(Tensor::new(vec![n, steps, channels], data)?, labels, class_count)
}

/// Writes a `[N × T × D]` dataset in the format read by [`load_delimited_sequences`].
pub fn write_delimited_sequences(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let row: usize = data.inputs.shape()[1..].iter().product();
    for (label, values) in data.labels.iter().zip(data.inputs.data().chunks(row)) {
        let mut fields = vec![label.to_string()];
        // `{:?}` round-trips f64 exactly
        fields.extend(values.iter().map(|v| format!("{v:?}")));
        w.write_record(&fields).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        std::fs::write(&p, "1,0.5,-2,3e-3,4\n").unwrap();
        let d = load_delimited_sequences(&p, 2, 2).unwrap();
        assert_eq!(d.inputs.shape(), &[1, 2, 2]);
        assert_eq!(d.inputs.data(), &[0.5, -2.0, 0.003, 4.0]);
        assert_eq!(d.labels, vec![1]);
    }

    #[test]
    fn ragged_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "0,1,2\n1,3,4\n0,5\n").unwrap();
        let err = load_delimited_sequences(&p, 2, 1).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        let inputs = Tensor::new(vec![3, 2, 1], vec![0.1, 1.0 / 3.0, -7.25, 1e-12, 0.0, 2.0]).unwrap();
        let d = Dataset::new(inputs, vec![0, 2, 1], 3).unwrap();
        write_delimited_sequences(&p, &d).unwrap();
        assert_eq!(load_delimited_sequences(&p, 2, 1).unwrap(), d);
    }
}
