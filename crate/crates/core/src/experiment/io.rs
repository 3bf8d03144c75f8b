//! Artifact persistence: versioned CSV tables and JSON documents.
//!
//! Every artifact of a run goes through one [`ArtifactWriter`] — the single
//! writer of its output directory. Numeric work may be parallel, but files
//! are written sequentially from one thread, so partially written artifacts
//! never race.
//!
//! CSV files are UTF-8 with `\n` line ends and `.` decimal separators. The
//! first line is a version header comment starting with `#`; the second
//! names the columns. Floats are rendered with Rust's shortest
//! round-trip formatting, so equal inputs produce byte-identical files;
//! missing values are rendered as `NaN`. JSON documents render non-finite
//! floats as `null` (the serializer has no float-literal NaN).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

use super::config::ARTIFACT_VERSION;

/// Render one float for a CSV cell: shortest round-trip form, `NaN` for
/// missing values.
pub fn format_float(value: f64) -> String {
    if value.is_nan() {
        "NaN".to_owned()
    } else {
        format!("{value}")
    }
}

/// Assemble a CSV document with the version header comment.
pub fn csv_document(schema: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# rflab csv v{ARTIFACT_VERSION} schema={schema}").expect("string write");
    writeln!(out, "{}", columns.join(",")).expect("string write");
    for (index, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(Error::invalid(format!(
                "csv row {index} has {} cells, expected {}",
                row.len(),
                columns.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        writeln!(out, "{}", cells.join(",")).expect("string write");
    }
    Ok(out)
}

/// The single writer of one output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    /// Create the directory (and parents) and hand out its writer.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// The directory artifacts go into.
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write a versioned CSV table.
    pub fn write_csv(
        &mut self,
        name: &str,
        schema: &str,
        columns: &[&str],
        rows: &[Vec<f64>],
    ) -> Result<PathBuf> {
        let text = csv_document(schema, columns, rows)?;
        self.write_text(name, &text)
    }

    /// Write a pretty-printed JSON document (newline-terminated).
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|err| Error::numerical(format!("json serialization: {err}")))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Write raw text; all artifact writes funnel through here.
    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Paths written so far, in write order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Consume the writer, returning the written paths.
    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_float_is_shortest_round_trip() {
        assert_eq!(format_float(4.0), "4");
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(-1.5e-8), "-0.000000015");
        assert_eq!(format_float(f64::NAN), "NaN");
        let v = 1.0 / 3.0;
        assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn csv_document_has_version_header_and_unix_lines() {
        let doc = csv_document(
            "trace",
            &["tau", "l_train"],
            &[vec![1.0, 0.5], vec![10.0, f64::NAN]],
        )
        .unwrap();
        let mut lines = doc.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with('#'), "header comment: {header}");
        assert!(header.contains("v1"));
        assert_eq!(lines.next().unwrap(), "tau,l_train");
        assert_eq!(lines.next().unwrap(), "1,0.5");
        assert_eq!(lines.next().unwrap(), "10,NaN");
        assert!(!doc.contains('\r'));
    }

    #[test]
    fn csv_document_rejects_ragged_rows() {
        let err = csv_document("x", &["a", "b"], &[vec![1.0]]).unwrap_err();
        assert!(err.to_string().contains("row 0"));
    }

    #[test]
    fn writer_records_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut writer = ArtifactWriter::create(dir.path()).unwrap();
        writer
            .write_csv("t.csv", "t", &["a"], &[vec![1.0]])
            .unwrap();
        writer.write_json("s.json", &serde_json::json!({"k": 1})).unwrap();
        assert_eq!(writer.written().len(), 2);
        let text = std::fs::read_to_string(dir.path().join("s.json")).unwrap();
        assert!(text.ends_with('\n'));
    }
}
