//! Line-delimited JSON metrics.
//!
//! Every line is one object carrying `"schema"` and `"kind"` plus the
//! record's own fields. Keys are emitted in sorted order and no wall-clock
//! timestamps are written, so two runs with the same seed produce identical
//! files (bench timings excepted).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const SCHEMA: &str = "pointseq.metrics/1";

pub struct MetricsSink {
    file: Option<(BufWriter<File>, std::path::PathBuf)>,
    lines: Vec<String>,
}

impl MetricsSink {
    /// Keeps records in memory only.
    pub fn memory() -> Self {
        MetricsSink { file: None, lines: Vec::new() }
    }

    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsSink { file: Some((BufWriter::new(f), path.to_path_buf())), lines: Vec::new() })
    }

    pub fn to_path(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::memory()), Self::create)
    }

    /// Writes one record and flushes, so partial output survives a failure.
    pub fn emit(&mut self, kind: &str, body: &impl Serialize) -> Result<()> {
        let line = record_line(kind, body)?;
        if let Some((w, path)) = &mut self.file {
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path.clone(), e))?;
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

pub fn record_line(kind: &str, body: &impl Serialize) -> Result<String> {
    let mut map = match serde_json::to_value(body).map_err(|e| Error::invalid(format!("metrics record: {e}")))? {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    };
    map.insert("schema".into(), Value::from(SCHEMA));
    map.insert("kind".into(), Value::from(kind));
    Ok(Value::Object(map).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_tagged_and_sorted() {
        #[derive(Serialize)]
        struct R {
            zeta: u32,
            alpha: f64,
        }
        let line = record_line("epoch", &R { zeta: 1, alpha: 0.5 }).unwrap();
        assert_eq!(line, r#"{"alpha":0.5,"kind":"epoch","schema":"pointseq.metrics/1","zeta":1}"#);
    }

    #[test]
    fn file_sink_flushes_each_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut sink = MetricsSink::create(&path).unwrap();
        sink.emit("a", &serde_json::json!({"x": 1})).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        sink.emit("b", &serde_json::json!({"x": 2})).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }
}
