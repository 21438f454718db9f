//! JSON-lines sidecar: one keypoint and descriptor (or one global vector) per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Keypoint;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint: Option<Keypoint>,
    /// Descriptor kind, e.g. `sift`, `cedd`, `gist`.
    pub kind: String,
    pub vector: Vec<f32>,
}

pub fn write_jsonl(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<FeatureRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let recs = vec![
            FeatureRecord {
                image_id: "a".into(),
                keypoint: Some(Keypoint { x: 1.5, y: 2.25, scale: 1.6, orientation: 0.3, response: 0.02, octave: 1, layer: 2 }),
                kind: "sift".into(),
                vector: vec![0.1, 0.2],
            },
            FeatureRecord { image_id: "b".into(), keypoint: None, kind: "gist".into(), vector: vec![1.0; 4] },
        ];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), recs);
    }

    #[test]
    fn bad_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        std::fs::write(&path, "{\"image_id\":\"a\",\"kind\":\"x\",\"vector\":[]}\nnot json\n").unwrap();
        match read_jsonl(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
