use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LoadStats;
use crate::error::{Error, Result};

/// One line of an annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video: String,
    pub duration: f64,
    pub start: f64,
    pub end: f64,
    pub query: String,
}

/// Reads a JSON-lines annotation file, preserving order.
///
/// Unparseable lines are counted and skipped, or rejected with their line
/// number when `strict`. Records with `start > end` or a non-positive
/// duration are always skipped with a warning.
pub fn load_annotations(path: &Path, strict: bool, stats: &mut LoadStats) -> Result<Vec<AnnotationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) if strict => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: e.to_string(),
                })
            }
            Err(e) => {
                log::warn!("{}:{}: skipping malformed record: {e}", path.display(), n + 1);
                stats.malformed += 1;
                continue;
            }
        };
        if !(rec.duration > 0.0) || !(rec.start <= rec.end) {
            log::warn!(
                "{}:{}: skipping record with start {} end {} duration {}",
                path.display(),
                n + 1,
                rec.start,
                rec.end,
                rec.duration
            );
            stats.invalid_interval += 1;
            continue;
        }
        out.push(rec);
    }
    if out.is_empty() {
        log::warn!("{}: no annotation records", path.display());
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(contents: &str, strict: bool) -> (Result<Vec<AnnotationRecord>>, LoadStats) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        std::fs::write(&path, contents).unwrap();
        let mut stats = LoadStats::default();
        (load_annotations(&path, strict, &mut stats), stats)
    }

    #[test]
    fn one_valid_line() {
        let (recs, _) = load(
            r#"{"video":"v1","duration":30.0,"start":1.5,"end":4.0,"query":"a person runs"}"#,
            false,
        );
        let recs = recs.unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].video, "v1");
    }

    #[test]
    fn start_after_end_is_skipped() {
        let (recs, stats) = load(
            r#"{"video":"v1","duration":30.0,"start":5.0,"end":4.0,"query":"q"}"#,
            true,
        );
        assert!(recs.unwrap().is_empty());
        assert_eq!(stats.invalid_interval, 1);
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let (recs, _) = load("", false);
        assert!(recs.unwrap().is_empty());
    }

    #[test]
    fn missing_key_strict_vs_lenient() {
        let text =
            "{\"video\":\"v\",\"duration\":3,\"start\":0,\"end\":1,\"query\":\"x\"}\n{\"video\":\"v\",\"start\":0}\n";
        let (recs, stats) = load(text, false);
        assert_eq!(recs.unwrap().len(), 1);
        assert_eq!(stats.malformed, 1);
        match load(text, true).0 {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
