//! Line-delimited JSON manifests, one utterance per line:
//!
//! ```text
//! {"id":"u1","audio_path":"audio/u1.wav","words":[["hello",120,480],["there",500,900]],"label":2}
//! ```
//!
//! Exactly one of `audio_path` / `features_path` is present. Relative paths
//! are resolved against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{validate_spans, WordSpan};
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Audio(PathBuf),
    Features(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub id: String,
    pub source: FeatureSource,
    pub words: Vec<WordSpan>,
    /// 0 angry, 1 happy, 2 neutral, 3 sad.
    pub label: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features_path: Option<String>,
    words: Vec<(String, u32, u32)>,
    label: i64,
}

fn parse_line(line: &str, base: &Path) -> std::result::Result<UtteranceRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let source = match (raw.audio_path, raw.features_path) {
        (Some(a), None) => FeatureSource::Audio(base.join(a)),
        (None, Some(f)) => FeatureSource::Features(base.join(f)),
        _ => return Err("exactly one of audio_path and features_path is required".into()),
    };
    if raw.id.is_empty() {
        return Err("empty id".into());
    }
    if raw.label < 0 || raw.label >= NUM_CLASSES as i64 {
        return Err(format!("label {} outside 0..{NUM_CLASSES}", raw.label));
    }
    if raw.words.is_empty() {
        return Err("record has no words".into());
    }
    let words: Vec<WordSpan> = raw
        .words
        .into_iter()
        .map(|(t, s, e)| WordSpan::new(t, s, e))
        .collect();
    validate_spans(&words).map_err(|e| e.to_string())?;
    Ok(UtteranceRecord {
        id: raw.id,
        source,
        words,
        label: raw.label as usize,
    })
}

/// Parses manifest text; `path` is used for relative paths and messages.
/// File existence is not checked here.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<UtteranceRecord>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec = parse_line(line, base).map_err(parse_err)?;
        if !seen.insert(rec.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", rec.id)));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_manifest(&text, path)?;
    if records.is_empty() {
        log::warn!("manifest {} contains no records", path.display());
    }
    for (i, r) in records.iter().enumerate() {
        let file = match &r.source {
            FeatureSource::Audio(p) | FeatureSource::Features(p) => p,
        };
        if !file.is_file() {
            return Err(Error::Input(format!(
                "{}: record {} ({:?}) references missing file {}",
                path.display(),
                i + 1,
                r.id,
                file.display()
            )));
        }
    }
    Ok(records)
}

/// Writes records one per line, with paths relative to the manifest
/// directory where possible.
pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let mut out = String::new();
    for r in records {
        let (audio_path, features_path) = match &r.source {
            FeatureSource::Audio(p) => (Some(rel(p)), None),
            FeatureSource::Features(p) => (None, Some(rel(p))),
        };
        let raw = RawRecord {
            id: r.id.clone(),
            audio_path,
            features_path,
            words: r
                .words
                .iter()
                .map(|w| (w.token.clone(), w.start_ms, w.end_ms))
                .collect(),
            label: r.label as i64,
        };
        out.push_str(&serde_json::to_string(&raw).expect("plain data serialises"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, label: i64) -> String {
        format!(r#"{{"id":"{id}","features_path":"f/{id}.emt","words":[["hi",0,100]],"label":{label}}}"#)
    }

    #[test]
    fn empty_manifest_is_empty() {
        assert!(parse_manifest("", Path::new("m.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn bad_label_names_line() {
        let text = format!("{}\n{}\n", line("a", 1), line("b", 7));
        match parse_manifest(&text, Path::new("m.jsonl")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("label 7"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn preserves_order_and_rejects_duplicates() {
        let text: String = (0..10).map(|i| line(&format!("u{i}"), i % 4) + "\n").collect();
        let recs = parse_manifest(&text, Path::new("d/m.jsonl")).unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(recs[3].id, "u3");
        assert_eq!(recs[3].source, FeatureSource::Features(PathBuf::from("d/f/u3.emt")));
        let dup = format!("{}\n{}\n", line("a", 0), line("a", 1));
        assert!(parse_manifest(&dup, Path::new("m.jsonl")).is_err());
    }

    #[test]
    fn rejects_both_or_neither_path_and_bad_spans() {
        let both = r#"{"id":"a","audio_path":"x","features_path":"y","words":[["w",0,1]],"label":0}"#;
        assert!(parse_manifest(both, Path::new("m")).is_err());
        let overlap = r#"{"id":"a","audio_path":"x","words":[["w",0,10],["v",5,20]],"label":0}"#;
        assert!(parse_manifest(overlap, Path::new("m")).is_err());
        let unknown = r#"{"id":"a","audio_path":"x","words":[["w",0,10]],"label":0,"extra":1}"#;
        assert!(parse_manifest(unknown, Path::new("m")).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = Vec::new();
        for i in 0..3 {
            let f = dir.path().join(format!("u{i}.wav"));
            std::fs::write(&f, b"").unwrap();
            recs.push(UtteranceRecord {
                id: format!("u{i}"),
                source: FeatureSource::Audio(f),
                words: vec![WordSpan::new("a", 0, 10), WordSpan::new("b c", 10, 30)],
                label: i,
            });
        }
        let m = dir.path().join("m.jsonl");
        write_manifest(&m, &recs).unwrap();
        assert!(std::fs::read_to_string(&m).unwrap().contains("\"audio_path\":\"u0.wav\""));
        assert_eq!(load_manifest(&m).unwrap(), recs);
    }

    #[test]
    fn missing_referenced_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        std::fs::write(&m, line("a", 0)).unwrap();
        assert!(matches!(load_manifest(&m), Err(Error::Input(_))));
    }
}
