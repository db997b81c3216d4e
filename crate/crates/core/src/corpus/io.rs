use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{tokenize, Document, Normalizer};
use crate::error::{Error, Result};

/// Reads a JSON Lines corpus, one `{"id", "tokens", "starts"}` object per
/// line. Blank lines are skipped; every document is validated.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let doc: Document = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        doc.validate().map_err(|e| parse_err(e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct StartsSidecar {
    #[serde(default)]
    id: Option<String>,
    starts: Vec<usize>,
}

/// Loads raw text documents from `dir`: every `<name>.txt` is tokenized with
/// `normalizer` and paired with the sidecar `<name>.starts.json`, which holds
/// `{"id": ..., "starts": [...]}` with token indices into the tokenized text.
/// A missing sidecar means the document has no starts. Files are read in
/// name order.
pub fn load_raw_dir(dir: impl AsRef<Path>, normalizer: &Normalizer) -> Result<Vec<Document>> {
    let dir = dir.as_ref();
    let mut texts: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    texts.sort();

    let mut docs = Vec::with_capacity(texts.len());
    for text_path in texts {
        let raw = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
        let stem = text_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let sidecar_path = text_path.with_file_name(format!("{stem}.starts.json"));
        let (id, starts) = if sidecar_path.exists() {
            let body = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
            let sidecar: StartsSidecar = serde_json::from_str(&body).map_err(|e| Error::Parse {
                path: sidecar_path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            (sidecar.id.unwrap_or_else(|| stem.clone()), sidecar.starts)
        } else {
            (stem.clone(), Vec::new())
        };
        docs.push(Document::new(id, tokenize(&raw, normalizer), starts)?);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let docs = vec![
            Document::new("a", vec!["x".into(), "y".into()], vec![1]).unwrap(),
            Document::new("b", vec![], vec![]).unwrap(),
        ];
        write_jsonl(&path, &docs).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"id":"a","tokens":["x","y"],"starts":[1]}"#
        );
        assert_eq!(read_jsonl(&path).unwrap(), docs);
    }

    #[test]
    fn invalid_lines_report_their_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"tokens\":[\"x\"],\"starts\":[]}\n\n{\"id\":\"b\",\"tokens\":[\"x\"],\"starts\":[3]}\n",
        )
        .unwrap();
        match read_jsonl(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn raw_dir_pairs_text_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("col1.txt"), "Died, on Sunday.").unwrap();
        fs::write(dir.path().join("col1.starts.json"), r#"{"starts":[0]}"#).unwrap();
        fs::write(dir.path().join("col2.txt"), "For sale").unwrap();
        let docs = load_raw_dir(dir.path(), &Normalizer::Identity).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].id, "col1");
        assert_eq!(docs[0].tokens, ["died", ",", "on", "sunday", "."]);
        assert_eq!(docs[0].gold_starts, vec![0]);
        assert!(docs[1].gold_starts.is_empty());
    }
}
