//! One `QAExample` JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::QAExample;
use crate::error::{Error, Result};

/// Reads and validates every non-blank line. Errors carry the 1-based line number.
pub fn load_jsonl(path: &Path) -> Result<Vec<QAExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let ex: QAExample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        ex.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, examples: &[QAExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let exs = generate_synthetic(&SyntheticConfig {
            n_per_domain: 5,
            ..SyntheticConfig::default()
        });
        save_jsonl(&path, &exs).unwrap();
        assert_eq!(load_jsonl(&path).unwrap(), exs);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_jsonl(&path).unwrap().is_empty());
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let exs = generate_synthetic(&SyntheticConfig {
            n_per_domain: 2,
            ..SyntheticConfig::default()
        });
        let mut lines: Vec<String> = exs[..7]
            .iter()
            .map(|e| serde_json::to_string(e).unwrap())
            .collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[6]).unwrap();
        v.as_object_mut().unwrap().remove("domain");
        lines[6] = v.to_string();
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_jsonl(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("domain"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let mut ex = generate_synthetic(&SyntheticConfig {
            n_per_domain: 3,
            ..SyntheticConfig::default()
        })
        .into_iter()
        .find(|e| e.is_answerable)
        .unwrap();
        ex.answer_char_start += 1;
        std::fs::write(&path, serde_json::to_string(&ex).unwrap()).unwrap();
        let err = load_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains(&ex.id), "{err}");
    }
}
