use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("fragment ids must be strictly increasing (saw {prev} then {next})")]
    UnorderedIds { prev: usize, next: usize },
    #[error("unknown corpus format `{0}` (expected plain or jsonl)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Plain,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" | "txt" => Ok(CorpusFormat::Plain),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl CorpusFormat {
    /// Guess from the file extension; anything that is not `.jsonl` is plain text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    fragments: Vec<Paragraph>,
}

impl Corpus {
    /// Assigns ids `0..n` in iteration order.
    pub fn from_texts<I, S>(name: impl Into<String>, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let fragments = texts
            .into_iter()
            .enumerate()
            .map(|(id, t)| Paragraph { id, text: t.into() })
            .collect();
        Corpus {
            name: name.into(),
            fragments,
        }
    }

    pub fn from_paragraphs(
        name: impl Into<String>,
        fragments: Vec<Paragraph>,
    ) -> Result<Self, CorpusError> {
        for w in fragments.windows(2) {
            if w[1].id <= w[0].id {
                return Err(CorpusError::UnorderedIds {
                    prev: w[0].id,
                    next: w[1].id,
                });
            }
        }
        Ok(Corpus {
            name: name.into(),
            fragments,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fragments(&self) -> &[Paragraph] {
        &self.fragments
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Paragraph> {
        self.fragments.iter()
    }
}

/// A skipped JSONL record in non-strict mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub warnings: Vec<CorpusWarning>,
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    strict: bool,
) -> Result<LoadedCorpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_corpus(BufReader::new(file), &name, format, strict).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Streams a corpus from any reader.
///
/// Plain text: paragraphs are separated by one or more blank lines.
/// JSONL: one object per line with a required `"text"` key; blank lines are ignored.
/// A malformed record aborts when `strict`, otherwise it is skipped with a warning.
pub fn read_corpus<R: BufRead>(
    reader: R,
    name: &str,
    format: CorpusFormat,
    strict: bool,
) -> Result<LoadedCorpus, CorpusError> {
    let mut texts: Vec<String> = Vec::new();
    let mut warnings = Vec::new();
    let mut current = String::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: name.to_string(),
            source,
        })?;
        let lineno = i + 1;
        match format {
            CorpusFormat::Plain => {
                if line.trim().is_empty() {
                    if !current.is_empty() {
                        texts.push(std::mem::take(&mut current));
                    }
                } else {
                    if !current.is_empty() {
                        current.push('\n');
                    }
                    current.push_str(line.trim_end());
                }
            }
            CorpusFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JsonlRecord>(&line) {
                    Ok(rec) => texts.push(rec.text),
                    Err(e) if strict => {
                        return Err(CorpusError::Malformed {
                            line: lineno,
                            message: e.to_string(),
                        })
                    }
                    Err(e) => {
                        log::warn!("{name}:{lineno}: skipping malformed record: {e}");
                        warnings.push(CorpusWarning {
                            line: lineno,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    if !current.is_empty() {
        texts.push(current);
    }

    Ok(LoadedCorpus {
        corpus: Corpus::from_texts(name, texts),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, format: CorpusFormat, strict: bool) -> Result<LoadedCorpus, CorpusError> {
        read_corpus(text.as_bytes(), "t", format, strict)
    }

    #[test]
    fn plain_blank_line_separator() {
        let c = read("A.\n\nB.", CorpusFormat::Plain, true).unwrap().corpus;
        assert_eq!(c.len(), 2);
        assert_eq!(c.fragments()[1].text, "B.");
    }

    #[test]
    fn plain_multiple_blank_lines_and_wrapped_paragraphs() {
        let c = read("line one\nline two\n\n\n  \nthird\n", CorpusFormat::Plain, true)
            .unwrap()
            .corpus;
        assert_eq!(c.len(), 2);
        assert_eq!(c.fragments()[0].text, "line one\nline two");
    }

    #[test]
    fn jsonl_ids_in_order() {
        let src = "{\"text\":\"a\"}\n{\"text\":\"b\",\"id\":\"x9\"}\n{\"text\":\"c\"}\n";
        let c = read(src, CorpusFormat::Jsonl, true).unwrap().corpus;
        let ids: Vec<usize> = c.iter().map(|p| p.id).collect();
        assert_eq!(ids, [0, 1, 2]);
    }

    #[test]
    fn jsonl_bad_line_lenient() {
        let src = "{\"text\":\"a\"}\nnot json\n{\"text\":\"c\"}\n";
        let loaded = read(src, CorpusFormat::Jsonl, false).unwrap();
        assert_eq!(loaded.corpus.len(), 2);
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.warnings[0].line, 2);
    }

    #[test]
    fn jsonl_bad_line_strict() {
        let src = "{\"text\":\"a\"}\n{\"body\":\"no text key\"}\n";
        let err = read(src, CorpusFormat::Jsonl, true).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    #[test]
    fn paragraph_ids_must_increase() {
        let frags = vec![
            Paragraph { id: 3, text: "a".into() },
            Paragraph { id: 3, text: "b".into() },
        ];
        assert!(Corpus::from_paragraphs("x", frags).is_err());
    }
}
