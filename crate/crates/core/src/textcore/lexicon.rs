use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::token::{tokenize, TokenSeq};

const EXPLORATORY23: &str = include_str!("../../lexicons/exploratory23.txt");
const EXTENDED: &str = include_str!("../../lexicons/extended.txt");

/// Names accepted by [`Lexicon::builtin`].
pub const BUILTIN_LEXICONS: &[&str] = &["exploratory23", "extended"];

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon `{0}` is empty")]
    Empty(String),
    #[error("line {line}: `{entry}` is not a single word")]
    NonWord { line: usize, entry: String },
    #[error("unknown builtin lexicon `{0}`")]
    UnknownBuiltin(String),
}

/// Ordered, case-insensitive set of word forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    name: String,
    words: Vec<String>,
    index: HashSet<String>,
}

impl Lexicon {
    /// Builds a lexicon, lowercasing and dropping repeats while keeping first-seen order.
    /// An empty lexicon is allowed here; only loading from a source rejects it.
    pub fn new<I, S>(name: impl Into<String>, words: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Lexicon {
            name: name.into(),
            words: Vec::new(),
            index: HashSet::new(),
        };
        for (i, w) in words.into_iter().enumerate() {
            let norm = validate_entry(w.as_ref(), i + 1)?;
            if lex.index.insert(norm.clone()) {
                lex.words.push(norm);
            }
        }
        Ok(lex)
    }

    pub fn builtin(name: &str) -> Result<Self, LexiconError> {
        let text = match name {
            "exploratory23" => EXPLORATORY23,
            "extended" => EXTENDED,
            _ => return Err(LexiconError::UnknownBuiltin(name.to_string())),
        };
        parse_lexicon(name, text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Membership by normalized form.
    pub fn contains(&self, norm: &str) -> bool {
        self.index.contains(norm)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl AsRef<Lexicon> for Lexicon {
    fn as_ref(&self) -> &Lexicon {
        self
    }
}

fn validate_entry(entry: &str, line: usize) -> Result<String, LexiconError> {
    let trimmed = entry.trim();
    let seq = tokenize(trimmed);
    match seq.tokens() {
        [t] if t.is_word() && t.surface() == trimmed => Ok(t.norm().to_string()),
        _ => Err(LexiconError::NonWord {
            line,
            entry: entry.to_string(),
        }),
    }
}

fn parse_lexicon(name: &str, text: &str) -> Result<Lexicon, LexiconError> {
    let mut lex = Lexicon::new(name, std::iter::empty::<&str>())?;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let norm = validate_entry(trimmed, i + 1)?;
        if lex.index.insert(norm.clone()) {
            lex.words.push(norm);
        }
    }
    if lex.is_empty() {
        return Err(LexiconError::Empty(name.to_string()));
    }
    Ok(lex)
}

/// Resolves a builtin name first, then falls back to a file path.
///
/// File format: one word per line, `#` starts a comment line, blank lines ignored.
pub fn load_lexicon(spec: &str) -> Result<Lexicon, LexiconError> {
    if BUILTIN_LEXICONS.contains(&spec) {
        return Lexicon::builtin(spec);
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: spec.to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    parse_lexicon(&name, &text)
}

/// Number of tokens in `seq` whose normalized form belongs to `lex`.
pub fn count_lexicon_terms(seq: &TokenSeq, lex: &Lexicon) -> usize {
    seq.iter().filter(|t| lex.contains(t.norm())).count()
}
