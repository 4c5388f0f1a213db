use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Word,
    Punctuation,
}

/// A single word or punctuation mark.
///
/// `norm` is the lowercased surface and is what every lexicon lookup,
/// language-model query and metric comparison uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    surface: String,
    norm: String,
    kind: TokenKind,
}

impl Token {
    /// Builds a token, inferring its kind: anything with a letter or digit is a word.
    pub fn new(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        let kind = if surface.chars().any(char::is_alphanumeric) {
            TokenKind::Word
        } else {
            TokenKind::Punctuation
        };
        let norm = surface.to_lowercase();
        Token {
            surface,
            norm,
            kind,
        }
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn norm(&self) -> &str {
        &self.norm
    }

    pub fn kind(&self) -> TokenKind {
        self.kind
    }

    pub fn is_word(&self) -> bool {
        self.kind == TokenKind::Word
    }

    /// Same token with the first character uppercased.
    pub fn capitalized(&self) -> Token {
        let mut chars = self.surface.chars();
        match chars.next() {
            Some(first) => Token::new(first.to_uppercase().chain(chars).collect::<String>()),
            None => self.clone(),
        }
    }

    fn starts_with_word_char(&self) -> bool {
        self.surface.chars().next().is_some_and(is_word_char)
    }

    fn ends_with_word_char(&self) -> bool {
        self.surface.chars().next_back().is_some_and(is_word_char)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSeq { tokens }
    }

    /// Convenience for tests and examples: one token per whitespace-separated item.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        TokenSeq::new(words.iter().map(|w| Token::new(w.as_ref())).collect())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Token> {
        self.tokens.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    pub fn norms(&self) -> Vec<&str> {
        self.tokens.iter().map(Token::norm).collect()
    }

    pub fn word_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_word()).count()
    }
}

impl FromIterator<Token> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        TokenSeq::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.iter()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&detokenize(self))
    }
}

/// Splits text into word and punctuation tokens.
///
/// A maximal run of letters, digits and apostrophes is one word token. Runs made
/// only of apostrophes carry no word content and become one punctuation token per
/// character, as does every other non-whitespace character.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut run = String::new();

    let flush = |run: &mut String, tokens: &mut Vec<Token>| {
        if run.is_empty() {
            return;
        }
        if run.chars().any(char::is_alphanumeric) {
            tokens.push(Token::new(std::mem::take(run)));
        } else {
            tokens.extend(run.chars().map(|c| Token::new(c.to_string())));
            run.clear();
        }
    };

    for c in text.chars() {
        if is_word_char(c) {
            run.push(c);
        } else {
            flush(&mut run, &mut tokens);
            if !c.is_whitespace() {
                tokens.push(Token::new(c.to_string()));
            }
        }
    }
    flush(&mut run, &mut tokens);
    TokenSeq::new(tokens)
}

/// Joins tokens back into text: words separated by one space, punctuation glued
/// to whatever precedes it.
///
/// An apostrophe mark that would fuse with the preceding word is given a space so
/// that re-tokenizing the output yields the same tokens.
pub fn detokenize(seq: &TokenSeq) -> String {
    let mut out = String::new();
    let mut prev: Option<&Token> = None;
    for token in seq.iter() {
        if let Some(p) = prev {
            let glue = !token.is_word() && !(p.ends_with_word_char() && token.starts_with_word_char());
            if !glue {
                out.push(' ');
            }
        }
        out.push_str(token.surface());
        prev = Some(token);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(seq: &TokenSeq) -> Vec<&str> {
        seq.iter().map(Token::surface).collect()
    }

    #[test]
    fn tokenize_splits_words_and_punctuation() {
        let seq = tokenize("The history of art.");
        assert_eq!(surfaces(&seq), ["The", "history", "of", "art", "."]);
        assert_eq!(seq.get(0).unwrap().norm(), "the");
        assert_eq!(seq.get(4).unwrap().kind(), TokenKind::Punctuation);
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \n\t ").is_empty());
    }

    #[test]
    fn contraction_is_one_token() {
        assert_eq!(surfaces(&tokenize("don't stop")), ["don't", "stop"]);
    }

    #[test]
    fn lone_apostrophes_are_punctuation() {
        let seq = tokenize("late!' said");
        assert_eq!(surfaces(&seq), ["late", "!", "'", "said"]);
        assert_eq!(seq.get(2).unwrap().kind(), TokenKind::Punctuation);
    }

    #[test]
    fn detokenize_spacing() {
        assert_eq!(detokenize(&TokenSeq::from_words(&["The", "cat", "."])), "The cat.");
        assert_eq!(detokenize(&TokenSeq::default()), "");
        assert_eq!(
            detokenize(&TokenSeq::from_words(&["went", "marathon", "city", "center"])),
            "went marathon city center"
        );
    }

    #[test]
    fn apostrophe_after_word_keeps_space() {
        let seq = tokenize("dear ' x");
        let text = detokenize(&seq);
        assert_eq!(text, "dear ' x");
        assert_eq!(tokenize(&text), seq);
    }

    #[test]
    fn capitalized_token() {
        let t = Token::new("the").capitalized();
        assert_eq!(t.surface(), "The");
        assert_eq!(t.norm(), "the");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip(text in "[a-zA-Z0-9' .,;!?()`\\-\u{e9}\u{2019}\n]{0,60}") {
                let once = tokenize(&text);
                prop_assert_eq!(tokenize(&detokenize(&once)), once.clone());
                for t in once.iter() {
                    prop_assert_eq!(t.norm(), t.surface().to_lowercase());
                    if !t.is_word() {
                        prop_assert!(!t.surface().chars().any(char::is_alphanumeric));
                    }
                }
                prop_assert!(!detokenize(&once).contains("  "));
            }
        }
    }
}
