//! Tokenization, lexicons and corpus ingestion shared by every stage.

mod corpus;
mod lexicon;
mod token;

pub use corpus::{
    load_corpus, read_corpus, Corpus, CorpusError, CorpusFormat, CorpusWarning, LoadedCorpus,
    Paragraph,
};
pub use lexicon::{count_lexicon_terms, load_lexicon, Lexicon, LexiconError, BUILTIN_LEXICONS};
pub use token::{detokenize, tokenize, Token, TokenKind, TokenSeq};
