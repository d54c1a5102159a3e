//! Token tables and pronunciation lexicons, with their text file formats.
//!
//! * tokens file: one token per line, line number (0-based) is the id.
//! * lexicon file: `word<TAB>tok1 tok2 ... tokK`; repeating a word adds an
//!   alternative spelling.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("lexicon word {word:?} uses unknown token {token:?}")]
    UnknownToken { word: String, token: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenTable {
    pub fn new(tokens: Vec<String>) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(parse_error("<tokens>", i + 1, format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(parse_error("<tokens>", i + 1, format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = read(path)?;
        Self::parse(&text).map_err(|e| rename(e, path))
    }

    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let tokens: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Map token strings to ids.
    pub fn encode<S: AsRef<str>>(&self, word: &str, spelling: &[S]) -> Result<Vec<usize>, VocabError> {
        spelling
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| VocabError::UnknownToken { word: word.to_string(), token: t.as_ref().to_string() })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub word: String,
    pub spellings: Vec<Vec<String>>,
}

/// Words with one or more token spellings, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<S: AsRef<str>>(&mut self, word: &str, spelling: &[S]) {
        let spelling: Vec<String> = spelling.iter().map(|s| s.as_ref().to_string()).collect();
        match self.index.get(word) {
            Some(&i) => {
                if !self.entries[i].spellings.contains(&spelling) {
                    self.entries[i].spellings.push(spelling);
                }
            }
            None => {
                self.index.insert(word.to_string(), self.entries.len());
                self.entries.push(LexiconEntry { word: word.to_string(), spellings: vec![spelling] });
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = read(path)?;
        Self::parse(&text).map_err(|e| rename(e, path))
    }

    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let Some((word, spelling)) = line.split_once('\t') else {
                return Err(parse_error("<lexicon>", i + 1, "expected word<TAB>tokens"));
            };
            let toks: Vec<&str> = spelling.split_whitespace().collect();
            if word.is_empty() || toks.is_empty() {
                return Err(parse_error("<lexicon>", i + 1, "empty word or spelling"));
            }
            lex.insert(word, &toks);
        }
        Ok(lex)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.index.get(word).map(|&i| &self.entries[i])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            for sp in &e.spellings {
                s.push_str(&format!("{}\t{}\n", e.word, sp.join(" ")));
            }
        }
        s
    }
}

fn read(path: &Path) -> Result<String, VocabError> {
    fs::read_to_string(path).map_err(|e| VocabError::Io(format!("{}: {e}", path.display())))
}

fn parse_error(file: &str, line: usize, message: impl Into<String>) -> VocabError {
    VocabError::Parse { file: file.to_string(), line, message: message.into() }
}

fn rename(e: VocabError, path: &Path) -> VocabError {
    match e {
        VocabError::Parse { line, message, .. } => {
            VocabError::Parse { file: path.display().to_string(), line, message }
        }
        other => other,
    }
}
