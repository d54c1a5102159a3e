//! ARPA backoff n-gram language model with explicit query states.
//!
//! Scores are log10, as stored in ARPA files. States are canonical: a state
//! is the longest suffix of the history that exists in the model (capped at
//! `order − 1` words), so equal futures share equal states.

use std::collections::HashMap;
use std::fmt::Debug;
use std::fs;
use std::hash::Hash;
use std::path::Path;

use rustc_hash::FxHashMap;
use thiserror::Error;

pub type WordId = u32;

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("arpa parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("word {0:?} is not in the LM vocabulary and the model has no <unk>")]
    OutOfVocabulary(String),
}

/// State-in/state-out query contract used by the decoder.
pub trait LanguageModel {
    type State: Copy + Eq + Hash + Debug;

    /// State after the sentence-start marker.
    fn start(&self) -> Self::State;

    /// log10 P(word | state) and the successor state.
    fn score(&self, state: Self::State, word: WordId) -> (Self::State, f32);

    /// log10 P(</s> | state).
    fn finish(&self, state: Self::State) -> f32;

    /// Word id, falling back to `<unk>` when the model has one.
    fn word_id(&self, word: &str) -> Option<WordId>;

    /// Context-free log10 probability, used for lookahead smearing.
    fn unigram(&self, word: WordId) -> f32;
}

/// Scores every word 0. Stands in when decoding without a language model.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullLm;

impl LanguageModel for NullLm {
    type State = ();

    fn start(&self) {}

    fn score(&self, _: (), _: WordId) -> ((), f32) {
        ((), 0.0)
    }

    fn finish(&self, _: ()) -> f32 {
        0.0
    }

    fn word_id(&self, _: &str) -> Option<WordId> {
        Some(0)
    }

    fn unigram(&self, _: WordId) -> f32 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LmState(u32);

const ROOT: u32 = u32::MAX;

impl LmState {
    pub const EMPTY: LmState = LmState(ROOT);

    pub fn is_empty(self) -> bool {
        self.0 == ROOT
    }
}

#[derive(Debug, Clone)]
struct Entry {
    words: Box<[WordId]>,
    prob: f32,
    backoff: f32,
    /// Longest proper suffix of `words` present in the model.
    suffix: u32,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    word_index: HashMap<String, WordId>,
    entries: Vec<Entry>,
    /// (context entry or ROOT, next word) → entry
    children: FxHashMap<(u32, WordId), u32>,
    counts: Vec<usize>,
    start: Option<WordId>,
    end: Option<WordId>,
    unk: Option<WordId>,
}

impl NGramModel {
    pub fn load_arpa(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LmError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_arpa(&text)
    }

    pub fn parse_arpa(text: &str) -> Result<Self, LmError> {
        ArpaParser::default().parse(text)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of n-grams of each order, index 0 = unigrams.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.vocab[id as usize]
    }

    /// Exact lookup without `<unk>` fallback.
    pub fn exact_id(&self, word: &str) -> Option<WordId> {
        self.word_index.get(word).copied()
    }

    pub fn lookup(&self, word: &str) -> Result<WordId, LmError> {
        self.word_id(word).ok_or_else(|| LmError::OutOfVocabulary(word.to_string()))
    }

    pub fn sentence_start(&self) -> Option<WordId> {
        self.start
    }

    pub fn sentence_end(&self) -> Option<WordId> {
        self.end
    }

    /// Stored (log10 prob, log10 backoff) of an explicit n-gram.
    pub fn ngram(&self, words: &[&str]) -> Option<(f32, f32)> {
        let mut ctx = ROOT;
        for w in words {
            let id = self.exact_id(w)?;
            ctx = *self.children.get(&(ctx, id))?;
        }
        let e = self.entries.get(ctx as usize)?;
        Some((e.prob, e.backoff))
    }

    /// Words of the history a state stands for.
    pub fn state_words(&self, state: LmState) -> Vec<&str> {
        if state.is_empty() {
            return Vec::new();
        }
        self.entries[state.0 as usize].words.iter().map(|&w| self.word(w)).collect()
    }

    /// State for an explicit history, canonicalized to its longest suffix
    /// present in the model.
    pub fn state_for(&self, history: &[&str]) -> LmState {
        let keep = history.len().min(self.order.saturating_sub(1));
        let history = &history[history.len() - keep..];
        for start in 0..history.len() {
            let mut ctx = ROOT;
            let found =
                history[start..].iter().all(|w| match self.exact_id(w).and_then(|id| self.children.get(&(ctx, id))) {
                    Some(&e) => {
                        ctx = e;
                        true
                    }
                    None => false,
                });
            if found {
                return LmState(ctx);
            }
        }
        LmState::EMPTY
    }

    /// log10 P(word | words) from the sentence start, including `</s>`.
    pub fn sentence_score<S: AsRef<str>>(&self, words: &[S]) -> Result<f64, LmError> {
        let mut state = self.start();
        let mut total = 0.0f64;
        for w in words {
            let id = self.lookup(w.as_ref())?;
            let (next, p) = self.score(state, id);
            total += p as f64;
            state = next;
        }
        Ok(total + self.finish(state) as f64)
    }

    /// Serialize in ARPA text format. Values print in shortest round-trip
    /// form, so reloading reproduces identical scores.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for (n, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("ngram {}={}\n", n + 1, c));
        }
        for n in 1..=self.order {
            out.push_str(&format!("\n\\{n}-grams:\n"));
            for e in self.entries.iter().filter(|e| e.words.len() == n) {
                let words: Vec<&str> = e.words.iter().map(|&w| self.word(w)).collect();
                out.push_str(&format!("{}\t{}", e.prob, words.join(" ")));
                if n < self.order {
                    out.push_str(&format!("\t{}", e.backoff));
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    fn cap_state(&self, mut ctx: u32, word: WordId, mut found: u32) -> LmState {
        // the successor state may hold at most order − 1 words
        while self.entries[found as usize].words.len() > self.order - 1 {
            if ctx == ROOT {
                return LmState::EMPTY;
            }
            ctx = self.entries[ctx as usize].suffix;
            match self.children.get(&(ctx, word)) {
                Some(&e) => found = e,
                None => continue,
            }
        }
        LmState(found)
    }
}

impl LanguageModel for NGramModel {
    type State = LmState;

    fn start(&self) -> LmState {
        match self.start {
            Some(s) if self.order > 1 => self.children.get(&(ROOT, s)).map_or(LmState::EMPTY, |&e| LmState(e)),
            _ => LmState::EMPTY,
        }
    }

    fn score(&self, state: LmState, word: WordId) -> (LmState, f32) {
        let mut ctx = state.0;
        let mut backoff = 0.0f32;
        loop {
            if let Some(&e) = self.children.get(&(ctx, word)) {
                let prob = backoff + self.entries[e as usize].prob;
                return (self.cap_state(ctx, word, e), prob);
            }
            if ctx == ROOT {
                // only reachable for ids outside the unigram table
                return (LmState::EMPTY, backoff + f32::NEG_INFINITY);
            }
            let entry = &self.entries[ctx as usize];
            backoff += entry.backoff;
            ctx = entry.suffix;
        }
    }

    fn finish(&self, state: LmState) -> f32 {
        match self.end {
            Some(end) => self.score(state, end).1,
            None => 0.0,
        }
    }

    fn word_id(&self, word: &str) -> Option<WordId> {
        self.exact_id(word).or(self.unk)
    }

    fn unigram(&self, word: WordId) -> f32 {
        self.children.get(&(ROOT, word)).map_or(f32::NEG_INFINITY, |&e| self.entries[e as usize].prob)
    }
}

#[derive(Default)]
struct ArpaParser {
    vocab: Vec<String>,
    word_index: HashMap<String, WordId>,
    entries: Vec<Entry>,
    children: FxHashMap<(u32, WordId), u32>,
}

fn perr(line: usize, message: impl Into<String>) -> LmError {
    LmError::Parse { line, message: message.into() }
}

impl ArpaParser {
    fn parse(mut self, text: &str) -> Result<NGramModel, LmError> {
        enum Section {
            Preamble,
            Data,
            Grams(usize),
            End,
        }
        let mut section = Section::Preamble;
        let mut declared: Vec<usize> = Vec::new();
        let mut seen: Vec<usize> = Vec::new();
        let mut last_line = 0;

        let close_section = |n: usize, seen: &[usize], declared: &[usize], line: usize| {
            if seen[n - 1] != declared[n - 1] {
                return Err(perr(
                    line,
                    format!("\\data\\ declares {} {n}-grams but the section lists {}", declared[n - 1], seen[n - 1]),
                ));
            }
            Ok(())
        };

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            last_line = lineno;
            let line = raw.trim();
            if matches!(section, Section::End) {
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if line == "\\data\\" {
                if !matches!(section, Section::Preamble) {
                    return Err(perr(lineno, "duplicate \\data\\ header"));
                }
                section = Section::Data;
                continue;
            }
            if line == "\\end\\" {
                if let Section::Grams(n) = section {
                    close_section(n, &seen, &declared, lineno)?;
                }
                if seen.len() != declared.len() || seen.iter().zip(&declared).any(|(s, d)| s != d) {
                    return Err(perr(lineno, "\\end\\ reached before all declared n-gram sections"));
                }
                section = Section::End;
                continue;
            }
            if let Some(n) = line.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
                let n: usize = n.parse().map_err(|_| perr(lineno, format!("bad section header {line:?}")))?;
                if let Section::Grams(prev) = section {
                    close_section(prev, &seen, &declared, lineno)?;
                }
                if n != seen.len() + 1 || n > declared.len() {
                    return Err(perr(lineno, format!("unexpected section \\{n}-grams:")));
                }
                seen.push(0);
                section = Section::Grams(n);
                continue;
            }
            match section {
                Section::Preamble => {}
                Section::Data => {
                    let rest = line
                        .strip_prefix("ngram ")
                        .ok_or_else(|| perr(lineno, format!("expected `ngram N=count`, got {line:?}")))?;
                    let (n, count) = rest.split_once('=').ok_or_else(|| perr(lineno, "expected `ngram N=count`"))?;
                    let n: usize = n.trim().parse().map_err(|_| perr(lineno, "bad n-gram order"))?;
                    let count: usize = count.trim().parse().map_err(|_| perr(lineno, "bad n-gram count"))?;
                    if n != declared.len() + 1 {
                        return Err(perr(lineno, format!("ngram orders must be consecutive, got {n}")));
                    }
                    declared.push(count);
                }
                Section::Grams(n) => {
                    self.entry(line, n, lineno)?;
                    seen[n - 1] += 1;
                }
                Section::End => unreachable!(),
            }
        }
        if !matches!(section, Section::End) {
            return Err(perr(last_line + 1, "missing \\end\\ marker"));
        }
        if declared.is_empty() || declared[0] == 0 {
            return Err(perr(last_line, "model has no unigrams"));
        }
        self.finish(declared)
    }

    fn entry(&mut self, line: &str, n: usize, lineno: usize) -> Result<(), LmError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != n + 1 && fields.len() != n + 2 {
            return Err(perr(lineno, format!("expected prob, {n} words and optional backoff")));
        }
        let parse_f = |s: &str| -> Result<f32, LmError> {
            s.parse::<f32>().map_err(|_| perr(lineno, format!("bad number {s:?}")))
        };
        let prob = parse_f(fields[0])?;
        if prob > 0.0 {
            return Err(perr(lineno, format!("log10 probability {prob} > 0")));
        }
        let backoff = if fields.len() == n + 2 { parse_f(fields[n + 1])? } else { 0.0 };

        let mut ids = Vec::with_capacity(n);
        for w in &fields[1..=n] {
            let id = match self.word_index.get(*w) {
                Some(&id) => id,
                None if n == 1 => {
                    let id = self.vocab.len() as WordId;
                    self.vocab.push(w.to_string());
                    self.word_index.insert(w.to_string(), id);
                    id
                }
                None => return Err(perr(lineno, format!("word {w:?} has no unigram entry"))),
            };
            ids.push(id);
        }
        let mut ctx = ROOT;
        for &w in &ids[..n - 1] {
            ctx = *self
                .children
                .get(&(ctx, w))
                .ok_or_else(|| perr(lineno, format!("history of {:?} is not in the model", &fields[1..=n])))?;
        }
        let id = self.entries.len() as u32;
        if self.children.insert((ctx, ids[n - 1]), id).is_some() {
            return Err(perr(lineno, format!("duplicate n-gram {:?}", &fields[1..=n])));
        }
        self.entries.push(Entry { words: ids.into_boxed_slice(), prob, backoff, suffix: ROOT });
        Ok(())
    }

    fn lookup(&self, words: &[WordId]) -> Option<u32> {
        let mut ctx = ROOT;
        for &w in words {
            ctx = *self.children.get(&(ctx, w))?;
        }
        Some(ctx)
    }

    fn finish(mut self, counts: Vec<usize>) -> Result<NGramModel, LmError> {
        for i in 0..self.entries.len() {
            let words = self.entries[i].words.clone();
            let suffix = (1..words.len()).find_map(|s| self.lookup(&words[s..])).unwrap_or(ROOT);
            self.entries[i].suffix = suffix;
        }
        let get = |w: &str| self.word_index.get(w).copied();
        Ok(NGramModel {
            order: counts.len(),
            start: get(SENTENCE_START),
            end: get(SENTENCE_END),
            unk: get(UNKNOWN),
            counts,
            vocab: self.vocab,
            word_index: self.word_index,
            entries: self.entries,
            children: self.children,
        })
    }
}
