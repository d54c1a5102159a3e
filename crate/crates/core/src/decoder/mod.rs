//! Lexicon-constrained beam search over acoustic emissions.
//!
//! The decoder maximizes `am + α·ln P_LM(words) + β·|words|` frame by frame.
//! Hypotheses live on trie nodes; a word is committed when its spelling is
//! complete and a boundary is seen (the silence token, or directly the next
//! word's first token when [`WordBoundary::Direct`] is on).

mod io;
mod trie;

use std::f64::consts::LN_10;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::{CriterionKind, Emissions, TransitionMatrix};
use crate::lm::{LanguageModel, LmError};
use crate::vocab::VocabError;

pub use io::{decode_emissions_bytes, encode_emissions_bytes, load_emissions, save_emissions, EMISSIONS_MAGIC};
pub use trie::{Trie, TrieNode};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Lexicon(#[from] VocabError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("emissions file: {message} at byte {offset}")]
    Format { offset: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no hypothesis reached the end of the utterance in a complete word")]
    NoHypothesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Max,
    Logadd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordBoundary {
    /// A word ends only when the silence token follows it.
    RequireSilence,
    /// A complete word may also be followed directly by the next word.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub lm_weight: f64,
    pub word_score: f64,
    pub beam_size: usize,
    pub beam_threshold: f64,
    pub silence: usize,
    pub kind: CriterionKind,
    pub blank: Option<usize>,
    pub merge: MergeMode,
    pub boundary: WordBoundary,
}

impl DecodeOptions {
    pub fn ctc(silence: usize, blank: usize) -> Self {
        Self {
            lm_weight: 0.0,
            word_score: 0.0,
            beam_size: 100,
            beam_threshold: 25.0,
            silence,
            kind: CriterionKind::Ctc,
            blank: Some(blank),
            merge: MergeMode::Max,
            boundary: WordBoundary::Direct,
        }
    }

    pub fn asg(silence: usize) -> Self {
        Self { kind: CriterionKind::Asg, blank: None, boundary: WordBoundary::RequireSilence, ..Self::ctc(silence, 0) }
    }

    pub fn validate(&self, tokens: usize) -> Result<(), DecodeError> {
        let bad = |m: String| Err(DecodeError::Contract(m));
        if !(self.lm_weight >= 0.0) {
            return bad(format!("lm weight must be ≥ 0, got {}", self.lm_weight));
        }
        if !self.word_score.is_finite() {
            return bad(format!("word score must be finite, got {}", self.word_score));
        }
        if self.beam_size == 0 {
            return bad("beam size must be ≥ 1".into());
        }
        if !(self.beam_threshold > 0.0) {
            return bad(format!("beam threshold must be > 0, got {}", self.beam_threshold));
        }
        if self.silence >= tokens {
            return bad(format!("silence id {} out of range for {tokens} tokens", self.silence));
        }
        match (self.kind, self.blank) {
            (CriterionKind::Ctc, Some(b)) if b >= tokens => bad(format!("blank id {b} out of range")),
            (CriterionKind::Ctc, Some(b)) if b == self.silence => bad("blank and silence share an id".into()),
            (CriterionKind::Ctc, None) => bad("CTC decoding needs a blank id".into()),
            (CriterionKind::Asg, Some(_)) => bad("ASG has no blank token".into()),
            _ => Ok(()),
        }
    }
}

/// One complete transcription with its score decomposition:
/// `score = am_score + lm_weight·lm_score + word_score·words.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub words: Vec<String>,
    /// Framewise token path, one id per frame.
    pub tokens: Vec<usize>,
    pub score: f64,
    pub am_score: f64,
    /// Natural-log LM score including the sentence end.
    pub lm_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub best: Candidate,
    /// Distinct transcriptions, best first, at most `beam_size`.
    pub nbest: Vec<Candidate>,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Hyp<S> {
    node: u32,
    lm_state: S,
    last: u32,
    score: f64,
    am: f64,
    lm: f64,
    words: u32,
    lookahead: f64,
    parent: u32,
    token: u32,
    word: u32,
}

#[derive(Debug, Clone, Copy)]
struct Back {
    parent: u32,
    token: u32,
    word: u32,
}

struct Frame<S> {
    hyps: Vec<Hyp<S>>,
    index: FxHashMap<(u32, S, u32), usize>,
    merge: MergeMode,
}

impl<S: Copy + Eq + std::hash::Hash> Frame<S> {
    fn new(merge: MergeMode) -> Self {
        Self { hyps: Vec::new(), index: FxHashMap::default(), merge }
    }

    fn clear(&mut self) {
        self.hyps.clear();
        self.index.clear();
    }

    fn push(&mut self, h: Hyp<S>) {
        let key = (h.node, h.lm_state, h.last);
        match self.index.get(&key) {
            None => {
                self.index.insert(key, self.hyps.len());
                self.hyps.push(h);
            }
            Some(&i) => {
                let old = self.hyps[i];
                let mut win = if h.score > old.score { h } else { old };
                if self.merge == MergeMode::Logadd {
                    let total = logadd(old.score, h.score);
                    // the absorbed mass counts as acoustic evidence
                    win.am += total - win.score;
                    win.score = total;
                }
                self.hyps[i] = win;
            }
        }
    }
}

fn logadd(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

struct Search<'a, L: LanguageModel> {
    trie: &'a Trie,
    lm: &'a L,
    opts: &'a DecodeOptions,
    alpha: f64,
}

impl<L: LanguageModel> Search<'_, L> {
    fn advance(&self, h: &Hyp<L::State>, node: u32) -> Hyp<L::State> {
        let la = self.alpha * self.trie.lookahead(node);
        Hyp { node, score: h.score - h.lookahead + la, lookahead: la, ..*h }
    }

    /// Commit word `w` ending at `h.node` and return to the root.
    fn commit(&self, h: &Hyp<L::State>, w: u32) -> Hyp<L::State> {
        let (state, p) = self.lm.score(h.lm_state, self.trie.lm_id(w));
        let lm = p as f64 * LN_10;
        Hyp {
            node: trie::ROOT,
            lm_state: state,
            score: h.score - h.lookahead + self.alpha * lm + self.opts.word_score,
            lm: h.lm + lm,
            words: h.words + 1,
            lookahead: 0.0,
            word: w,
            ..*h
        }
    }

    fn expand(
        &self,
        h: &Hyp<L::State>,
        parent: u32,
        em: &[f32],
        trans: Option<&TransitionMatrix>,
        out: &mut Frame<L::State>,
    ) {
        let sil = self.opts.silence;
        let blank = self.opts.blank;
        let trans_score = |to: usize| match (trans, h.last) {
            (Some(a), last) if last != NONE => a.at(to, last as usize) as f64,
            _ => 0.0,
        };
        let step = |mut n: Hyp<L::State>, tok: usize| {
            let gain = em[tok] as f64 + trans_score(tok);
            n.score += gain;
            n.am += gain;
            n.last = tok as u32;
            n.parent = parent;
            n.token = tok as u32;
            n
        };
        let fresh = Hyp { word: NONE, ..*h };

        // repeat of the previous token, which is also how blanks and
        // silences persist
        if h.last != NONE {
            out.push(step(fresh, h.last as usize));
        }
        if let Some(b) = blank {
            if h.last != b as u32 {
                out.push(step(fresh, b));
            }
        }
        if h.last != sil as u32 {
            if h.node == trie::ROOT {
                out.push(step(fresh, sil));
            } else {
                for &w in &self.trie.node(h.node).terminals {
                    out.push(step(self.commit(&fresh, w), sil));
                }
            }
        }
        for &(tok, child) in &self.trie.node(h.node).children {
            if tok as u32 != h.last {
                out.push(step(self.advance(&fresh, child), tok));
            }
        }
        if self.opts.boundary == WordBoundary::Direct {
            for &w in &self.trie.node(h.node).terminals {
                let done = self.commit(&fresh, w);
                for &(tok, child) in &self.trie.root().children {
                    if tok as u32 != h.last {
                        out.push(step(self.advance(&done, child), tok));
                    }
                }
            }
        }
    }
}

/// Beam search decode of one utterance. `transitions` must be given exactly
/// when decoding ASG emissions.
pub fn decode<L: LanguageModel>(
    emissions: &Emissions,
    transitions: Option<&TransitionMatrix>,
    trie: &Trie,
    lm: &L,
    opts: &DecodeOptions,
) -> Result<DecodeResult, DecodeError> {
    let n = emissions.tokens;
    opts.validate(n)?;
    if emissions.frames == 0 {
        return Err(DecodeError::Contract("emissions have no frames".into()));
    }
    if trie.is_empty() {
        return Err(DecodeError::Contract("lexicon trie is empty".into()));
    }
    match (opts.kind, transitions) {
        (CriterionKind::Asg, Some(a)) if a.size != n => {
            return Err(DecodeError::Contract(format!("transitions are {0}x{0} for {n} tokens", a.size)))
        }
        (CriterionKind::Asg, None) => return Err(DecodeError::Contract("ASG decoding needs transitions".into())),
        (CriterionKind::Ctc, Some(_)) => return Err(DecodeError::Contract("CTC decoding takes no transitions".into())),
        _ => {}
    }
    for special in std::iter::once(opts.silence).chain(opts.blank) {
        if trie.uses_token(special) {
            return Err(DecodeError::Contract(format!("token {special} is reserved but spells a lexicon word")));
        }
    }

    let search = Search { trie, lm, opts, alpha: opts.lm_weight };
    let mut arena: Vec<Vec<Back>> = Vec::with_capacity(emissions.frames + 1);
    arena.push(vec![Back { parent: NONE, token: NONE, word: NONE }]);
    let mut beam = vec![Hyp {
        node: trie::ROOT,
        lm_state: lm.start(),
        last: NONE,
        score: 0.0,
        am: 0.0,
        lm: 0.0,
        words: 0,
        lookahead: 0.0,
        parent: NONE,
        token: NONE,
        word: NONE,
    }];
    let mut next = Frame::new(opts.merge);
    let mut order: Vec<usize> = Vec::new();

    for t in 0..emissions.frames {
        next.clear();
        let row = emissions.row(t);
        for (i, h) in beam.iter().enumerate() {
            search.expand(h, i as u32, row, transitions, &mut next);
        }
        let best = next.hyps.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let floor = best - opts.beam_threshold;
        order.clear();
        order.extend((0..next.hyps.len()).filter(|&i| next.hyps[i].score >= floor));
        order.sort_by(|&a, &b| next.hyps[b].score.total_cmp(&next.hyps[a].score));
        order.truncate(opts.beam_size);

        beam.clear();
        let mut backs = Vec::with_capacity(order.len());
        for &i in &order {
            let h = next.hyps[i];
            backs.push(Back { parent: h.parent, token: h.token, word: h.word });
            beam.push(h);
        }
        arena.push(backs);
        if beam.is_empty() {
            return Err(DecodeError::NoHypothesis);
        }
    }

    // close pending words, then score the sentence end
    let mut finals: Vec<(Hyp<L::State>, u32, u32)> = Vec::new();
    for (i, h) in beam.iter().enumerate() {
        let mut close = |h: Hyp<L::State>, word: u32| {
            let end = lm.finish(h.lm_state) as f64 * LN_10;
            let done = Hyp { score: h.score + search.alpha * end, lm: h.lm + end, ..h };
            finals.push((done, i as u32, word));
        };
        if h.node == trie::ROOT {
            close(*h, NONE);
        } else {
            for &w in &trie.node(h.node).terminals {
                close(search.commit(h, w), w);
            }
        }
    }
    if finals.is_empty() {
        return Err(DecodeError::NoHypothesis);
    }
    finals.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));

    let mut nbest: Vec<Candidate> = Vec::new();
    for (h, idx, word) in finals {
        if nbest.len() == opts.beam_size {
            break;
        }
        let cand = backtrace(&arena, trie, &h, idx, word);
        if nbest.iter().all(|c| c.words != cand.words) {
            nbest.push(cand);
        }
    }
    Ok(DecodeResult { best: nbest[0].clone(), nbest })
}

fn backtrace<S>(arena: &[Vec<Back>], trie: &Trie, h: &Hyp<S>, idx: u32, last_word: u32) -> Candidate {
    let mut tokens = Vec::with_capacity(arena.len() - 1);
    let mut words: Vec<String> = Vec::new();
    if last_word != NONE {
        words.push(trie.word(last_word).to_string());
    }
    let mut i = idx;
    for frame in arena[1..].iter().rev() {
        let b = frame[i as usize];
        tokens.push(b.token as usize);
        if b.word != NONE {
            words.push(trie.word(b.word).to_string());
        }
        i = b.parent;
    }
    tokens.reverse();
    words.reverse();
    Candidate { words, tokens, score: h.score, am_score: h.am, lm_score: h.lm }
}
