//! Crafted ARPA models and a string-keyed backoff oracle.

#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::LN_10;

use asr_core::criterion::CriterionKind;
use asr_core::decoder::{decode, DecodeOptions, Trie};
use asr_core::lm::{LanguageModel, NGramModel};
use asr_core::{Emissions, Lexicon, TokenTable};

/// (words, probability, backoff weight) in linear space.
type Gram = (&'static str, f64, f64);

/// Normalized bigram model: 5 unigrams, 4 bigrams. Backoff weights hand-set
/// so every conditional distribution over {</s>, a, b, c} sums to 1.
pub const UNIGRAMS: [Gram; 5] =
    [("<s>", 0.0, 0.2 / 0.3), ("</s>", 0.1, 1.0), ("a", 0.4, 0.4 / 0.7), ("b", 0.3, 0.5 / 0.8), ("c", 0.2, 1.0)];

pub const BIGRAMS: [Gram; 4] = [("<s> a", 0.5, 1.0), ("<s> b", 0.3, 1.0), ("a b", 0.6, 1.0), ("b c", 0.5, 1.0)];

pub const CLOSED_VOCAB: [&str; 4] = ["</s>", "a", "b", "c"];

fn log10_f32(p: f64) -> f32 {
    if p == 0.0 {
        -99.0
    } else {
        p.log10() as f32
    }
}

/// ARPA text of the crafted bigram model.
pub fn crafted_bigram_arpa() -> String {
    let mut s = format!("\\data\\\nngram 1={}\nngram 2={}\n\n\\1-grams:\n", UNIGRAMS.len(), BIGRAMS.len());
    for (w, p, bo) in UNIGRAMS {
        s += &format!("{}\t{}\t{}\n", log10_f32(p), w, log10_f32(bo));
    }
    s += "\n\\2-grams:\n";
    for (w, p, _) in BIGRAMS {
        s += &format!("{}\t{}\n", log10_f32(p), w);
    }
    s += "\n\\end\\\n";
    s
}

/// Trigram extension used for backoff chains and state capping.
pub fn crafted_trigram_arpa() -> String {
    "\\data\\
ngram 1=5
ngram 2=4
ngram 3=2

\\1-grams:
-99\t<s>\t-0.3
-1\t</s>
-0.4\ta\t-0.25
-0.5\tb\t-0.2
-0.7\tc

\\2-grams:
-0.3\t<s> a\t-0.1
-0.5\t<s> b
-0.2\ta b\t-0.15
-0.3\tb c\t-0.05

\\3-grams:
-0.1\t<s> a b
-0.05\ta b c

\\end\\
"
    .to_string()
}

/// Backoff scoring straight from the definition over string n-grams, with
/// the same f32 accumulation order as a single backoff walk.
pub struct OracleLm {
    order: usize,
    grams: HashMap<Vec<String>, (f32, f32)>,
}

impl OracleLm {
    pub fn from_arpa(text: &str) -> Self {
        let mut grams = HashMap::new();
        let mut order = 0;
        let mut n = 0;
        for line in text.lines() {
            let line = line.trim();
            if let Some(k) = line.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
                n = k.parse().unwrap();
                order = order.max(n);
                continue;
            }
            if n == 0 || line.is_empty() || line.starts_with('\\') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let words: Vec<String> = f[1..=n].iter().map(|s| s.to_string()).collect();
            let bo = if f.len() == n + 2 { f[n + 1].parse().unwrap() } else { 0.0 };
            grams.insert(words, (f[0].parse().unwrap(), bo));
        }
        Self { order, grams }
    }

    /// log10 P(w | history), history truncated to order − 1 words.
    pub fn prob(&self, history: &[&str], w: &str) -> f32 {
        let keep = history.len().min(self.order - 1);
        let mut h: Vec<String> = history[history.len() - keep..].iter().map(|s| s.to_string()).collect();
        let mut backoff = 0.0f32;
        loop {
            let mut key = h.clone();
            key.push(w.to_string());
            if let Some(&(p, _)) = self.grams.get(&key) {
                return backoff + p;
            }
            if h.is_empty() {
                return f32::NEG_INFINITY;
            }
            backoff += self.grams.get(&h).map_or(0.0, |g| g.1);
            h.remove(0);
        }
    }

    /// Σ log10 P over `<s> words </s>`.
    pub fn sentence(&self, words: &[&str]) -> f64 {
        let mut hist = vec!["<s>"];
        let mut total = 0.0f64;
        for w in words.iter().copied().chain(std::iter::once("</s>")) {
            total += self.prob(&hist, w) as f64;
            hist.push(w);
        }
        total
    }
}

/// Every bigram score and the documented backoff cases of the crafted
/// 5-unigram/4-bigram file, compared for exact equality against the
/// oracle. Returns the number of scores checked.
pub fn crafted_bigram_exact() -> Result<usize, String> {
    let text = crafted_bigram_arpa();
    let lm = NGramModel::parse_arpa(&text).map_err(|e| e.to_string())?;
    let oracle = OracleLm::from_arpa(&text);
    let mut checked = 0;

    for (w, p, _) in UNIGRAMS.iter().chain(&BIGRAMS) {
        let words: Vec<&str> = w.split(' ').collect();
        let stored = lm.ngram(&words).ok_or(format!("{w:?} missing"))?.0;
        if stored != log10_f32(*p) {
            return Err(format!("{w:?}: stored {stored} vs file {}", log10_f32(*p)));
        }
        checked += 1;
    }

    // P(b|a) listed, P(c|a) = backoff(a) + P(c)
    let (_, pba) = lm.score(lm.state_for(&["a"]), lm.lookup("b").unwrap());
    if pba != log10_f32(0.6) {
        return Err(format!("P(b|a) {pba}"));
    }
    let hand = log10_f32(0.4 / 0.7) + log10_f32(0.2);
    let (_, pca) = lm.score(lm.state_for(&["a"]), lm.lookup("c").unwrap());
    if pca != hand {
        return Err(format!("P(c|a) {pca} vs hand {hand}"));
    }

    for h in ["<s>", "a", "b", "c"] {
        for w in CLOSED_VOCAB {
            let (_, got) = lm.score(lm.state_for(&[h]), lm.lookup(w).unwrap());
            let want = oracle.prob(&[h], w);
            if got != want {
                return Err(format!("P({w}|{h}) {got} vs oracle {want}"));
            }
            checked += 1;
        }
    }

    // "a b": P(a|<s>) + P(b|a) + P(</s>|b), summed by hand
    let hand = log10_f32(0.5) as f64 + log10_f32(0.6) as f64 + (log10_f32(0.5 / 0.8) + log10_f32(0.1)) as f64;
    let got = lm.sentence_score(&["a", "b"]).map_err(|e| e.to_string())?;
    if got != hand {
        return Err(format!("sentence \"a b\" {got} vs hand {hand}"));
    }
    checked += 1;
    Ok(checked)
}

/// Decode emissions that force "a b" under the crafted bigram model. The
/// decoder must report the log10 sentence score scaled by ln 10.
pub fn decoder_boundary_scale() -> Result<f64, String> {
    let lm = NGramModel::parse_arpa(&crafted_bigram_arpa()).map_err(|e| e.to_string())?;
    let tokens =
        TokenTable::new(["a", "b", "c", "|", "<blank>"].map(String::from).to_vec()).map_err(|e| e.to_string())?;
    let mut lexicon = Lexicon::new();
    for w in ["a", "b", "c"] {
        lexicon.insert(w, &[w]);
    }
    let frames = [0usize, 4, 1];
    let mut scores = vec![-30.0f32; frames.len() * 5];
    for (t, &k) in frames.iter().enumerate() {
        scores[t * 5 + k] = 0.0;
    }
    let em = Emissions::new(frames.len(), 5, scores).map_err(|e| e.to_string())?;
    let trie = Trie::build(&lexicon, &tokens, &lm, CriterionKind::Ctc, false).map_err(|e| e.to_string())?;
    let mut opts = DecodeOptions::ctc(3, 4);
    opts.lm_weight = 1.0;
    opts.word_score = 0.0;
    opts.beam_size = 1000;
    opts.beam_threshold = f64::INFINITY;
    let best = decode(&em, None, &trie, &lm, &opts).map_err(|e| e.to_string())?.best;
    if best.words != ["a", "b"] {
        return Err(format!("decoded {:?}", best.words));
    }
    let log10 = lm.sentence_score(&["a", "b"]).map_err(|e| e.to_string())?;
    let want = log10 * LN_10;
    let err = (best.lm_score - want).abs();
    if err > 1e-9 * want.abs() {
        return Err(format!("decoder LM score {} vs ln10 x {log10} = {want}", best.lm_score));
    }
    if (best.score - best.am_score - best.lm_score).abs() > 1e-9 {
        return Err(format!("score {} != am {} + lm {}", best.score, best.am_score, best.lm_score));
    }
    Ok(err)
}
