//! Decoder vs exhaustive search over every framewise path and every way of
//! reading its collapsed token string as lexicon words.

#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::LN_10;

use asr_core::criterion::CriterionKind;
use asr_core::decoder::{decode, DecodeError, DecodeOptions, MergeMode, Trie, WordBoundary};
use asr_core::lm::{NGramModel, NullLm};
use asr_core::{Emissions, Lexicon, TokenTable, TransitionMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lm_suite::OracleLm;
use super::{all_paths, dedup_repeats, path_score};

pub const SCORE_TOL: f64 = 1e-4;

// letters are ids 0 and 1 in both layouts
const LETTERS: [&str; 2] = ["x", "y"];

#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: CriterionKind,
    pub boundary: WordBoundary,
    pub t: usize,
    pub n: usize,
    pub token_names: Vec<String>,
    pub silence: usize,
    pub blank: Option<usize>,
    pub repetition: Option<usize>,
    /// (word, spelling in letter ids before any canonicalization)
    pub lexicon: Vec<(String, Vec<usize>)>,
    pub emissions: Vec<f32>,
    pub transitions: Option<Vec<f32>>,
    pub arpa: String,
}

fn random_arpa(rng: &mut ChaCha8Rng, words: &[String]) -> String {
    let mut lp = || format!("{:.4}", rng.gen_range(-1.5..-0.05));
    let mut uni = vec![format!("-99\t<s>\t{}", lp()), format!("{}\t</s>", lp())];
    for w in words {
        uni.push(format!("{}\t{w}\t{}", lp(), lp()));
    }
    let mut bi = Vec::new();
    for h in std::iter::once("<s>").chain(words.iter().map(|s| s.as_str())) {
        for w in words.iter().map(|s| s.as_str()).chain(std::iter::once("</s>")) {
            if rng.gen_bool(0.4) {
                bi.push(format!("{:.4}\t{h} {w}", rng.gen_range(-1.5..-0.05)));
            }
        }
    }
    let mut s = format!("\\data\\\nngram 1={}\nngram 2={}\n\n\\1-grams:\n", uni.len(), bi.len());
    for l in uni {
        s += &l;
        s.push('\n');
    }
    s += "\n\\2-grams:\n";
    for l in bi {
        s += &l;
        s.push('\n');
    }
    s + "\n\\end\\\n"
}

pub fn random_instance(rng: &mut ChaCha8Rng, kind: CriterionKind, boundary: WordBoundary) -> Instance {
    let t = rng.gen_range(1..=5);
    let (token_names, silence, blank, repetition) = match kind {
        CriterionKind::Ctc => (vec!["x", "y", "|", "<b>"], 2, Some(3), None),
        CriterionKind::Asg => (vec!["x", "y", "<2>", "|"], 3, None, Some(2)),
    };
    let n = token_names.len();
    let mut spellings: Vec<Vec<usize>> = vec![vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    spellings.shuffle(rng);
    let count = rng.gen_range(1..=3);
    let mut lexicon: Vec<(String, Vec<usize>)> = Vec::new();
    for i in 0..count {
        // occasionally a homophone of the previous word
        let sp = if i > 0 && rng.gen_bool(0.2) { lexicon[i - 1].1.clone() } else { spellings[i].clone() };
        lexicon.push((format!("w{i}"), sp));
    }
    let words: Vec<String> = lexicon.iter().map(|w| w.0.clone()).collect();
    let emissions = (0..t * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let transitions = (kind == CriterionKind::Asg).then(|| (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    Instance {
        kind,
        boundary,
        t,
        n,
        token_names: token_names.into_iter().map(String::from).collect(),
        silence,
        blank,
        repetition,
        lexicon,
        emissions,
        transitions,
        arpa: random_arpa(rng, &words),
    }
}

impl Instance {
    fn oracle_spelling(&self, raw: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &k in raw {
            match (out.last(), self.repetition) {
                (Some(&p), Some(rep)) if p == k => out.push(rep),
                _ => out.push(k),
            }
        }
        out
    }

    /// Every word sequence a token group can be read as.
    fn readings(&self, group: &[usize]) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for (word, raw) in &self.lexicon {
            let sp = self.oracle_spelling(raw);
            if group == sp.as_slice() {
                out.push(vec![word.clone()]);
            } else if self.boundary == WordBoundary::Direct && group.starts_with(&sp) {
                for mut rest in self.readings(&group[sp.len()..]) {
                    rest.insert(0, word.clone());
                    out.push(rest);
                }
            }
        }
        out
    }

    /// Best objective value of every transcription reachable by some path.
    pub fn exhaustive(&self, alpha: f64, beta: f64, lm: Option<&OracleLm>) -> HashMap<Vec<String>, f64> {
        let em: Vec<f64> = self.emissions.iter().map(|&v| v as f64).collect();
        let trans: Option<Vec<f64>> = self.transitions.as_ref().map(|a| a.iter().map(|&v| v as f64).collect());
        let mut best: HashMap<Vec<String>, f64> = HashMap::new();
        for path in all_paths(self.n, self.t) {
            let am = path_score(&em, trans.as_deref(), self.n, &path);
            let merged: Vec<usize> = dedup_repeats(&path).into_iter().filter(|&k| Some(k) != self.blank).collect();
            let mut sentences: Vec<Vec<String>> = vec![vec![]];
            for group in merged.split(|&k| k == self.silence).filter(|g| !g.is_empty()) {
                let reads = self.readings(group);
                sentences = sentences
                    .iter()
                    .flat_map(|s| {
                        reads.iter().map(move |r| {
                            let mut s = s.clone();
                            s.extend(r.iter().cloned());
                            s
                        })
                    })
                    .collect();
            }
            for words in sentences {
                let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
                let lm_score = lm.map_or(0.0, |m| m.sentence(&refs) * LN_10);
                let total = am + alpha * lm_score + beta * words.len() as f64;
                let slot = best.entry(words).or_insert(f64::NEG_INFINITY);
                *slot = slot.max(total);
            }
        }
        best
    }

    pub fn tokens(&self) -> TokenTable {
        TokenTable::new(self.token_names.clone()).unwrap()
    }

    pub fn library_lexicon(&self) -> Lexicon {
        let mut lex = Lexicon::new();
        for (w, raw) in &self.lexicon {
            let names: Vec<&str> = raw.iter().map(|&k| LETTERS[k]).collect();
            lex.insert(w, &names);
        }
        lex
    }

    pub fn options(&self, alpha: f64, beta: f64) -> DecodeOptions {
        let base = match self.kind {
            CriterionKind::Ctc => DecodeOptions::ctc(self.silence, self.blank.unwrap()),
            CriterionKind::Asg => DecodeOptions::asg(self.silence),
        };
        DecodeOptions {
            lm_weight: alpha,
            word_score: beta,
            beam_size: 1 << 20,
            beam_threshold: f64::INFINITY,
            merge: MergeMode::Max,
            boundary: self.boundary,
            ..base
        }
    }

    pub fn emissions(&self) -> Emissions {
        Emissions::new(self.t, self.n, self.emissions.clone()).unwrap()
    }

    pub fn transition_matrix(&self) -> Option<TransitionMatrix> {
        self.transitions.clone().map(|a| TransitionMatrix::new(self.n, a).unwrap())
    }
}

fn compare(
    what: &str,
    got: Result<asr_core::DecodeResult, DecodeError>,
    oracle: &HashMap<Vec<String>, f64>,
    alpha: f64,
    beta: f64,
) -> Result<(), String> {
    let max = oracle.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let res = got.map_err(|e| format!("{what}: decoder error {e}, oracle best {max}"))?;
    let best = &res.best;
    if (best.score - max).abs() > SCORE_TOL {
        return Err(format!("{what}: decoder {:?} {} vs oracle best {max}", best.words, best.score));
    }
    match oracle.get(&best.words) {
        Some(&s) if (s - max).abs() <= SCORE_TOL => {}
        other => {
            return Err(format!("{what}: decoder picked {:?}, oracle scores it {other:?}, best {max}", best.words))
        }
    }
    let recomposed = best.am_score + alpha * best.lm_score + beta * best.words.len() as f64;
    if (recomposed - best.score).abs() > SCORE_TOL {
        return Err(format!("{what}: decomposition {recomposed} vs {}", best.score));
    }
    Ok(())
}

/// Decoder vs exhaustive search for CTC (both boundary modes) and ASG with
/// α ∈ {0, 1} and β ∈ {−1, 0, 1}. Returns the number of decodes compared.
pub fn decoder_exhaustive(draws: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDEC);
    let setups = [
        (CriterionKind::Ctc, WordBoundary::Direct),
        (CriterionKind::Ctc, WordBoundary::RequireSilence),
        (CriterionKind::Asg, WordBoundary::RequireSilence),
    ];
    let mut checked = 0;
    for (kind, boundary) in setups {
        for d in 0..draws {
            let inst = random_instance(&mut rng, kind, boundary);
            let lm = NGramModel::parse_arpa(&inst.arpa).map_err(|e| e.to_string())?;
            let oracle_lm = OracleLm::from_arpa(&inst.arpa);
            let trie =
                Trie::build(&inst.library_lexicon(), &inst.tokens(), &lm, kind, false).map_err(|e| e.to_string())?;
            let em = inst.emissions();
            let trans = inst.transition_matrix();
            for alpha in [0.0, 1.0] {
                for beta in [-1.0, 0.0, 1.0] {
                    let what = format!("{kind:?}/{boundary:?} draw {d} α={alpha} β={beta} lexicon {:?}", inst.lexicon);
                    let oracle = inst.exhaustive(alpha, beta, Some(&oracle_lm));
                    let got = decode(&em, trans.as_ref(), &trie, &lm, &inst.options(alpha, beta));
                    compare(&what, got, &oracle, alpha, beta)?;
                    checked += 1;
                    if alpha == 0.0 {
                        // no language model at all
                        let got = decode(&em, trans.as_ref(), &trie, &NullLm, &inst.options(alpha, beta));
                        compare(&format!("{what} (no LM)"), got, &inst.exhaustive(alpha, beta, None), alpha, beta)?;
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(checked)
}
