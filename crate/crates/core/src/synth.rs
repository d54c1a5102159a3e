//! Synthetic corpora: a toy tone corpus for end-to-end training and a
//! random decoding workload for latency measurements.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::criterion::{CriterionKind, Emissions};
use crate::data::{InMemoryAudio, ManifestEntry};
use crate::features::{encode_wav_pcm16, AudioBuffer, FeatureConfig, FeatureKind};
use crate::vocab::{Lexicon, TokenTable};

pub const TOY_SAMPLE_RATE: u32 = 8000;
pub const TOY_LETTERS: [&str; 5] = ["a", "b", "c", "d", "e"];
pub const SILENCE: &str = "|";
pub const BLANK: &str = "<blank>";

/// Utterances whose audio is a contiguous run of pure tones, one tone per
/// letter, and whose transcript is that letter sequence as one word.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub tokens: TokenTable,
    pub entries: Vec<ManifestEntry>,
    pub audio: Vec<AudioBuffer>,
}

fn tone_hz(letter: usize) -> f32 {
    300.0 + 350.0 * letter as f32
}

impl ToyCorpus {
    /// `count` utterances with distinct 2–4 letter transcripts, no letter
    /// directly repeated.
    pub fn generate(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = TokenTable::new(TOY_LETTERS.iter().chain(&[SILENCE, BLANK]).map(|s| s.to_string()).collect())
            .expect("toy tokens");
        let mut seen = std::collections::HashSet::new();
        let (mut entries, mut audio) = (Vec::new(), Vec::new());
        while entries.len() < count {
            let len = rng.gen_range(2..=4);
            let mut letters: Vec<usize> = Vec::with_capacity(len);
            while letters.len() < len {
                let k = rng.gen_range(0..TOY_LETTERS.len());
                if letters.last() != Some(&k) {
                    letters.push(k);
                }
            }
            if !seen.insert(letters.clone()) {
                continue;
            }
            let mut samples = Vec::new();
            for &k in &letters {
                let ms = rng.gen_range(80..=110);
                let n = TOY_SAMPLE_RATE as usize * ms / 1000;
                let phase = rng.gen_range(0.0..2.0 * PI);
                let hz = tone_hz(k);
                samples.extend((0..n).map(|i| {
                    let t = i as f32 / TOY_SAMPLE_RATE as f32;
                    0.5 * (2.0 * PI * hz * t + phase).sin() + rng.gen_range(-0.01..0.01)
                }));
            }
            let id = format!("toy{:02}", entries.len());
            let word: String = letters.iter().map(|&k| TOY_LETTERS[k]).collect();
            entries.push(ManifestEntry {
                id: id.clone(),
                audio: PathBuf::from(format!("{id}.wav")),
                duration_ms: samples.len() as f64 * 1000.0 / TOY_SAMPLE_RATE as f64,
                words: vec![word],
            });
            audio.push(AudioBuffer { samples, sample_rate: TOY_SAMPLE_RATE });
        }
        Self { tokens, entries, audio }
    }

    pub fn features() -> FeatureConfig {
        FeatureConfig { kind: FeatureKind::Mfsc, num_mel_filters: 16, normalize: true, ..FeatureConfig::default() }
    }

    /// Three conv layers over 16 log-mel channels.
    pub fn arch_text(&self) -> String {
        let n = self.tokens.len();
        format!("C 16 32 5 1 2\nR\nC 32 32 5 1 2\nR\nC 32 {n} 3 1 1\nLSM\n")
    }

    pub fn blank(&self) -> usize {
        self.tokens.id(BLANK).expect("blank token")
    }

    pub fn silence(&self) -> usize {
        self.tokens.id(SILENCE).expect("silence token")
    }

    pub fn audio_source(&self) -> InMemoryAudio {
        let src = InMemoryAudio::new();
        for (e, a) in self.entries.iter().zip(&self.audio) {
            src.insert(e.audio.clone(), a.clone());
        }
        src
    }

    /// Write WAV files, `corpus.tsv`, `tokens.txt` and `lexicon.txt`.
    /// Returns the manifest path.
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut tsv = String::new();
        let mut lexicon = Lexicon::new();
        for (e, a) in self.entries.iter().zip(&self.audio) {
            fs::write(dir.join(&e.audio), encode_wav_pcm16(&a.samples, a.sample_rate, 1))?;
            tsv += &format!("{}\t{}\t{}\t{}\n", e.id, e.audio.display(), e.duration_ms, e.words.join(" "));
            for w in &e.words {
                let letters: Vec<String> = w.chars().map(String::from).collect();
                lexicon.insert(w, &letters);
            }
        }
        fs::write(dir.join("tokens.txt"), self.tokens.to_text())?;
        fs::write(dir.join("lexicon.txt"), lexicon.to_text())?;
        fs::write(dir.join("arch.txt"), self.arch_text())?;
        let manifest = dir.join("corpus.tsv");
        fs::write(&manifest, tsv)?;
        Ok(manifest)
    }
}

/// Random lexicon, bigram LM and emissions shaped like a decoding benchmark.
#[derive(Debug, Clone)]
pub struct DecodeWorkload {
    pub tokens: TokenTable,
    pub lexicon: Lexicon,
    pub arpa: String,
    pub silence: usize,
    pub blank: usize,
    pub utterances: Vec<(String, Emissions)>,
}

impl DecodeWorkload {
    /// `token_count` tokens including silence and blank; CTC-style emissions
    /// of `frames` frames that spell random word sequences under noise.
    pub fn generate(utterances: usize, frames: usize, token_count: usize, words: usize, seed: u64) -> Self {
        assert!(token_count >= 4 && frames >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let letters = token_count - 2;
        let mut names: Vec<String> = (0..letters).map(|i| format!("t{i}")).collect();
        names.push(SILENCE.into());
        names.push(BLANK.into());
        let tokens = TokenTable::new(names).expect("workload tokens");
        let (silence, blank) = (letters, letters + 1);

        let mut lexicon = Lexicon::new();
        let mut spellings: Vec<Vec<usize>> = Vec::new();
        while spellings.len() < words {
            let len = rng.gen_range(2..=5);
            let sp: Vec<usize> = (0..len).map(|_| rng.gen_range(0..letters)).collect();
            if spellings.contains(&sp) {
                continue;
            }
            let word = format!("w{}", spellings.len());
            let names: Vec<&str> = sp.iter().map(|&k| tokens.token(k)).collect();
            lexicon.insert(&word, &names);
            spellings.push(sp);
        }

        let arpa = random_bigram_arpa(&mut rng, words);

        let mut utts = Vec::with_capacity(utterances);
        for u in 0..utterances {
            // spell words separated by silence, each token held 2–4 frames,
            // blanks between repeats
            let mut path: Vec<usize> = Vec::with_capacity(frames);
            while path.len() < frames {
                let sp = spellings.choose(&mut rng).expect("words");
                for &k in sp.iter().chain(std::iter::once(&silence)) {
                    if path.last() == Some(&k) {
                        path.push(blank);
                    }
                    for _ in 0..rng.gen_range(2..=4) {
                        path.push(k);
                    }
                }
            }
            path.truncate(frames);
            let mut scores = Vec::with_capacity(frames * token_count);
            for &k in &path {
                let row: Vec<f32> =
                    (0..token_count).map(|j| rng.gen_range(-2.0..0.0) + if j == k { 3.0 } else { 0.0 }).collect();
                let lse = row.iter().map(|v| v.exp()).sum::<f32>().ln();
                scores.extend(row.iter().map(|v| v - lse));
            }
            utts.push((format!("utt{u:04}"), Emissions::new(frames, token_count, scores).expect("workload emissions")));
        }
        Self { tokens, lexicon, arpa, silence, blank, utterances: utts }
    }

    pub fn kind(&self) -> CriterionKind {
        CriterionKind::Ctc
    }
}

fn random_bigram_arpa(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut uni = vec!["-99\t<s>\t-0.3".to_string(), format!("{:.4}\t</s>", rng.gen_range(-2.0..-0.5))];
    for w in 0..words {
        uni.push(format!("{:.4}\tw{w}\t{:.4}", rng.gen_range(-2.5..-1.0), rng.gen_range(-0.8..-0.1)));
    }
    let mut bi = Vec::new();
    for h in 0..=words {
        let hist = if h == words { "<s>".to_string() } else { format!("w{h}") };
        for _ in 0..3 {
            let w = rng.gen_range(0..words);
            let line = format!("\t{hist} w{w}");
            if !bi.iter().any(|l: &String| l.ends_with(&line)) {
                bi.push(format!("{:.4}{line}", rng.gen_range(-1.5..-0.2)));
            }
        }
    }
    let mut s = format!("\\data\\\nngram 1={}\nngram 2={}\n\n\\1-grams:\n", uni.len(), bi.len());
    for l in uni.iter().chain(std::iter::once(&"\n\\2-grams:".to_string())).chain(&bi) {
        s += l;
        s.push('\n');
    }
    s + "\n\\end\\\n"
}
