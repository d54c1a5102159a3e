use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use crate::criterion::{validate_target, CriterionKind};
use crate::features::{featurize, load_wav, AudioBuffer, FeatureConfig, FeatureError};
use crate::vocab::{Lexicon, TokenTable};

use super::{DataError, ManifestEntry};

/// Padding value of target slots past `target_lengths[b]`.
pub const TARGET_PAD: i32 = -1;

/// Utterances of one batch, before featurization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub index: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Sort ascending by duration (ties by id) and cut into consecutive
/// batches; the last batch may be short.
pub fn sort_and_batch(entries: &[ManifestEntry], batch_size: usize) -> Vec<BatchSpec> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.duration_ms.total_cmp(&b.duration_ms).then_with(|| a.id.cmp(&b.id)));
    sorted
        .chunks(batch_size)
        .enumerate()
        .map(|(index, chunk)| BatchSpec { index, entries: chunk.iter().map(|&e| e.clone()).collect() })
        .collect()
}

/// Reorder whole batches for one epoch; contents stay intact.
pub fn shuffle_batches(batches: &mut [BatchSpec], seed: u64, epoch: u64) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    batches.shuffle(&mut rng);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub index: usize,
    pub ids: Vec<String>,
    /// `B × max_frames × dim`, zero past each utterance's length.
    pub features: Vec<f32>,
    pub feature_lengths: Vec<usize>,
    pub max_frames: usize,
    pub dim: usize,
    /// `B × max_target`, [`TARGET_PAD`] past each target's length.
    pub targets: Vec<i32>,
    pub target_lengths: Vec<usize>,
    pub max_target: usize,
    pub transcripts: Vec<Vec<String>>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.ids.len()
    }

    /// Unpadded `frames × dim` features of utterance `b`.
    pub fn utterance(&self, b: usize) -> &[f32] {
        let start = b * self.max_frames * self.dim;
        &self.features[start..start + self.feature_lengths[b] * self.dim]
    }

    pub fn target(&self, b: usize) -> Vec<usize> {
        let row = &self.targets[b * self.max_target..b * self.max_target + self.target_lengths[b]];
        row.iter().map(|&k| k as usize).collect()
    }

    pub fn padding_frames(&self) -> usize {
        self.feature_lengths.iter().map(|&l| self.max_frames - l).sum()
    }

    /// CRC32 over ids, lengths, features and targets.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for id in &self.ids {
            h.update(id.as_bytes());
            h.update(&[0]);
        }
        for &l in self.feature_lengths.iter().chain(&self.target_lengths) {
            h.update(&(l as u64).to_le_bytes());
        }
        for v in &self.features {
            h.update(&v.to_le_bytes());
        }
        for v in &self.targets {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }
}

/// Where utterance audio comes from.
pub trait AudioSource: Send + Sync {
    fn load(&self, entry: &ManifestEntry) -> Result<AudioBuffer, FeatureError>;
}

/// Reads WAV files from disk.
#[derive(Debug, Default, Clone, Copy)]
pub struct WavFiles;

impl AudioSource for WavFiles {
    fn load(&self, entry: &ManifestEntry) -> Result<AudioBuffer, FeatureError> {
        load_wav(&entry.audio)
    }
}

/// Audio held in memory, keyed by the manifest path.
#[derive(Debug, Default)]
pub struct InMemoryAudio {
    clips: Mutex<HashMap<PathBuf, AudioBuffer>>,
}

impl InMemoryAudio {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, path: impl Into<PathBuf>, audio: AudioBuffer) {
        self.clips.lock().unwrap().insert(path.into(), audio);
    }
}

impl AudioSource for InMemoryAudio {
    fn load(&self, entry: &ManifestEntry) -> Result<AudioBuffer, FeatureError> {
        self.clips
            .lock()
            .unwrap()
            .get(&entry.audio)
            .cloned()
            .ok_or_else(|| FeatureError::Io(format!("{}: no such clip", entry.audio.display())))
    }
}

/// Maps transcripts to token ids: lexicon spelling when the word has one,
/// otherwise one token per character, with an optional separator token
/// between words.
#[derive(Debug, Clone)]
pub struct TargetEncoder {
    pub tokens: TokenTable,
    pub lexicon: Option<Lexicon>,
    pub kind: CriterionKind,
    pub word_separator: Option<usize>,
    /// CTC blank id; targets must not contain it.
    pub blank: usize,
}

impl TargetEncoder {
    pub fn encode(&self, words: &[String]) -> Result<Vec<usize>, String> {
        let mut out = Vec::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                out.extend(self.word_separator);
            }
            let ids = match self.lexicon.as_ref().and_then(|l| l.get(w)) {
                Some(entry) => self.tokens.encode(w, &entry.spellings[0]),
                None => {
                    let chars: Vec<String> = w.chars().map(String::from).collect();
                    self.tokens.encode(w, &chars)
                }
            }
            .map_err(|e| e.to_string())?;
            out.extend(ids);
        }
        validate_target(&out, self.kind, &self.tokens, self.blank).map_err(|e| e.to_string())
    }
}

/// Turns batch descriptors into padded feature/target tensors.
pub struct BatchBuilder {
    pub features: FeatureConfig,
    pub encoder: TargetEncoder,
    pub audio: Box<dyn AudioSource>,
}

impl BatchBuilder {
    pub fn new(features: FeatureConfig, encoder: TargetEncoder) -> Self {
        Self { features, encoder, audio: Box::new(WavFiles) }
    }

    pub fn with_audio(mut self, audio: impl AudioSource + 'static) -> Self {
        self.audio = Box::new(audio);
        self
    }

    pub fn build(&self, spec: &BatchSpec) -> Result<Batch, DataError> {
        let fail =
            |e: &ManifestEntry, message: String| DataError::Utterance { batch: spec.index, id: e.id.clone(), message };
        let mut feats = Vec::with_capacity(spec.entries.len());
        let mut targets = Vec::with_capacity(spec.entries.len());
        for e in &spec.entries {
            let audio = self.audio.load(e).map_err(|err| fail(e, err.to_string()))?;
            let m = featurize(&audio, &self.features).map_err(|err| fail(e, err.to_string()))?;
            feats.push(m);
            targets.push(self.encoder.encode(&e.words).map_err(|m| fail(e, m))?);
        }
        let dim = feats.first().map_or(0, |m| m.dim);
        if let Some((m, e)) = feats.iter().zip(&spec.entries).find(|(m, _)| m.dim != dim) {
            return Err(fail(e, format!("feature dim {} differs from {dim} in the same batch", m.dim)));
        }
        let max_frames = feats.iter().map(|m| m.frames).max().unwrap_or(0);
        let max_target = targets.iter().map(Vec::len).max().unwrap_or(0);
        let b = spec.entries.len();

        let mut features = vec![0.0f32; b * max_frames * dim];
        for (i, m) in feats.iter().enumerate() {
            let start = i * max_frames * dim;
            features[start..start + m.data.len()].copy_from_slice(&m.data);
        }
        let mut padded = vec![TARGET_PAD; b * max_target];
        for (i, t) in targets.iter().enumerate() {
            for (j, &k) in t.iter().enumerate() {
                padded[i * max_target + j] = k as i32;
            }
        }
        Ok(Batch {
            index: spec.index,
            ids: spec.entries.iter().map(|e| e.id.clone()).collect(),
            features,
            feature_lengths: feats.iter().map(|m| m.frames).collect(),
            max_frames,
            dim,
            targets: padded,
            target_lengths: targets.iter().map(Vec::len).collect(),
            max_target,
            transcripts: spec.entries.iter().map(|e| e.words.clone()).collect(),
        })
    }
}
