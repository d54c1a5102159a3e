//! Prefetch determinism over a corpus of WAV files written to disk.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use asr_core::criterion::CriterionKind;
use asr_core::data::{sort_and_batch, BatchBuilder, Manifest, Prefetcher, TargetEncoder};
use asr_core::features::{encode_wav_pcm16, FeatureConfig};
use asr_core::TokenTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLE_RATE: u32 = 8000;

/// Random-noise corpus of `count` utterances with random durations and
/// letter transcripts. Returns the manifest path.
pub fn write_corpus(dir: &Path, count: usize, seed: u64) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tsv = String::new();
    for i in 0..count {
        let ms = rng.gen_range(60..400);
        let n = (SAMPLE_RATE as usize * ms) / 1000;
        let samples: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let name = format!("utt{i:03}.wav");
        std::fs::write(dir.join(&name), encode_wav_pcm16(&samples, SAMPLE_RATE, 1)).unwrap();
        let words: Vec<String> = (0..rng.gen_range(1..4))
            .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(b'a'..=b'd') as char).collect())
            .collect();
        tsv += &format!("utt{i:03}\t{name}\t{ms}\t{}\n", words.join(" "));
    }
    let path = dir.join("corpus.tsv");
    std::fs::write(&path, tsv).unwrap();
    path
}

pub fn builder() -> BatchBuilder {
    let tokens = TokenTable::parse("a\nb\nc\nd\n|\n<b>\n").unwrap();
    let encoder = TargetEncoder { tokens, lexicon: None, kind: CriterionKind::Ctc, word_separator: Some(4), blank: 5 };
    BatchBuilder::new(FeatureConfig::default(), encoder)
}

/// (batch index, checksum) of every batch, in delivery order.
pub fn checksums(
    manifest: &Path,
    batch_size: usize,
    parallelism: usize,
    capacity: usize,
) -> Result<Vec<(usize, u32)>, String> {
    let m = Manifest::load(manifest).map_err(|e| e.to_string())?;
    let batches = sort_and_batch(&m.entries, batch_size);
    let stream = Prefetcher::new(batches, Arc::new(builder()), parallelism, capacity);
    stream.map(|b| b.map(|b| (b.index, b.checksum())).map_err(|e| e.to_string())).collect()
}

/// Identical batch checksums in identical order for P ∈ {1, 2, 8}.
/// Returns the number of batches compared.
pub fn determinism(dir: &Path) -> Result<usize, String> {
    let manifest = write_corpus(dir, 100, 0x9E7);
    let reference = checksums(&manifest, 2, 1, 1)?;
    for p in [2, 8] {
        let got = checksums(&manifest, 2, p, 2)?;
        if got != reference {
            return Err(format!("P={p} delivered a different batch sequence"));
        }
    }
    let in_order = reference.iter().enumerate().all(|(i, &(idx, _))| i == idx);
    if !in_order || reference.len() != 50 {
        return Err(format!("unexpected batch order or count {}", reference.len()));
    }
    Ok(reference.len())
}
