//! Fixtures for the criterion benchmarks.

use asr_core::criterion::CriterionKind;
use asr_core::data::{sort_and_batch, Batch, BatchBuilder, TargetEncoder};
use asr_core::features::AudioBuffer;
use asr_core::synth::ToyCorpus;
use asr_core::trainer::{ArchSpec, CriterionSpec, TrainConfig, TrainState};
use asr_core::Emissions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A chirp-like mix of two tones, long enough to featurize.
pub fn tone(seconds: f32, sample_rate: u32) -> AudioBuffer {
    let n = (seconds * sample_rate as f32) as usize;
    let sr = sample_rate as f32;
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / sr;
            0.5 * (2.0 * std::f32::consts::PI * 440.0 * t).sin() + 0.2 * (2.0 * std::f32::consts::PI * 1330.0 * t).sin()
        })
        .collect();
    AudioBuffer { samples, sample_rate }
}

/// Row-normalized random log-probabilities.
pub fn random_emissions(frames: usize, tokens: usize, seed: u64) -> Emissions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(frames * tokens);
    for _ in 0..frames {
        let row: Vec<f32> = (0..tokens).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let lse = row.iter().map(|v| v.exp()).sum::<f32>().ln();
        scores.extend(row.iter().map(|v| v - lse));
    }
    Emissions::new(frames, tokens, scores).expect("emissions shape")
}

/// Random target of `len` ids in `[0, tokens)`, never equal to `skip`,
/// with no id repeated back to back.
pub fn random_target(len: usize, tokens: usize, skip: Option<usize>, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let k = rng.gen_range(0..tokens);
        if Some(k) != skip && out.last() != Some(&k) {
            out.push(k);
        }
    }
    out
}

/// Toy-corpus training state and its pre-built batches.
pub fn toy_training(
    kind: CriterionKind,
    utterances: usize,
    batch_size: usize,
    workers: usize,
) -> (TrainState, Vec<Batch>) {
    let corpus = ToyCorpus::generate(utterances, 11);
    let encoder = TargetEncoder {
        tokens: corpus.tokens.clone(),
        lexicon: None,
        kind,
        word_separator: Some(corpus.silence()),
        blank: corpus.blank(),
    };
    let builder = BatchBuilder::new(ToyCorpus::features(), encoder).with_audio(corpus.audio_source());
    let batches =
        sort_and_batch(&corpus.entries, batch_size).iter().map(|s| builder.build(s).expect("toy batch")).collect();
    let criterion = match kind {
        CriterionKind::Ctc => CriterionSpec::ctc(corpus.blank()),
        CriterionKind::Asg => CriterionSpec::asg(),
    };
    let arch = ArchSpec::parse(&corpus.arch_text()).expect("toy arch");
    let config = TrainConfig { criterion, batch_size, workers, shuffle: false, ..TrainConfig::default() };
    (TrainState::new(arch, config).expect("toy state"), batches)
}
