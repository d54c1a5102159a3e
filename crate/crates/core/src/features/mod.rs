//! Audio front end: WAV loading, framing, power spectrum, log-mel
//! filterbanks (MFSC) and MFCCs.

mod fft;
mod mel;
mod wav;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fft::{fft_in_place, power_spectrum};
pub use mel::{dct_ii, dct_iii, hz_to_mel, mel_to_hz, MelFilterbank};
pub use wav::{encode_wav_f32, encode_wav_pcm16, load_wav, parse_wav};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("wav parse error at byte {offset}: {message}")]
    WavParse { offset: usize, message: String },
    #[error("unsupported wav codec {codec} with {bits} bits per sample (at byte {offset})")]
    UnsupportedCodec { offset: usize, codec: u16, bits: u16 },
    #[error("audio has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("feature config error: {0}")]
    Config(String),
}

/// Mono audio, samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Raw,
    PowerSpectrum,
    Mfsc,
    Mfcc,
}

impl std::str::FromStr for FeatureKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "spectrum" | "power_spectrum" => Ok(Self::PowerSpectrum),
            "mfsc" => Ok(Self::Mfsc),
            "mfcc" => Ok(Self::Mfcc),
            other => Err(FeatureError::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFunction {
    Hamming,
    Hanning,
    Rectangular,
}

impl WindowFunction {
    pub fn coefficients(self, len: usize) -> Vec<f32> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
                match self {
                    Self::Hamming => 0.54 - 0.46 * phase.cos(),
                    Self::Hanning => 0.5 - 0.5 * phase.cos(),
                    Self::Rectangular => 1.0,
                }
            })
            .map(|w| w as f32)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub window_ms: f32,
    pub hop_ms: f32,
    pub num_mel_filters: usize,
    pub num_cepstra: usize,
    pub window: WindowFunction,
    pub log_floor: f32,
    /// Per-utterance mean/variance normalization of each feature dimension.
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Mfsc,
            window_ms: 25.0,
            hop_ms: 10.0,
            num_mel_filters: 40,
            num_cepstra: 13,
            window: WindowFunction::Hamming,
            log_floor: 1e-10,
            normalize: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.window_ms) {
            return Err(FeatureError::Config(format!(
                "need 0 < hop_ms <= window_ms, got hop {} window {}",
                self.hop_ms, self.window_ms
            )));
        }
        if self.num_mel_filters == 0 {
            return Err(FeatureError::Config("num_mel_filters must be positive".into()));
        }
        if self.num_cepstra == 0 || self.num_cepstra > self.num_mel_filters {
            return Err(FeatureError::Config(format!(
                "num_cepstra {} must be in 1..={}",
                self.num_cepstra, self.num_mel_filters
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(FeatureError::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Window and hop lengths in samples.
    pub fn frame_geometry(&self, sample_rate: u32) -> (usize, usize) {
        let to_samples = |ms: f32| ((sample_rate as f64 * ms as f64 / 1000.0).round() as usize).max(1);
        (to_samples(self.window_ms), to_samples(self.hop_ms))
    }

    /// Feature dimension produced for audio at `sample_rate`.
    pub fn feature_dim(&self, sample_rate: u32) -> usize {
        let (w, _) = self.frame_geometry(sample_rate);
        match self.kind {
            FeatureKind::Raw => w,
            FeatureKind::PowerSpectrum => w.next_power_of_two() / 2 + 1,
            FeatureKind::Mfsc => self.num_mel_filters,
            FeatureKind::Mfcc => self.num_cepstra,
        }
    }
}

/// `T×D` row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Self {
        let frames = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        Self { frames, dim, data: rows.into_iter().flatten().collect() }
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.dim)
    }

    /// Per-dimension zero mean / unit variance across frames.
    pub fn normalize(&mut self) {
        let t = self.frames as f64;
        for d in 0..self.dim {
            let col = || (0..self.frames).map(|i| self.data[i * self.dim + d] as f64);
            let mean = col().sum::<f64>() / t;
            let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
            let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
            for i in 0..self.frames {
                let v = &mut self.data[i * self.dim + d];
                *v = ((*v as f64 - mean) * inv) as f32;
            }
        }
    }
}

/// Split audio into overlapping frames multiplied by the configured window.
///
/// Frame count is `floor((N − W) / H) + 1`.
pub fn frame_signal(audio: &AudioBuffer, config: &FeatureConfig) -> Result<Vec<Vec<f32>>, FeatureError> {
    config.validate()?;
    let (w, h) = config.frame_geometry(audio.sample_rate);
    frame_samples(&audio.samples, w, h, &config.window.coefficients(w))
}

fn frame_samples(samples: &[f32], w: usize, h: usize, window: &[f32]) -> Result<Vec<Vec<f32>>, FeatureError> {
    if samples.len() < w {
        return Err(FeatureError::TooShort { samples: samples.len(), window: w });
    }
    let count = (samples.len() - w) / h + 1;
    Ok((0..count).map(|i| samples[i * h..i * h + w].iter().zip(window).map(|(s, c)| s * c).collect()).collect())
}

/// Log mel filterbank energies: `ln(max(energy, log_floor))`.
pub fn mfsc(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let frames = frame_signal(audio, config)?;
    let fft_len = frames[0].len().next_power_of_two();
    let bank = MelFilterbank::new(config.num_mel_filters, fft_len, audio.sample_rate)?;
    let floor = config.log_floor as f64;
    let rows = frames
        .iter()
        .map(|f| bank.apply(&power_spectrum(f)).into_iter().map(|e| e.max(floor).ln() as f32).collect())
        .collect();
    Ok(FeatureMatrix::from_rows(rows))
}

/// Orthonormal DCT-II of each MFSC frame, truncated to `num_cepstra`.
pub fn mfcc(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let logmel = mfsc(audio, config)?;
    let rows = logmel
        .rows()
        .map(|r| {
            let mut c = dct_ii(r);
            c.truncate(config.num_cepstra);
            c
        })
        .collect();
    Ok(FeatureMatrix::from_rows(rows))
}

/// Compute the configured feature type, then optionally normalize.
pub fn featurize(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    config.validate()?;
    let mut feats = match config.kind {
        FeatureKind::Raw => {
            let (w, h) = config.frame_geometry(audio.sample_rate);
            FeatureMatrix::from_rows(frame_samples(&audio.samples, w, h, &vec![1.0; w])?)
        }
        FeatureKind::PowerSpectrum => {
            FeatureMatrix::from_rows(frame_signal(audio, config)?.iter().map(|f| power_spectrum(f)).collect())
        }
        FeatureKind::Mfsc => mfsc(audio, config)?,
        FeatureKind::Mfcc => mfcc(audio, config)?,
    };
    if config.normalize {
        feats.normalize();
    }
    Ok(feats)
}
