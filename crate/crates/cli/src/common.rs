use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use asr_core::criterion::CriterionKind;
use asr_core::features::{FeatureConfig, FeatureKind, WindowFunction};
use asr_core::TokenTable;
use clap::{Args, ValueEnum};

/// Usage errors exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

pub trait Context<T> {
    fn context(self, what: impl Display) -> CliResult<T>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn context(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(format!("{what}: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureName {
    Mfsc,
    Mfcc,
    Spectrum,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowName {
    Hamming,
    Hanning,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionName {
    Ctc,
    Asg,
}

impl From<CriterionName> for CriterionKind {
    fn from(c: CriterionName) -> Self {
        match c {
            CriterionName::Ctc => CriterionKind::Ctc,
            CriterionName::Asg => CriterionKind::Asg,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Feature type.
    #[arg(long, value_enum, default_value_t = FeatureName::Mfsc)]
    pub feature: FeatureName,
    /// Analysis window length in milliseconds.
    #[arg(long = "window-ms", default_value_t = 25.0)]
    pub window_ms: f32,
    /// Hop between frames in milliseconds.
    #[arg(long = "hop-ms", default_value_t = 10.0)]
    pub hop_ms: f32,
    /// Number of mel filters (mfsc, mfcc).
    #[arg(long = "mel-filters", default_value_t = 40)]
    pub mel_filters: usize,
    /// Number of cepstral coefficients kept (mfcc).
    #[arg(long, default_value_t = 13)]
    pub cepstra: usize,
    #[arg(long, value_enum, default_value_t = WindowName::Hamming)]
    pub window: WindowName,
    /// Per-utterance mean/variance normalization of each dimension.
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub normalize: bool,
}

impl FeatureArgs {
    pub fn config(&self) -> FeatureConfig {
        FeatureConfig {
            kind: match self.feature {
                FeatureName::Mfsc => FeatureKind::Mfsc,
                FeatureName::Mfcc => FeatureKind::Mfcc,
                FeatureName::Spectrum => FeatureKind::PowerSpectrum,
                FeatureName::Raw => FeatureKind::Raw,
            },
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
            num_mel_filters: self.mel_filters,
            num_cepstra: self.cepstra,
            window: match self.window {
                WindowName::Hamming => WindowFunction::Hamming,
                WindowName::Hanning => WindowFunction::Hanning,
                WindowName::Rectangular => WindowFunction::Rectangular,
            },
            normalize: self.normalize,
            ..FeatureConfig::default()
        }
    }
}

pub fn load_tokens(path: &Path) -> CliResult<TokenTable> {
    TokenTable::load(path).context(path.display())
}

pub fn token_id(tokens: &TokenTable, name: &str, flag: &str) -> CliResult<usize> {
    tokens.id(name).ok_or_else(|| CliError::Runtime(format!("{flag} token {name:?} is not in the token table")))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).context(path.display())
}

pub fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

pub fn emissions_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.w2le"))
}

/// Peak resident set size of this process in MiB, from `VmHWM` in
/// `/proc/self/status`. `None` where procfs is unavailable.
pub fn peak_rss_mb() -> Option<f64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}
