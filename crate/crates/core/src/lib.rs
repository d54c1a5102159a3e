//! Core library for an end-to-end speech recognition engine.

pub mod autograd;
pub mod criterion;
pub mod data;
pub mod decoder;
pub mod features;
pub mod lm;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use autograd::{SgdMomentum, Variable};
pub use criterion::{CriterionKind, Emissions, TransitionMatrix};
pub use decoder::{decode, DecodeOptions, DecodeResult, Trie};
pub use lm::{LanguageModel, LmState, NGramModel, NullLm, WordId};
pub use tensor::{Tensor, TensorError};
pub use vocab::{Lexicon, TokenTable};
