//! Sequence criteria: CTC, ASG (with learnable transitions) and Viterbi
//! best-path extraction.
//!
//! Dynamic programs run in log space with `f64` accumulators; inputs and
//! outputs are `f32`.

mod asg;
mod ctc;
mod viterbi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::Variable;
use crate::tensor::Tensor;
use crate::vocab::TokenTable;

pub use asg::asg_loss_grad;
pub use ctc::ctc_loss_grad;
pub use viterbi::{viterbi, ViterbiPath};

/// Name of the ASG repetition token.
pub const REPETITION_TOKEN: &str = "<2>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriterionError {
    #[error("infeasible target: {0}")]
    Infeasible(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("dimension error: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Ctc,
    Asg,
}

impl std::str::FromStr for CriterionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ctc" => Ok(Self::Ctc),
            "asg" => Ok(Self::Asg),
            other => Err(format!("unknown criterion {other:?} (expected ctc or asg)")),
        }
    }
}

/// `T×N` per-frame token scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Emissions {
    pub frames: usize,
    pub tokens: usize,
    pub scores: Vec<f32>,
}

impl Emissions {
    pub fn new(frames: usize, tokens: usize, scores: Vec<f32>) -> Result<Self, CriterionError> {
        if frames * tokens != scores.len() || tokens == 0 {
            return Err(CriterionError::Dimension(format!("emissions {frames}x{tokens} with {} scores", scores.len())));
        }
        Ok(Self { frames, tokens, scores })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, CriterionError> {
        if t.rank() != 2 {
            return Err(CriterionError::Dimension(format!("emissions must be T×N, got {:?}", t.shape())));
        }
        Self::new(t.shape()[0], t.shape()[1], t.to_vec())
    }

    pub fn at(&self, t: usize, i: usize) -> f32 {
        self.scores[t * self.tokens + i]
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.scores[t * self.tokens..(t + 1) * self.tokens]
    }
}

/// `N×N` transition scores; `at(i, j)` scores moving from token `j` at frame
/// `t−1` to token `i` at frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub size: usize,
    pub scores: Vec<f32>,
}

impl TransitionMatrix {
    pub fn zeros(size: usize) -> Self {
        Self { size, scores: vec![0.0; size * size] }
    }

    pub fn new(size: usize, scores: Vec<f32>) -> Result<Self, CriterionError> {
        if scores.len() != size * size {
            return Err(CriterionError::Dimension(format!("transitions {size}x{size} with {} scores", scores.len())));
        }
        Ok(Self { size, scores })
    }

    pub fn at(&self, to: usize, from: usize) -> f32 {
        self.scores[to * self.size + from]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f32,
    /// `T×N`, same layout as the emissions.
    pub grad_emissions: Vec<f32>,
    /// `N×N`, ASG only.
    pub grad_transitions: Option<Vec<f32>>,
}

pub(crate) fn logadd(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn check_ids(tokens: &[usize], n: usize) -> Result<(), CriterionError> {
    match tokens.iter().find(|&&t| t >= n) {
        Some(bad) => Err(CriterionError::Contract(format!("token id {bad} out of range for {n} tokens"))),
        None => Ok(()),
    }
}

/// Canonicalize a target for a criterion.
///
/// ASG: a token equal to the previous *output* token is replaced by `<2>`,
/// so "a a a" becomes "a <2> a". CTC: rejected if it contains the blank.
pub fn validate_target(
    tokens: &[usize],
    kind: CriterionKind,
    table: &TokenTable,
    blank: usize,
) -> Result<Vec<usize>, CriterionError> {
    check_ids(tokens, table.len())?;
    match kind {
        CriterionKind::Ctc => {
            if tokens.contains(&blank) {
                return Err(CriterionError::Contract(format!("CTC target contains the blank id {blank}")));
            }
            Ok(tokens.to_vec())
        }
        CriterionKind::Asg => {
            let rep = table.id(REPETITION_TOKEN);
            let mut out: Vec<usize> = Vec::with_capacity(tokens.len());
            for &tok in tokens {
                if out.last() == Some(&tok) {
                    let rep = rep.ok_or_else(|| {
                        CriterionError::Contract(format!(
                            "repeated token {:?} needs {REPETITION_TOKEN} in the token table",
                            table.token(tok)
                        ))
                    })?;
                    out.push(rep);
                } else {
                    out.push(tok);
                }
            }
            Ok(out)
        }
    }
}

/// CTC collapse: merge repeats, then drop blanks.
pub fn collapse_ctc(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &tok in path {
        if Some(tok) != prev && tok != blank {
            out.push(tok);
        }
        prev = Some(tok);
    }
    out
}

/// ASG collapse: merge repeats, then expand the repetition token into a copy
/// of its predecessor.
pub fn collapse_asg(path: &[usize], repetition: Option<usize>) -> Result<Vec<usize>, CriterionError> {
    let mut out: Vec<usize> = Vec::new();
    let mut prev = None;
    for &tok in path {
        if Some(tok) == prev {
            continue;
        }
        prev = Some(tok);
        if Some(tok) == repetition {
            let last = *out
                .last()
                .ok_or_else(|| CriterionError::Contract(format!("{REPETITION_TOKEN} with no preceding token")))?;
            out.push(last);
        } else {
            out.push(tok);
        }
    }
    Ok(out)
}

pub fn collapse_path(
    path: &[usize],
    kind: CriterionKind,
    blank: usize,
    repetition: Option<usize>,
) -> Result<Vec<usize>, CriterionError> {
    match kind {
        CriterionKind::Ctc => Ok(collapse_ctc(path, blank)),
        CriterionKind::Asg => collapse_asg(path, repetition),
    }
}

/// CTC loss as an autodiff node over `T×N` log-normalized emissions.
pub fn ctc_loss(emissions: &Variable, target: &[usize], blank: usize) -> Result<Variable, CriterionError> {
    let value = emissions.tensor();
    let em = Emissions::from_tensor(&value)?;
    let out = ctc_loss_grad(&em, target, blank)?;
    let grad = Tensor::new(value.shape().to_vec(), out.grad_emissions).expect("emission shape");
    Ok(Variable::from_op(
        Tensor::scalar(out.loss),
        vec![emissions.clone()],
        Box::new(move |g| vec![Some(grad.scale(g.item()))]),
    ))
}

/// ASG loss as an autodiff node over emissions and an `N×N` transition
/// parameter.
pub fn asg_loss(emissions: &Variable, transitions: &Variable, target: &[usize]) -> Result<Variable, CriterionError> {
    let value = emissions.tensor();
    let em = Emissions::from_tensor(&value)?;
    let tv = transitions.tensor();
    let trans = TransitionMatrix::new(em.tokens, tv.to_vec())?;
    let out = asg_loss_grad(&em, target, &trans)?;
    let ge = Tensor::new(value.shape().to_vec(), out.grad_emissions).expect("emission shape");
    let gt = Tensor::new(tv.shape().to_vec(), out.grad_transitions.expect("asg transition gradient"))
        .expect("transition shape");
    Ok(Variable::from_op(
        Tensor::scalar(out.loss),
        vec![emissions.clone(), transitions.clone()],
        Box::new(move |g| vec![Some(ge.scale(g.item())), Some(gt.scale(g.item()))]),
    ))
}
