//! Training: network and criterion forward/backward, synchronous
//! data-parallel SGD, checkpoints and evaluation.

mod arch;
mod checkpoint;
mod metrics;
mod network;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{SgdMomentum, Variable};
use crate::criterion::{
    self, collapse_asg, collapse_ctc, viterbi, CriterionError, CriterionKind, Emissions, TransitionMatrix,
    REPETITION_TOKEN,
};
use crate::data::{Batch, DataError};
use crate::features::FeatureConfig;
use crate::tensor::{Tensor, TensorError};
use crate::vocab::TokenTable;

pub use arch::{ArchSpec, Layer};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{edit_distance, ErrorTally};
pub use network::{forward, init_parameters, parameter_specs, ParamSpec};

pub const TRANSITIONS_PARAM: &str = "criterion.transitions";
const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("architecture: {0}")]
    Arch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("utterance {id}: {message}")]
    Utterance { id: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Flat start from random initialization.
    Train,
    /// Resume parameters, optimizer state and counters.
    Continue,
    /// Start a new run from a checkpoint's parameters only.
    Fork,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionSpec {
    pub kind: CriterionKind,
    /// CTC blank id.
    pub blank: Option<usize>,
}

impl CriterionSpec {
    pub fn ctc(blank: usize) -> Self {
        Self { kind: CriterionKind::Ctc, blank: Some(blank) }
    }

    pub fn asg() -> Self {
        Self { kind: CriterionKind::Asg, blank: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: RunMode,
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: u64,
    pub workers: usize,
    pub seed: u64,
    /// Shuffle whole batches between epochs.
    pub shuffle: bool,
    pub criterion: CriterionSpec,
    pub features: FeatureConfig,
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Train,
            lr: 0.1,
            momentum: 0.0,
            batch_size: 4,
            epochs: 10,
            workers: 1,
            seed: 0,
            shuffle: true,
            criterion: CriterionSpec::asg(),
            features: FeatureConfig::default(),
            train_manifest: None,
            valid_manifest: None,
            tokens: None,
            lexicon: None,
            run_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.workers == 0 || self.batch_size == 0 {
            return bad("workers and batch size must be ≥ 1".into());
        }
        match (self.criterion.kind, self.criterion.blank) {
            (CriterionKind::Ctc, None) => bad("CTC needs a blank id".into()),
            _ => Ok(()),
        }
    }
}

/// Per-step wall time of each training stage, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub data_load: f64,
    pub network_fwd: f64,
    pub criterion_fwd: f64,
    pub backward: f64,
    pub optimizer: f64,
}

impl StageTimes {
    pub const NAMES: [&'static str; 5] = ["data_load", "network_fwd", "criterion_fwd", "backward", "optimizer"];

    pub fn values(&self) -> [f64; 5] {
        [self.data_load, self.network_fwd, self.criterion_fwd, self.backward, self.optimizer]
    }

    fn max(self, o: Self) -> Self {
        Self {
            data_load: self.data_load.max(o.data_load),
            network_fwd: self.network_fwd.max(o.network_fwd),
            criterion_fwd: self.criterion_fwd.max(o.criterion_fwd),
            backward: self.backward.max(o.backward),
            optimizer: self.optimizer.max(o.optimizer),
        }
    }

    fn add(&mut self, o: &Self) {
        self.data_load += o.data_load;
        self.network_fwd += o.network_fwd;
        self.criterion_fwd += o.criterion_fwd;
        self.backward += o.backward;
        self.optimizer += o.optimizer;
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            data_load: self.data_load * k,
            network_fwd: self.network_fwd * k,
            criterion_fwd: self.criterion_fwd * k,
            backward: self.backward * k,
            optimizer: self.optimizer * k,
        }
    }
}

/// Network and criterion parameters. Immutable during a step, so workers
/// share it by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub criterion: CriterionSpec,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
}

impl Model {
    /// Fresh model; ASG transitions start at zero.
    pub fn new(arch: ArchSpec, criterion: CriterionSpec, seed: u64) -> Self {
        let mut names: Vec<String> = parameter_specs(&arch).into_iter().map(|p| p.name).collect();
        let mut params = init_parameters(&arch, seed);
        if criterion.kind == CriterionKind::Asg {
            let n = arch.output_dim();
            names.push(TRANSITIONS_PARAM.into());
            params.push(Tensor::zeros(&[n, n]));
        }
        Self { arch, criterion, names, params }
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.shape().to_vec()).collect()
    }

    pub fn transitions(&self) -> Option<TransitionMatrix> {
        let i = self.names.iter().position(|n| n == TRANSITIONS_PARAM)?;
        let t = &self.params[i];
        TransitionMatrix::new(t.shape()[0], t.to_vec()).ok()
    }

    /// `T'×N` emissions for `frames × dim` features.
    pub fn emissions(&self, features: &[f32], frames: usize) -> Result<Emissions, TrainError> {
        let vars: Vec<Variable> = self.params.iter().cloned().map(Variable::constant).collect();
        let x = self.input(features, frames)?;
        let y = forward(&self.arch, &vars, &x)?;
        Emissions::from_tensor(&y.tensor()).map_err(|e| TrainError::Config(e.to_string()))
    }

    fn input(&self, features: &[f32], frames: usize) -> Result<Variable, TrainError> {
        let dim = self.arch.input_dim();
        if frames == 0 || features.len() != frames * dim {
            return Err(TrainError::Config(format!(
                "features of {} values do not form {frames}×{dim}",
                features.len()
            )));
        }
        Ok(Variable::constant(Tensor::new(vec![frames, dim], features.to_vec())?))
    }

    fn loss(&self, em: &Variable, vars: &[Variable], target: &[usize]) -> Result<Variable, CriterionError> {
        match self.criterion.kind {
            CriterionKind::Ctc => criterion::ctc_loss(em, target, self.criterion.blank.unwrap_or(0)),
            CriterionKind::Asg => criterion::asg_loss(em, vars.last().expect("transitions"), target),
        }
    }
}

/// Gradient of the mean per-utterance loss over a batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub grads: Vec<Tensor>,
    pub loss_sum: f64,
    pub utterances: usize,
    /// Slowest worker's time per stage.
    pub times: StageTimes,
}

struct ShardOutput {
    grads: Vec<Tensor>,
    loss_sum: f64,
    times: StageTimes,
}

fn shard_gradients(model: &Model, batch: &Batch, range: std::ops::Range<usize>) -> Result<ShardOutput, TrainError> {
    let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut loss_sum = 0.0f64;
    let mut times = StageTimes::default();
    for b in range {
        let fail = |message: String| TrainError::Utterance { id: batch.ids[b].clone(), message };
        let clock = Instant::now();
        let vars: Vec<Variable> = model.params.iter().cloned().map(Variable::parameter).collect();
        let x = model.input(batch.utterance(b), batch.feature_lengths[b]).map_err(|e| fail(e.to_string()))?;
        let net = forward(&model.arch, &vars, &x).map_err(|e| fail(e.to_string()))?;
        let t1 = clock.elapsed().as_secs_f64();
        let loss = model.loss(&net, &vars, &batch.target(b)).map_err(|e| fail(e.to_string()))?;
        let t2 = clock.elapsed().as_secs_f64();
        loss.backward().map_err(|e| fail(e.to_string()))?;
        for (acc, v) in grads.iter_mut().zip(&vars) {
            *acc = acc.add(&v.grad_or_zeros())?;
        }
        let t3 = clock.elapsed().as_secs_f64();
        loss_sum += loss.value().item() as f64;
        times.network_fwd += t1;
        times.criterion_fwd += t2 - t1;
        times.backward += t3 - t2;
    }
    Ok(ShardOutput { grads, loss_sum, times })
}

/// Split the batch into `workers` contiguous shards, compute each shard's
/// summed gradient on its own thread, then divide the total by the batch
/// size. The result equals the single-process gradient of the whole batch
/// up to float summation order.
pub fn batch_gradients(model: &Model, batch: &Batch, workers: usize) -> Result<StepOutput, TrainError> {
    let b = batch.size();
    if b == 0 {
        return Err(TrainError::Config("empty batch".into()));
    }
    let k = workers.clamp(1, b);
    let bounds: Vec<std::ops::Range<usize>> = (0..k).map(|i| (i * b / k)..((i + 1) * b / k)).collect();
    let shards: Vec<Result<ShardOutput, TrainError>> = if k == 1 {
        vec![shard_gradients(model, batch, 0..b)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = bounds
                .iter()
                .map(|r| {
                    let r = r.clone();
                    s.spawn(move || shard_gradients(model, batch, r))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };

    let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut loss_sum = 0.0;
    let mut times = StageTimes::default();
    for shard in shards {
        let shard = shard?;
        for (acc, g) in grads.iter_mut().zip(&shard.grads) {
            *acc = acc.add(g)?;
        }
        loss_sum += shard.loss_sum;
        times = times.max(shard.times);
    }
    let inv = 1.0 / b as f32;
    Ok(StepOutput { grads: grads.iter().map(|g| g.scale(inv)).collect(), loss_sum, utterances: b, times })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    pub loss_mean: f64,
    pub steps: usize,
    pub utterances: usize,
    /// Mean seconds per step of each stage.
    pub mean_times: StageTimes,
    pub wall_seconds: f64,
}

/// Model, optimizer and progress counters.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: SgdMomentum,
    pub epoch: u64,
    pub step: u64,
    pub config: TrainConfig,
}

impl TrainState {
    pub fn new(arch: ArchSpec, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::new(arch, config.criterion, config.seed);
        let optimizer = SgdMomentum::new(config.lr, config.momentum, &model.shapes());
        Ok(Self { model, optimizer, epoch: 0, step: 0, config })
    }

    /// One pass over `batches`: one synchronous SGD update per batch.
    pub fn train_epoch<I>(&mut self, batches: I) -> Result<EpochStats, TrainError>
    where
        I: IntoIterator<Item = Result<Batch, DataError>>,
    {
        let wall = Instant::now();
        let mut iter = batches.into_iter();
        let mut total = StageTimes::default();
        let (mut steps, mut utterances, mut loss_sum) = (0usize, 0usize, 0.0f64);
        loop {
            let clock = Instant::now();
            let Some(batch) = iter.next() else { break };
            let batch = batch?;
            let data_load = clock.elapsed().as_secs_f64();

            let out = batch_gradients(&self.model, &batch, self.config.workers)?;
            let clock = Instant::now();
            self.optimizer.step_tensors(&mut self.model.params, &out.grads)?;
            let optimizer = clock.elapsed().as_secs_f64();

            total.add(&StageTimes { data_load, optimizer, ..out.times });
            steps += 1;
            utterances += out.utterances;
            loss_sum += out.loss_sum;
            self.step += 1;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            loss_mean: if utterances == 0 { 0.0 } else { loss_sum / utterances as f64 },
            steps,
            utterances,
            mean_times: total.scaled(if steps == 0 { 0.0 } else { 1.0 / steps as f64 }),
            wall_seconds: wall.elapsed().as_secs_f64(),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, TrainError> {
        let mut tensors: Vec<(String, Tensor)> =
            self.model.names.iter().cloned().zip(self.model.params.iter().cloned()).collect();
        for (name, v) in self.model.names.iter().zip(&self.optimizer.velocity) {
            tensors.push((format!("{VELOCITY_PREFIX}{name}"), v.clone()));
        }
        Ok(Checkpoint {
            arch_text: self.model.arch.to_text(),
            config_json: serde_json::to_string_pretty(&self.config).map_err(|e| TrainError::Config(e.to_string()))?,
            epoch: self.epoch,
            step: self.step,
            tensors,
        })
    }

    /// Restore from a checkpoint.
    ///
    /// * `Continue`: parameters, velocities, counters and the stored config.
    /// * `Fork`: parameters only; velocities and counters restart at zero and
    ///   `config` (required) replaces the stored one.
    ///
    /// `arch` overrides the stored architecture; tensor shapes must match it.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        mode: RunMode,
        arch: Option<ArchSpec>,
        config: Option<TrainConfig>,
    ) -> Result<Self, TrainError> {
        let arch = match arch {
            Some(a) => a,
            None => ArchSpec::parse(&ckpt.arch_text)?,
        };
        let stored: TrainConfig =
            serde_json::from_str(&ckpt.config_json).map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;
        let config = match (mode, config) {
            (RunMode::Continue, c) => c.unwrap_or(stored),
            (RunMode::Fork, Some(c)) => c,
            (RunMode::Fork, None) => TrainConfig { mode: RunMode::Fork, ..stored },
            (RunMode::Train, _) => {
                return Err(TrainError::Config("train mode starts from scratch, not from a checkpoint".into()))
            }
        };
        config.validate()?;

        let mut model = Model::new(arch, config.criterion, config.seed);
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = ckpt.tensor(name).ok_or_else(|| TrainError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(TrainError::Checkpoint(format!(
                    "tensor {name} has shape {:?} but the architecture needs {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        let mut optimizer = SgdMomentum::new(config.lr, config.momentum, &model.shapes());
        let (epoch, step) = if mode == RunMode::Continue {
            for (name, v) in model.names.iter().zip(optimizer.velocity.iter_mut()) {
                let key = format!("{VELOCITY_PREFIX}{name}");
                let t = ckpt.tensor(&key).ok_or_else(|| TrainError::Checkpoint(format!("missing tensor {key}")))?;
                if t.shape() != v.shape() {
                    return Err(TrainError::Checkpoint(format!("tensor {key} has shape {:?}", t.shape())));
                }
                *v = t.clone();
            }
            (ckpt.epoch, ckpt.step)
        } else {
            (0, 0)
        };
        Ok(Self { model, optimizer, epoch, step, config })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub loss_mean: f64,
    pub ler: f64,
    pub wer: f64,
    pub utterances: usize,
    pub skipped: usize,
}

/// Greedy transcription: Viterbi path, then the criterion's collapse rule
/// (`<2>` expanded for ASG). Leading `<2>` frames have nothing to copy and
/// are dropped.
pub fn greedy_tokens(model: &Model, em: &Emissions, tokens: &TokenTable) -> Vec<usize> {
    let trans = model.transitions();
    let path = viterbi(em, trans.as_ref()).tokens;
    match model.criterion.kind {
        CriterionKind::Ctc => collapse_ctc(&path, model.criterion.blank.unwrap_or(usize::MAX)),
        CriterionKind::Asg => {
            let rep = tokens.id(REPETITION_TOKEN);
            let start = path.iter().position(|&k| Some(k) != rep).unwrap_or(path.len());
            collapse_asg(&path[start..], rep).expect("no leading repetition token")
        }
    }
}

/// Words of a token sequence split on the separator token.
pub fn token_words(ids: &[usize], tokens: &TokenTable, separator: Option<usize>) -> Vec<String> {
    ids.split(|&k| Some(k) == separator)
        .filter(|w| !w.is_empty())
        .map(|w| w.iter().map(|&k| tokens.token(k)).collect::<String>())
        .collect()
}

/// Mean loss and corpus-level LER/WER. Utterances with an empty reference
/// are skipped with a warning.
pub fn evaluate<I>(
    model: &Model,
    batches: I,
    tokens: &TokenTable,
    separator: Option<usize>,
) -> Result<EvalStats, TrainError>
where
    I: IntoIterator<Item = Result<Batch, DataError>>,
{
    let rep = tokens.id(REPETITION_TOKEN);
    let (mut ler, mut wer) = (ErrorTally::default(), ErrorTally::default());
    let (mut loss_sum, mut scored, mut utterances, mut skipped) = (0.0f64, 0usize, 0usize, 0usize);
    for batch in batches {
        let batch = batch?;
        for b in 0..batch.size() {
            let target = batch.target(b);
            if target.is_empty() {
                log::warn!("skipping {}: empty reference", batch.ids[b]);
                skipped += 1;
                continue;
            }
            let vars: Vec<Variable> = model.params.iter().cloned().map(Variable::constant).collect();
            let x = model.input(batch.utterance(b), batch.feature_lengths[b])?;
            let y = forward(&model.arch, &vars, &x)?;
            match model.loss(&y, &vars, &target) {
                Ok(l) => {
                    loss_sum += l.value().item() as f64;
                    scored += 1;
                }
                Err(e) => log::warn!("{}: no loss ({e})", batch.ids[b]),
            }
            let em = Emissions::from_tensor(&y.tensor()).map_err(|e| TrainError::Config(e.to_string()))?;
            let hyp = greedy_tokens(model, &em, tokens);
            let reference = match model.criterion.kind {
                CriterionKind::Asg => collapse_asg(&target, rep).unwrap_or(target),
                CriterionKind::Ctc => target,
            };
            ler.add(&reference, &hyp);
            wer.add(&token_words(&reference, tokens, separator), &token_words(&hyp, tokens, separator));
            utterances += 1;
        }
    }
    Ok(EvalStats {
        loss_mean: if scored == 0 { 0.0 } else { loss_sum / scored as f64 },
        ler: ler.rate(),
        wer: wer.rate(),
        utterances,
        skipped,
    })
}
