use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use asr_core::criterion::CriterionKind;
use asr_core::data::{shuffle_batches, sort_and_batch, BatchBuilder, BatchSpec, Manifest, Prefetcher, TargetEncoder};
use asr_core::trainer::{evaluate, ArchSpec, Checkpoint, CriterionSpec, RunMode, TrainConfig, TrainState};
use asr_core::Lexicon;
use clap::{Args, ValueEnum};

use crate::common::{
    create_dir, is_nonempty_dir, load_tokens, token_id, usage, CliError, CliResult, Context, CriterionName, FeatureArgs,
};

const QUEUE: usize = 2;
pub const LATEST: &str = "latest.w2lc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeName {
    /// Flat start from random initialization.
    Train,
    /// Resume parameters, optimizer state and counters from a checkpoint.
    Continue,
    /// New run starting from a checkpoint's parameters only.
    Fork,
}

/// Train a model.
///
/// In continue mode the checkpoint's stored hyperparameters, features and
/// criterion are kept; only --epochs (the total to reach), --workers and the
/// data paths may change. Fork keeps the stored features and criterion and
/// takes hyperparameters from the command line.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ModeName::Train)]
    pub mode: ModeName,
    /// Architecture file (required for train; optional for continue/fork,
    /// where it must match the checkpoint's tensor shapes).
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Training manifest (TSV: id, audio path, duration ms, transcript).
    #[arg(long = "train")]
    pub train_manifest: Option<PathBuf>,
    /// Validation manifest; defaults to the training manifest.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Token table, one token per line.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    /// Lexicon mapping words to spellings; words not in it are spelled by
    /// their characters.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionName>,
    /// CTC blank token.
    #[arg(long, default_value = "<blank>")]
    pub blank: String,
    /// Word separator token inserted between words of a transcript.
    #[arg(long, default_value = "|")]
    pub silence: String,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub momentum: Option<f32>,
    #[arg(long)]
    pub batchsize: Option<usize>,
    /// Total number of epochs to reach.
    #[arg(long, default_value_t = 10)]
    pub epochs: u64,
    /// Data-parallel workers per step.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shuffle batch order every epoch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub shuffle: Option<bool>,
    /// Batch loading threads.
    #[arg(long, default_value_t = 2)]
    pub prefetch: usize,
    /// Run directory for checkpoints and the epoch log.
    #[arg(long)]
    pub rundir: PathBuf,
    /// Checkpoint to continue or fork from (continue defaults to
    /// <rundir>/latest.w2lc).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Allow train/fork to write into a non-empty run directory.
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub overwrite: bool,
    #[command(flatten)]
    pub features: FeatureArgs,
}

fn apply_overrides(config: &mut TrainConfig, args: &TrainArgs) {
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.momentum {
        config.momentum = v;
    }
    if let Some(v) = args.batchsize {
        config.batch_size = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.shuffle {
        config.shuffle = v;
    }
}

fn warn_ignored(stored: &TrainConfig, args: &TrainArgs) {
    let mut probe = stored.clone();
    apply_overrides(&mut probe, args);
    if probe != *stored {
        log::warn!("continue mode keeps the checkpoint's hyperparameters; --lr/--momentum/--batchsize/--seed/--shuffle are ignored");
    }
}

fn pick(cli: &Option<PathBuf>, stored: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    match cli.as_ref().or(stored.as_ref()) {
        Some(p) => Ok(p.clone()),
        None => usage(format!("{flag} is required")),
    }
}

fn load_arch(path: &Path) -> CliResult<ArchSpec> {
    ArchSpec::load(path).context(path.display())
}

fn build_state(args: &TrainArgs) -> CliResult<TrainState> {
    match args.mode {
        ModeName::Train => {
            if args.checkpoint.is_some() {
                return usage("--checkpoint only applies to --mode continue or fork");
            }
            let Some(arch_path) = &args.arch else {
                return usage("--mode train needs --arch");
            };
            let arch = load_arch(arch_path)?;
            let tokens = load_tokens(&pick(&args.tokens, &None, "--tokens")?)?;
            let kind: CriterionKind = args.criterion.unwrap_or(CriterionName::Ctc).into();
            let criterion = match kind {
                CriterionKind::Ctc => CriterionSpec::ctc(token_id(&tokens, &args.blank, "--blank")?),
                CriterionKind::Asg => CriterionSpec::asg(),
            };
            let mut config = TrainConfig { criterion, features: args.features.config(), ..TrainConfig::default() };
            apply_overrides(&mut config, args);
            Ok(TrainState::new(arch, config)?)
        }
        ModeName::Continue | ModeName::Fork => {
            let path = match (&args.checkpoint, args.mode) {
                (Some(p), _) => p.clone(),
                (None, ModeName::Continue) => args.rundir.join(LATEST),
                (None, _) => return usage("--mode fork needs --checkpoint"),
            };
            let ckpt = Checkpoint::load(&path).context(path.display())?;
            let arch = args.arch.as_deref().map(load_arch).transpose()?;
            if args.mode == ModeName::Continue {
                let state = TrainState::from_checkpoint(&ckpt, RunMode::Continue, arch, None)?;
                warn_ignored(&state.config, args);
                if let Some(c) = args.criterion {
                    if CriterionKind::from(c) != state.config.criterion.kind {
                        return usage("--criterion differs from the checkpoint's criterion");
                    }
                }
                Ok(state)
            } else {
                let probe = TrainState::from_checkpoint(&ckpt, RunMode::Fork, arch.clone(), None)?;
                let mut config = TrainConfig { mode: RunMode::Fork, epochs: args.epochs, ..probe.config.clone() };
                apply_overrides(&mut config, args);
                Ok(TrainState::from_checkpoint(&ckpt, RunMode::Fork, arch, Some(config))?)
            }
        }
    }
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    if args.prefetch == 0 {
        return usage("--prefetch must be at least 1");
    }
    if args.mode != ModeName::Continue && is_nonempty_dir(&args.rundir) && !args.overwrite {
        return usage(format!("run directory {} is not empty; pass --overwrite to reuse it", args.rundir.display()));
    }
    let mut state = build_state(args)?;

    let config = &mut state.config;
    config.mode = match args.mode {
        ModeName::Train => RunMode::Train,
        ModeName::Continue => RunMode::Continue,
        ModeName::Fork => RunMode::Fork,
    };
    config.epochs = args.epochs;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.train_manifest = Some(pick(&args.train_manifest, &config.train_manifest, "--train")?);
    config.valid_manifest = args.valid.clone().or(config.valid_manifest.take());
    config.tokens = Some(pick(&args.tokens, &config.tokens, "--tokens")?);
    config.lexicon = args.lexicon.clone().or(config.lexicon.take());
    config.run_dir = Some(args.rundir.clone());
    config.validate()?;
    let config = state.config.clone();

    let tokens = load_tokens(config.tokens.as_deref().expect("tokens path"))?;
    if tokens.len() != state.model.arch.output_dim() {
        return Err(CliError::Runtime(format!(
            "architecture emits {} tokens but the token table has {}",
            state.model.arch.output_dim(),
            tokens.len()
        )));
    }
    let lexicon = match &config.lexicon {
        Some(p) => Some(Lexicon::load(p).context(p.display())?),
        None => None,
    };
    let separator = tokens.id(&args.silence);
    let encoder = TargetEncoder {
        tokens: tokens.clone(),
        lexicon,
        kind: config.criterion.kind,
        word_separator: separator,
        blank: config.criterion.blank.unwrap_or(usize::MAX),
    };
    let builder = Arc::new(BatchBuilder::new(config.features.clone(), encoder));

    let train_path = config.train_manifest.clone().expect("train path");
    let train = Manifest::load(&train_path)?;
    let valid = match &config.valid_manifest {
        Some(p) => Manifest::load(p)?,
        None => train.clone(),
    };
    if train.is_empty() {
        return Err(CliError::Runtime(format!("{}: no utterances", train_path.display())));
    }
    let train_specs = sort_and_batch(&train.entries, config.batch_size);
    let valid_specs = sort_and_batch(&valid.entries, config.batch_size);

    create_dir(&args.rundir)?;
    let log_path = args.rundir.join("log.txt");
    if args.mode != ModeName::Continue && log_path.exists() {
        fs::remove_file(&log_path).context(log_path.display())?;
    }
    if state.epoch >= config.epochs {
        log::warn!("checkpoint is already at epoch {} of {}", state.epoch, config.epochs);
    }
    while state.epoch < config.epochs {
        let mut specs: Vec<BatchSpec> = train_specs.clone();
        if config.shuffle {
            shuffle_batches(&mut specs, config.seed, state.epoch);
        }
        let stats = state.train_epoch(Prefetcher::new(specs, builder.clone(), args.prefetch, QUEUE))?;
        let eval = evaluate(
            &state.model,
            Prefetcher::new(valid_specs.clone(), builder.clone(), args.prefetch, QUEUE),
            &tokens,
            separator,
        )?;
        let line = format!(
            "epoch {} loss {:.6} valid-loss {:.6} valid-LER {:.6} valid-WER {:.6}",
            stats.epoch, stats.loss_mean, eval.loss_mean, eval.ler, eval.wer
        );
        println!("{line}");
        let ckpt = state.to_checkpoint()?;
        let epoch_path = args.rundir.join(format!("epoch-{:03}.w2lc", stats.epoch));
        ckpt.save(&epoch_path)?;
        ckpt.save(args.rundir.join(LATEST))?;
        let mut log = OpenOptions::new().create(true).append(true).open(&log_path).context(log_path.display())?;
        writeln!(log, "{line}").context(log_path.display())?;
    }
    fs::write(args.rundir.join("arch.txt"), state.model.arch.to_text()).context(args.rundir.display())?;
    Ok(())
}
