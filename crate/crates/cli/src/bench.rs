use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use asr_core::criterion::CriterionKind;
use asr_core::data::{sort_and_batch, BatchBuilder, Manifest, Prefetcher, TargetEncoder};
use asr_core::decoder::{decode, load_emissions, DecodeError, DecodeOptions, Trie};
use asr_core::synth::{DecodeWorkload, ToyCorpus};
use asr_core::trainer::{ArchSpec, CriterionSpec, StageTimes, TrainConfig, TrainState};
use asr_core::{Emissions, LanguageModel, Lexicon, NGramModel, NullLm, TokenTable, TransitionMatrix};
use clap::{Args, ValueEnum};

use crate::common::{
    emissions_path, load_tokens, peak_rss_mb, token_id, usage, CliError, CliResult, Context, CriterionName, FeatureArgs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    /// Mean milliseconds per step of each training stage.
    TrainBreakdown,
    /// Per-utterance single-thread decode time and peak memory.
    DecodeLatency,
}

/// Benchmarks with CSV output.
///
/// train-breakdown prints `stage,mean_ms` rows for data_load, network_fwd,
/// criterion_fwd, backward and optimizer. decode-latency prints
/// `utt_id,ms,peak_rss_mb` per utterance and a final `summary` row with the
/// mean time and the maximum peak RSS. Peak RSS is the process high-water
/// mark (VmHWM) and is reported as nan where /proc is unavailable.
#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub what: What,
    /// Use a generated workload instead of files.
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub synthetic: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Synthetic utterance count (default 10 for train-breakdown, 100 for
    /// decode-latency).
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Training manifest (train-breakdown without --synthetic).
    #[arg(long = "train")]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CriterionName::Ctc)]
    pub criterion: CriterionName,
    #[arg(long, default_value = "<blank>")]
    pub blank: String,
    #[arg(long, default_value = "|")]
    pub silence: String,
    #[arg(long, default_value_t = 4)]
    pub batchsize: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 0.003)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.8)]
    pub momentum: f32,
    #[arg(long, default_value_t = 2)]
    pub prefetch: usize,
    #[command(flatten)]
    pub features: FeatureArgs,

    /// Directory of `<id>.w2le` emissions (decode-latency without --synthetic).
    #[arg(long)]
    pub emissions: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lmweight: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub wordscore: f64,
    #[arg(long, default_value_t = 500)]
    pub beamsize: usize,
    #[arg(long, default_value_t = 25.0)]
    pub beamthreshold: f64,
    /// Synthetic frames per utterance.
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// Synthetic token count, including silence and blank.
    #[arg(long = "token-count", default_value_t = 30)]
    pub token_count: usize,
    /// Synthetic lexicon size.
    #[arg(long, default_value_t = 50)]
    pub words: usize,
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    let csv = match args.what {
        What::TrainBreakdown => train_breakdown(args)?,
        What::DecodeLatency => decode_latency(args)?,
    };
    match &args.out {
        Some(p) => fs::write(p, csv).context(p.display())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn train_breakdown(args: &BenchArgs) -> CliResult<String> {
    if args.prefetch == 0 || args.epochs == 0 {
        return usage("--prefetch and --epochs must be at least 1");
    }
    let kind: CriterionKind = args.criterion.into();
    let (arch, builder, entries, tokens) = if args.synthetic {
        let corpus = ToyCorpus::generate(args.utterances.unwrap_or(10), args.seed);
        let arch = ArchSpec::parse(&corpus.arch_text())?;
        let encoder = TargetEncoder {
            tokens: corpus.tokens.clone(),
            lexicon: None,
            kind,
            word_separator: Some(corpus.silence()),
            blank: corpus.blank(),
        };
        let builder = BatchBuilder::new(ToyCorpus::features(), encoder).with_audio(corpus.audio_source());
        (arch, builder, corpus.entries.clone(), corpus.tokens.clone())
    } else {
        let (Some(manifest), Some(arch), Some(tokens)) = (&args.train_manifest, &args.arch, &args.tokens) else {
            return usage("train-breakdown needs --synthetic or --train, --arch and --tokens");
        };
        let arch = ArchSpec::load(arch).context(arch.display())?;
        let tokens = load_tokens(tokens)?;
        let lexicon = match &args.lexicon {
            Some(p) => Some(Lexicon::load(p).context(p.display())?),
            None => None,
        };
        let encoder = TargetEncoder {
            tokens: tokens.clone(),
            lexicon,
            kind,
            word_separator: tokens.id(&args.silence),
            blank: tokens.id(&args.blank).unwrap_or(usize::MAX),
        };
        let entries = Manifest::load(manifest)?.entries;
        (arch, BatchBuilder::new(args.features.config(), encoder), entries, tokens)
    };
    let criterion = match kind {
        CriterionKind::Ctc => CriterionSpec::ctc(token_id(&tokens, &args.blank, "--blank")?),
        CriterionKind::Asg => CriterionSpec::asg(),
    };
    let config = TrainConfig {
        lr: args.lr,
        momentum: args.momentum,
        batch_size: args.batchsize,
        epochs: args.epochs,
        workers: args.workers,
        seed: args.seed,
        shuffle: false,
        criterion,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(arch, config)?;
    let builder = Arc::new(builder);
    let specs = sort_and_batch(&entries, args.batchsize);

    let mut total = [0.0f64; 5];
    let (mut steps, mut wall) = (0usize, 0.0f64);
    for _ in 0..args.epochs {
        let stats = state.train_epoch(Prefetcher::new(specs.clone(), builder.clone(), args.prefetch, 2))?;
        for (acc, v) in total.iter_mut().zip(stats.mean_times.values()) {
            *acc += v * stats.steps as f64;
        }
        steps += stats.steps;
        wall += stats.wall_seconds;
    }
    let mut csv = String::from("stage,mean_ms\n");
    for (name, t) in StageTimes::NAMES.iter().zip(total) {
        writeln!(csv, "{name},{:.4}", 1000.0 * t / steps.max(1) as f64).expect("string write");
    }
    eprintln!("epochs {} steps {} wall_ms_per_epoch {:.3}", args.epochs, steps, 1000.0 * wall / args.epochs as f64);
    Ok(csv)
}

struct Workload {
    tokens: TokenTable,
    lexicon: Lexicon,
    lm: Option<NGramModel>,
    opts: DecodeOptions,
    utterances: Vec<(String, Emissions)>,
}

fn workload(args: &BenchArgs) -> CliResult<Workload> {
    if args.synthetic {
        if args.token_count < 4 || args.frames == 0 || args.words == 0 {
            return usage("--token-count must be ≥ 4 and --frames, --words ≥ 1");
        }
        let w = DecodeWorkload::generate(
            args.utterances.unwrap_or(100),
            args.frames,
            args.token_count,
            args.words,
            args.seed,
        );
        let lm = NGramModel::parse_arpa(&w.arpa)?;
        return Ok(Workload {
            opts: DecodeOptions::ctc(w.silence, w.blank),
            tokens: w.tokens,
            lexicon: w.lexicon,
            lm: Some(lm),
            utterances: w.utterances,
        });
    }
    let (Some(dir), Some(tokens), Some(lexicon)) = (&args.emissions, &args.tokens, &args.lexicon) else {
        return usage("decode-latency needs --synthetic or --emissions, --tokens and --lexicon");
    };
    if args.criterion == CriterionName::Asg {
        return usage("decode-latency over files supports --criterion ctc only");
    }
    let tokens = load_tokens(tokens)?;
    let lexicon = Lexicon::load(lexicon).context(lexicon.display())?;
    let lm = match &args.lm {
        Some(p) => Some(NGramModel::load_arpa(p).context(p.display())?),
        None => None,
    };
    let mut ids: Vec<String> = fs::read_dir(dir)
        .context(dir.display())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "w2le"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    let mut utterances = Vec::with_capacity(ids.len());
    for id in ids {
        let path = emissions_path(dir, &id);
        let em = load_emissions(&path).context(path.display())?;
        utterances.push((id, em));
    }
    let opts =
        DecodeOptions::ctc(token_id(&tokens, &args.silence, "--silence")?, token_id(&tokens, &args.blank, "--blank")?);
    Ok(Workload { tokens, lexicon, lm, opts, utterances })
}

fn time_decodes<L: LanguageModel>(w: &Workload, lm: &L, opts: &DecodeOptions) -> CliResult<String> {
    let trie = Trie::build(&w.lexicon, &w.tokens, lm, opts.kind, true)?;
    let transitions: Option<TransitionMatrix> = None;
    let mut csv = String::from("utt_id,ms,peak_rss_mb\n");
    let (mut total_ms, mut max_rss) = (0.0f64, 0.0f64);
    let fmt_rss = |r: Option<f64>| r.map(|v| format!("{v:.1}")).unwrap_or_else(|| "nan".into());
    for (id, em) in &w.utterances {
        if em.tokens != w.tokens.len() {
            return Err(CliError::Runtime(format!(
                "{id}: emissions have {} tokens per frame but the token table has {}",
                em.tokens,
                w.tokens.len()
            )));
        }
        let clock = Instant::now();
        match decode(em, transitions.as_ref(), &trie, lm, opts) {
            Ok(_) | Err(DecodeError::NoHypothesis) => {}
            Err(e) => return Err(CliError::Runtime(format!("{id}: {e}"))),
        }
        let ms = clock.elapsed().as_secs_f64() * 1000.0;
        let rss = peak_rss_mb();
        total_ms += ms;
        max_rss = max_rss.max(rss.unwrap_or(f64::NAN));
        writeln!(csv, "{id},{ms:.3},{}", fmt_rss(rss)).expect("string write");
    }
    let mean = total_ms / w.utterances.len().max(1) as f64;
    let rss = peak_rss_mb().map(|_| max_rss);
    writeln!(csv, "summary,{mean:.3},{}", fmt_rss(rss)).expect("string write");
    Ok(csv)
}

fn decode_latency(args: &BenchArgs) -> CliResult<String> {
    let w = workload(args)?;
    if args.lmweight > 0.0 && w.lm.is_none() {
        return usage("--lmweight > 0 needs --lm");
    }
    let mut opts = w.opts.clone();
    opts.lm_weight = args.lmweight;
    opts.word_score = args.wordscore;
    opts.beam_size = args.beamsize;
    opts.beam_threshold = args.beamthreshold;
    opts.validate(w.tokens.len()).map_err(|e| CliError::Usage(e.to_string()))?;
    match &w.lm {
        Some(lm) => time_decodes(&w, lm, &opts),
        None => time_decodes(&w, &NullLm, &opts),
    }
}
