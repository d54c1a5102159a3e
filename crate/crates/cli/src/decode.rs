use std::fs;
use std::path::{Path, PathBuf};

use asr_core::criterion::CriterionKind;
use asr_core::data::{Manifest, ManifestEntry};
use asr_core::decoder::{
    decode, load_emissions, save_emissions, DecodeError, DecodeOptions, MergeMode, Trie, WordBoundary,
};
use asr_core::features::{featurize, load_wav};
use asr_core::trainer::{Checkpoint, ErrorTally, Model, RunMode, TrainState, TRANSITIONS_PARAM};
use asr_core::{Emissions, LanguageModel, Lexicon, NGramModel, NullLm, TokenTable, TransitionMatrix};
use clap::{ArgGroup, Args, ValueEnum};

use crate::common::{
    create_dir, emissions_path, load_tokens, token_id, usage, CliError, CliResult, Context, CriterionName,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeName {
    Max,
    Logadd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryName {
    /// Words end only on the silence token.
    Silence,
    /// A word may be followed directly by the next one.
    Direct,
}

/// Beam-search decode with a lexicon and an optional n-gram LM, from
/// pre-computed emissions or from a model checkpoint over audio.
///
/// Prints one `id<TAB>transcript` line per utterance (per candidate with
/// --nbest), then `WER<TAB>rate` when the manifest has references.
#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["emissions", "model"])))]
pub struct DecodeArgs {
    /// Emissions file, or a directory of `<id>.w2le` files.
    #[arg(long)]
    pub emissions: Option<PathBuf>,
    /// Model checkpoint; audio comes from --input.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Manifest of utterances (required with --model); its transcripts are
    /// the references for WER.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    /// ARPA language model.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lmweight: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub wordscore: f64,
    #[arg(long, default_value_t = 100)]
    pub beamsize: usize,
    #[arg(long, default_value_t = 25.0)]
    pub beamthreshold: f64,
    /// Candidates printed per utterance.
    #[arg(long, default_value_t = 1)]
    pub nbest: usize,
    /// Criterion of the emissions (taken from the checkpoint with --model).
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionName>,
    #[arg(long, default_value = "<blank>")]
    pub blank: String,
    #[arg(long, default_value = "|")]
    pub silence: String,
    #[arg(long, value_enum, default_value_t = MergeName::Max)]
    pub merge: MergeName,
    /// Word boundary rule (default: direct for ctc, silence for asg).
    #[arg(long, value_enum)]
    pub boundary: Option<BoundaryName>,
    /// Unigram lookahead inside words.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub smearing: bool,
    /// Checkpoint supplying ASG transitions when decoding --emissions.
    #[arg(long)]
    pub transitions: Option<PathBuf>,
    /// With --model, also write each utterance's emissions here.
    #[arg(long = "dump-emissions")]
    pub dump_emissions: Option<PathBuf>,
    /// Append the total score as a third column.
    #[arg(long = "print-scores", default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub print_scores: bool,
}

struct Utterance {
    id: String,
    reference: Option<Vec<String>>,
    emissions: Emissions,
}

struct Source {
    kind: CriterionKind,
    transitions: Option<TransitionMatrix>,
    utterances: Vec<Utterance>,
}

fn checkpoint_model(path: &Path) -> CliResult<TrainState> {
    let ckpt = Checkpoint::load(path).context(path.display())?;
    Ok(TrainState::from_checkpoint(&ckpt, RunMode::Continue, None, None)?)
}

fn reference(entry: &ManifestEntry) -> Option<Vec<String>> {
    (!entry.words.is_empty()).then(|| entry.words.clone())
}

fn from_model(args: &DecodeArgs, path: &Path) -> CliResult<Source> {
    let Some(input) = &args.input else {
        return usage("--model needs --input");
    };
    let state = checkpoint_model(path)?;
    let model: &Model = &state.model;
    let manifest = Manifest::load(input)?;
    if let Some(dir) = &args.dump_emissions {
        create_dir(dir)?;
    }
    let mut utterances = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let audio = load_wav(&entry.audio).context(&entry.id)?;
        let fm = featurize(&audio, &state.config.features).context(&entry.id)?;
        let em = model.emissions(&fm.data, fm.frames).context(&entry.id)?;
        if let Some(dir) = &args.dump_emissions {
            save_emissions(&em, emissions_path(dir, &entry.id))?;
        }
        utterances.push(Utterance { id: entry.id.clone(), reference: reference(entry), emissions: em });
    }
    Ok(Source { kind: model.criterion.kind, transitions: model.transitions(), utterances })
}

fn from_emissions(args: &DecodeArgs, path: &Path) -> CliResult<Source> {
    if args.dump_emissions.is_some() {
        return usage("--dump-emissions needs --model");
    }
    let manifest = args.input.as_deref().map(Manifest::load).transpose()?;
    let mut utterances = Vec::new();
    if path.is_dir() {
        let listed: Vec<(String, Option<Vec<String>>)> = match &manifest {
            Some(m) => m.entries.iter().map(|e| (e.id.clone(), reference(e))).collect(),
            None => {
                let mut ids: Vec<String> = fs::read_dir(path)
                    .context(path.display())?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|x| x == "w2le"))
                    .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                    .collect();
                ids.sort();
                ids.into_iter().map(|id| (id, None)).collect()
            }
        };
        for (id, reference) in listed {
            let file = emissions_path(path, &id);
            let emissions = load_emissions(&file).context(file.display())?;
            utterances.push(Utterance { id, reference, emissions });
        }
    } else {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "utt".into());
        let reference = manifest.as_ref().and_then(|m| m.entries.iter().find(|e| e.id == id)).and_then(reference);
        let emissions = load_emissions(path).context(path.display())?;
        utterances.push(Utterance { id, reference, emissions });
    }

    let kind: CriterionKind = args.criterion.unwrap_or(CriterionName::Ctc).into();
    let transitions = match (kind, &args.transitions) {
        (CriterionKind::Ctc, Some(_)) => return usage("--transitions only applies to --criterion asg"),
        (CriterionKind::Ctc, None) => None,
        (CriterionKind::Asg, Some(p)) => {
            let ckpt = Checkpoint::load(p).context(p.display())?;
            let t = ckpt
                .tensor(TRANSITIONS_PARAM)
                .ok_or_else(|| CliError::Runtime(format!("{}: no ASG transitions", p.display())))?;
            Some(TransitionMatrix::new(t.shape()[0], t.to_vec())?)
        }
        (CriterionKind::Asg, None) => {
            log::warn!("decoding ASG emissions with zero transitions; pass --transitions to use a model's");
            utterances.first().map(|u| TransitionMatrix::zeros(u.emissions.tokens))
        }
    };
    Ok(Source { kind, transitions, utterances })
}

fn options(args: &DecodeArgs, tokens: &TokenTable, kind: CriterionKind) -> CliResult<DecodeOptions> {
    let silence = token_id(tokens, &args.silence, "--silence")?;
    let mut opts = match kind {
        CriterionKind::Ctc => DecodeOptions::ctc(silence, token_id(tokens, &args.blank, "--blank")?),
        CriterionKind::Asg => DecodeOptions::asg(silence),
    };
    opts.lm_weight = args.lmweight;
    opts.word_score = args.wordscore;
    opts.beam_size = args.beamsize;
    opts.beam_threshold = args.beamthreshold;
    opts.merge = match args.merge {
        MergeName::Max => MergeMode::Max,
        MergeName::Logadd => MergeMode::Logadd,
    };
    if let Some(b) = args.boundary {
        opts.boundary = match b {
            BoundaryName::Silence => WordBoundary::RequireSilence,
            BoundaryName::Direct => WordBoundary::Direct,
        };
    }
    opts.validate(tokens.len()).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(opts)
}

fn decode_all<L: LanguageModel>(
    args: &DecodeArgs,
    source: &Source,
    tokens: &TokenTable,
    lexicon: &Lexicon,
    lm: &L,
) -> CliResult<()> {
    let opts = options(args, tokens, source.kind)?;
    let trie = Trie::build(lexicon, tokens, lm, source.kind, args.smearing)?;
    let mut wer = ErrorTally::default();
    let mut any_reference = false;
    for utt in &source.utterances {
        if utt.emissions.tokens != tokens.len() {
            return Err(CliError::Runtime(format!(
                "{}: emissions have {} tokens per frame but the token table {} has {}",
                utt.id,
                utt.emissions.tokens,
                args.tokens.display(),
                tokens.len()
            )));
        }
        let candidates = match decode(&utt.emissions, source.transitions.as_ref(), &trie, lm, &opts) {
            Ok(r) => r.nbest,
            Err(DecodeError::NoHypothesis) => {
                log::warn!("{}: no hypothesis survived the beam", utt.id);
                Vec::new()
            }
            Err(e) => return Err(CliError::Runtime(format!("{}: {e}", utt.id))),
        };
        let hyp: Vec<String> = candidates.first().map(|c| c.words.clone()).unwrap_or_default();
        if candidates.is_empty() {
            if args.print_scores {
                println!("{}\t\t-inf", utt.id);
            } else {
                println!("{}\t", utt.id);
            }
        }
        for c in candidates.iter().take(args.nbest) {
            if args.print_scores {
                println!("{}\t{}\t{}", utt.id, c.words.join(" "), c.score);
            } else {
                println!("{}\t{}", utt.id, c.words.join(" "));
            }
        }
        if let Some(r) = &utt.reference {
            any_reference = true;
            wer.add(r, &hyp);
        }
    }
    if any_reference {
        println!("WER\t{:.6}", wer.rate());
    }
    Ok(())
}

pub fn run(args: &DecodeArgs) -> CliResult<()> {
    if args.lmweight > 0.0 && args.lm.is_none() {
        return usage("--lmweight > 0 needs --lm");
    }
    if args.nbest == 0 {
        return usage("--nbest must be at least 1");
    }
    let tokens = load_tokens(&args.tokens)?;
    let lexicon = Lexicon::load(&args.lexicon).context(args.lexicon.display())?;
    let source = match (&args.model, &args.emissions) {
        (Some(m), _) => from_model(args, m)?,
        (None, Some(e)) => from_emissions(args, e)?,
        (None, None) => return usage("one of --emissions or --model is required"),
    };
    if let (Some(c), Some(_)) = (args.criterion, &args.model) {
        if CriterionKind::from(c) != source.kind {
            return usage("--criterion differs from the model's criterion");
        }
    }
    match &args.lm {
        Some(p) => {
            let lm = NGramModel::load_arpa(p).context(p.display())?;
            decode_all(args, &source, &tokens, &lexicon, &lm)
        }
        None => decode_all(args, &source, &tokens, &lexicon, &NullLm),
    }
}
