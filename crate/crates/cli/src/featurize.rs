use std::path::PathBuf;

use asr_core::decoder::save_emissions;
use asr_core::features::{featurize, load_wav};
use asr_core::Emissions;
use clap::Args;

use crate::common::{CliResult, Context, FeatureArgs};

/// Compute features of one WAV file and write them in the emissions format.
#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Input WAV file (PCM 8/16/24/32-bit or float32, any channel count).
    #[arg(long)]
    pub input: PathBuf,
    /// Output path for the T×D feature matrix.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

pub fn run(args: &FeaturizeArgs) -> CliResult<()> {
    let config = args.features.config();
    config.validate()?;
    let audio = load_wav(&args.input)?;
    let fm = featurize(&audio, &config).context(args.input.display())?;
    let em = Emissions::new(fm.frames, fm.dim, fm.data)?;
    save_emissions(&em, &args.out).context(args.out.display())?;
    println!("T={} D={}", em.frames, em.tokens);
    Ok(())
}
