//! `interrupt`: batch front end for clip extraction, featurization,
//! training, evaluation, crowd labels and telemetry impact analysis.

mod cmd_audio;
mod cmd_data;
mod cmd_model;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use interrupt_core::features::{EmbeddingProfile, FeatureProfile};
use interrupt_core::model::ChannelMode;
use interrupt_core::{Error, ErrorFamily};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "interrupt", version, about = "Failed-interruption detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect overlap candidates in a meeting manifest and export 10 s stereo clips.
    Extract(cmd_audio::ExtractArgs),
    /// Compute MFCC or spectrogram features, or validate precomputed embeddings.
    Featurize(cmd_audio::FeaturizeArgs),
    /// Train one model per run on a labeled feature manifest.
    Train(cmd_model::TrainArgs),
    /// Score a labeled feature manifest with every trained run.
    Eval(cmd_model::EvalArgs),
    /// Aggregate crowd votes into consensus labels.
    Labels(cmd_data::LabelsArgs),
    /// Fleiss' kappa over crowd votes.
    Kappa(cmd_data::KappaArgs),
    /// Propensity-stratified impact of feature usage on the meeting outcome.
    Impact(cmd_data::ImpactArgs),
    /// Write every synthetic corpus from one seed.
    GenFixtures(cmd_data::GenFixturesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mfcc,
    Spec,
    Emb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileArg {
    Base,
    Large,
    Tiny,
}

impl From<ProfileArg> for EmbeddingProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Base => EmbeddingProfile::Base,
            ProfileArg::Large => EmbeddingProfile::Large,
            ProfileArg::Tiny => EmbeddingProfile::Tiny,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ChannelsArg {
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
    #[value(name = "right")]
    #[serde(rename = "right")]
    Right,
}

impl From<ChannelsArg> for ChannelMode {
    fn from(c: ChannelsArg) -> Self {
        match c {
            ChannelsArg::Two => ChannelMode::Both,
            ChannelsArg::Right => ChannelMode::RightOnly,
        }
    }
}

/// Input feature selection shared by featurize, train and eval.
#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct FeatureArgs {
    #[arg(long, value_enum)]
    pub feature: FeatureKind,
    /// Encoder profile for `--feature emb`.
    #[arg(long, value_enum, default_value = "base")]
    pub profile: ProfileArg,
}

impl FeatureArgs {
    pub fn feature_profile(&self) -> FeatureProfile {
        match self.feature {
            FeatureKind::Mfcc => FeatureProfile::Mfcc,
            FeatureKind::Spec => FeatureProfile::Spectrogram,
            FeatureKind::Emb => FeatureProfile::Embedding(self.profile.into()),
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.family() {
        ErrorFamily::Io => 3,
        ErrorFamily::Format => 4,
        ErrorFamily::Contract => 5,
        ErrorFamily::Numerical => 6,
        ErrorFamily::Data => 7,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => cmd_audio::extract(&a),
        Command::Featurize(a) => cmd_audio::featurize(&a),
        Command::Train(a) => cmd_model::train(&a),
        Command::Eval(a) => cmd_model::eval(&a),
        Command::Labels(a) => cmd_data::labels(&a),
        Command::Kappa(a) => cmd_data::kappa(&a),
        Command::Impact(a) => cmd_data::impact(&a),
        Command::GenFixtures(a) => cmd_data::gen_fixtures(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
