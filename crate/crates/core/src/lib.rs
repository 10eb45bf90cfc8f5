//! Multi-channel attribute-aware entity alignment between two knowledge
//! graphs.

pub mod channels;
pub mod ensemble;
pub mod evaluation;
pub mod featurize;
pub mod hardsplit;
pub mod kg;
pub mod nn;
pub mod partition;
pub mod pipeline;
pub mod synth;
pub mod training;

use thiserror::Error;

/// Any error a pipeline stage can raise.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kg(#[from] kg::KgError),
    #[error(transparent)]
    Partition(#[from] partition::PartitionError),
    #[error(transparent)]
    Feature(#[from] featurize::FeatureError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Channel(#[from] channels::ChannelError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Split(#[from] hardsplit::SplitError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl Error {
    /// Name of the module the error came from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Kg(_) => "kg-core",
            Error::Partition(_) => "partition",
            Error::Feature(_) => "featurize",
            Error::Nn(_) => "nn-core",
            Error::Channel(_) => "channels",
            Error::Train(_) => "training",
            Error::Ensemble(_) => "ensemble",
            Error::Eval(_) => "evaluation",
            Error::Split(_) => "hardsplit",
            Error::Synth(_) => "synth",
            Error::Config(_) | Error::Io(_) => "cli",
        }
    }
}
