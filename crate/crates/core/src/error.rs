use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: unsupported WAV encoding ({detail}); only PCM16 is accepted")]
    NotPcm16 { path: PathBuf, detail: String },
    #[error("{path}: expected mono audio, found {channels} channels")]
    ChannelCount { path: PathBuf, channels: u16 },
    #[error("{path}: truncated or malformed WAV header: {detail}")]
    TruncatedHeader { path: PathBuf, detail: String },

    #[error("manifest {path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),
    #[error("character {ch:?} is not in the vocabulary (text {text:?})")]
    IllegalChar { ch: char, text: String },

    #[error("invalid accent spec: {0}")]
    AccentSpec(String),
    #[error("waveform of {samples} samples is shorter than the frontend receptive field ({needed})")]
    TooShort { samples: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mask index {index} out of range for {frames} frames")]
    MaskIndex { index: usize, frames: usize },
    #[error("masked set is empty; the SSL loss needs at least one masked frame")]
    EmptyMask,

    #[error("k-means needs at least {clusters} points, got {points}")]
    TooFewPoints { points: usize, clusters: usize },

    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("learning-rate step {step} outside 1..={max}")]
    StepOutOfRange { step: usize, max: usize },
    #[error("non-finite gradient in `{0}`; step aborted")]
    NonFiniteGradient(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("invalid data: {0}")]
    Data(String),
    #[error("unknown gradcheck component `{0}`")]
    UnknownComponent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by inputs (data, manifests, config) rather than
    /// by the computation itself.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFiniteGradient(_) | Error::Io(_) | Error::Shape(_))
    }
}
