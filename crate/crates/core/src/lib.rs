//! Accent-adaptive continual self-supervision at desk scale: a masked
//! prediction speech encoder with residual adapters, three training stages,
//! CTC decoding and WER evaluation.

pub mod asr_head;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod container;
pub mod data_io;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod masking;
pub mod params;
pub mod pipeline;
pub mod ssl_head;
pub mod tensor;
pub mod units;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::Mat;
