//! Speech enhancement and evaluation toolkit.
//!
//! The pipeline: a synthetic 16 kHz corpus with SNR-controlled noise mixing
//! (`corpus`), STFT/chunking/auditory front-ends (`dsp`), three enhancers --
//! a spectrogram-to-spectrogram conditional GAN (`pix2pix`), the classical
//! STSA-MMSE suppressor (`mmse`) and an IRM-target DNN (`dnnse`) -- plus an
//! evaluation stack: STOI and quality proxies (`metrics`) and a GMM-UBM
//! speaker-verification system reporting EER (`asv`).

pub mod asv;
pub mod checkpoint;
pub mod corpus;
pub mod dnnse;
pub mod dsp;
pub mod mmse;
pub mod nn;
pub mod pix2pix;
pub mod enhance;
pub mod error;
pub mod metrics;
pub mod mat;

pub use error::{Error, Result};
