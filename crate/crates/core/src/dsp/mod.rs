//! STFT analysis/synthesis, GAN-shaped spectrogram chunking and the
//! auditory front-ends (mel-spaced gammatone bank, MFCC) shared by the
//! enhancers and the speaker-verification system.

mod chunk;
mod features;
mod resample;
mod stft;

pub use chunk::{chunk_for_gan, chunk_training, ChunkSet, NormState, SpectroChunk};
pub use features::{
    append_deltas, delta, erb_hz, hz_to_mel, mel_gammatone_bank, mel_to_hz, mfcc,
    subband_energies, FeatureKind, FeatureMatrix, FilterBank,
};
pub use resample::resample;
pub use stft::{istft, periodic_hamming, stft, stft_with, symmetric_hamming, Spectrogram};

/// Frame length (samples) of the default 32 ms analysis at 16 kHz.
pub const NFFT: usize = 512;
/// Hop (samples) of the default 16 ms step at 16 kHz.
pub const HOP: usize = 256;
