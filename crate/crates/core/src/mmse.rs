//! STSA-MMSE enhancer: noise PSD tracking, decision-directed a priori SNR
//! estimation, and the MMSE short-time spectral amplitude gain.

use std::collections::VecDeque;

use crate::corpus::Waveform;
use crate::dsp::{istft, periodic_hamming, stft, Spectrogram, HOP, NFFT};
use crate::error::{Error, Result};

/// Decision-directed smoothing constant.
pub const DD_ALPHA: f64 = 0.98;
/// A priori SNR floor: -25 dB.
pub const XI_MIN: f64 = 0.0031622776601683794; // 10^(-25/10)
/// Gain cap (numerical hygiene for near-zero noise bins).
pub const GAIN_MAX: f64 = 10.0;
/// Noise PSD floor.
pub const PSD_FLOOR: f64 = 1e-10;

/// Tracker smoothing constant.
const TRACK_BETA: f64 = 0.8;
/// Smoothing for the periodogram trace feeding the safety net.
const TRACE_ALPHA: f64 = 0.9;
/// Safety-net window: 1.5 s of frames at the 16 ms hop.
const SAFETY_FRAMES: usize = (1.5 * 16000.0 / HOP as f64) as usize + 1;
/// Fixed a priori SNR under the speech-present hypothesis (15 dB).
const XI_H1: f64 = 31.622776601683793;

// ---------------------------------------------------------------------------
// Modified Bessel functions (exponentially scaled)
// ---------------------------------------------------------------------------

const BESSEL_SWITCH: f64 = 30.0;

/// e^-x * I0(x). Power series below x=30, asymptotic expansion above; the
/// scaling folds the exploding exponential in analytically.
pub fn i0_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < BESSEL_SWITCH {
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= q / (k as f64 * k as f64);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        sum * (-x).exp()
    } else {
        bessel_asymptotic(x, 0.0)
    }
}

/// e^-x * I1(x).
pub fn i1_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < BESSEL_SWITCH {
        let q = x * x / 4.0;
        let mut term = x / 2.0;
        let mut sum = term;
        for k in 1..200 {
            term *= q / (k as f64 * (k as f64 + 1.0));
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        sum * (-x).exp()
    } else {
        bessel_asymptotic(x, 1.0)
    }
}

/// Large-argument expansion of e^-x I_nu(x); truncated at the smallest term.
fn bessel_asymptotic(x: f64, nu: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..30 {
        let kf = k as f64;
        term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        if term.abs() >= prev {
            break; // divergent tail reached
        }
        prev = term.abs();
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

// ---------------------------------------------------------------------------
// Gain and decision-directed estimate
// ---------------------------------------------------------------------------

/// MMSE short-time spectral amplitude gain
/// G = (sqrt(pi)/2) (sqrt(nu)/gamma) e^(-nu/2) [(1+nu) I0(nu/2) + nu I1(nu/2)],
/// nu = xi*gamma/(1+xi), capped at GAIN_MAX.
pub fn stsa_gain(xi: f64, gamma: f64) -> f64 {
    assert!(xi > 0.0 && gamma > 0.0, "stsa_gain needs xi > 0, gamma > 0");
    let nu = xi * gamma / (1.0 + xi);
    let half = nu / 2.0;
    let g = (std::f64::consts::PI.sqrt() / 2.0) * (nu.sqrt() / gamma)
        * ((1.0 + nu) * i0_scaled(half) + nu * i1_scaled(half));
    g.min(GAIN_MAX)
}

/// Per-utterance recursion state for the decision-directed estimate and the
/// noise tracker.
#[derive(Debug, Clone)]
pub struct MmseState {
    pub noise_psd: Vec<f64>,
    pub prev_gain: Vec<f64>,
    pub prev_gamma: Vec<f64>,
    pub alpha: f64,
    /// Smoothed periodogram trace (safety-net input).
    trace: Vec<f64>,
    /// Ring of the last 1.5 s of traces; per-bin minimum is the floor the
    /// tracked PSD may not decay below.
    history: VecDeque<Vec<f64>>,
}

impl MmseState {
    pub fn new(noise_psd: Vec<f64>) -> Self {
        let n = noise_psd.len();
        let trace = noise_psd.clone();
        MmseState {
            noise_psd,
            prev_gain: vec![0.0; n],
            prev_gamma: vec![0.0; n],
            alpha: DD_ALPHA,
            trace,
            history: VecDeque::new(),
        }
    }
}

/// Average periodogram of the frames fully contained in the first 1000
/// samples (frames 0 and 1 with the 512/256 grid), floored at 1e-10.
pub fn init_noise_psd(w: &Waveform) -> Result<Vec<f64>> {
    if w.len() < 1000 {
        return Err(Error::TooShort {
            need: 1000,
            got: w.len(),
        });
    }
    let window = periodic_hamming(NFFT);
    let n_frames = (1000 - NFFT) / HOP + 1;
    let head = Waveform::new(w.samples[..NFFT + (n_frames - 1) * HOP].to_vec(), w.sample_rate);
    let spec = crate::dsp::stft_with(&head, NFFT, HOP)?;
    let _ = window;
    let n_bins = spec.bins();
    let mut psd = vec![0.0f64; n_bins];
    for f in 0..n_bins {
        for t in 0..spec.frames() {
            let m = spec.mag.at(f, t);
            psd[f] += m * m;
        }
        psd[f] = (psd[f] / spec.frames() as f64).max(PSD_FLOOR);
    }
    Ok(psd)
}

/// One tracker step: speech-presence-weighted recursive smoothing with a
/// minimum-statistics safety net. Returns the updated PSD (also stored).
pub fn update_noise_psd(state: &mut MmseState, periodogram: &[f64]) -> Vec<f64> {
    assert_eq!(periodogram.len(), state.noise_psd.len());
    let n = periodogram.len();

    // Smoothed periodogram trace and its 1.5 s minimum.
    for k in 0..n {
        state.trace[k] = TRACE_ALPHA * state.trace[k] + (1.0 - TRACE_ALPHA) * periodogram[k];
    }
    state.history.push_back(state.trace.clone());
    if state.history.len() > SAFETY_FRAMES {
        state.history.pop_front();
    }

    for k in 0..n {
        let sigma = state.noise_psd[k].max(PSD_FLOOR);
        let gamma = periodogram[k] / sigma;
        // Speech presence probability from a fixed-xi likelihood ratio.
        let lr = (1.0 / (1.0 + XI_H1)) * (gamma * XI_H1 / (1.0 + XI_H1)).min(700.0).exp();
        let p = (lr / (1.0 + lr)).min(0.99);
        let noise_given_obs = (1.0 - p) * periodogram[k] + p * sigma;
        let mut updated = TRACK_BETA * sigma + (1.0 - TRACK_BETA) * noise_given_obs;

        let floor = state
            .history
            .iter()
            .map(|t| t[k])
            .fold(f64::INFINITY, f64::min);
        if floor.is_finite() {
            updated = updated.max(floor);
        }
        state.noise_psd[k] = updated.max(PSD_FLOOR);
    }
    state.noise_psd.clone()
}

/// Decision-directed a priori SNR:
/// xi = alpha * prev_gain^2 * prev_gamma + (1-alpha) * max(gamma-1, 0),
/// floored at XI_MIN.
pub fn decision_directed_xi(state: &MmseState, gamma: &[f64]) -> Vec<f64> {
    assert_eq!(gamma.len(), state.prev_gain.len());
    gamma
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            debug_assert!(g >= 0.0);
            let recur = state.prev_gain[k] * state.prev_gain[k] * state.prev_gamma[k];
            (state.alpha * recur + (1.0 - state.alpha) * (g - 1.0).max(0.0)).max(XI_MIN)
        })
        .collect()
}

/// Full STSA-MMSE pipeline: STFT, per-frame gamma -> xi -> gain, magnitude
/// scaling, ISTFT with the noisy phase, trimmed to the input length.
pub fn enhance_mmse(w: &Waveform) -> Result<Waveform> {
    let psd0 = init_noise_psd(w)?;
    let mut state = MmseState::new(psd0);

    // Pad so the frame grid covers the whole signal, then trim at the end.
    let n = w.len();
    let frames_needed = (n.saturating_sub(NFFT)).div_ceil(HOP) + 1;
    let padded_len = (frames_needed - 1) * HOP + NFFT;
    let mut padded = w.samples.clone();
    padded.resize(padded_len, 0.0);
    let spec = stft(&Waveform::new(padded, w.sample_rate))?;

    let enhanced = enhance_spectrogram(&spec, &mut state);
    let mut out = istft(&enhanced);
    out.samples.truncate(n);
    Ok(out)
}

/// Gain pipeline on an existing spectrogram (state already initialized).
fn enhance_spectrogram(spec: &Spectrogram, state: &mut MmseState) -> Spectrogram {
    let n_bins = spec.bins();
    let mut out = spec.clone();
    let mut periodogram = vec![0.0f64; n_bins];
    let mut gamma = vec![0.0f64; n_bins];

    for t in 0..spec.frames() {
        for k in 0..n_bins {
            let m = spec.mag.at(k, t);
            periodogram[k] = m * m;
            gamma[k] = (periodogram[k] / state.noise_psd[k].max(PSD_FLOOR)).max(1e-12);
        }
        let xi = decision_directed_xi(state, &gamma);
        for k in 0..n_bins {
            let g = stsa_gain(xi[k], gamma[k]);
            *out.mag.at_mut(k, t) = g * spec.mag.at(k, t);
            state.prev_gain[k] = g;
            state.prev_gamma[k] = gamma[k];
        }
        update_noise_psd(state, &periodogram);
    }
    out
}
