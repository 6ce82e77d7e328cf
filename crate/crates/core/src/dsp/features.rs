//! Auditory front-ends: mel-spaced gammatone filter bank, subband energies
//! and MFCC features with delta/delta-delta appendices.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::corpus::Waveform;
use crate::dsp::{symmetric_hamming, Spectrogram, HOP, NFFT};
use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Mfcc,
    GammatoneEnergy,
    DnnSeInput,
}

/// T x D feature frames with their center times.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub frames: Mat,
    pub kind: FeatureKind,
    pub frame_times: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Equivalent rectangular bandwidth at center frequency `fc` (Hz).
pub fn erb_hz(fc: f64) -> f64 {
    24.7 * (4.37 * fc / 1000.0 + 1.0)
}

/// Bank of bandpass magnitude responses over the STFT bins.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub center_freqs: Vec<f64>,
    /// n_filters x n_bins, non-negative, peak 1 at the center.
    pub responses: Mat,
    pub sample_rate: u32,
    pub nfft: usize,
}

impl FilterBank {
    pub fn n_filters(&self) -> usize {
        self.center_freqs.len()
    }
}

/// 4th-order gammatone magnitude responses sampled at the STFT bins, with
/// centers linearly spaced on the mel scale and one-ERB bandwidths.
pub fn mel_gammatone_bank(
    n_filters: usize,
    f_lo: f64,
    f_hi: f64,
    sample_rate: u32,
    nfft: usize,
) -> Result<FilterBank> {
    if !(0.0 < f_lo && f_lo < f_hi && f_hi <= sample_rate as f64 / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid band edges {f_lo}..{f_hi} at rate {sample_rate}"
        )));
    }
    let mel_lo = hz_to_mel(f_lo);
    let mel_hi = hz_to_mel(f_hi);
    let centers: Vec<f64> = (0..n_filters)
        .map(|j| {
            let m = mel_lo + (mel_hi - mel_lo) * j as f64 / (n_filters - 1) as f64;
            mel_to_hz(m)
        })
        .collect();

    let n_bins = nfft / 2 + 1;
    let bin_hz = sample_rate as f64 / nfft as f64;
    let mut responses = Mat::zeros(n_filters, n_bins);
    for (j, &fc) in centers.iter().enumerate() {
        // 4th-order gammatone: |H(f)| = (1 + ((f-fc)/b)^2)^-2 with the
        // bandwidth parameter sized so the filter's ERB equals erb_hz(fc).
        let b = 1.019 * erb_hz(fc);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let u = (f - fc) / b;
            *responses.at_mut(j, k) = (1.0 + u * u).powi(-2);
        }
    }

    Ok(FilterBank {
        center_freqs: centers,
        responses,
        sample_rate,
        nfft,
    })
}

/// Per-frame subband energies e[t, j] = sum_f resp_j(f)^2 * mag[f, t]^2.
pub fn subband_energies(spec: &Spectrogram, bank: &FilterBank) -> FeatureMatrix {
    assert_eq!(
        spec.bins(),
        bank.responses.cols(),
        "bank must be defined over the spectrogram's bins"
    );
    let t_frames = spec.frames();
    let n_filt = bank.n_filters();
    let mut frames = Mat::zeros(t_frames, n_filt);
    for t in 0..t_frames {
        for j in 0..n_filt {
            let resp = bank.responses.row(j);
            let mut e = 0.0;
            for f in 0..spec.bins() {
                let m = spec.mag.at(f, t);
                e += resp[f] * resp[f] * m * m;
            }
            *frames.at_mut(t, j) = e;
        }
    }
    let frame_times = (0..t_frames)
        .map(|t| (t * spec.hop + spec.nfft / 2) as f64 / spec.sample_rate as f64)
        .collect();
    FeatureMatrix {
        frames,
        kind: FeatureKind::GammatoneEnergy,
        frame_times,
    }
}

/// Five-point linear-regression delta of the rows of `m`, edges replicated:
/// d[t] = ((m[t+1]-m[t-1]) + 2*(m[t+2]-m[t-2])) / 10.
pub fn delta(m: &Mat) -> Mat {
    let t_frames = m.rows();
    let d = m.cols();
    let clamp = |i: isize| -> usize { i.clamp(0, t_frames as isize - 1) as usize };
    let mut out = Mat::zeros(t_frames, d);
    for t in 0..t_frames {
        let ti = t as isize;
        for c in 0..d {
            let v = (m.at(clamp(ti + 1), c) - m.at(clamp(ti - 1), c))
                + 2.0 * (m.at(clamp(ti + 2), c) - m.at(clamp(ti - 2), c));
            *out.at_mut(t, c) = v / 10.0;
        }
    }
    out
}

/// Append delta and delta-delta columns: T x D -> T x 3D.
pub fn append_deltas(m: &Mat) -> Mat {
    let d1 = delta(m);
    let d2 = delta(&d1);
    let t_frames = m.rows();
    let d = m.cols();
    let mut out = Mat::zeros(t_frames, 3 * d);
    for t in 0..t_frames {
        out.row_mut(t)[..d].copy_from_slice(m.row(t));
        out.row_mut(t)[d..2 * d].copy_from_slice(d1.row(t));
        out.row_mut(t)[2 * d..].copy_from_slice(d2.row(t));
    }
    out
}

const N_MEL_FILTERS: usize = 26;
const PREEMPHASIS: f64 = 0.97;
// Lower mel edge above DC: pre-emphasis suppresses the bottom bins so far
// that a DC-anchored band would be leakage-dominated.
const MEL_LO_HZ: f64 = 100.0;

/// MFCC features: pre-emphasis, 32 ms symmetric-Hamming frames at 16 ms hop,
/// 26 triangular mel filters, DCT-II, `n_static` coefficients (C0 serves as
/// the log-energy term), plus deltas and delta-deltas when requested.
/// Defaults give the 57-dimensional vectors used for speaker verification.
pub fn mfcc(w: &Waveform, n_static: usize, with_deltas: bool) -> Result<FeatureMatrix> {
    if w.sample_rate != crate::corpus::DEFAULT_SAMPLE_RATE {
        return Err(Error::SampleRateMismatch {
            expected: crate::corpus::DEFAULT_SAMPLE_RATE,
            got: w.sample_rate,
        });
    }
    if w.len() < NFFT {
        return Err(Error::TooShort {
            need: NFFT,
            got: w.len(),
        });
    }

    // Signal-level pre-emphasis, first sample replicated so constant
    // signals stay constant.
    let mut x = Vec::with_capacity(w.len());
    x.push(w.samples[0] * (1.0 - PREEMPHASIS));
    for i in 1..w.len() {
        x.push(w.samples[i] - PREEMPHASIS * w.samples[i - 1]);
    }

    let n_frames = (x.len() - NFFT) / HOP + 1;
    let n_bins = NFFT / 2 + 1;
    let window = symmetric_hamming(NFFT);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(NFFT);

    // Triangular mel filters spanning MEL_LO_HZ..Nyquist.
    let fs = w.sample_rate as f64;
    let mel_pts: Vec<f64> = (0..N_MEL_FILTERS + 2)
        .map(|i| {
            let m = hz_to_mel(MEL_LO_HZ)
                + (hz_to_mel(fs / 2.0) - hz_to_mel(MEL_LO_HZ)) * i as f64
                    / (N_MEL_FILTERS + 1) as f64;
            mel_to_hz(m)
        })
        .collect();
    let bin_hz = fs / NFFT as f64;

    let mut statics = Mat::zeros(n_frames, n_static);
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    let mut mel_energy = vec![0.0f64; N_MEL_FILTERS];
    for t in 0..n_frames {
        let start = t * HOP;
        for i in 0..NFFT {
            buf[i] = Complex::new(x[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);

        mel_energy.iter_mut().for_each(|e| *e = 0.0);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let p = buf[k].norm_sqr();
            for (m, e) in mel_energy.iter_mut().enumerate() {
                let (lo, mid, hi) = (mel_pts[m], mel_pts[m + 1], mel_pts[m + 2]);
                let weight = if f >= lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                *e += weight * p;
            }
        }

        // Floor 80 dB below the frame's loudest band so near-empty bands
        // cannot dominate the cepstrum.
        let frame_max = mel_energy.iter().cloned().fold(0.0f64, f64::max);
        let floor = (frame_max * 1e-8).max(1e-10);

        // Orthonormal DCT-II of the log filter energies.
        for c in 0..n_static {
            let mut acc = 0.0;
            for (m, &e) in mel_energy.iter().enumerate() {
                let log_e = e.max(floor).ln();
                acc += log_e
                    * (std::f64::consts::PI * c as f64 * (m as f64 + 0.5)
                        / N_MEL_FILTERS as f64)
                        .cos();
            }
            let scale = if c == 0 {
                (1.0 / N_MEL_FILTERS as f64).sqrt()
            } else {
                (2.0 / N_MEL_FILTERS as f64).sqrt()
            };
            *statics.at_mut(t, c) = acc * scale;
        }
    }

    let frames = if with_deltas {
        append_deltas(&statics)
    } else {
        statics
    };
    let frame_times = (0..n_frames)
        .map(|t| (t * HOP + NFFT / 2) as f64 / fs)
        .collect();
    Ok(FeatureMatrix {
        frames,
        kind: FeatureKind::Mfcc,
        frame_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{white_noise, Waveform};
    use crate::dsp::stft;
    use approx::assert_abs_diff_eq;

    fn tone(freq: f64, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / 16000.0).sin())
            .collect();
        Waveform::new(samples, 16000)
    }

    #[test]
    fn bank_centers_increase_and_span_band() {
        let bank = mel_gammatone_bank(64, 50.0, 8000.0, 16000, 512).unwrap();
        assert_eq!(bank.n_filters(), 64);
        assert_abs_diff_eq!(bank.center_freqs[0], 50.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bank.center_freqs[63], 8000.0, epsilon = 1e-6);
        for j in 1..64 {
            assert!(bank.center_freqs[j] > bank.center_freqs[j - 1]);
        }
        assert!(bank.responses.data().iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn erb_formula_at_1khz() {
        assert_abs_diff_eq!(erb_hz(1000.0), 132.639, epsilon = 1e-9);
    }

    #[test]
    fn filter_peaks_at_bin_nearest_center() {
        let bank = mel_gammatone_bank(64, 50.0, 8000.0, 16000, 512).unwrap();
        for j in 0..bank.n_filters() {
            let row = bank.responses.row(j);
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let nearest = (bank.center_freqs[j] / 31.25).round() as usize;
            assert_eq!(peak, nearest.min(256), "filter {j}");
        }
    }

    #[test]
    fn invalid_band_edges_rejected() {
        assert!(mel_gammatone_bank(64, 0.0, 8000.0, 16000, 512).is_err());
        assert!(mel_gammatone_bank(64, 50.0, 9000.0, 16000, 512).is_err());
    }

    #[test]
    fn zero_spectrogram_zero_energies() {
        let w = Waveform::new(vec![0.0; 4096], 16000);
        let spec = stft(&w).unwrap();
        let bank = mel_gammatone_bank(64, 50.0, 8000.0, 16000, 512).unwrap();
        let e = subband_energies(&spec, &bank);
        assert!(e.frames.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_magnitude_quadruples_energy() {
        let w = white_noise(4096, 2);
        let mut spec = stft(&w).unwrap();
        let bank = mel_gammatone_bank(64, 50.0, 8000.0, 16000, 512).unwrap();
        let e1 = subband_energies(&spec, &bank);
        for v in spec.mag.data_mut() {
            *v *= 2.0;
        }
        let e2 = subband_energies(&spec, &bank);
        for i in 0..e1.frames.data().len() {
            assert_abs_diff_eq!(
                e2.frames.data()[i],
                4.0 * e1.frames.data()[i],
                epsilon = 1e-9 * e1.frames.data()[i].max(1.0)
            );
        }
    }

    #[test]
    fn tone_at_filter_center_maximizes_that_filter() {
        let bank = mel_gammatone_bank(64, 50.0, 8000.0, 16000, 512).unwrap();
        let j = 40;
        let w = tone(bank.center_freqs[j], 8192);
        let e = subband_energies(&stft(&w).unwrap(), &bank);
        let t = e.n_frames() / 2;
        let best = (0..64)
            .max_by(|&a, &b| e.frames.at(t, a).partial_cmp(&e.frames.at(t, b)).unwrap())
            .unwrap();
        assert_eq!(best, j);
    }

    #[test]
    fn mfcc_dimension_is_57() {
        let w = white_noise(8000, 4);
        let f = mfcc(&w, 19, true).unwrap();
        assert_eq!(f.dim(), 57);
        assert!(f.frames.is_finite());
    }

    #[test]
    fn constant_signal_has_zero_deltas() {
        let w = Waveform::new(vec![0.25; 8000], 16000);
        let f = mfcc(&w, 19, true).unwrap();
        for t in 0..f.n_frames() {
            for c in 19..57 {
                assert_abs_diff_eq!(f.frames.at(t, c), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn delta_of_reversed_frames_negates() {
        // Regression antisymmetry at the feature level, exact.
        let m = Mat::from_fn(20, 3, |r, c| ((r * 13 + c * 5) % 11) as f64 - 4.0);
        let rev = Mat::from_fn(20, 3, |r, c| m.at(19 - r, c));
        let d = delta(&m);
        let d_rev = delta(&rev);
        for t in 0..20 {
            for c in 0..3 {
                assert_abs_diff_eq!(d_rev.at(t, c), -d.at(19 - t, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reversed_signal_negates_deltas_of_mirrored_frames() {
        // A harmonic-rich pulse train whose length aligns the frame grid
        // under reversal. Statics of mirrored frames agree and deltas negate
        // in the RMS sense; exact equality cannot hold because the fixed
        // causal pre-emphasis is not reversal-symmetric.
        let n = 512 + 30 * 256;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let env = 0.2 + 0.6 * (std::f64::consts::PI * t).sin().powi(2) + 0.3 * t;
                if i % 160 == 0 {
                    env
                } else {
                    0.0
                }
            })
            .collect();
        let w = Waveform::new(samples, 16000);
        let rev = Waveform::new(w.samples.iter().rev().cloned().collect(), 16000);
        let f = mfcc(&w, 19, true).unwrap();
        let g = mfcc(&rev, 19, true).unwrap();
        let t_frames = f.n_frames();
        assert_eq!(g.n_frames(), t_frames);

        let inner = 3..t_frames - 3;
        let mut means = vec![0.0f64; 19];
        for t in inner.clone() {
            for c in 0..19 {
                means[c] += f.frames.at(t, c);
            }
        }
        for m in &mut means {
            *m /= (t_frames - 6) as f64;
        }
        let (mut e_static, mut var_static, mut e_delta, mut p_delta) = (0.0, 0.0, 0.0, 0.0);
        let mut terms = 0usize;
        for t in inner {
            let mirror = t_frames - 1 - t;
            for c in 0..19 {
                let d = f.frames.at(t, c) - g.frames.at(mirror, c);
                e_static += d * d;
                let v = f.frames.at(t, c) - means[c];
                var_static += v * v;
            }
            for c in 19..38 {
                let d = f.frames.at(t, c) + g.frames.at(mirror, c);
                e_delta += d * d;
                p_delta += f.frames.at(t, c).powi(2);
            }
            terms += 19;
        }
        let nt = terms as f64;
        let rms_static_mismatch = (e_static / nt).sqrt();
        let rms_static_variation = (var_static / nt).sqrt();
        let rms_delta_mismatch = (e_delta / nt).sqrt();
        let rms_delta = (p_delta / nt).sqrt();

        // The signal genuinely moves; mismatch stays well below signal level.
        assert!(rms_static_variation > 0.3, "{rms_static_variation}");
        assert!(rms_delta > 0.1, "{rms_delta}");
        assert!(
            rms_static_mismatch < 0.35 * rms_static_variation,
            "static mismatch {rms_static_mismatch} vs variation {rms_static_variation}"
        );
        assert!(
            rms_delta_mismatch < 0.35 * rms_delta,
            "delta mismatch {rms_delta_mismatch} vs delta level {rms_delta}"
        );
    }

    #[test]
    fn too_short_signal_errors() {
        let w = Waveform::new(vec![0.0; 100], 16000);
        assert!(mfcc(&w, 19, true).is_err());
    }
}
