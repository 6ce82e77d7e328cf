//! Short-time Fourier transform and its weighted overlap-add inverse.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::corpus::Waveform;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Complex STFT stored as (magnitude, phase) matrices of shape F x T with
/// F = nfft/2 + 1.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub mag: Mat,
    pub phase: Mat,
    pub sample_rate: u32,
    pub nfft: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.mag.rows()
    }

    pub fn frames(&self) -> usize {
        self.mag.cols()
    }

    /// Width of one frequency bin in Hz.
    pub fn bin_width(&self) -> f64 {
        self.sample_rate as f64 / self.nfft as f64
    }
}

/// Periodic Hamming window (denominator N, suited for overlap-add).
pub fn periodic_hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Symmetric Hamming window (denominator N-1, used for feature framing).
pub fn symmetric_hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Default analysis: 512-point STFT, 32 ms periodic Hamming window,
/// 16 ms hop, at 16 kHz.
pub fn stft(w: &Waveform) -> Result<Spectrogram> {
    if w.sample_rate != crate::corpus::DEFAULT_SAMPLE_RATE {
        return Err(Error::SampleRateMismatch {
            expected: crate::corpus::DEFAULT_SAMPLE_RATE,
            got: w.sample_rate,
        });
    }
    stft_with(w, super::NFFT, super::HOP)
}

/// STFT with explicit frame length and hop.
pub fn stft_with(w: &Waveform, nfft: usize, hop: usize) -> Result<Spectrogram> {
    if w.len() < nfft {
        return Err(Error::TooShort {
            need: nfft,
            got: w.len(),
        });
    }
    let window = periodic_hamming(nfft);
    let n_frames = (w.len() - nfft) / hop + 1;
    let n_bins = nfft / 2 + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);

    let mut mag = Mat::zeros(n_bins, n_frames);
    let mut phase = Mat::zeros(n_bins, n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for t in 0..n_frames {
        let start = t * hop;
        for i in 0..nfft {
            buf[i] = Complex::new(w.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..n_bins {
            let c = buf[f];
            *mag.at_mut(f, t) = c.norm();
            let mut p = c.im.atan2(c.re);
            if p == -std::f64::consts::PI {
                p = std::f64::consts::PI;
            }
            *phase.at_mut(f, t) = p;
        }
    }

    Ok(Spectrogram {
        mag,
        phase,
        sample_rate: w.sample_rate,
        nfft,
        hop,
    })
}

/// Weighted overlap-add inverse: synthesis window equals the analysis
/// window, and the output is divided by the summed squared-window envelope.
/// Output length is (T-1)*hop + nfft.
pub fn istft(spec: &Spectrogram) -> Waveform {
    let nfft = spec.nfft;
    let hop = spec.hop;
    let n_bins = spec.bins();
    let n_frames = spec.frames();
    assert_eq!(n_bins, nfft / 2 + 1, "spectrogram bin count must be nfft/2+1");

    let window = periodic_hamming(nfft);
    let out_len = (n_frames - 1) * hop + nfft;
    let mut acc = vec![0.0f64; out_len];
    let mut wsum = vec![0.0f64; out_len];

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];

    for t in 0..n_frames {
        // Rebuild the full spectrum from the one-sided half.
        for f in 0..n_bins {
            let m = spec.mag.at(f, t);
            let p = spec.phase.at(f, t);
            buf[f] = Complex::from_polar(m, p);
        }
        for f in n_bins..nfft {
            buf[f] = buf[nfft - f].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..nfft {
            // rustfft's inverse is unnormalized.
            let sample = buf[i].re / nfft as f64;
            acc[start + i] += sample * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }

    for (a, w) in acc.iter_mut().zip(&wsum) {
        // Hamming never reaches zero, so the envelope is positive everywhere.
        assert!(*w > 1e-12, "window envelope vanished");
        *a /= *w;
    }

    Waveform::new(acc, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{white_noise, Waveform};
    use approx::assert_abs_diff_eq;

    fn sine(freq: f64, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / 16000.0).sin())
            .collect();
        Waveform::new(samples, 16000)
    }

    #[test]
    fn zero_signal_all_zero_magnitude() {
        let w = Waveform::new(vec![0.0; 2048], 16000);
        let s = stft(&w).unwrap();
        assert!(s.mag.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn bin_width_is_31_25_hz() {
        let s = stft(&sine(440.0, 4096)).unwrap();
        assert_eq!(s.bin_width(), 31.25);
        assert_eq!(s.bins(), 257);
    }

    #[test]
    fn tone_at_1khz_peaks_at_bin_32() {
        let s = stft(&sine(1000.0, 8192)).unwrap();
        // Pick the peak bin of a middle frame.
        let t = s.frames() / 2;
        let peak = (0..s.bins())
            .max_by(|&a, &b| s.mag.at(a, t).partial_cmp(&s.mag.at(b, t)).unwrap())
            .unwrap();
        assert_eq!(peak, 32);
    }

    #[test]
    fn frame_count_arithmetic() {
        for n in [512usize, 513, 767, 768, 1024, 16000] {
            let w = Waveform::new(vec![0.0; n], 16000);
            let s = stft(&w).unwrap();
            assert_eq!(s.frames(), (n - 512) / 256 + 1, "n = {n}");
        }
    }

    #[test]
    fn too_short_signal_errors() {
        let w = Waveform::new(vec![0.0; 511], 16000);
        assert!(matches!(stft(&w), Err(Error::TooShort { .. })));
    }

    #[test]
    fn round_trip_reconstruction_above_60_db() {
        let w = white_noise(16000, 3);
        let rebuilt = istft(&stft(&w).unwrap());
        // Compare on the interior, excluding one frame length at each edge.
        let lo = 512;
        let hi = w.len() - 512;
        let mut sig = 0.0;
        let mut err = 0.0;
        for i in lo..hi {
            sig += w.samples[i] * w.samples[i];
            let d = w.samples[i] - rebuilt.samples[i];
            err += d * d;
        }
        let snr = 10.0 * (sig / err.max(1e-300)).log10();
        assert!(snr > 60.0, "reconstruction SNR {snr} dB");
    }

    #[test]
    fn all_zero_spectrogram_gives_zero_waveform() {
        let w = Waveform::new(vec![0.0; 4096], 16000);
        let out = istft(&stft(&w).unwrap());
        assert!(out.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn magnitude_scaling_is_linear() {
        let w = white_noise(4096, 5);
        let mut s = stft(&w).unwrap();
        let base = istft(&s);
        for v in s.mag.data_mut() {
            *v *= 2.5;
        }
        let scaled = istft(&s);
        for i in 0..base.len() {
            assert_abs_diff_eq!(scaled.samples[i], 2.5 * base.samples[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn stft_of_scaled_signal_scales_magnitude_keeps_phase() {
        let w = white_noise(2048, 8);
        let w2 = Waveform::new(w.samples.iter().map(|s| 3.0 * s).collect(), 16000);
        let a = stft(&w).unwrap();
        let b = stft(&w2).unwrap();
        for i in 0..a.mag.data().len() {
            assert_abs_diff_eq!(b.mag.data()[i], 3.0 * a.mag.data()[i], epsilon = 1e-9);
            if a.mag.data()[i] > 1e-9 {
                assert_abs_diff_eq!(b.phase.data()[i], a.phase.data()[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn parseval_energy_tracks_signal_energy() {
        // One-sided spectrum with doubled interior bins, compensated by the
        // windowed-frame overlap factor, matches the time-domain energy
        // within 1% on the frame-covered span.
        let w = white_noise(32000, 17);
        let s = stft(&w).unwrap();
        let window = periodic_hamming(512);
        let win_energy: f64 = window.iter().map(|v| v * v).sum();

        let mut spec_energy = 0.0;
        for f in 0..s.bins() {
            let weight = if f == 0 || f == s.bins() - 1 { 1.0 } else { 2.0 };
            for t in 0..s.frames() {
                let m = s.mag.at(f, t);
                spec_energy += weight * m * m;
            }
        }
        spec_energy /= 512.0; // DFT energy normalization
        spec_energy /= win_energy / 256.0; // window + overlap compensation

        let covered = (s.frames() - 1) * 256 + 512;
        let sig_energy: f64 = w.samples[..covered].iter().map(|v| v * v).sum();
        let rel = (spec_energy - sig_energy).abs() / sig_energy;
        assert!(rel < 0.01, "Parseval relative error {rel}");
    }
}
