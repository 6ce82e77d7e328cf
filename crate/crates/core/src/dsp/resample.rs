//! Bandlimited sinc resampling (used for the 16 kHz -> 10 kHz conversion in
//! the intelligibility metric and for ingesting odd-rate files).

use crate::corpus::Waveform;

const HALF_TAPS: isize = 32;

/// Resample to `to_rate` with windowed-sinc interpolation. The cutoff sits
/// at the lower of the two Nyquist frequencies.
pub fn resample(w: &Waveform, to_rate: u32) -> Waveform {
    if w.sample_rate == to_rate {
        return w.clone();
    }
    let from = w.sample_rate as f64;
    let to = to_rate as f64;
    let ratio = to / from;
    let out_len = ((w.len() as f64) * ratio).floor() as usize;
    // Cutoff as a fraction of the input Nyquist.
    let fc = ratio.min(1.0) * 0.5;

    let hann = |t: f64| -> f64 {
        let u = t / HALF_TAPS as f64;
        if u.abs() >= 1.0 {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * u).cos())
        }
    };
    let sinc = |t: f64| -> f64 {
        if t.abs() < 1e-12 {
            1.0
        } else {
            let pt = std::f64::consts::PI * t;
            pt.sin() / pt
        }
    };

    let n = w.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let pos = j as f64 / ratio;
        let n0 = pos.floor() as isize;
        let frac = pos - n0 as f64;
        let mut acc = 0.0;
        for i in -HALF_TAPS + 1..=HALF_TAPS {
            let idx = n0 + i;
            if idx < 0 || idx >= n {
                continue;
            }
            let t = i as f64 - frac;
            acc += w.samples[idx as usize] * 2.0 * fc * sinc(2.0 * fc * t) * hann(t);
        }
        out.push(acc);
    }
    Waveform::new(out, to_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate)
    }

    #[test]
    fn preserves_tone_frequency_and_amplitude() {
        let w = tone(1000.0, 16000, 16000);
        let r = resample(&w, 10000);
        assert_eq!(r.sample_rate, 10000);
        assert_eq!(r.len(), 10000);
        // Compare against an analytically resampled tone on the interior.
        let mut err = 0.0;
        let mut sig = 0.0;
        for j in 100..r.len() - 100 {
            let expect = (std::f64::consts::TAU * 1000.0 * j as f64 / 10000.0).sin();
            sig += expect * expect;
            let d = r.samples[j] - expect;
            err += d * d;
        }
        let snr = 10.0 * (sig / err).log10();
        assert!(snr > 40.0, "resampled tone SNR {snr} dB");
    }

    #[test]
    fn removes_content_above_target_nyquist() {
        // 6.5 kHz is above the 5 kHz target Nyquist and must vanish.
        let w = tone(6500.0, 16000, 16000);
        let r = resample(&w, 10000);
        let rms = r.power().sqrt();
        assert!(rms < 0.02, "stopband leakage rms {rms}");
    }
}
