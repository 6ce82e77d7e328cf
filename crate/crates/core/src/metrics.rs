//! Objective evaluation: STOI intelligibility, segmental-SNR and
//! log-spectral-distance proxies, and per-condition report generation.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::corpus::{load_wav, Condition, Manifest, NoiseType, Split, Waveform};
use crate::dsp::resample;
use crate::enhance::Enhancer;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// STOI
// ---------------------------------------------------------------------------

const STOI_RATE: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_HOP: usize = 128;
const STOI_FFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_LOWEST_CF: f64 = 150.0;
const STOI_SEG_FRAMES: usize = 30; // 384 ms at the 10 kHz frame grid
const SILENCE_RANGE_DB: f64 = 40.0;
const CLIP_DB: f64 = -15.0;

/// MATLAB-style symmetric Hann without zero endpoints.
fn hanning(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * (i as f64 + 1.0) / (n as f64 + 1.0)).cos()))
        .collect()
}

/// Drop frames more than 40 dB below the loudest clean frame, overlap-add
/// the survivors back together (both signals framed identically).
fn remove_silent_frames(x: &[f64], y: &[f64], n: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let w = hanning(n);
    let mut starts = Vec::new();
    let mut s = 0;
    while s + n <= x.len() {
        starts.push(s);
        s += k;
    }
    if starts.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let energy_db: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = x[s..s + n]
                .iter()
                .zip(&w)
                .map(|(v, wv)| (v * wv) * (v * wv))
                .sum();
            10.0 * (e.max(1e-300)).log10()
        })
        .collect();
    let max_db = energy_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy_db)
        .filter(|(_, &e)| e - max_db + SILENCE_RANGE_DB > 0.0)
        .map(|(&s, _)| s)
        .collect();
    let out_len = (kept.len().saturating_sub(1)) * k + n;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (count, &s) in kept.iter().enumerate() {
        let o = count * k;
        for i in 0..n {
            xs[o + i] += x[s + i] * w[i];
            ys[o + i] += y[s + i] * w[i];
        }
    }
    (xs, ys)
}

/// One-third-octave band energies over the half spectrum: 15 bands with the
/// lowest center at 150 Hz; each FFT bin belongs to the band whose edges
/// (a sixth of an octave either side of the center) contain it.
fn third_octave_bands() -> Vec<(f64, f64)> {
    (0..STOI_BANDS)
        .map(|k| {
            let cf = STOI_LOWEST_CF * 2f64.powf(k as f64 / 3.0);
            (cf / 2f64.powf(1.0 / 6.0), cf * 2f64.powf(1.0 / 6.0))
        })
        .collect()
}

fn band_envelopes(sig: &[f64]) -> Vec<Vec<f64>> {
    let w = hanning(STOI_FRAME);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(STOI_FFT);
    let n_bins = STOI_FFT / 2 + 1;
    let bin_hz = STOI_RATE as f64 / STOI_FFT as f64;
    let bands = third_octave_bands();

    let mut frames = Vec::new();
    let mut s = 0;
    while s + STOI_FRAME <= sig.len() {
        let mut buf = vec![Complex::new(0.0, 0.0); STOI_FFT];
        for i in 0..STOI_FRAME {
            buf[i] = Complex::new(sig[s + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        let env: Vec<f64> = bands
            .iter()
            .map(|&(lo, hi)| {
                let mut e = 0.0;
                for (k, p) in power.iter().enumerate() {
                    let f = k as f64 * bin_hz;
                    if f >= lo && f < hi {
                        e += p;
                    }
                }
                e.sqrt()
            })
            .collect();
        frames.push(env);
        s += STOI_HOP;
    }
    frames
}

/// Short-time objective intelligibility of `processed` against `clean`.
/// Both are resampled to 10 kHz; silent clean frames are removed; band
/// envelopes are compared by correlation over 384 ms segments with the
/// processed envelope normalized and clipped at -15 dB SDR.
pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    if clean.sample_rate != processed.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: clean.sample_rate,
            got: processed.sample_rate,
        });
    }
    let n = clean.len().min(processed.len());
    let c10 = resample(&Waveform::new(clean.samples[..n].to_vec(), clean.sample_rate), STOI_RATE);
    let p10 = resample(
        &Waveform::new(processed.samples[..n].to_vec(), processed.sample_rate),
        STOI_RATE,
    );
    let (xs, ys) = remove_silent_frames(&c10.samples, &p10.samples, STOI_FRAME, STOI_HOP);

    let x_env = band_envelopes(&xs);
    let y_env = band_envelopes(&ys);
    let m = x_env.len().min(y_env.len());
    if m < STOI_SEG_FRAMES {
        return Err(Error::TooShort {
            need: STOI_SEG_FRAMES,
            got: m,
        });
    }

    let clip = 10f64.powf(-CLIP_DB / 20.0); // 1 + 10^(15/20) handled below
    let clip_factor = 1.0 + clip;
    let mut total = 0.0;
    let mut count = 0usize;
    for seg_end in STOI_SEG_FRAMES..=m {
        let range = seg_end - STOI_SEG_FRAMES..seg_end;
        for j in 0..STOI_BANDS {
            let x: Vec<f64> = range.clone().map(|t| x_env[t][j]).collect();
            let y: Vec<f64> = range.clone().map(|t| y_env[t][j]).collect();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if ny > 0.0 { nx / ny } else { 0.0 };
            let y_clipped: Vec<f64> = y
                .iter()
                .zip(&x)
                .map(|(yv, xv)| (alpha * yv).min(clip_factor * xv))
                .collect();
            total += correlation(&x, &y_clipped);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let da = a - mx;
        let db = b - my;
        num += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx <= 1e-20 || vy <= 1e-20 {
        // Degenerate segments: identical flats correlate perfectly,
        // anything else not at all.
        let same = x
            .iter()
            .zip(y)
            .all(|(a, b)| (a - b).abs() <= 1e-10 * a.abs().max(1.0));
        return if same { 1.0 } else { 0.0 };
    }
    num / (vx.sqrt() * vy.sqrt())
}

// ---------------------------------------------------------------------------
// Quality proxies
// ---------------------------------------------------------------------------

const SEG_FRAME: usize = 512; // 32 ms at 16 kHz
const SEG_CLAMP_LO: f64 = -10.0;
const SEG_CLAMP_HI: f64 = 35.0;

/// Mean segmental SNR over active 32 ms frames, per-frame clamped to
/// [-10, 35] dB. Frames more than 40 dB below the loudest clean frame are
/// excluded.
pub fn seg_snr(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    let n = clean.len().min(processed.len());
    if n < SEG_FRAME {
        return Err(Error::TooShort {
            need: SEG_FRAME,
            got: n,
        });
    }
    let energies: Vec<f64> = (0..n / SEG_FRAME)
        .map(|f| {
            clean.samples[f * SEG_FRAME..(f + 1) * SEG_FRAME]
                .iter()
                .map(|v| v * v)
                .sum()
        })
        .collect();
    let max_e = energies.iter().cloned().fold(0.0f64, f64::max);
    if max_e == 0.0 {
        return Err(Error::SilentSignal);
    }
    let thresh = max_e * 10f64.powf(-SILENCE_RANGE_DB / 10.0);

    let mut total = 0.0;
    let mut count = 0usize;
    for (f, &e) in energies.iter().enumerate() {
        if e < thresh {
            continue;
        }
        let err: f64 = clean.samples[f * SEG_FRAME..(f + 1) * SEG_FRAME]
            .iter()
            .zip(&processed.samples[f * SEG_FRAME..(f + 1) * SEG_FRAME])
            .map(|(c, p)| (c - p) * (c - p))
            .sum();
        let snr = if err == 0.0 {
            SEG_CLAMP_HI
        } else {
            (10.0 * (e / err).log10()).clamp(SEG_CLAMP_LO, SEG_CLAMP_HI)
        };
        total += snr;
        count += 1;
    }
    Ok(total / count as f64)
}

/// RMS log-spectral distance in dB over active frames, all bins.
pub fn lsd(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    let eps = 1e-8;
    let n = clean.len().min(processed.len());
    let c = crate::dsp::stft(&Waveform::new(clean.samples[..n].to_vec(), clean.sample_rate))?;
    let p = crate::dsp::stft(&Waveform::new(
        processed.samples[..n].to_vec(),
        processed.sample_rate,
    ))?;
    let frames = c.frames().min(p.frames());

    let frame_energy: Vec<f64> = (0..frames)
        .map(|t| (0..c.bins()).map(|f| c.mag.at(f, t).powi(2)).sum())
        .collect();
    let max_e = frame_energy.iter().cloned().fold(0.0f64, f64::max);
    if max_e == 0.0 {
        return Err(Error::SilentSignal);
    }
    let thresh = max_e * 10f64.powf(-SILENCE_RANGE_DB / 10.0);

    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..frames {
        if frame_energy[t] < thresh {
            continue;
        }
        for f in 0..c.bins() {
            let d = 20.0 * ((c.mag.at(f, t) + eps) / (p.mag.at(f, t) + eps)).log10();
            total += d * d;
            count += 1;
        }
    }
    Ok((total / count as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub front_end: String,
    pub noise: NoiseType,
    pub snr_db: f64,
    pub stoi: f64,
    pub seg_snr: f64,
    pub lsd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMean {
    pub front_end: String,
    pub noise: NoiseType,
    pub stoi: f64,
    pub seg_snr: f64,
    pub lsd: f64,
}

/// Per-(front-end, noise, SNR) metric grid with per-condition means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
    pub means: Vec<EvalMean>,
}

impl EvalReport {
    /// The mean rows must equal the arithmetic mean of their SNR cells.
    pub fn mean_consistency_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for m in &self.means {
            let cells: Vec<&EvalCell> = self
                .cells
                .iter()
                .filter(|c| c.front_end == m.front_end && c.noise == m.noise)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let n = cells.len() as f64;
            let avg = |f: fn(&EvalCell) -> f64| cells.iter().map(|c| f(c)).sum::<f64>() / n;
            worst = worst
                .max((avg(|c| c.stoi) - m.stoi).abs())
                .max((avg(|c| c.seg_snr) - m.seg_snr).abs())
                .max((avg(|c| c.lsd) - m.lsd).abs());
        }
        worst
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("front_end,noise,snr,stoi,seg_snr,lsd\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                c.front_end, c.noise, c.snr_db, c.stoi, c.seg_snr, c.lsd
            ));
        }
        for m in &self.means {
            out.push_str(&format!(
                "{},{},mean,{:.6},{:.6},{:.6}\n",
                m.front_end, m.noise, m.stoi, m.seg_snr, m.lsd
            ));
        }
        out
    }

    /// Aligned text table, one block per noise type.
    pub fn to_table(&self) -> String {
        let mut snrs: Vec<f64> = self.cells.iter().map(|c| c.snr_db).collect();
        snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        snrs.dedup();
        let mut noises: Vec<NoiseType> = self.cells.iter().map(|c| c.noise).collect();
        noises.dedup();
        noises.sort_by_key(|n| n.as_str());
        let mut fes: Vec<String> = self.cells.iter().map(|c| c.front_end.clone()).collect();
        fes.dedup();
        fes.sort();

        let mut out = String::new();
        for noise in &noises {
            out.push_str(&format!("== {noise} (STOI)\n"));
            out.push_str(&format!("{:<16}", "front_end"));
            for s in &snrs {
                out.push_str(&format!("{s:>8}"));
            }
            out.push_str(&format!("{:>8}\n", "mean"));
            for fe in &fes {
                out.push_str(&format!("{fe:<16}"));
                for s in &snrs {
                    match self.cells.iter().find(|c| {
                        &c.front_end == fe && c.noise == *noise && c.snr_db == *s
                    }) {
                        Some(c) => out.push_str(&format!("{:>8.3}", c.stoi)),
                        None => out.push_str(&format!("{:>8}", "-")),
                    }
                }
                match self
                    .means
                    .iter()
                    .find(|m| &m.front_end == fe && m.noise == *noise)
                {
                    Some(m) => out.push_str(&format!("{:>8.3}\n", m.stoi)),
                    None => out.push_str(&format!("{:>8}\n", "-")),
                }
            }
        }
        out
    }
}

/// Run every front-end over every noisy test condition in the manifest and
/// fill the metric grid. Deterministic: conditions are processed in sorted
/// order and utterances in manifest order.
pub fn build_report(manifest: &Manifest, enhancers: &[&dyn Enhancer]) -> Result<EvalReport> {
    let mut conditions: Vec<(NoiseType, f64)> = Vec::new();
    for e in manifest.in_split(Split::Test) {
        if let Condition::Noisy { noise_type, snr_db } = e.condition {
            if !conditions.contains(&(noise_type, snr_db)) {
                conditions.push((noise_type, snr_db));
            }
        }
    }
    conditions.sort_by(|a, b| {
        a.0.as_str()
            .cmp(b.0.as_str())
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    if conditions.is_empty() {
        return Err(Error::Manifest("no noisy test entries to evaluate".into()));
    }

    let mut cells = Vec::new();
    for enh in enhancers {
        for &(noise, snr) in &conditions {
            let mut acc = (0.0, 0.0, 0.0);
            let mut n = 0usize;
            for e in manifest.in_split(Split::Test) {
                let matches = matches!(
                    e.condition,
                    Condition::Noisy { noise_type, snr_db } if noise_type == noise && snr_db == snr
                );
                if !matches {
                    continue;
                }
                let clean_entry = manifest
                    .entries
                    .iter()
                    .find(|c| {
                        c.is_clean()
                            && c.speaker_id == e.speaker_id
                            && c.text_id == e.text_id
                            && c.session_id == e.session_id
                    })
                    .ok_or_else(|| {
                        Error::Manifest(format!("no clean reference for {:?}", e.utterance_id))
                    })?;
                let noisy = load_wav(manifest.resolve(e))?;
                let clean = load_wav(manifest.resolve(clean_entry))?;
                let enhanced = enh.enhance(&noisy)?;
                acc.0 += stoi(&clean, &enhanced)?;
                acc.1 += seg_snr(&clean, &enhanced)?;
                acc.2 += lsd(&clean, &enhanced)?;
                n += 1;
            }
            if n > 0 {
                cells.push(EvalCell {
                    front_end: enh.name().to_string(),
                    noise,
                    snr_db: snr,
                    stoi: acc.0 / n as f64,
                    seg_snr: acc.1 / n as f64,
                    lsd: acc.2 / n as f64,
                });
            }
        }
    }

    let mut means = Vec::new();
    for enh in enhancers {
        let mut noises: Vec<NoiseType> = cells
            .iter()
            .filter(|c| c.front_end == enh.name())
            .map(|c| c.noise)
            .collect();
        noises.dedup();
        for noise in noises {
            let group: Vec<&EvalCell> = cells
                .iter()
                .filter(|c| c.front_end == enh.name() && c.noise == noise)
                .collect();
            let n = group.len() as f64;
            means.push(EvalMean {
                front_end: enh.name().to_string(),
                noise,
                stoi: group.iter().map(|c| c.stoi).sum::<f64>() / n,
                seg_snr: group.iter().map(|c| c.seg_snr).sum::<f64>() / n,
                lsd: group.iter().map(|c| c.lsd).sum::<f64>() / n,
            });
        }
    }

    Ok(EvalReport { cells, means })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{mix_at_snr, speaker_params, synth_utterance, white_noise};

    fn test_utterance() -> Waveform {
        // Long enough to keep 384 ms of active speech after trimming.
        let a = synth_utterance(1, &speaker_params(1, 0), 1, 1);
        let b = synth_utterance(1, &speaker_params(1, 0), 2, 1);
        let mut samples = a.samples;
        samples.extend(b.samples);
        Waveform::new(samples, 16000)
    }

    #[test]
    fn stoi_self_is_one() {
        let w = test_utterance();
        let s = stoi(&w, &w).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "stoi(x,x) = {s}");
    }

    #[test]
    fn stoi_of_negated_signal_is_one() {
        let w = test_utterance();
        let neg = Waveform::new(w.samples.iter().map(|v| -v).collect(), 16000);
        let s = stoi(&w, &neg).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "stoi(x,-x) = {s}");
    }

    #[test]
    fn stoi_decreases_with_snr() {
        let w = test_utterance();
        let mut prev = f64::INFINITY;
        for &snr in &[20.0, 10.0, 0.0, -10.0] {
            let noise = white_noise(w.len() + 1000, 7);
            let mixed = mix_at_snr(&w, &noise, snr, 3).unwrap();
            let s = stoi(&w, &mixed).unwrap();
            assert!(s < prev, "stoi at {snr} dB = {s}, previous {prev}");
            prev = s;
        }
    }

    #[test]
    fn stoi_scale_invariant() {
        let w = test_utterance();
        let noise = white_noise(w.len() + 1000, 9);
        let mixed = mix_at_snr(&w, &noise, 5.0, 1).unwrap();
        let base = stoi(&w, &mixed).unwrap();
        for &a in &[0.1, 10.0] {
            let scaled = Waveform::new(mixed.samples.iter().map(|v| a * v).collect(), 16000);
            let s = stoi(&w, &scaled).unwrap();
            assert!((s - base).abs() < 1e-6, "scale {a}: {s} vs {base}");
        }
    }

    #[test]
    fn stoi_rejects_too_short_active_region() {
        let w = Waveform::new(vec![0.01; 3000], 16000);
        assert!(matches!(stoi(&w, &w), Err(Error::TooShort { .. })));
    }

    #[test]
    fn seg_snr_anchors() {
        let w = test_utterance();
        // Identical signals hit the clamp ceiling.
        assert_eq!(seg_snr(&w, &w).unwrap(), 35.0);
        // processed = 2x clean: error energy equals clean energy -> 0 dB.
        let double = Waveform::new(w.samples.iter().map(|v| 2.0 * v).collect(), 16000);
        let s = seg_snr(&w, &double).unwrap();
        assert!(s.abs() < 1e-9, "seg_snr {s}");
        // Uncorrelated loud output floors at -10 dB.
        let junk = Waveform::new(
            white_noise(w.len(), 2).samples.iter().map(|v| v * 10.0).collect(),
            16000,
        );
        assert_eq!(seg_snr(&w, &junk).unwrap(), -10.0);
    }

    #[test]
    fn lsd_anchors() {
        let w = test_utterance();
        assert!(lsd(&w, &w).unwrap() < 1e-9);
        // 10x magnitude is 20 dB away on every active bin.
        let loud = Waveform::new(w.samples.iter().map(|v| 10.0 * v).collect(), 16000);
        let d = lsd(&w, &loud).unwrap();
        assert!((d - 20.0).abs() < 0.2, "lsd {d}");
        // Symmetric in the argument order.
        let noise = white_noise(w.len() + 100, 3);
        let mixed = mix_at_snr(&w, &noise, 5.0, 1).unwrap();
        let ab = lsd(&w, &mixed).unwrap();
        let ba = lsd(&mixed, &w).unwrap();
        // Different active-frame selections make this approximate.
        assert!((ab - ba).abs() < 0.5, "{ab} vs {ba}");
    }

    #[test]
    fn report_mean_consistency() {
        let report = EvalReport {
            cells: vec![
                EvalCell {
                    front_end: "none".into(),
                    noise: NoiseType::White,
                    snr_db: 0.0,
                    stoi: 0.5,
                    seg_snr: 1.0,
                    lsd: 10.0,
                },
                EvalCell {
                    front_end: "none".into(),
                    noise: NoiseType::White,
                    snr_db: 5.0,
                    stoi: 0.7,
                    seg_snr: 3.0,
                    lsd: 8.0,
                },
            ],
            means: vec![EvalMean {
                front_end: "none".into(),
                noise: NoiseType::White,
                stoi: 0.6,
                seg_snr: 2.0,
                lsd: 9.0,
            }],
        };
        assert!(report.mean_consistency_error() < 1e-12);
        let csv = report.to_csv();
        assert!(csv.starts_with("front_end,noise,snr,stoi,seg_snr,lsd\n"));
        assert!(csv.contains("none,white,mean,"));
        assert!(report.to_table().contains("== white (STOI)"));
    }
}
