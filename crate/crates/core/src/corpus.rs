//! Waveform I/O, synthetic corpus generation, noise synthesis and
//! SNR-controlled mixing.
//!
//! Everything here is a pure function of its inputs and a 64-bit seed, so a
//! corpus regenerated with the same arguments is byte-identical.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono time-domain signal. Samples are nominally in [-1, 1]; internal
/// processing may exceed the range, clamping happens only when writing PCM.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0);
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean-square power over the whole utterance.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scale all samples so the RMS becomes `target` (no-op on silence).
    pub fn normalize_rms(&mut self, target: f64) {
        let rms = self.rms();
        if rms > 0.0 {
            let g = target / rms;
            for s in &mut self.samples {
                *s *= g;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// WAV I/O (RIFF, PCM16, mono)
// ---------------------------------------------------------------------------

/// Load a RIFF/WAVE file containing 16-bit mono linear PCM.
///
/// Integer samples are scaled by 1/32768. Files whose sample rate is not
/// 16 kHz are rejected; use [`load_wav_resampled`] to accept them.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let w = read_wav_file(path.as_ref())?;
    if w.sample_rate != DEFAULT_SAMPLE_RATE {
        return Err(Error::SampleRateMismatch {
            expected: DEFAULT_SAMPLE_RATE,
            got: w.sample_rate,
        });
    }
    Ok(w)
}

/// Load a PCM16 mono WAV of any sample rate and resample it to 16 kHz.
pub fn load_wav_resampled(path: impl AsRef<Path>) -> Result<Waveform> {
    let w = read_wav_file(path.as_ref())?;
    if w.sample_rate == DEFAULT_SAMPLE_RATE {
        return Ok(w);
    }
    Ok(crate::dsp::resample(&w, DEFAULT_SAMPLE_RATE))
}

fn read_wav_file(path: &Path) -> Result<Waveform> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::wav(path, "not a RIFF/WAVE container"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(Error::wav(path, "truncated chunk"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::wav(path, "fmt chunk too small"));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::wav(path, "missing fmt chunk"))?;
    if format != 1 {
        return Err(Error::wav(path, format!("unsupported encoding {format}")));
    }
    if channels != 1 {
        return Err(Error::wav(path, format!("expected mono, got {channels} channels")));
    }
    if bits != 16 {
        return Err(Error::wav(path, format!("expected 16-bit PCM, got {bits}")));
    }
    let data = data.ok_or_else(|| Error::wav(path, "missing data chunk"))?;

    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, rate))
}

/// Write a waveform as RIFF PCM16 mono. Amplitudes are clamped to [-1, 1]
/// here and nowhere else.
pub fn save_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(44 + w.samples.len() * 2);
    let data_size = (w.samples.len() * 2) as u32;

    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_size).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&w.sample_rate.to_le_bytes());
    buf.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round();
        let i = v.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        buf.extend_from_slice(&i.to_le_bytes());
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// Derive a child seed from a base seed and a string tag (FNV-1a).
/// Keeps every generation step a pure function of (base seed, role).
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in base.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn rng_from(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Noise synthesis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    Babble,
    White,
    CantineLike,
    MarketLike,
    AirplaneLike,
}

impl NoiseType {
    pub const ALL: [NoiseType; 5] = [
        NoiseType::Babble,
        NoiseType::White,
        NoiseType::CantineLike,
        NoiseType::MarketLike,
        NoiseType::AirplaneLike,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseType::Babble => "babble",
            NoiseType::White => "white",
            NoiseType::CantineLike => "cantine_like",
            NoiseType::MarketLike => "market_like",
            NoiseType::AirplaneLike => "airplane_like",
        }
    }

    pub fn parse(s: &str) -> Option<NoiseType> {
        match s {
            "babble" => Some(NoiseType::Babble),
            "white" => Some(NoiseType::White),
            "cantine_like" | "cantine" => Some(NoiseType::CantineLike),
            "market_like" | "market" => Some(NoiseType::MarketLike),
            "airplane_like" | "airplane" => Some(NoiseType::AirplaneLike),
            _ => None,
        }
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mixing condition: noise type, target SNR and the seed that fixes the
/// noise realization and crop offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub noise_type: NoiseType,
    pub snr_db: f64,
    pub seed: u64,
}

/// I.i.d. zero-mean unit-variance Gaussian samples, deterministic per seed.
pub fn white_noise(length: usize, seed: u64) -> Waveform {
    assert!(length > 0, "white_noise needs length > 0");
    let mut rng = rng_from(seed);
    let samples = (0..length)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Waveform::new(samples, DEFAULT_SAMPLE_RATE)
}

/// One-pole low-passed Gaussian noise with tilt `alpha`, unit RMS.
/// Stands in for the cantine/market/airplane recordings.
fn colored_noise(length: usize, seed: u64, alpha: f64) -> Waveform {
    let mut w = white_noise(length, seed);
    let mut prev = 0.0;
    for s in &mut w.samples {
        prev = alpha * prev + (1.0 - alpha) * *s;
        *s = prev;
    }
    w.normalize_rms(1.0);
    w
}

/// Sum of exactly 6 speech signals at seeded random offsets, unit RMS.
pub fn make_babble(speech: &[Waveform], length: usize, seed: u64) -> Result<Waveform> {
    if speech.len() != 6 {
        return Err(Error::BabbleSources { got: speech.len() });
    }
    let mut rng = rng_from(seed);
    let mut sum = vec![0.0f64; length];
    for (i, src) in speech.iter().enumerate() {
        if src.len() < length {
            return Err(Error::TooShort {
                need: length,
                got: src.len(),
            });
        }
        if src.sample_rate != DEFAULT_SAMPLE_RATE {
            return Err(Error::SampleRateMismatch {
                expected: DEFAULT_SAMPLE_RATE,
                got: src.sample_rate,
            });
        }
        let max_off = src.len() - length;
        let off = if max_off == 0 {
            0
        } else {
            rng.gen_range(0..=max_off)
        };
        let _ = i;
        for (d, s) in sum.iter_mut().zip(&src.samples[off..off + length]) {
            *d += *s;
        }
    }
    let mut out = Waveform::new(sum, DEFAULT_SAMPLE_RATE);
    out.normalize_rms(1.0);
    Ok(out)
}

/// Generate a noise signal of the requested kind and length.
/// `babble_pool` must hold at least 6 speech signals when kind is babble;
/// 6 of them are drawn (seeded) as the babble sources.
pub fn make_noise(
    kind: NoiseType,
    length: usize,
    seed: u64,
    babble_pool: &[Waveform],
) -> Result<Waveform> {
    match kind {
        NoiseType::White => Ok(white_noise(length, seed)),
        NoiseType::CantineLike => Ok(colored_noise(length, seed, 0.55)),
        NoiseType::MarketLike => Ok(colored_noise(length, seed, 0.75)),
        NoiseType::AirplaneLike => Ok(colored_noise(length, seed, 0.92)),
        NoiseType::Babble => {
            if babble_pool.len() < 6 {
                return Err(Error::BabbleSources {
                    got: babble_pool.len(),
                });
            }
            let mut rng = rng_from(derive_seed(seed, "babble_pick"));
            let mut idx: Vec<usize> = (0..babble_pool.len()).collect();
            // Partial Fisher-Yates: pick 6 distinct sources.
            for i in 0..6 {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            let sources: Vec<Waveform> = idx[..6]
                .iter()
                .map(|&i| tile_to_length(&babble_pool[i], length))
                .collect();
            make_babble(&sources, length, derive_seed(seed, "babble_sum"))
        }
    }
}

/// Repeat a waveform until it covers at least `length` samples.
fn tile_to_length(w: &Waveform, length: usize) -> Waveform {
    let mut samples = Vec::with_capacity(length);
    while samples.len() < length {
        samples.extend_from_slice(&w.samples);
    }
    samples.truncate(length.max(w.len()));
    Waveform::new(samples, w.sample_rate)
}

/// Add `noise` to `clean` at the requested SNR. A random crop of the noise
/// (seeded offset) is used; powers are full-utterance mean squares.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: clean.sample_rate,
            got: noise.sample_rate,
        });
    }
    if noise.len() < clean.len() {
        return Err(Error::TooShort {
            need: clean.len(),
            got: noise.len(),
        });
    }
    assert!(snr_db.is_finite(), "snr_db must be finite");

    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(Error::SilentSignal);
    }

    let mut rng = rng_from(derive_seed(seed, "crop"));
    let max_off = noise.len() - clean.len();
    let off = if max_off == 0 {
        0
    } else {
        rng.gen_range(0..=max_off)
    };
    let crop = &noise.samples[off..off + clean.len()];
    let p_noise: f64 = crop.iter().map(|s| s * s).sum::<f64>() / crop.len() as f64;
    if p_noise == 0.0 {
        return Err(Error::SilentSignal);
    }

    // g sets 10*log10(p_clean / (g^2 * p_noise)) = snr_db.
    let g = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = clean
        .samples
        .iter()
        .zip(crop)
        .map(|(c, n)| c + g * n)
        .collect();
    Ok(Waveform::new(samples, clean.sample_rate))
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Ubm,
    EnhancerTrain,
    Enroll,
    Test,
}

impl Split {
    pub fn prefix(&self) -> &'static str {
        match self {
            Split::Ubm => "ubm",
            Split::EnhancerTrain => "tr",
            Split::Enroll => "enr",
            Split::Test => "tst",
        }
    }
}

/// Acoustic condition of a manifest entry: "clean" or a noise/SNR pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Clean,
    Noisy { noise_type: NoiseType, snr_db: f64 },
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Condition::Clean => s.serialize_str("clean"),
            Condition::Noisy { noise_type, snr_db } => {
                use serde::ser::SerializeStruct;
                let mut st = s.serialize_struct("Condition", 2)?;
                st.serialize_field("noise_type", noise_type)?;
                st.serialize_field("snr_db", snr_db)?;
                st.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Label(String),
            Mix { noise_type: NoiseType, snr_db: f64 },
        }
        match Raw::deserialize(d)? {
            Raw::Label(s) if s == "clean" => Ok(Condition::Clean),
            Raw::Label(s) => Err(D::Error::custom(format!("unknown condition label {s:?}"))),
            Raw::Mix { noise_type, snr_db } => Ok(Condition::Noisy { noise_type, snr_db }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub text_id: u32,
    pub session_id: u32,
    /// Path relative to the manifest file's directory.
    pub file_path: PathBuf,
    pub condition: Condition,
}

impl ManifestEntry {
    pub fn split(&self) -> Option<Split> {
        let p = self.utterance_id.split('_').next()?;
        match p {
            "ubm" => Some(Split::Ubm),
            "tr" => Some(Split::EnhancerTrain),
            "enr" => Some(Split::Enroll),
            "tst" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.condition == Condition::Clean
    }
}

/// Utterance catalog; one JSON object per line on disk. Paths are stored
/// relative to the manifest file and resolved against `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Manifest {
            base_dir: base_dir.into(),
            entries: Vec::new(),
        }
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.file_path)
    }

    pub fn in_split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split() == Some(split))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Load and validate: utterance ids unique, every file resolvable.
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::Manifest(format!("line {}: {err}", i + 1)))?;
            if !seen.insert(e.utterance_id.clone()) {
                return Err(Error::Manifest(format!(
                    "duplicate utterance_id {:?}",
                    e.utterance_id
                )));
            }
            let p = base_dir.join(&e.file_path);
            if !p.exists() {
                return Err(Error::Manifest(format!("missing file {}", p.display())));
            }
            entries.push(e);
        }
        Ok(Manifest { base_dir, entries })
    }
}

// ---------------------------------------------------------------------------
// Synthetic speech corpus
// ---------------------------------------------------------------------------

/// Per-speaker voice parameters; exposed so tests can check that distinct
/// speakers get distinct voices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerParams {
    pub pitch_base_hz: f64,
    pub formant_scale: f64,
}

pub fn speaker_params(seed: u64, speaker_idx: u32) -> SpeakerParams {
    let mut rng = rng_from(derive_seed(seed, &format!("speaker{speaker_idx}")));
    SpeakerParams {
        pitch_base_hz: rng.gen_range(85.0..220.0),
        formant_scale: rng.gen_range(0.85..1.15),
    }
}

// Vowel formant targets (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0], // a
    [530.0, 1840.0, 2480.0], // e
    [270.0, 2290.0, 3010.0], // i
    [570.0, 840.0, 2410.0],  // o
    [300.0, 870.0, 2240.0],  // u
];

struct Segment {
    formants: [f64; 3],
    samples: usize,
}

/// Synthesize one speech-like utterance: glottal pulse train through three
/// formant resonators with a randomized pitch contour plus breath noise.
pub fn synth_utterance(seed: u64, speaker: &SpeakerParams, text_id: u32, session_id: u32) -> Waveform {
    let fs = DEFAULT_SAMPLE_RATE as f64;
    let mut text_rng = rng_from(derive_seed(seed, &format!("text{text_id}")));
    let mut sess_rng = rng_from(derive_seed(
        seed,
        &format!("utt_t{text_id}_s{session_id}_p{}", speaker.pitch_base_hz.to_bits()),
    ));

    // Text fixes the vowel sequence and base durations; the session only
    // perturbs timing and pitch so repeated sessions stay recognizable.
    let n_seg = text_rng.gen_range(5..=7);
    let mut segments = Vec::with_capacity(n_seg);
    for _ in 0..n_seg {
        let v = VOWELS[text_rng.gen_range(0..VOWELS.len())];
        let base_dur = text_rng.gen_range(0.14..0.26);
        let dur = base_dur * sess_rng.gen_range(0.95..1.05);
        segments.push(Segment {
            formants: v,
            samples: (dur * fs) as usize,
        });
    }

    let lead_in = (0.08 * fs) as usize; // speech-free head for noise PSD init
    let lead_out = (0.05 * fs) as usize;
    let voiced: usize = segments.iter().map(|s| s.samples).sum();
    let total = (lead_in + voiced + lead_out).max((1.2 * fs) as usize + 1);

    let phi = sess_rng.gen_range(0.0..std::f64::consts::TAU);
    let vibrato_hz = sess_rng.gen_range(2.0..3.5);
    let mut resonators = [Resonator::default(), Resonator::default(), Resonator::default()];
    let mut out = vec![0.0f64; total];
    let mut phase = 0.0f64;
    let mut breath = rng_from(derive_seed(seed, &format!("breath_t{text_id}_s{session_id}")));

    let transition = (0.020 * fs) as usize;
    let mut pos = lead_in;
    let mut prev_formants = segments[0].formants;
    for seg in &segments {
        for i in 0..seg.samples {
            let n = pos + i;
            if n >= total - lead_out {
                break;
            }
            let t = n as f64 / fs;
            // Interpolate formants over the first 20 ms of the segment.
            let blend = (i as f64 / transition as f64).min(1.0);
            let mut f = [0.0; 3];
            for k in 0..3 {
                f[k] = (prev_formants[k] * (1.0 - blend) + seg.formants[k] * blend)
                    * speaker.formant_scale;
            }

            let f0 = speaker.pitch_base_hz
                * (1.0 + 0.06 * (std::f64::consts::TAU * vibrato_hz * t + phi).sin())
                * (1.0 - 0.08 * n as f64 / total as f64);
            phase += f0 / fs;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let noise: f64 = StandardNormal.sample(&mut breath);
            let excitation = pulse + 0.015 * noise;

            // Amplitude envelope with 10 ms ramps at segment edges.
            let ramp = 0.010 * fs;
            let env_in = (i as f64 / ramp).min(1.0);
            let env_out = ((seg.samples - i) as f64 / ramp).min(1.0);
            let env = env_in.min(env_out);

            let mut y = 0.0;
            for (k, r) in resonators.iter_mut().enumerate() {
                let bw = 80.0 + 30.0 * k as f64;
                y += r.tick(excitation, f[k], bw, fs) * (1.0 / (k + 1) as f64);
            }
            out[n] += y * env;
        }
        pos += seg.samples;
        prev_formants = seg.formants;
        if pos >= total - lead_out {
            break;
        }
    }

    // Low-level noise floor everywhere (keeps the head region "speech-free
    // but not digitally silent").
    for s in out.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut breath);
        *s += 1e-5 * n;
    }

    let mut w = Waveform::new(out, DEFAULT_SAMPLE_RATE);
    // Normalize speech level, leaving the quiet head proportionally quiet.
    let target = 0.1;
    let rms = w.rms();
    if rms > 0.0 {
        let g = target / rms;
        for s in &mut w.samples {
            *s *= g;
        }
    }
    w
}

/// Two-pole resonator with per-sample retuning.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tick(&mut self, x: f64, fc: f64, bw: f64, fs: f64) -> f64 {
        let r = (-std::f64::consts::PI * bw / fs).exp();
        let theta = std::f64::consts::TAU * fc / fs;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        let g = (1.0 - r) * (1.0 - r); // rough unity-ish gain at resonance
        let y = g * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Generate a synthetic corpus and write it under `out_dir`.
///
/// Speakers are partitioned into UBM / enhancer-train / eval groups; eval
/// speakers contribute enroll and test sessions of a shared pass-phrase
/// (text 1), the other groups contribute distinct texts.
pub fn synth_corpus(
    out_dir: impl AsRef<Path>,
    n_speakers: u32,
    utterances_per_speaker: u32,
    seed: u64,
) -> Result<Manifest> {
    if n_speakers < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 speakers, got {n_speakers}"
        )));
    }
    if utterances_per_speaker == 0 {
        return Err(Error::InvalidArgument("need at least 1 utterance per speaker".into()));
    }
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("clean");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let n = n_speakers;
    let m = utterances_per_speaker;
    let n_eval = (n / 3).max(2).min(n);
    let rem = n - n_eval;
    let n_ubm = rem.div_ceil(2);

    let mut manifest = Manifest::new(out_dir);
    for spk in 0..n {
        let params = speaker_params(seed, spk);
        let speaker_id = format!("spk{spk:03}");
        let is_eval = spk >= rem;
        let split = if is_eval {
            None // decided per session below
        } else if spk < n_ubm {
            Some(Split::Ubm)
        } else {
            Some(Split::EnhancerTrain)
        };

        for u in 0..m {
            // Eval speakers repeat text 1 across sessions; others get
            // distinct texts in a single session.
            let (text_id, session_id, split) = if is_eval {
                let enroll_sessions = m.div_ceil(2);
                let sp = if u < enroll_sessions {
                    Split::Enroll
                } else {
                    Split::Test
                };
                (1, u + 1, sp)
            } else {
                (u + 2, 1, split.unwrap())
            };

            let w = synth_utterance(
                derive_seed(seed, &format!("spk{spk}")),
                &params,
                text_id,
                session_id,
            );
            let utterance_id = format!(
                "{}_{}_t{:02}_s{:02}",
                split.prefix(),
                speaker_id,
                text_id,
                session_id
            );
            let rel = PathBuf::from("clean").join(format!("{utterance_id}.wav"));
            save_wav(out_dir.join(&rel), &w)?;
            manifest.entries.push(ManifestEntry {
                utterance_id,
                speaker_id: speaker_id.clone(),
                text_id,
                session_id,
                file_path: rel,
                condition: Condition::Clean,
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use std::path::PathBuf;

    /// Fresh scratch directory for file-writing tests.
    pub(crate) fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "senh-test-{}-{:x}",
            std::process::id(),
            rand::random::<u64>()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::tempdir;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pcm16_scaling_by_definition() {
        let dir = tempdir();
        let w = Waveform::new(vec![32767.0 / 32768.0, 0.0, -1.0], 16000);
        let p = dir.join("x.wav");
        save_wav(&p, &w).unwrap();
        let r = load_wav(&p).unwrap();
        assert_abs_diff_eq!(r.samples[0], 32767.0 / 32768.0, epsilon = 1e-12);
        assert_eq!(r.samples[1], 0.0);
    }

    #[test]
    fn all_zero_file_round_trips() {
        let dir = tempdir();
        let w = Waveform::new(vec![0.0; 500], 16000);
        let p = dir.join("z.wav");
        save_wav(&p, &w).unwrap();
        let r = load_wav(&p).unwrap();
        assert_eq!(r.samples, vec![0.0; 500]);
        assert_eq!(r.sample_rate, 16000);
    }

    #[test]
    fn save_load_save_is_byte_exact() {
        let dir = tempdir();
        let w = white_noise(4096, 7);
        let p1 = dir.join("a.wav");
        let p2 = dir.join("b.wav");
        save_wav(&p1, &w).unwrap();
        let r = load_wav(&p1).unwrap();
        save_wav(&p2, &r).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn wrong_rate_rejected_without_resample() {
        let dir = tempdir();
        let w = Waveform::new(vec![0.1; 100], 8000);
        let p = dir.join("r8k.wav");
        save_wav(&p, &w).unwrap();
        assert!(matches!(
            load_wav(&p),
            Err(Error::SampleRateMismatch { got: 8000, .. })
        ));
        let r = load_wav_resampled(&p).unwrap();
        assert_eq!(r.sample_rate, 16000);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_wav("/nonexistent/definitely_not_here.wav"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn mix_at_0db_equalizes_power() {
        let clean = synth_utterance(3, &speaker_params(3, 0), 1, 1);
        let noise = white_noise(clean.len() + 8000, 11);
        let mixed = mix_at_snr(&clean, &noise, 0.0, 5).unwrap();
        // Recover the noise component and compare powers.
        let noise_part: Vec<f64> = mixed
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(m, c)| m - c)
            .collect();
        let p_noise = noise_part.iter().map(|x| x * x).sum::<f64>() / noise_part.len() as f64;
        let rel = (p_noise - clean.power()).abs() / clean.power();
        assert!(rel < 1e-9, "0 dB mix power relative error {rel}");
    }

    #[test]
    fn mix_hits_requested_snr_on_grid() {
        let clean = synth_utterance(4, &speaker_params(4, 1), 2, 1);
        for &snr in &[0.0, 5.0, 10.0, 15.0, 20.0] {
            let noise = white_noise(clean.len() + 100, 21);
            let mixed = mix_at_snr(&clean, &noise, snr, 9).unwrap();
            assert_eq!(mixed.len(), clean.len());
            let noise_part: Vec<f64> = mixed
                .samples
                .iter()
                .zip(&clean.samples)
                .map(|(m, c)| m - c)
                .collect();
            let p_noise = noise_part.iter().map(|x| x * x).sum::<f64>() / noise_part.len() as f64;
            let measured = 10.0 * (clean.power() / p_noise).log10();
            assert!(
                (measured - snr).abs() < 1e-6,
                "snr {snr}: measured {measured}"
            );
        }
    }

    #[test]
    fn mix_rejects_silent_clean() {
        let clean = Waveform::new(vec![0.0; 1000], 16000);
        let noise = white_noise(2000, 1);
        assert!(matches!(
            mix_at_snr(&clean, &noise, 0.0, 1),
            Err(Error::SilentSignal)
        ));
    }

    #[test]
    fn babble_needs_six_sources() {
        let srcs: Vec<Waveform> = (0..5).map(|i| white_noise(1000, i)).collect();
        assert!(matches!(
            make_babble(&srcs, 500, 0),
            Err(Error::BabbleSources { got: 5 })
        ));
    }

    #[test]
    fn babble_output_is_unit_rms() {
        let srcs: Vec<Waveform> = (0..6).map(|i| white_noise(3000, 100 + i)).collect();
        let b = make_babble(&srcs, 3000, 42).unwrap();
        assert_abs_diff_eq!(b.rms(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn babble_of_identical_sines_is_coherent_sum_renormalized() {
        // 6 identical unit-RMS sinusoids at zero offset: the sum is 6x one
        // of them, and renormalization brings RMS back to 1.
        let n = 1600;
        let sine: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 200.0 * i as f64 / 16000.0).sin() * 2f64.sqrt())
            .collect();
        let srcs: Vec<Waveform> = (0..6)
            .map(|_| Waveform::new(sine.clone(), 16000))
            .collect();
        let b = make_babble(&srcs, n, 0).unwrap(); // offsets forced 0: equal lengths
        assert_abs_diff_eq!(b.rms(), 1.0, epsilon = 1e-9);
        // Shape matches the source up to scale.
        let scale = b.samples[10] / sine[10];
        for i in 0..n {
            assert_abs_diff_eq!(b.samples[i], sine[i] * scale, epsilon = 1e-9);
        }
    }

    #[test]
    fn white_noise_is_deterministic_and_calibrated() {
        let a = white_noise(1_000_000, 9);
        let b = white_noise(1_000_000, 9);
        assert_eq!(a.samples, b.samples);
        let mean = a.samples.iter().sum::<f64>() / a.len() as f64;
        let var = a.power() - mean * mean;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn white_noise_spectrum_is_flat() {
        // Welch-style average over 200 frames of 512: per-bin deviation from
        // the mean PSD below 1.5 dB.
        let nfft = 512;
        let frames = 200;
        let w = white_noise(nfft * frames, 1234);
        let spec = crate::dsp::stft_with(&w, nfft, nfft).unwrap();
        let f_bins = spec.mag.rows();
        let t = spec.mag.cols();
        let mut psd = vec![0.0f64; f_bins];
        for f in 0..f_bins {
            for frame in 0..t {
                let m = spec.mag.at(f, frame);
                psd[f] += m * m;
            }
            psd[f] /= t as f64;
        }
        // Skip DC and Nyquist (half-width bins under a one-sided spectrum).
        let inner = &psd[1..f_bins - 1];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        for (i, p) in inner.iter().enumerate() {
            let dev_db = 10.0 * (p / mean).log10();
            assert!(dev_db.abs() < 1.5, "bin {}: {dev_db} dB", i + 1);
        }
    }

    #[test]
    fn corpus_is_byte_identical_on_rerun() {
        let d1 = tempdir();
        let d2 = tempdir();
        let m1 = synth_corpus(&d1, 4, 2, 77).unwrap();
        let m2 = synth_corpus(&d2, 4, 2, 77).unwrap();
        assert_eq!(m1.entries, m2.entries);
        for (e1, e2) in m1.entries.iter().zip(&m2.entries) {
            let b1 = std::fs::read(m1.resolve(e1)).unwrap();
            let b2 = std::fs::read(m2.resolve(e2)).unwrap();
            assert_eq!(b1, b2, "wav bytes differ for {}", e1.utterance_id);
        }
        let p1 = d1.join("manifest.jsonl");
        let p2 = d2.join("manifest.jsonl");
        m1.save(&p1).unwrap();
        m2.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn distinct_speakers_get_distinct_pitch() {
        let a = speaker_params(5, 0);
        let b = speaker_params(5, 1);
        assert_ne!(a.pitch_base_hz, b.pitch_base_hz);
    }

    #[test]
    fn utterances_are_long_enough_for_noise_init() {
        let m = synth_corpus(tempdir(), 3, 2, 123).unwrap();
        for e in &m.entries {
            let w = load_wav(m.resolve(e)).unwrap();
            assert!(w.len() >= 19200, "{} has {} samples", e.utterance_id, w.len());
        }
    }

    #[test]
    fn manifest_round_trip_and_splits_disjoint() {
        let dir = tempdir();
        let m = synth_corpus(&dir, 8, 4, 9).unwrap();
        let p = dir.join("manifest.jsonl");
        m.save(&p).unwrap();
        let r = Manifest::load(&p).unwrap();
        assert_eq!(r.entries, m.entries);

        let mut seen = HashSet::new();
        for split in [Split::Ubm, Split::EnhancerTrain, Split::Enroll, Split::Test] {
            for e in r.in_split(split) {
                assert!(seen.insert(e.utterance_id.clone()), "{}", e.utterance_id);
            }
        }
        assert_eq!(seen.len(), r.entries.len());
        assert!(!r.in_split(Split::Ubm).is_empty());
        assert!(!r.in_split(Split::EnhancerTrain).is_empty());
        assert!(!r.in_split(Split::Enroll).is_empty());
        assert!(!r.in_split(Split::Test).is_empty());
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let dir = tempdir();
        let w = Waveform::new(vec![0.0; 100], 16000);
        save_wav(dir.join("a.wav"), &w).unwrap();
        let entry = ManifestEntry {
            utterance_id: "tst_spk000_t01_s01".into(),
            speaker_id: "spk000".into(),
            text_id: 1,
            session_id: 1,
            file_path: "a.wav".into(),
            condition: Condition::Clean,
        };
        let m = Manifest {
            base_dir: dir.clone(),
            entries: vec![entry.clone(), entry],
        };
        let p = dir.join("manifest.jsonl");
        m.save(&p).unwrap();
        assert!(matches!(Manifest::load(&p), Err(Error::Manifest(_))));
    }

    #[test]
    fn condition_serialization_format() {
        let clean = serde_json::to_string(&Condition::Clean).unwrap();
        assert_eq!(clean, "\"clean\"");
        let noisy = serde_json::to_string(&Condition::Noisy {
            noise_type: NoiseType::White,
            snr_db: 5.0,
        })
        .unwrap();
        assert_eq!(noisy, r#"{"noise_type":"white","snr_db":5.0}"#);
        let back: Condition = serde_json::from_str(&noisy).unwrap();
        assert_eq!(
            back,
            Condition::Noisy {
                noise_type: NoiseType::White,
                snr_db: 5.0
            }
        );
    }
}
