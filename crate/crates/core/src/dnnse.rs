//! IRM-based DNN enhancer: gammatone-domain ideal ratio mask targets, a
//! feed-forward mask estimator, and mask-applied resynthesis.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::checkpoint::{Architecture, ModelCheckpoint, NamedTensor};
use crate::corpus::{derive_seed, load_wav, Condition, Manifest, NoiseType, Waveform};
use crate::dsp::{istft, mel_gammatone_bank, mfcc, stft, subband_energies, FilterBank, HOP, NFFT};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::{init_normal, ActKind, Activation, Dense, Mode, Parameter, Sgd, Tensor};
use crate::pix2pix::FrontEndKind;

pub const N_BANDS: usize = 64;
/// Per-frame base vector: 57 MFCC + 64 gammatone log-energies with delta
/// and delta-delta.
pub const BASE_DIM: usize = 57 + 3 * N_BANDS;
/// Context of 2 past and 2 future frames.
pub const CONTEXT: usize = 2;
pub const INPUT_DIM: usize = (2 * CONTEXT + 1) * BASE_DIM;
pub const HIDDEN_DIM: usize = 1024;
pub const HIDDEN_LAYERS: usize = 3;

pub fn standard_bank() -> FilterBank {
    mel_gammatone_bank(N_BANDS, 50.0, 8000.0, 16000, NFFT).expect("standard bank parameters")
}

// ---------------------------------------------------------------------------
// IRM
// ---------------------------------------------------------------------------

/// Clean/noise subband energies of one utterance, aligned frames.
#[derive(Debug, Clone)]
pub struct TfEnergyPair {
    pub clean_e: Mat,
    pub noise_e: Mat,
}

impl TfEnergyPair {
    pub fn new(clean_e: Mat, noise_e: Mat) -> Result<Self> {
        if clean_e.rows() != noise_e.rows() || clean_e.cols() != noise_e.cols() {
            return Err(Error::Shape("energy pair shape mismatch".into()));
        }
        Ok(TfEnergyPair { clean_e, noise_e })
    }
}

/// Ideal ratio mask: (clean / (clean + noise))^0.5, zero where both are 0.
pub fn irm(pair: &TfEnergyPair) -> Mat {
    let mut out = Mat::zeros(pair.clean_e.rows(), pair.clean_e.cols());
    for t in 0..out.rows() {
        for j in 0..out.cols() {
            let c = pair.clean_e.at(t, j);
            let n = pair.noise_e.at(t, j);
            debug_assert!(c >= 0.0 && n >= 0.0);
            *out.at_mut(t, j) = if c + n > 0.0 { (c / (c + n)).sqrt() } else { 0.0 };
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Per-frame input vectors: [MFCC-57 | gammatone log-energies + deltas],
/// stacked over a +-2 frame context with edge replication. T x 1245.
pub fn extract_features(w: &Waveform) -> Result<Mat> {
    let mf = mfcc(w, 19, true)?;
    let spec = stft(w)?;
    let bank = standard_bank();
    let energies = subband_energies(&spec, &bank);
    let t_frames = mf.n_frames().min(energies.n_frames());

    let mut log_e = Mat::zeros(t_frames, N_BANDS);
    for t in 0..t_frames {
        for j in 0..N_BANDS {
            *log_e.at_mut(t, j) = energies.frames.at(t, j).max(1e-10).ln();
        }
    }
    let gamma_feats = crate::dsp::append_deltas(&log_e);

    let mut base = Mat::zeros(t_frames, BASE_DIM);
    for t in 0..t_frames {
        base.row_mut(t)[..57].copy_from_slice(&mf.frames.row(t)[..57]);
        base.row_mut(t)[57..].copy_from_slice(gamma_feats.row(t));
    }

    // Context stacking with edge replication.
    let clamp = |i: isize| -> usize { i.clamp(0, t_frames as isize - 1) as usize };
    let mut out = Mat::zeros(t_frames, INPUT_DIM);
    for t in 0..t_frames {
        for (ci, off) in (-(CONTEXT as isize)..=CONTEXT as isize).enumerate() {
            let src = base.row(clamp(t as isize + off));
            out.row_mut(t)[ci * BASE_DIM..(ci + 1) * BASE_DIM].copy_from_slice(src);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Mask estimator: INPUT_DIM -> 3 x 1024 ReLU -> 64 sigmoid.
pub struct DnnSeNet {
    hidden: Vec<(Dense, Activation)>,
    out: Dense,
    out_act: Activation,
}

impl DnnSeNet {
    pub fn new(seed: u64) -> Self {
        let mut hidden = Vec::new();
        let mut in_dim = INPUT_DIM;
        for i in 0..HIDDEN_LAYERS {
            let mut d = Dense::new(&format!("h{i}"), in_dim, HIDDEN_DIM);
            init_normal(&mut d.w.value, 0.0, 0.02, derive_seed(seed, &format!("h{i}.w")));
            hidden.push((d, Activation::new(ActKind::Relu)));
            in_dim = HIDDEN_DIM;
        }
        let mut out = Dense::new("out", in_dim, N_BANDS);
        init_normal(&mut out.w.value, 0.0, 0.02, derive_seed(seed, "out.w"));
        DnnSeNet {
            hidden,
            out,
            out_act: Activation::new(ActKind::Sigmoid),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let mut h = x.clone();
        for (d, a) in &mut self.hidden {
            h = a.forward(&d.forward(&h, mode), mode);
        }
        self.out_act.forward(&self.out.forward(&h, mode), mode)
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let mut g = self.out.backward(&self.out_act.backward(g));
        for (d, a) in self.hidden.iter_mut().rev() {
            g = d.backward(&a.backward(&g));
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = Vec::new();
        for (d, _) in &mut self.hidden {
            v.extend(d.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DnnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of frames held out for the validation loss.
    pub val_fraction: f64,
    pub front_end: FrontEndKind,
}

impl Default for DnnTrainConfig {
    fn default() -> Self {
        DnnTrainConfig {
            epochs: 30,
            batch_size: 1024,
            lr: 0.1,
            seed: 0,
            val_fraction: 0.1,
            front_end: FrontEndKind::NoiseGeneral,
        }
    }
}

impl DnnTrainConfig {
    fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("lr".into(), self.lr.to_string());
        m.insert("val_fraction".into(), self.val_fraction.to_string());
        m.insert("front_end".into(), self.front_end.label());
        m
    }
}

pub struct DnnTrainResult {
    pub checkpoint: ModelCheckpoint,
    /// Per-epoch (train MSE, validation MSE).
    pub history: Vec<(f64, f64)>,
}

/// Mini-batch SGD on the mask regression: MSE between sigmoid outputs and
/// IRM targets, learning rate halved when the validation loss stalls.
/// Features are normalized by their global mean/variance, which is stored
/// in the checkpoint.
pub fn train_dnnse(features: &Mat, targets: &Mat, cfg: &DnnTrainConfig) -> Result<DnnTrainResult> {
    if features.rows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if features.rows() != targets.rows() || features.cols() != INPUT_DIM || targets.cols() != N_BANDS
    {
        return Err(Error::Shape(format!(
            "expected features T x {INPUT_DIM} and targets T x {N_BANDS}, got {}x{} and {}x{}",
            features.rows(),
            features.cols(),
            targets.rows(),
            targets.cols()
        )));
    }

    // Global feature normalization.
    let n = features.rows();
    let d = features.cols();
    let mut mean = vec![0.0f64; d];
    let mut std = vec![0.0f64; d];
    for t in 0..n {
        for (j, v) in features.row(t).iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for t in 0..n {
        for (j, v) in features.row(t).iter().enumerate() {
            let dv = v - mean[j];
            std[j] += dv * dv;
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt().max(1e-8);
    }

    // Deterministic split: shuffle frame indices once, hold out the tail.
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, "split"));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_val = ((n as f64 * cfg.val_fraction) as usize).max(1).min(n - 1);
    let (train_idx, val_idx) = idx.split_at(n - n_val);

    let normalized_row = |t: usize| -> Vec<f64> {
        features
            .row(t)
            .iter()
            .enumerate()
            .map(|(j, v)| (v - mean[j]) / std[j])
            .collect()
    };

    let mut net = DnnSeNet::new(derive_seed(cfg.seed, "init"));
    let mut sgd = Sgd::new(cfg.lr);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;

    let mut order: Vec<usize> = train_idx.to_vec();
    for _epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut train_se = 0.0;
        let mut train_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let bs = batch.len();
            let mut x = Vec::with_capacity(bs * d);
            let mut y = Vec::with_capacity(bs * N_BANDS);
            for &t in batch {
                x.extend(normalized_row(t));
                y.extend_from_slice(targets.row(t));
            }
            let xb = Tensor::from_vec(&[bs, d], x);
            let out = net.forward(&xb, Mode::Train);

            let scale = (bs * N_BANDS) as f64;
            let mut grad = Tensor::zeros(out.shape());
            for (i, (o, t)) in out.data().iter().zip(&y).enumerate() {
                let diff = o - t;
                train_se += diff * diff;
                grad.data_mut()[i] = 2.0 * diff / scale;
            }
            train_count += bs * N_BANDS;

            for p in net.params_mut() {
                p.zero_grad();
            }
            net.backward(&grad);
            sgd.step(&mut net.params_mut());
        }

        // Validation loss drives the learning-rate schedule.
        let mut val_se = 0.0;
        for chunk in val_idx.chunks(cfg.batch_size) {
            let bs = chunk.len();
            let mut x = Vec::with_capacity(bs * d);
            for &t in chunk {
                x.extend(normalized_row(t));
            }
            let out = net.forward(&Tensor::from_vec(&[bs, d], x), Mode::Eval);
            for (i, &t) in chunk.iter().enumerate() {
                for (o, tv) in out.data()[i * N_BANDS..(i + 1) * N_BANDS]
                    .iter()
                    .zip(targets.row(t))
                {
                    let diff = o - tv;
                    val_se += diff * diff;
                }
            }
        }
        let val_mse = val_se / (val_idx.len() * N_BANDS) as f64;
        let train_mse = train_se / train_count as f64;
        history.push((train_mse, val_mse));

        if val_mse < best_val - 1e-6 {
            best_val = val_mse;
        } else {
            sgd.lr = (sgd.lr * 0.5).max(1e-4);
        }
    }

    let mut tensors = Vec::new();
    for p in net.params_mut() {
        tensors.push(NamedTensor {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().iter().map(|&v| v as f32).collect(),
        });
    }
    tensors.push(NamedTensor {
        name: "feat.mean".into(),
        shape: vec![d],
        data: mean.iter().map(|&v| v as f32).collect(),
    });
    tensors.push(NamedTensor {
        name: "feat.std".into(),
        shape: vec![d],
        data: std.iter().map(|&v| v as f32).collect(),
    });

    Ok(DnnTrainResult {
        checkpoint: ModelCheckpoint {
            architecture: Architecture::DnnSe {
                input_dim: INPUT_DIM,
                hidden_dim: HIDDEN_DIM,
                hidden_layers: HIDDEN_LAYERS,
                output_dim: N_BANDS,
            },
            train_seed: cfg.seed,
            norm_scale: None,
            config: cfg.echo(),
            tensors,
        },
        history,
    })
}

/// Assemble per-frame features and IRM targets from a mixed manifest.
/// Noisy enhancer-train entries matching the front-end filter are paired
/// with their clean sources; the noise signal is the sample-wise
/// difference.
pub fn training_set_from_manifest(
    manifest: &Manifest,
    front_end: FrontEndKind,
) -> Result<(Mat, Mat)> {
    let pairs = collect_noisy_clean_pairs(manifest, front_end)?;
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let bank = standard_bank();
    let mut feats: Vec<Mat> = Vec::new();
    let mut masks: Vec<Mat> = Vec::new();
    for (noisy_path, clean_path) in pairs {
        let noisy = load_wav(&noisy_path)?;
        let clean = load_wav(&clean_path)?;
        if noisy.len() != clean.len() {
            return Err(Error::Shape(format!(
                "pair length mismatch: {} vs {}",
                noisy.len(),
                clean.len()
            )));
        }
        let noise = Waveform::new(
            noisy
                .samples
                .iter()
                .zip(&clean.samples)
                .map(|(n, c)| n - c)
                .collect(),
            noisy.sample_rate,
        );
        let clean_e = subband_energies(&stft(&clean)?, &bank).frames;
        let noise_e = subband_energies(&stft(&noise)?, &bank).frames;
        let mask = irm(&TfEnergyPair::new(clean_e, noise_e)?);
        let f = extract_features(&noisy)?;
        let t = f.rows().min(mask.rows());
        feats.push(Mat::from_fn(t, INPUT_DIM, |r, c| f.at(r, c)));
        masks.push(Mat::from_fn(t, N_BANDS, |r, c| mask.at(r, c)));
    }
    let total: usize = feats.iter().map(|m| m.rows()).sum();
    let mut x = Mat::zeros(total, INPUT_DIM);
    let mut y = Mat::zeros(total, N_BANDS);
    let mut row = 0;
    for (f, m) in feats.iter().zip(&masks) {
        for t in 0..f.rows() {
            x.row_mut(row).copy_from_slice(f.row(t));
            y.row_mut(row).copy_from_slice(m.row(t));
            row += 1;
        }
    }
    Ok((x, y))
}

/// Resolve (noisy, clean) wav path pairs for the enhancer-train split,
/// honoring the front-end's noise filter.
pub fn collect_noisy_clean_pairs(
    manifest: &Manifest,
    front_end: FrontEndKind,
) -> Result<Vec<(std::path::PathBuf, std::path::PathBuf)>> {
    let wanted = |nt: NoiseType| match front_end {
        FrontEndKind::NoiseGeneral => true,
        FrontEndKind::NoiseSpecific(k) => nt == k,
    };
    let mut out = Vec::new();
    for e in manifest.in_split(crate::corpus::Split::EnhancerTrain) {
        if let Condition::Noisy { noise_type, .. } = e.condition {
            if !wanted(noise_type) {
                continue;
            }
            let clean = manifest
                .entries
                .iter()
                .find(|c| {
                    c.is_clean()
                        && c.speaker_id == e.speaker_id
                        && c.text_id == e.text_id
                        && c.session_id == e.session_id
                })
                .ok_or_else(|| {
                    Error::Manifest(format!("no clean source for {:?}", e.utterance_id))
                })?;
            out.push((manifest.resolve(e), manifest.resolve(clean)));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Enhancement
// ---------------------------------------------------------------------------

/// Interpolate a 64-band mask onto the STFT bins:
/// g(f) = sum_j resp_j(f) m_j / sum_j resp_j(f). Gammatone responses are
/// strictly positive, so the denominator never vanishes and masks in [0,1]
/// produce per-bin gains in [0,1].
pub fn mask_to_bin_gains(mask_row: &[f64], bank: &FilterBank) -> Vec<f64> {
    let n_bins = bank.responses.cols();
    let mut gains = vec![0.0f64; n_bins];
    for f in 0..n_bins {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, &m) in mask_row.iter().enumerate() {
            let r = bank.responses.at(j, f);
            num += r * m;
            den += r;
        }
        gains[f] = num / den;
    }
    gains
}

/// Apply a T x 64 mask to a waveform: per-frame bin gains on the STFT
/// magnitude, ISTFT with the noisy phase, trimmed to the input length.
pub fn apply_mask(w: &Waveform, mask: &Mat, bank: &FilterBank) -> Result<Waveform> {
    let n = w.len();
    let frames_needed = (n.saturating_sub(NFFT)).div_ceil(HOP) + 1;
    let padded_len = (frames_needed - 1) * HOP + NFFT;
    let mut padded = w.samples.clone();
    padded.resize(padded_len, 0.0);
    let mut spec = stft(&Waveform::new(padded, w.sample_rate))?;

    let t_frames = spec.frames();
    if mask.rows() < t_frames {
        return Err(Error::Shape(format!(
            "mask has {} frames, spectrogram has {t_frames}",
            mask.rows()
        )));
    }
    for t in 0..t_frames {
        let gains = mask_to_bin_gains(mask.row(t), bank);
        for f in 0..spec.bins() {
            *spec.mag.at_mut(f, t) *= gains[f];
        }
    }
    let mut out = istft(&spec);
    out.samples.truncate(n);
    Ok(out)
}

fn network_from_checkpoint(ckpt: &ModelCheckpoint) -> Result<(DnnSeNet, Vec<f64>, Vec<f64>)> {
    match ckpt.architecture {
        Architecture::DnnSe {
            input_dim,
            hidden_dim,
            hidden_layers,
            output_dim,
        } => {
            if input_dim != INPUT_DIM
                || hidden_dim != HIDDEN_DIM
                || hidden_layers != HIDDEN_LAYERS
                || output_dim != N_BANDS
            {
                return Err(Error::Checkpoint(
                    "mask-estimator architecture does not match this build".into(),
                ));
            }
        }
        _ => return Err(Error::Checkpoint("not a mask-estimator checkpoint".into())),
    }
    let mut net = DnnSeNet::new(ckpt.train_seed);
    for p in net.params_mut() {
        let t = ckpt.tensor(&p.name)?;
        if t.shape != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} shape mismatch",
                p.name
            )));
        }
        for (dst, src) in p.value.data_mut().iter_mut().zip(&t.data) {
            *dst = *src as f64;
        }
    }
    let mean: Vec<f64> = ckpt.tensor("feat.mean")?.data.iter().map(|&v| v as f64).collect();
    let std: Vec<f64> = ckpt.tensor("feat.std")?.data.iter().map(|&v| v as f64).collect();
    Ok((net, mean, std))
}

/// Estimate the mask for a noisy waveform and resynthesize.
pub fn enhance_dnnse(w: &Waveform, ckpt: &ModelCheckpoint) -> Result<Waveform> {
    let (mut net, mean, std) = network_from_checkpoint(ckpt)?;
    let feats = extract_features(w)?;
    let t_frames = feats.rows();
    let mut x = Vec::with_capacity(t_frames * INPUT_DIM);
    for t in 0..t_frames {
        for (j, v) in feats.row(t).iter().enumerate() {
            x.push((v - mean[j]) / std[j]);
        }
    }
    let out = net.forward(&Tensor::from_vec(&[t_frames, INPUT_DIM], x), Mode::Eval);
    let mask = Mat::from_vec(t_frames, N_BANDS, out.data().to_vec());
    // The padded STFT may have one frame more than the feature grid; repeat
    // the final mask row for it.
    let bank = standard_bank();
    let n = w.len();
    let frames_needed = (n.saturating_sub(NFFT)).div_ceil(HOP) + 1;
    let mut full = Mat::zeros(frames_needed, N_BANDS);
    for t in 0..frames_needed {
        let src = t.min(t_frames - 1);
        full.row_mut(t).copy_from_slice(mask.row(src));
    }
    apply_mask(w, &full, &bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{mix_at_snr, speaker_params, synth_utterance, white_noise};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn irm_anchor_values() {
        let pair = TfEnergyPair::new(
            Mat::from_vec(1, 3, vec![4.0, 1.0, 0.0]),
            Mat::from_vec(1, 3, vec![0.0, 1.0, 0.0]),
        )
        .unwrap();
        let m = irm(&pair);
        assert_eq!(m.at(0, 0), 1.0);
        assert_abs_diff_eq!(m.at(0, 1), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(m.at(0, 2), 0.0);
    }

    #[test]
    fn irm_bounded_and_monotone_in_snr() {
        let mut prev = 0.0;
        for k in 0..50 {
            let ratio = 10f64.powf(-2.0 + 4.0 * k as f64 / 49.0);
            let pair = TfEnergyPair::new(
                Mat::from_vec(1, 1, vec![ratio]),
                Mat::from_vec(1, 1, vec![1.0]),
            )
            .unwrap();
            let m = irm(&pair).at(0, 0);
            assert!((0.0..=1.0).contains(&m));
            assert!(m > prev);
            prev = m;
        }
    }

    #[test]
    fn feature_dimension_is_1245() {
        assert_eq!(INPUT_DIM, 1245);
        let w = synth_utterance(3, &speaker_params(3, 0), 1, 1);
        let f = extract_features(&w).unwrap();
        assert_eq!(f.cols(), 1245);
        assert!(f.is_finite());
    }

    #[test]
    fn first_frame_context_is_edge_replicated() {
        let w = synth_utterance(4, &speaker_params(4, 0), 1, 1);
        let f = extract_features(&w).unwrap();
        // Context slots t-2 and t-1 of the first frame equal its own base.
        let row = f.row(0);
        assert_eq!(&row[..BASE_DIM], &row[BASE_DIM..2 * BASE_DIM]);
        assert_eq!(&row[..BASE_DIM], &row[2 * BASE_DIM..3 * BASE_DIM]);
        // And the t+1 slot differs (frames move).
        assert_ne!(&row[2 * BASE_DIM..3 * BASE_DIM], &row[3 * BASE_DIM..4 * BASE_DIM]);
    }

    #[test]
    fn feature_extraction_is_deterministic() {
        let w = synth_utterance(5, &speaker_params(5, 1), 2, 1);
        let a = extract_features(&w).unwrap();
        let b = extract_features(&w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_ones_mask_is_istft_identity() {
        let w = synth_utterance(6, &speaker_params(6, 0), 1, 1);
        let bank = standard_bank();
        let frames = (w.len() - NFFT).div_ceil(HOP) + 1;
        let ones = Mat::from_fn(frames, N_BANDS, |_, _| 1.0);
        let out = apply_mask(&w, &ones, &bank).unwrap();
        assert_eq!(out.len(), w.len());
        // Interior reconstruction above 60 dB.
        let (lo, hi) = (NFFT, w.len() - NFFT);
        let mut sig = 0.0;
        let mut err = 0.0;
        for i in lo..hi {
            sig += w.samples[i] * w.samples[i];
            let d = w.samples[i] - out.samples[i];
            err += d * d;
        }
        let snr = 10.0 * (sig / err.max(1e-300)).log10();
        assert!(snr > 60.0, "identity-mask SNR {snr} dB");
    }

    #[test]
    fn all_zeros_mask_silences() {
        let w = synth_utterance(7, &speaker_params(7, 0), 1, 1);
        let bank = standard_bank();
        let frames = (w.len() - NFFT).div_ceil(HOP) + 1;
        let zeros = Mat::zeros(frames, N_BANDS);
        let out = apply_mask(&w, &zeros, &bank).unwrap();
        assert!(out.power() < 1e-6 * w.power(), "residual {}", out.power());
    }

    #[test]
    fn mask_interpolation_preserves_bounds() {
        let bank = standard_bank();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mask: Vec<f64> = (0..N_BANDS).map(|_| rng.gen::<f64>()).collect();
            let gains = mask_to_bin_gains(&mask, &bank);
            assert!(gains.iter().all(|g| (0.0..=1.0).contains(g)));
        }
    }

    /// Training on frames whose mask is a simple function of the features
    /// must drive the loss down, mostly monotonically, deterministically.
    #[test]
    fn tiny_training_converges_and_is_deterministic() {
        // Synthetic supervised task at full input width but few frames.
        let n = 256;
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut x = Mat::zeros(n, INPUT_DIM);
        let mut y = Mat::zeros(n, N_BANDS);
        for t in 0..n {
            for j in 0..8 {
                *x.at_mut(t, j) = rng.gen::<f64>() * 2.0 - 1.0;
            }
            for j in 0..N_BANDS {
                let v = 0.5 + 0.4 * x.at(t, j % 8);
                *y.at_mut(t, j) = v;
            }
        }
        let cfg = DnnTrainConfig {
            epochs: 8,
            batch_size: 64,
            seed: 5,
            ..DnnTrainConfig::default()
        };
        let a = train_dnnse(&x, &y, &cfg).unwrap();
        let b = train_dnnse(&x, &y, &cfg).unwrap();
        for (ta, tb) in a.checkpoint.tensors.iter().zip(&b.checkpoint.tensors) {
            assert_eq!(ta, tb);
        }
        let first = a.history.first().unwrap().0;
        let last = a.history.last().unwrap().0;
        assert!(last < first, "training loss did not decrease: {first} -> {last}");
        // Loss non-increasing in at least 90% of the epoch transitions.
        let drops = a
            .history
            .windows(2)
            .filter(|w| w[1].0 <= w[0].0 + 1e-9)
            .count();
        assert!(
            drops * 10 >= (a.history.len() - 1) * 9,
            "only {drops}/{} transitions non-increasing",
            a.history.len() - 1
        );
    }

    #[test]
    fn empty_training_set_rejected() {
        let cfg = DnnTrainConfig::default();
        assert!(matches!(
            train_dnnse(&Mat::zeros(0, INPUT_DIM), &Mat::zeros(0, N_BANDS), &cfg),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn oracle_irm_strongly_denoises() {
        // The oracle mask computed from true clean/noise energies must pull
        // the mix toward the clean signal.
        let clean = synth_utterance(8, &speaker_params(8, 0), 1, 1);
        let noise_src = white_noise(clean.len() + 2000, 9);
        let mixed = mix_at_snr(&clean, &noise_src, 0.0, 4).unwrap();
        let noise = Waveform::new(
            mixed
                .samples
                .iter()
                .zip(&clean.samples)
                .map(|(m, c)| m - c)
                .collect(),
            16000,
        );
        let bank = standard_bank();
        let clean_e = subband_energies(&stft(&clean).unwrap(), &bank).frames;
        let noise_e = subband_energies(&stft(&noise).unwrap(), &bank).frames;
        let mask = irm(&TfEnergyPair::new(clean_e, noise_e).unwrap());

        let frames = (mixed.len() - NFFT).div_ceil(HOP) + 1;
        let mut full = Mat::zeros(frames, N_BANDS);
        for t in 0..frames {
            full.row_mut(t).copy_from_slice(mask.row(t.min(mask.rows() - 1)));
        }
        let out = apply_mask(&mixed, &full, &bank).unwrap();

        let err_before: f64 = mixed
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(m, c)| (m - c) * (m - c))
            .sum();
        let err_after: f64 = out
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(o, c)| (o - c) * (o - c))
            .sum();
        assert!(
            err_after < 0.3 * err_before,
            "oracle mask residual ratio {}",
            err_after / err_before
        );
    }
}
