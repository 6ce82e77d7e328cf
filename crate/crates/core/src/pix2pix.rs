//! Spectrogram-to-spectrogram conditional GAN: U-Net generator, a
//! flattened single-output discriminator over (condition, candidate)
//! pairs, the adversarial + weighted-L1 objective, the training loop, and
//! the end-to-end waveform enhancer.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::checkpoint::{Architecture, ModelCheckpoint, NamedTensor};
use crate::corpus::{derive_seed, Waveform};
use crate::dsp::{chunk_for_gan, istft, stft_with, NormState, SpectroChunk};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::{
    concat_channels, init_normal, split_channels, ActKind, Activation, Adam, BatchNorm2d, Conv2d,
    ConvTranspose2d, Dense, Dropout, Mode, Parameter, Tensor,
};

const KERNEL: usize = 5;
const STRIDE: usize = 2;
const PAD: usize = 2;

/// Magnitudes at or below this are treated as silence in the GAN's
/// log-magnitude representation.
pub const DB_FLOOR_MAG: f64 = 1e-5;

/// Linear STFT magnitude -> dB above the fixed floor (>= 0). The GAN
/// trains on this representation: additive noise at the paper's SNRs is
/// invisible in globally-normalized linear magnitudes (fractions of a
/// percent of the range), but spans tens of dB here.
pub fn mag_to_db(mag: &Mat) -> Mat {
    Mat::from_fn(mag.rows(), mag.cols(), |r, c| {
        let v = mag.at(r, c);
        if v <= DB_FLOOR_MAG {
            0.0
        } else {
            20.0 * (v / DB_FLOOR_MAG).log10()
        }
    })
}

/// Inverse of `mag_to_db`; 0 dB maps back to exact silence.
pub fn db_to_mag(db: &Mat) -> Mat {
    Mat::from_fn(db.rows(), db.cols(), |r, c| {
        let v = db.at(r, c);
        if v <= 0.0 {
            0.0
        } else {
            DB_FLOOR_MAG * 10f64.powf(v / 20.0)
        }
    })
}

// ---------------------------------------------------------------------------
// Generator: U-Net
// ---------------------------------------------------------------------------

struct EncBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Activation,
}

struct DecBlock {
    tconv: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    dropout: Option<Dropout>,
    act: Activation,
}

/// Encoder-decoder with mirrored skip concatenations; channel schedule
/// doubles from `channel_base` up to `channel_cap`; final tanh.
pub struct GeneratorNet {
    pub side: usize,
    pub channel_base: usize,
    pub channel_cap: usize,
    levels: usize,
    enc: Vec<EncBlock>,
    dec: Vec<DecBlock>,
    skip_cache: Option<Vec<Tensor>>,
}

fn channel_schedule(levels: usize, base: usize, cap: usize) -> Vec<usize> {
    (0..levels).map(|i| (base << i).min(cap)).collect()
}

/// Build the U-Net for square inputs of the given power-of-two side.
pub fn build_unet(side: usize, channel_base: usize, channel_cap: usize, seed: u64) -> Result<GeneratorNet> {
    if side < 8 || !side.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "generator side must be a power of 2 >= 8, got {side}"
        )));
    }
    let levels = side.trailing_zeros() as usize;
    let ch = channel_schedule(levels, channel_base, channel_cap);

    let mut enc = Vec::with_capacity(levels);
    for i in 0..levels {
        let in_ch = if i == 0 { 1 } else { ch[i - 1] };
        enc.push(EncBlock {
            conv: Conv2d::new(&format!("enc{i}.conv"), in_ch, ch[i], KERNEL, STRIDE, PAD),
            bn: BatchNorm2d::new(&format!("enc{i}.bn"), ch[i]),
            act: Activation::leaky_relu(),
        });
    }

    let mut dec = Vec::with_capacity(levels);
    for j in 0..levels {
        let in_ch = if j == 0 { ch[levels - 1] } else { 2 * ch[levels - 1 - j] };
        let last = j == levels - 1;
        let out_ch = if last { 1 } else { ch[levels - 2 - j] };
        dec.push(DecBlock {
            tconv: ConvTranspose2d::new(&format!("dec{j}.tconv"), in_ch, out_ch, KERNEL, STRIDE, PAD),
            bn: if last {
                None
            } else {
                Some(BatchNorm2d::new(&format!("dec{j}.bn"), out_ch))
            },
            // Dropout regularizes the first three decoder blocks only.
            dropout: if j < 3 && !last {
                Some(Dropout::new(0.5, derive_seed(seed, &format!("dec{j}.dropout"))))
            } else {
                None
            },
            act: if last {
                Activation::new(ActKind::Tanh)
            } else {
                Activation::new(ActKind::Relu)
            },
        });
    }

    let mut g = GeneratorNet {
        side,
        channel_base,
        channel_cap,
        levels,
        enc,
        dec,
        skip_cache: None,
    };
    g.init_weights(seed);
    Ok(g)
}

impl GeneratorNet {
    fn init_weights(&mut self, seed: u64) {
        for (i, b) in self.enc.iter_mut().enumerate() {
            init_normal(&mut b.conv.w.value, 0.0, 0.02, derive_seed(seed, &format!("enc{i}.w")));
        }
        for (j, b) in self.dec.iter_mut().enumerate() {
            init_normal(&mut b.tconv.w.value, 0.0, 0.02, derive_seed(seed, &format!("dec{j}.w")));
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// N x 1 x side x side in [-1, 1] -> same shape in (-1, 1).
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.shape()[1], 1, "generator expects a 1-channel input");
        assert_eq!(x.shape()[2], self.side);
        assert_eq!(x.shape()[3], self.side);

        let mut skips = Vec::with_capacity(self.levels);
        let mut h = x.clone();
        for b in &mut self.enc {
            h = b.conv.forward(&h, mode);
            h = b.bn.forward(&h, mode);
            h = b.act.forward(&h, mode);
            skips.push(h.clone());
        }

        let mut d = skips[self.levels - 1].clone();
        for (j, b) in self.dec.iter_mut().enumerate() {
            let input = if j == 0 {
                d
            } else {
                concat_channels(&d, &skips[self.levels - 1 - j])
            };
            let mut y = b.tconv.forward(&input, mode);
            if let Some(bn) = &mut b.bn {
                y = bn.forward(&y, mode);
            }
            if let Some(drop) = &mut b.dropout {
                y = drop.forward(&y, mode);
            }
            d = b.act.forward(&y, mode);
        }
        self.skip_cache = Some(skips);
        d
    }

    /// Reverse pass; returns the gradient w.r.t. the input chunk.
    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let skips = self.skip_cache.take().expect("generator backward without forward");
        let mut skip_grads: Vec<Option<Tensor>> = (0..self.levels).map(|_| None).collect();

        let mut g = grad_out.clone();
        for j in (0..self.levels).rev() {
            let b = &mut self.dec[j];
            let mut gi = b.act.backward(&g);
            if let Some(drop) = &mut b.dropout {
                gi = drop.backward(&gi);
            }
            if let Some(bn) = &mut b.bn {
                gi = bn.backward(&gi);
            }
            let gin = b.tconv.backward(&gi);
            if j == 0 {
                accumulate(&mut skip_grads[self.levels - 1], &gin);
            } else {
                let d_ch = gin.shape()[1] / 2;
                let (gd, gskip) = split_channels(&gin, d_ch);
                accumulate(&mut skip_grads[self.levels - 1 - j], &gskip);
                g = gd;
            }
        }

        // Walk the encoder stack top-down, folding in the skip gradients.
        let mut g = skip_grads[self.levels - 1].take().expect("bottleneck grad");
        for i in (0..self.levels).rev() {
            let b = &mut self.enc[i];
            let ga = b.act.backward(&g);
            let gb = b.bn.backward(&ga);
            let gin = b.conv.backward(&gb);
            if i > 0 {
                let mut acc = skip_grads[i - 1].take().expect("skip grad");
                acc = acc.add(&gin);
                g = acc;
            } else {
                g = gin;
            }
        }
        let _ = skips;
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for b in &mut self.enc {
            out.extend(b.conv.params_mut());
            out.extend(b.bn.params_mut());
        }
        for b in &mut self.dec {
            out.extend(b.tconv.params_mut());
            if let Some(bn) = &mut b.bn {
                out.extend(bn.params_mut());
            }
        }
        out
    }

    /// Batch-norm running statistics, named, in parameter order.
    fn buffers(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.enc.iter().enumerate() {
            out.push((format!("enc{i}.bn.running_mean"), b.bn.running_mean.clone()));
            out.push((format!("enc{i}.bn.running_var"), b.bn.running_var.clone()));
        }
        for (j, b) in self.dec.iter().enumerate() {
            if let Some(bn) = &b.bn {
                out.push((format!("dec{j}.bn.running_mean"), bn.running_mean.clone()));
                out.push((format!("dec{j}.bn.running_var"), bn.running_var.clone()));
            }
        }
        out
    }

    fn load_buffers(&mut self, get: impl Fn(&str) -> Result<Vec<f64>>) -> Result<()> {
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.bn.running_mean = get(&format!("enc{i}.bn.running_mean"))?;
            b.bn.running_var = get(&format!("enc{i}.bn.running_var"))?;
        }
        for (j, b) in self.dec.iter_mut().enumerate() {
            if let Some(bn) = &mut b.bn {
                bn.running_mean = get(&format!("dec{j}.bn.running_mean"))?;
                bn.running_var = get(&format!("dec{j}.bn.running_var"))?;
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        None => *slot = Some(g.clone()),
        Some(t) => *slot = Some(t.add(g)),
    }
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

struct DiscBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: Activation,
}

/// Four strided conv blocks over the 2-channel (condition, candidate)
/// image; the final feature map is flattened into a single sigmoid unit.
pub struct DiscriminatorNet {
    pub side: usize,
    blocks: Vec<DiscBlock>,
    dense: Dense,
    sigmoid: Activation,
    flat_shape: Option<Vec<usize>>,
}

pub fn build_discriminator(side: usize, channel_base: usize, channel_cap: usize, seed: u64) -> Result<DiscriminatorNet> {
    if side < 8 || !side.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "discriminator side must be a power of 2 >= 8, got {side}"
        )));
    }
    let n_blocks = 4;
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut spatial = side;
    let mut in_ch = 2;
    let mut out_ch = channel_base;
    for i in 0..n_blocks {
        blocks.push(DiscBlock {
            conv: Conv2d::new(&format!("d{i}.conv"), in_ch, out_ch, KERNEL, STRIDE, PAD),
            bn: if i == 0 {
                None
            } else {
                Some(BatchNorm2d::new(&format!("d{i}.bn"), out_ch))
            },
            act: Activation::leaky_relu(),
        });
        spatial = spatial.div_ceil(2);
        in_ch = out_ch;
        out_ch = (out_ch * 2).min(channel_cap);
    }
    let flat = in_ch * spatial * spatial;
    let mut d = DiscriminatorNet {
        side,
        blocks,
        dense: Dense::new("d.out", flat, 1),
        sigmoid: Activation::new(ActKind::Sigmoid),
        flat_shape: None,
    };
    for (i, b) in d.blocks.iter_mut().enumerate() {
        init_normal(&mut b.conv.w.value, 0.0, 0.02, derive_seed(seed, &format!("d{i}.w")));
    }
    init_normal(&mut d.dense.w.value, 0.0, 0.02, derive_seed(seed, "d.out.w"));
    Ok(d)
}

impl DiscriminatorNet {
    pub fn flat_dim(&self) -> usize {
        self.dense.w.value.shape()[0]
    }

    /// N x 2 x side x side -> per-example probability in (0, 1).
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.shape()[1], 2, "discriminator expects 2 channels");
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.conv.forward(&h, mode);
            if let Some(bn) = &mut b.bn {
                h = bn.forward(&h, mode);
            }
            h = b.act.forward(&h, mode);
        }
        let n = h.shape()[0];
        let flat = h.numel() / n;
        self.flat_shape = Some(h.shape().to_vec());
        let z = self.dense.forward(&h.clone().reshaped(&[n, flat]), mode);
        self.sigmoid.forward(&z, mode)
    }

    /// Gradient w.r.t. the 2-channel input given dLoss/dProbability.
    pub fn backward(&mut self, grad_prob: &Tensor) -> Tensor {
        let gz = self.sigmoid.backward(grad_prob);
        let gflat = self.dense.backward(&gz);
        let shape = self.flat_shape.take().expect("discriminator backward without forward");
        let mut g = gflat.reshaped(&shape);
        for b in self.blocks.iter_mut().rev() {
            g = b.act.backward(&g);
            if let Some(bn) = &mut b.bn {
                g = bn.backward(&g);
            }
            g = b.conv.backward(&g);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.conv.params_mut());
            if let Some(bn) = &mut b.bn {
                out.extend(bn.params_mut());
            }
        }
        out.extend(self.dense.params_mut());
        out
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_adv_loss: f64,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Discriminator loss (negated min-max objective) and the non-saturating
/// generator adversarial term.
pub fn gan_losses(d_real: f64, d_fake: f64) -> GanLosses {
    let r = clamp_prob(d_real);
    let f = clamp_prob(d_fake);
    GanLosses {
        d_loss: -(r.ln() + (1.0 - f).ln()),
        g_adv_loss: -f.ln(),
    }
}

/// Adversarial term plus the weighted mean absolute error.
pub fn total_g_loss(g_adv_loss: f64, g_output: &Tensor, target: &Tensor, l1_weight: f64) -> f64 {
    assert_eq!(g_output.shape(), target.shape());
    let l1: f64 = g_output
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / g_output.numel() as f64;
    g_adv_loss + l1_weight * l1
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Which noise conditions a front-end trains on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrontEndKind {
    NoiseSpecific(crate::corpus::NoiseType),
    NoiseGeneral,
}

impl FrontEndKind {
    pub fn label(&self) -> String {
        match self {
            FrontEndKind::NoiseSpecific(n) => format!("ns:{n}"),
            FrontEndKind::NoiseGeneral => "ng".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub g_steps_per_iter: usize,
    pub l1_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub side: usize,
    pub channel_base: usize,
    pub channel_cap: usize,
    pub front_end: FrontEndKind,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: 64x64 chunks, channel cap 128. The full-scale
    /// 256x256 / cap-512 setting is `TrainConfig::full_scale()`.
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 1,
            g_steps_per_iter: 2,
            l1_weight: 100.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            side: 64,
            channel_base: 64,
            channel_cap: 128,
            front_end: FrontEndKind::NoiseGeneral,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        TrainConfig {
            side: 256,
            channel_cap: 512,
            ..TrainConfig::default()
        }
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("g_steps_per_iter".into(), self.g_steps_per_iter.to_string());
        m.insert("l1_weight".into(), self.l1_weight.to_string());
        m.insert("lr".into(), self.lr.to_string());
        m.insert("beta1".into(), self.beta1.to_string());
        m.insert("beta2".into(), self.beta2.to_string());
        m.insert("side".into(), self.side.to_string());
        m.insert("channel_base".into(), self.channel_base.to_string());
        m.insert("channel_cap".into(), self.channel_cap.to_string());
        m.insert("front_end".into(), self.front_end.label());
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossRecord {
    pub iteration: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
}

pub struct TrainResult {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<LossRecord>,
    pub d_steps: usize,
    pub g_steps: usize,
}

/// Write the loss history as "iteration d_loss g_adv g_l1" lines.
pub fn write_loss_log(path: impl AsRef<std::path::Path>, history: &[LossRecord]) -> Result<()> {
    let mut out = String::new();
    for r in history {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6}\n",
            r.iteration, r.d_loss, r.g_adv, r.g_l1
        ));
    }
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

fn chunk_to_tensor(c: &SpectroChunk) -> Tensor {
    let side = c.data.rows();
    Tensor::from_vec(&[1, 1, side, side], c.data.data().to_vec())
}

/// Adversarial training: per pair one discriminator step (real vs detached
/// fake), then `g_steps_per_iter` generator steps with fresh forwards.
pub fn train(pairs: &[(SpectroChunk, SpectroChunk)], cfg: &TrainConfig) -> Result<TrainResult> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let side = cfg.side;
    let scale = pairs[0].0.norm.scale;
    for (noisy, clean) in pairs {
        if noisy.data.rows() != side || clean.data.rows() != side {
            return Err(Error::Shape(format!(
                "chunk side {} does not match configured side {side}",
                noisy.data.rows()
            )));
        }
        if noisy.norm.scale != scale || clean.norm.scale != scale {
            return Err(Error::InvalidArgument(
                "all chunks must share one normalization state".into(),
            ));
        }
    }

    let mut g_net = build_unet(side, cfg.channel_base, cfg.channel_cap, derive_seed(cfg.seed, "g"))?;
    let mut d_net = build_discriminator(side, cfg.channel_base, cfg.channel_cap, derive_seed(cfg.seed, "d"))?;
    let mut adam_g = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut adam_d = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));

    let mut history = Vec::new();
    let mut d_steps = 0usize;
    let mut g_steps = 0usize;
    let mut iteration = 0usize;

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for &pi in &order {
            let (noisy, clean) = &pairs[pi];
            let y = chunk_to_tensor(noisy);
            let x = chunk_to_tensor(clean);

            // --- Discriminator step: real pair, then detached fake pair.
            for p in d_net.params_mut() {
                p.zero_grad();
            }
            let real_pair = concat_channels(&y, &x);
            let p_real = d_net.forward(&real_pair, Mode::Train).data()[0];
            let r = clamp_prob(p_real);
            d_net.backward(&Tensor::from_vec(&[1, 1], vec![-1.0 / r]));

            let fake = g_net.forward(&y, Mode::Train); // detached: no G backward here
            let fake_pair = concat_channels(&y, &fake);
            let p_fake_d = d_net.forward(&fake_pair, Mode::Train).data()[0];
            let f = clamp_prob(p_fake_d);
            d_net.backward(&Tensor::from_vec(&[1, 1], vec![1.0 / (1.0 - f)]));

            adam_d.step(&mut d_net.params_mut());
            d_steps += 1;
            let d_loss = gan_losses(p_real, p_fake_d).d_loss;

            // --- Generator steps on the same pair, fresh forward passes.
            let mut last_adv = 0.0;
            let mut last_l1 = 0.0;
            for _ in 0..cfg.g_steps_per_iter {
                for p in g_net.params_mut() {
                    p.zero_grad();
                }
                for p in d_net.params_mut() {
                    p.zero_grad(); // discarded, D is frozen this step
                }
                let fake = g_net.forward(&y, Mode::Train);
                let pair = concat_channels(&y, &fake);
                let p_fake = d_net.forward(&pair, Mode::Train).data()[0];
                let f = clamp_prob(p_fake);
                last_adv = -f.ln();

                let n_el = fake.numel() as f64;
                let mut l1 = 0.0;
                let mut g_l1 = Tensor::zeros(fake.shape());
                for (i, (fv, xv)) in fake.data().iter().zip(x.data()).enumerate() {
                    let d = fv - xv;
                    l1 += d.abs();
                    g_l1.data_mut()[i] = cfg.l1_weight * d.signum() / n_el;
                }
                l1 /= n_el;
                last_l1 = cfg.l1_weight * l1;

                let g_pair = d_net.backward(&Tensor::from_vec(&[1, 1], vec![-1.0 / f]));
                let (_g_cond, g_fake) = split_channels(&g_pair, 1);
                let g_total = g_fake.add(&g_l1);
                g_net.backward(&g_total);
                adam_g.step(&mut g_net.params_mut());
                g_steps += 1;
            }

            iteration += 1;
            history.push(LossRecord {
                iteration,
                d_loss,
                g_adv: last_adv,
                g_l1: last_l1,
            });
        }
    }

    let norm = NormState::new(scale)?;
    let checkpoint = checkpoint_from_generator(&mut g_net, norm, cfg);
    Ok(TrainResult {
        checkpoint,
        history,
        d_steps,
        g_steps,
    })
}

fn checkpoint_from_generator(g: &mut GeneratorNet, norm: NormState, cfg: &TrainConfig) -> ModelCheckpoint {
    let mut tensors = Vec::new();
    for p in g.params_mut() {
        tensors.push(NamedTensor {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().iter().map(|&v| v as f32).collect(),
        });
    }
    for (name, buf) in g.buffers() {
        tensors.push(NamedTensor {
            name,
            shape: vec![buf.len()],
            data: buf.iter().map(|&v| v as f32).collect(),
        });
    }
    ModelCheckpoint {
        architecture: Architecture::Pix2Pix {
            side: g.side,
            channel_base: g.channel_base,
            channel_cap: g.channel_cap,
        },
        train_seed: cfg.seed,
        norm_scale: Some(norm.scale),
        config: cfg.echo(),
        tensors,
    }
}

/// Rebuild the generator (eval-ready) from a checkpoint, validating the
/// architecture descriptor against the stored tensor shapes.
pub fn generator_from_checkpoint(ckpt: &ModelCheckpoint) -> Result<(GeneratorNet, NormState)> {
    let (side, base, cap) = match ckpt.architecture {
        Architecture::Pix2Pix {
            side,
            channel_base,
            channel_cap,
        } => (side, channel_base, channel_cap),
        _ => return Err(Error::Checkpoint("not a spectrogram GAN checkpoint".into())),
    };
    let mut g = build_unet(side, base, cap, ckpt.train_seed)?;
    for p in g.params_mut() {
        let t = ckpt.tensor(&p.name)?;
        if t.shape != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} has shape {:?}, architecture expects {:?}",
                p.name,
                t.shape,
                p.value.shape()
            )));
        }
        for (dst, src) in p.value.data_mut().iter_mut().zip(&t.data) {
            *dst = *src as f64;
        }
    }
    g.load_buffers(|name| {
        let t = ckpt.tensor(name)?;
        Ok(t.data.iter().map(|&v| v as f64).collect())
    })?;
    let scale = ckpt
        .norm_scale
        .ok_or_else(|| Error::Checkpoint("missing normalization scale".into()))?;
    Ok((g, NormState::new(scale)?))
}

// ---------------------------------------------------------------------------
// Enhancement
// ---------------------------------------------------------------------------

/// Enhance a waveform with a trained generator: STFT at the checkpoint's
/// chunk geometry, zero-padded chunking, eval-mode forward, denormalize,
/// zero top row, ISTFT with the noisy phase, trim to the input length.
pub fn enhance_pix2pix(w: &Waveform, ckpt: &ModelCheckpoint) -> Result<Waveform> {
    let (mut g, norm) = generator_from_checkpoint(ckpt)?;
    let side = g.side;
    let nfft = 2 * side;
    let hop = side;
    if w.sample_rate != crate::corpus::DEFAULT_SAMPLE_RATE {
        return Err(Error::SampleRateMismatch {
            expected: crate::corpus::DEFAULT_SAMPLE_RATE,
            got: w.sample_rate,
        });
    }

    let n = w.len();
    if n < nfft {
        return Err(Error::TooShort { need: nfft, got: n });
    }
    let frames_needed = (n - nfft).div_ceil(hop) + 1;
    let padded_len = (frames_needed - 1) * hop + nfft;
    let mut padded = w.samples.clone();
    padded.resize(padded_len, 0.0);
    let spec = stft_with(&Waveform::new(padded, w.sample_rate), nfft, hop)?;

    let set = chunk_for_gan(&mag_to_db(&spec.mag), norm, side)?;
    let mut outputs = Vec::with_capacity(set.chunks.len());
    for c in &set.chunks {
        let t = chunk_to_tensor(c);
        let y = g.forward(&t, Mode::Eval);
        outputs.push(Mat::from_vec(side, side, y.data().to_vec()));
    }
    let db = set.reassemble(&outputs, None)?;
    let mut mag = db_to_mag(&db);
    // The removed highest band comes back as exact silence.
    for v in mag.row_mut(side) {
        *v = 0.0;
    }

    let enhanced = crate::dsp::Spectrogram {
        mag,
        phase: spec.phase.clone(),
        sample_rate: spec.sample_rate,
        nfft,
        hop,
    };
    let mut out = istft(&enhanced);
    out.samples.truncate(n);
    Ok(out)
}

/// Chunk-pair preparation for training: magnitudes of aligned noisy/clean
/// utterances to the GAN's dB representation, one shared normalization
/// over both sides, concatenated chunking.
pub fn training_chunks(
    noisy_mags: &[Mat],
    clean_mags: &[Mat],
    side: usize,
) -> Result<Vec<(SpectroChunk, SpectroChunk)>> {
    let noisy_db: Vec<Mat> = noisy_mags.iter().map(mag_to_db).collect();
    let clean_db: Vec<Mat> = clean_mags.iter().map(mag_to_db).collect();
    let all: Vec<&Mat> = noisy_db.iter().chain(clean_db.iter()).collect();
    let norm = NormState::fit(&all)?;
    let nr: Vec<&Mat> = noisy_db.iter().collect();
    let cr: Vec<&Mat> = clean_db.iter().collect();
    let noisy_chunks = crate::dsp::chunk_training(&nr, norm, side)?;
    let clean_chunks = crate::dsp::chunk_training(&cr, norm, side)?;
    Ok(noisy_chunks.into_iter().zip(clean_chunks).collect())
}
