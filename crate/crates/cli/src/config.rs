//! Run configuration: `key = value` text files with `#` comments, merged
//! with command-line overrides. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use senh_core::corpus::NoiseType;
use senh_core::pix2pix::FrontEndKind;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    // Spectrogram GAN
    pub epochs: usize,
    pub batch_size: usize,
    pub g_steps_per_iter: usize,
    pub l1_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub side: usize,
    pub channel_base: usize,
    pub channel_cap: usize,
    // Mask-estimator DNN
    pub dnn_epochs: usize,
    pub dnn_batch_size: usize,
    pub dnn_lr: f64,
    pub val_fraction: f64,
    // Speaker verification
    pub gmm_components: usize,
    pub map_relevance: f64,
    pub em_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gan = senh_core::pix2pix::TrainConfig::default();
        let dnn = senh_core::dnnse::DnnTrainConfig::default();
        let asv = senh_core::asv::AsvConfig::default();
        RunConfig {
            seed: 0,
            epochs: gan.epochs,
            batch_size: gan.batch_size,
            g_steps_per_iter: gan.g_steps_per_iter,
            l1_weight: gan.l1_weight,
            lr: gan.lr,
            beta1: gan.beta1,
            beta2: gan.beta2,
            side: gan.side,
            channel_base: gan.channel_base,
            channel_cap: gan.channel_cap,
            dnn_epochs: dnn.epochs,
            dnn_batch_size: dnn.batch_size,
            dnn_lr: dnn.lr,
            val_fraction: dnn.val_fraction,
            gmm_components: asv.components,
            map_relevance: asv.relevance,
            em_iters: asv.final_em_iters,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("cannot read {path:?}: {e}"))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("bad value {v:?} for key {key:?}"))
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "g_steps_per_iter" => self.g_steps_per_iter = parse(key, value)?,
            "l1_weight" => self.l1_weight = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "side" => self.side = parse(key, value)?,
            "channel_base" => self.channel_base = parse(key, value)?,
            "channel_cap" => self.channel_cap = parse(key, value)?,
            "dnn_epochs" => self.dnn_epochs = parse(key, value)?,
            "dnn_batch_size" => self.dnn_batch_size = parse(key, value)?,
            "dnn_lr" => self.dnn_lr = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "gmm_components" => self.gmm_components = parse(key, value)?,
            "map_relevance" => self.map_relevance = parse(key, value)?,
            "em_iters" => self.em_iters = parse(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    pub fn gan_config(&self, front_end: FrontEndKind) -> senh_core::pix2pix::TrainConfig {
        senh_core::pix2pix::TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            g_steps_per_iter: self.g_steps_per_iter,
            l1_weight: self.l1_weight,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: 1e-8,
            seed: self.seed,
            side: self.side,
            channel_base: self.channel_base,
            channel_cap: self.channel_cap,
            front_end,
        }
    }

    pub fn dnn_config(&self, front_end: FrontEndKind) -> senh_core::dnnse::DnnTrainConfig {
        senh_core::dnnse::DnnTrainConfig {
            epochs: self.dnn_epochs,
            batch_size: self.dnn_batch_size,
            lr: self.dnn_lr,
            seed: self.seed,
            val_fraction: self.val_fraction,
            front_end,
        }
    }

    pub fn asv_config(&self) -> senh_core::asv::AsvConfig {
        senh_core::asv::AsvConfig {
            components: self.gmm_components,
            relevance: self.map_relevance,
            final_em_iters: self.em_iters,
        }
    }

    /// Fully-resolved key/value view, logged with every run.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("seed".into(), self.seed.to_string());
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
        m.insert("dnn_epochs".into(), self.dnn_epochs.to_string());
        m.insert("dnn_batch_size".into(), self.dnn_batch_size.to_string());
        m.insert("dnn_lr".into(), self.dnn_lr.to_string());
        m.insert("val_fraction".into(), self.val_fraction.to_string());
        m.insert("gmm_components".into(), self.gmm_components.to_string());
        m.insert("map_relevance".into(), self.map_relevance.to_string());
        m.insert("em_iters".into(), self.em_iters.to_string());
        m
    }
}

/// Parse "ns:<noise>" or "ng".
pub fn parse_front_end(s: &str) -> Result<FrontEndKind, String> {
    if s == "ng" {
        return Ok(FrontEndKind::NoiseGeneral);
    }
    if let Some(noise) = s.strip_prefix("ns:") {
        let nt = NoiseType::parse(noise).ok_or_else(|| format!("unknown noise type {noise:?}"))?;
        return Ok(FrontEndKind::NoiseSpecific(nt));
    }
    Err(format!("bad front-end {s:?}: expected `ng` or `ns:<noise>`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("seed", "7").is_ok());
        assert_eq!(cfg.seed, 7);
        assert!(cfg.set("not_a_key", "1").is_err());
        assert!(cfg.set("epochs", "banana").is_err());
    }

    #[test]
    fn parses_file_with_comments() {
        let dir = std::env::temp_dir().join(format!("senh-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.cfg");
        std::fs::write(&p, "# comment\nseed = 11\nside = 32 # inline\n\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.side, 32);
    }

    #[test]
    fn front_end_parsing() {
        assert_eq!(parse_front_end("ng").unwrap(), FrontEndKind::NoiseGeneral);
        assert_eq!(
            parse_front_end("ns:white").unwrap(),
            FrontEndKind::NoiseSpecific(NoiseType::White)
        );
        assert!(parse_front_end("ns:thunder").is_err());
        assert!(parse_front_end("xyz").is_err());
    }
}
