//! Common front-end interface over the three enhancers plus the identity
//! ("no enhancement") baseline.

use crate::checkpoint::ModelCheckpoint;
use crate::corpus::Waveform;
use crate::error::Result;

pub trait Enhancer: Sync {
    fn name(&self) -> &str;
    fn enhance(&self, w: &Waveform) -> Result<Waveform>;
}

pub struct NoEnhancement;

impl Enhancer for NoEnhancement {
    fn name(&self) -> &str {
        "none"
    }
    fn enhance(&self, w: &Waveform) -> Result<Waveform> {
        Ok(w.clone())
    }
}

pub struct MmseEnhancer;

impl Enhancer for MmseEnhancer {
    fn name(&self) -> &str {
        "mmse"
    }
    fn enhance(&self, w: &Waveform) -> Result<Waveform> {
        crate::mmse::enhance_mmse(w)
    }
}

pub struct Pix2PixEnhancer {
    pub name: String,
    pub checkpoint: ModelCheckpoint,
}

impl Enhancer for Pix2PixEnhancer {
    fn name(&self) -> &str {
        &self.name
    }
    fn enhance(&self, w: &Waveform) -> Result<Waveform> {
        crate::pix2pix::enhance_pix2pix(w, &self.checkpoint)
    }
}

pub struct DnnSeEnhancer {
    pub name: String,
    pub checkpoint: ModelCheckpoint,
}

impl Enhancer for DnnSeEnhancer {
    fn name(&self) -> &str {
        &self.name
    }
    fn enhance(&self, w: &Waveform) -> Result<Waveform> {
        crate::dnnse::enhance_dnnse(w, &self.checkpoint)
    }
}
