//! Square-chunk preparation for the spectrogram GAN: last-row removal,
//! zero padding to a multiple of the chunk side, [-1, 1] normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Global linear magnitude normalization. `scale` is the maximum magnitude
/// over the training corpus, stored in checkpoints so enhancement is
/// invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub scale: f64,
}

impl NormState {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "normalization scale must be positive, got {scale}"
            )));
        }
        Ok(NormState { scale })
    }

    /// Largest magnitude over a set of spectrogram magnitude matrices.
    pub fn fit(mags: &[&Mat]) -> Result<Self> {
        let mut max = 0.0f64;
        for m in mags {
            max = max.max(m.max_value());
        }
        NormState::new(max)
    }

    /// Map a magnitude to [-1, 1]: u = 2*min(v/scale, 1) - 1.
    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v / self.scale).min(1.0) - 1.0
    }

    /// Inverse map; clamps to non-negative magnitudes.
    #[inline]
    pub fn denormalize(&self, u: f64) -> f64 {
        (((u + 1.0) / 2.0) * self.scale).max(0.0)
    }
}

/// One side x side normalized magnitude chunk, entries in [-1, 1].
#[derive(Debug, Clone)]
pub struct SpectroChunk {
    pub data: Mat,
    pub norm: NormState,
}

/// Chunks of one utterance plus everything needed to reassemble it.
#[derive(Debug, Clone)]
pub struct ChunkSet {
    pub chunks: Vec<SpectroChunk>,
    pub side: usize,
    /// Frame count before zero padding.
    pub orig_frames: usize,
    /// The removed highest-band row (kept for exact reassembly).
    pub last_row: Vec<f64>,
    pub norm: NormState,
}

/// Test-time chunking: drop the highest-band row, zero-pad the frame count
/// up to a multiple of `side`, split into side x side chunks, normalize.
pub fn chunk_for_gan(mag: &Mat, norm: NormState, side: usize) -> Result<ChunkSet> {
    if mag.rows() != side + 1 {
        return Err(Error::Shape(format!(
            "expected {} spectrogram rows for side {side}, got {}",
            side + 1,
            mag.rows()
        )));
    }
    let t = mag.cols();
    if t == 0 {
        return Err(Error::Shape("empty spectrogram".into()));
    }
    let n_chunks = t.div_ceil(side);
    let last_row = mag.row(side).to_vec();

    let mut chunks = Vec::with_capacity(n_chunks);
    for c in 0..n_chunks {
        let mut data = Mat::zeros(side, side);
        for r in 0..side {
            for j in 0..side {
                let col = c * side + j;
                let v = if col < t { mag.at(r, col) } else { 0.0 };
                *data.at_mut(r, j) = norm.normalize(v);
            }
        }
        chunks.push(SpectroChunk { data, norm });
    }

    Ok(ChunkSet {
        chunks,
        side,
        orig_frames: t,
        last_row,
        norm,
    })
}

impl ChunkSet {
    /// Rebuild an F x T magnitude matrix from (possibly replaced) chunk
    /// contents: un-pad, denormalize, re-append the top row. `top_row`
    /// None means a zero row (the synthesis default).
    pub fn reassemble(&self, chunk_data: &[Mat], top_row: Option<&[f64]>) -> Result<Mat> {
        if chunk_data.len() != self.chunks.len() {
            return Err(Error::Shape(format!(
                "expected {} chunks, got {}",
                self.chunks.len(),
                chunk_data.len()
            )));
        }
        let side = self.side;
        let mut out = Mat::zeros(side + 1, self.orig_frames);
        for (c, data) in chunk_data.iter().enumerate() {
            if data.rows() != side || data.cols() != side {
                return Err(Error::Shape("chunk dimension mismatch".into()));
            }
            for j in 0..side {
                let col = c * side + j;
                if col >= self.orig_frames {
                    break;
                }
                for r in 0..side {
                    *out.at_mut(r, col) = self.norm.denormalize(data.at(r, j));
                }
            }
        }
        match top_row {
            Some(row) => {
                if row.len() != self.orig_frames {
                    return Err(Error::Shape("top row length mismatch".into()));
                }
                out.row_mut(side).copy_from_slice(row);
            }
            None => {} // stays zero
        }
        Ok(out)
    }

    /// Exact inverse of `chunk_for_gan` for magnitudes within scale.
    pub fn restore_original(&self) -> Result<Mat> {
        let data: Vec<Mat> = self.chunks.iter().map(|c| c.data.clone()).collect();
        self.reassemble(&data, Some(&self.last_row))
    }
}

/// Training-time chunking: concatenate utterance magnitudes along time and
/// split every `side` frames with no padding (the remainder is dropped).
pub fn chunk_training(mags: &[&Mat], norm: NormState, side: usize) -> Result<Vec<SpectroChunk>> {
    for m in mags {
        if m.rows() != side + 1 {
            return Err(Error::Shape(format!(
                "expected {} spectrogram rows for side {side}, got {}",
                side + 1,
                m.rows()
            )));
        }
    }
    let total: usize = mags.iter().map(|m| m.cols()).sum();
    let n_chunks = total / side;
    let mut chunks = Vec::with_capacity(n_chunks);

    // Walk the concatenated frame axis.
    let mut src = 0usize; // which matrix
    let mut src_col = 0usize;
    for _ in 0..n_chunks {
        let mut data = Mat::zeros(side, side);
        for j in 0..side {
            while src_col >= mags[src].cols() {
                src += 1;
                src_col = 0;
            }
            for r in 0..side {
                *data.at_mut(r, j) = norm.normalize(mags[src].at(r, src_col));
            }
            src_col += 1;
        }
        chunks.push(SpectroChunk { data, norm });
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalize_anchors() {
        let n = NormState::new(4.0).unwrap();
        assert_eq!(n.normalize(0.0), -1.0);
        assert_eq!(n.normalize(4.0), 1.0);
        assert_eq!(n.normalize(2.0), 0.0);
        assert_eq!(n.denormalize(0.0), 2.0);
        assert_abs_diff_eq!(n.denormalize(n.normalize(2.0)), 2.0, epsilon = 0.0);
        // Above scale the forward map saturates at 1.
        assert_eq!(n.normalize(9.0), 1.0);
        // Denormalize clamps to non-negative magnitudes.
        assert_eq!(n.denormalize(-3.0), 0.0);
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(NormState::new(0.0).is_err());
        assert!(NormState::new(-1.0).is_err());
    }

    #[test]
    fn chunking_257x300_gives_two_chunks_with_pad() {
        let mag = Mat::from_fn(257, 300, |r, c| ((r * 300 + c) % 17) as f64 * 0.1);
        let norm = NormState::new(2.0).unwrap();
        let set = chunk_for_gan(&mag, norm, 256).unwrap();
        assert_eq!(set.chunks.len(), 2);
        assert_eq!(set.orig_frames, 300);
        // Frames 301..512 (1-based) of chunk 2 are padding: normalize(0) = -1.
        let c2 = &set.chunks[1].data;
        for r in 0..256 {
            for j in 44..256 {
                assert_eq!(c2.at(r, j), -1.0, "r={r} j={j}");
            }
            // Frame 300 (index 43 in chunk 2) is real data.
            assert_eq!(c2.at(r, 43), norm.normalize(mag.at(r, 299)));
        }
    }

    #[test]
    fn exactly_one_chunk_at_256_frames() {
        let mag = Mat::zeros(257, 256);
        let set = chunk_for_gan(&mag, NormState::new(1.0).unwrap(), 256).unwrap();
        assert_eq!(set.chunks.len(), 1);
    }

    #[test]
    fn wrong_row_count_rejected() {
        let mag = Mat::zeros(256, 300);
        assert!(chunk_for_gan(&mag, NormState::new(1.0).unwrap(), 256).is_err());
    }

    #[test]
    fn chunk_then_restore_is_exact_within_scale() {
        let mag = Mat::from_fn(65, 100, |r, c| ((r * 31 + c * 7) % 23) as f64 / 23.0);
        let norm = NormState::new(1.0).unwrap();
        let set = chunk_for_gan(&mag, norm, 64).unwrap();
        let back = set.restore_original().unwrap();
        assert_eq!(back.rows(), 65);
        assert_eq!(back.cols(), 100);
        for r in 0..65 {
            for c in 0..100 {
                assert_abs_diff_eq!(back.at(r, c), mag.at(r, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn training_chunks_concatenate_and_drop_remainder() {
        let a = Mat::from_fn(65, 70, |r, c| (r + c) as f64 * 1e-3);
        let b = Mat::from_fn(65, 70, |r, c| (r * c) as f64 * 1e-4);
        let norm = NormState::new(1.0).unwrap();
        let chunks = chunk_training(&[&a, &b], norm, 64).unwrap();
        // 140 frames total -> 2 chunks of 64, 12 frames dropped.
        assert_eq!(chunks.len(), 2);
        // Chunk 2 column 0 is concatenated frame 64, i.e. column 64 of a.
        assert_eq!(chunks[1].data.at(3, 0), norm.normalize(a.at(3, 64)));
        // Chunk 2 column 6 is concatenated frame 70 = column 0 of b.
        assert_eq!(chunks[1].data.at(3, 6), norm.normalize(b.at(3, 0)));
        for ch in &chunks {
            assert!(ch.data.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }
}
