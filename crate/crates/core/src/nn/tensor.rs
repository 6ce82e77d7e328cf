//! N-dimensional f64 tensor and named trainable parameter.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Row-major N-d array. 64-bit values so finite-difference gradient checks
/// are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length must match shape"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Seeded standard-normal tensor (test fixtures, probes).
    pub fn randn(shape: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| dist.sample(&mut rng))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(self.data.len(), shape.iter().product::<usize>());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn assert_finite(&self, context: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite values after {context}"
        );
    }
}

/// Concatenate two NCHW tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa.len(), 4);
    assert_eq!(sb.len(), 4);
    assert_eq!(sa[0], sb[0]);
    assert_eq!(sa[2], sb[2]);
    assert_eq!(sa[3], sb[3]);
    let (n, ca, cb, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    for i in 0..n {
        let dst = &mut out.data_mut()[i * (ca + cb) * plane..];
        dst[..ca * plane].copy_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        dst[ca * plane..(ca + cb) * plane]
            .copy_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    out
}

/// Split a gradient w.r.t. a channel concatenation back into both parts.
pub fn split_channels(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let s = g.shape();
    assert_eq!(s.len(), 4);
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    assert!(ca < c);
    let cb = c - ca;
    let plane = h * w;
    let mut a = Tensor::zeros(&[n, ca, h, w]);
    let mut b = Tensor::zeros(&[n, cb, h, w]);
    for i in 0..n {
        let src = &g.data()[i * c * plane..];
        a.data_mut()[i * ca * plane..(i + 1) * ca * plane].copy_from_slice(&src[..ca * plane]);
        b.data_mut()[i * cb * plane..(i + 1) * cb * plane]
            .copy_from_slice(&src[ca * plane..c * plane]);
    }
    (a, b)
}

/// Trainable tensor with an accumulated gradient and a stable name used for
/// checkpointing and optimizer slot matching.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

/// In-place normal initialization with the given mean/std, deterministic
/// for a fixed seed.
pub fn init_normal(t: &mut Tensor, mean: f64, std: f64, seed: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = Normal::new(mean, std).unwrap();
    for v in t.data_mut() {
        *v = dist.sample(&mut rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_split_round_trip() {
        let a = Tensor::randn(&[2, 3, 4, 4], 1);
        let b = Tensor::randn(&[2, 5, 4, 4], 2);
        let c = concat_channels(&a, &b);
        assert_eq!(c.shape(), &[2, 8, 4, 4]);
        let (ra, rb) = split_channels(&c, 3);
        assert_eq!(ra, a);
        assert_eq!(rb, b);
    }

    #[test]
    fn init_normal_is_calibrated_and_deterministic() {
        let mut t = Tensor::zeros(&[1_000_000]);
        init_normal(&mut t, 0.0, 0.02, 42);
        let mean = t.data().iter().sum::<f64>() / t.numel() as f64;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / t.numel() as f64;
        assert!(mean.abs() < 1e-4, "mean {mean}");
        assert!((var.sqrt() - 0.02).abs() < 1e-3, "std {}", var.sqrt());

        let mut t2 = Tensor::zeros(&[1_000_000]);
        init_normal(&mut t2, 0.0, 0.02, 42);
        assert_eq!(t.data(), t2.data());
    }
}
