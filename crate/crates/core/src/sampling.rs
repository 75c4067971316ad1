//! Seeded draws from `½N(μ₁, Σ) + ½N(μ₂, Σ)`.
//!
//! Generator: ChaCha8 keyed by `seed` (expanded with `SeedableRng::seed_from_u64`)
//! with the ChaCha stream id set to `stream`. Distinct stream ids give
//! independent substreams of one seed, so per-iteration batches are addressable
//! without sharing generator state. Standard normals use the Marsaglia polar
//! method; uniforms take the top 53 bits of a `u64`; the component coin is the
//! top bit of a `u64`. Batches are bit-reproducible for a given build.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{check_dim, invalid, Error, Result};
use crate::geometry::CovarianceModel;
use crate::population::MixtureSpec;

/// SplitMix64 finalizer; mixes a label into a seed to derive child seeds.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One substream of the fixed generator.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn coin(&mut self) -> bool {
        self.rng.next_u64() >> 63 == 1
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let k = libm::sqrt(-2.0 * libm::log(s) / s);
                self.spare = Some(v * k);
                return u * k;
            }
        }
    }

    /// Fills `out` with `mean + Σ^{1/2}·z`, `z ~ N(0, I)`.
    pub fn gaussian_into(&mut self, mean: &[f64], cov: &CovarianceModel, z: &mut [f64], out: &mut [f64]) {
        for zi in z.iter_mut() {
            *zi = self.normal();
        }
        cov.unwhiten_into(z, out);
        for (o, m) in out.iter_mut().zip(mean) {
            *o += m;
        }
    }
}

/// Parameters that generated a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOrigin {
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Points stored row-major, one d-vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    data: Vec<f64>,
    origin: Option<SampleOrigin>,
    seed: u64,
    stream: u64,
    stabilized: bool,
    centered_by: Option<DVector<f64>>,
}

/// `n` draws from the two-component mixture on stream 0 of `seed`.
pub fn draw(
    n: usize,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    cov: &CovarianceModel,
    seed: u64,
) -> Result<SampleBatch> {
    draw_stream(n, mu1, mu2, cov, seed, 0)
}

/// As [`draw`], on an explicit substream.
pub fn draw_stream(
    n: usize,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    cov: &CovarianceModel,
    seed: u64,
    stream: u64,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let d = cov.dim();
    check_dim(d, mu1.len())?;
    check_dim(d, mu2.len())?;
    let mut rng = RngStream::new(seed, stream);
    let mut data = alloc::vec![0.0; n * d];
    let mut z = alloc::vec![0.0; d];
    for row in data.chunks_exact_mut(d) {
        let mean = if rng.coin() { mu1 } else { mu2 };
        rng.gaussian_into(mean.as_slice(), cov, &mut z, row);
    }
    Ok(SampleBatch {
        dim: d,
        data,
        origin: Some(SampleOrigin {
            mu1: mu1.clone(),
            mu2: mu2.clone(),
            sigma: cov.sigma().clone(),
        }),
        seed,
        stream,
        stabilized: false,
        centered_by: None,
    })
}

impl SampleBatch {
    /// Wraps externally supplied points (e.g. read from CSV).
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(invalid("data", "length must be a positive multiple of dim"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data", "entries must be finite"));
        }
        Ok(Self {
            dim,
            data,
            origin: None,
            seed: 0,
            stream: 0,
            stabilized: false,
            centered_by: None,
        })
    }

    /// Reattaches provenance metadata (used when importing a sidecar).
    pub fn with_metadata(
        mut self,
        origin: Option<SampleOrigin>,
        seed: u64,
        stream: u64,
        stabilized: bool,
        centered_by: Option<DVector<f64>>,
    ) -> Result<Self> {
        if stabilized && self.len() % 2 != 0 {
            return Err(invalid("stabilized", "a stabilized batch has an even number of points"));
        }
        if let Some(c) = &centered_by {
            check_dim(self.dim, c.len())?;
        }
        self.origin = origin;
        self.seed = seed;
        self.stream = stream;
        self.stabilized = stabilized;
        self.centered_by = centered_by;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn origin(&self) -> Option<&SampleOrigin> {
        self.origin.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn is_stabilized(&self) -> bool {
        self.stabilized
    }

    pub fn centered_by(&self) -> Option<&DVector<f64>> {
        self.centered_by.as_ref()
    }

    /// First `n` points as a new (unstabilized) batch with the same provenance.
    pub fn head(&self, n: usize) -> Result<Self> {
        if self.stabilized {
            return Err(Error::AlreadyStabilized);
        }
        if n == 0 || n > self.len() {
            return Err(Error::TooFewSamples {
                required: n,
                got: self.len(),
            });
        }
        Ok(Self {
            data: self.data[..n * self.dim].to_vec(),
            ..self.clone()
        })
    }

    /// Points `[start, start + n)` as a new batch.
    pub fn slice(&self, start: usize, n: usize) -> Result<Self> {
        if self.stabilized {
            return Err(Error::AlreadyStabilized);
        }
        if n == 0 || start + n > self.len() {
            return Err(Error::SourceExhausted {
                requested: n,
                available: self.len().saturating_sub(start),
            });
        }
        Ok(Self {
            data: self.data[start * self.dim..(start + n) * self.dim].to_vec(),
            ..self.clone()
        })
    }

    /// Replaces every `x` by the pair `(x − c, −(x − c))`.
    pub fn stabilize(&self, c: &DVector<f64>) -> Result<Self> {
        if self.stabilized {
            return Err(Error::AlreadyStabilized);
        }
        check_dim(self.dim, c.len())?;
        let mut data = Vec::with_capacity(2 * self.data.len());
        for p in self.points() {
            let start = data.len();
            data.extend(p.iter().zip(c.iter()).map(|(x, c)| x - c));
            for k in 0..self.dim {
                let v = -data[start + k];
                data.push(v);
            }
        }
        Ok(Self {
            dim: self.dim,
            data,
            origin: self.origin.clone(),
            seed: self.seed,
            stream: self.stream,
            stabilized: true,
            centered_by: Some(c.clone()),
        })
    }

    /// Column sums in row order.
    pub fn sum(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim);
        for p in self.points() {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        acc
    }

    pub fn mean(&self) -> DVector<f64> {
        self.sum() / self.len() as f64
    }
}

/// Monte-Carlo estimate of `E[tanh(⟨λ, x⟩_Σ)·x]` with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: DVector<f64>,
    pub std_err: DVector<f64>,
    pub n: usize,
}

pub const MC_MIN_SAMPLES: usize = 1000;

/// Brute-force oracle for the population update under `½N(μ₁,Σ) + ½N(μ₂,Σ)`.
pub fn mc_update(
    lambda: &DVector<f64>,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    cov: &CovarianceModel,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n < MC_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            required: MC_MIN_SAMPLES,
            got: n,
        });
    }
    let d = cov.dim();
    check_dim(d, lambda.len())?;
    check_dim(d, mu1.len())?;
    check_dim(d, mu2.len())?;
    let g = cov.precision_mul(lambda)?;
    let mut rng = RngStream::new(seed, 0);
    let mut z = alloc::vec![0.0; d];
    let mut x = alloc::vec![0.0; d];
    let mut mean = alloc::vec![0.0; d];
    let mut m2 = alloc::vec![0.0; d];
    for i in 0..n {
        let mu = if rng.coin() { mu1 } else { mu2 };
        rng.gaussian_into(mu.as_slice(), cov, &mut z, &mut x);
        let t = libm::tanh(g.iter().zip(&x).map(|(a, b)| a * b).sum());
        let count = (i + 1) as f64;
        for k in 0..d {
            let v = t * x[k];
            let delta = v - mean[k];
            mean[k] += delta / count;
            m2[k] += delta * (v - mean[k]);
        }
    }
    let nf = n as f64;
    let std_err = m2.iter().map(|s| libm::sqrt(s / (nf - 1.0) / nf)).collect::<Vec<_>>();
    Ok(McEstimate {
        mean: DVector::from_vec(mean),
        std_err: DVector::from_vec(std_err),
        n,
    })
}

/// [`mc_update`] for the symmetric mixture of `spec`.
pub fn mc_update_spec(lambda: &DVector<f64>, spec: &MixtureSpec, n: usize, seed: u64) -> Result<McEstimate> {
    mc_update(lambda, spec.mu(), &-spec.mu(), spec.cov(), n, seed)
}
