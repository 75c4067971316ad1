//! Finite-sample estimator: quartile centering, bootstrap initialization and
//! stabilized sample EM.
//!
//! 1. **Centering.** Per whitened axis, the midpoint of the first and third
//!    empirical quartiles estimates `(μ₁+μ₂)/2`.
//! 2. **Initialization.** On a centered, stabilized batch, EM run at the tiny
//!    magnitude `√(2/S)·ε` (with `S = Σᵢ‖xᵢ‖³_Σ`) is a power iteration for the
//!    empirical covariance, which aligns the direction with `μ`.
//! 3. **Main loop.** Starting from `Μ·λ̂`, iterate
//!    `λ ← (1/n)·Σᵢ tanh(⟨λ, xᵢ⟩_Σ)·xᵢ` on a fresh stabilized batch per step.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};
use crate::geometry::CovarianceModel;
use crate::sampling::{derive_seed, draw_stream, RngStream, SampleBatch};
use crate::stats;

/// Points per partial sum; partials are combined in index order.
const CHUNK: usize = 512;

/// Minimum eigen-gap ratio below which the bootstrap is declared hopeless.
pub const NO_SIGNAL_GAP: f64 = 1.05;
/// Direction change (radians) still tolerated when the bootstrap cap is hit.
pub const INIT_ANGLE_LIMIT: f64 = 0.1;
const INIT_ANGLE_CONVERGED: f64 = 1e-3;
const PROBE_POINTS: usize = 64;
const BLOWUP_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Centering,
    Initialization,
    MainLoop,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Centering => "centering",
            Stage::Initialization => "initialization",
            Stage::MainLoop => "main_loop",
        }
    }

    fn label(self) -> u64 {
        match self {
            Stage::Centering => 1,
            Stage::Initialization => 2,
            Stage::MainLoop => 3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn tag(stage: Stage) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quartile {
    First,
    Third,
}

/// Order statistic at rank `⌈n/4⌉` (first) or `⌈3n/4⌉` (third), 1-based, no interpolation.
pub fn quartile(values: &[f64], which: Quartile) -> Result<f64> {
    let n = values.len();
    if n < 4 {
        return Err(Error::TooFewSamples { required: 4, got: n });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = match which {
        Quartile::First => n.div_ceil(4),
        Quartile::Third => (3 * n).div_ceil(4),
    };
    Ok(sorted[rank - 1])
}

/// Estimate of the mixture midpoint `(μ₁+μ₂)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterEstimate {
    pub c: DVector<f64>,
    /// `(first, third)` quartile per whitened axis.
    pub per_axis_quartiles: Vec<(f64, f64)>,
    pub n_used: usize,
}

pub const CENTER_MIN_SAMPLES: usize = 8;

pub fn estimate_center(batch: &SampleBatch, cov: &CovarianceModel) -> Result<CenterEstimate> {
    check_dim(cov.dim(), batch.dim())?;
    if batch.is_stabilized() {
        return Err(Error::AlreadyStabilized);
    }
    if batch.centered_by().is_some() {
        return Err(Error::AlreadyCentered);
    }
    let n = batch.len();
    if n < CENTER_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            required: CENTER_MIN_SAMPLES,
            got: n,
        });
    }
    let d = batch.dim();
    let mut axes: Vec<Vec<f64>> = (0..d).map(|_| Vec::with_capacity(n)).collect();
    let mut w = alloc::vec![0.0; d];
    for p in batch.points() {
        cov.whiten_into(p, &mut w);
        for (axis, v) in axes.iter_mut().zip(&w) {
            axis.push(*v);
        }
    }
    let mut per_axis_quartiles = Vec::with_capacity(d);
    let mut mid = DVector::zeros(d);
    for (k, axis) in axes.iter().enumerate() {
        let q1 = quartile(axis, Quartile::First)?;
        let q3 = quartile(axis, Quartile::Third)?;
        per_axis_quartiles.push((q1, q3));
        mid[k] = 0.5 * (q1 + q3);
    }
    Ok(CenterEstimate {
        c: cov.unwhiten(&mid)?,
        per_axis_quartiles,
        n_used: n,
    })
}

fn require_stabilized(batch: &SampleBatch, cov: &CovarianceModel) -> Result<()> {
    check_dim(cov.dim(), batch.dim())?;
    if !batch.is_stabilized() {
        return Err(Error::NotStabilized);
    }
    if batch.is_empty() {
        return Err(Error::TooFewSamples { required: 2, got: 0 });
    }
    Ok(())
}

/// Sums `f(x)` over one representative of each `(x, −x)` pair, chunk by chunk.
/// `f` must be even in `x`, so the pair mean equals the mean over the full batch.
fn pair_mean<F>(batch: &SampleBatch, width: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = batch.dim();
    let pairs = batch.len() / 2;
    let data = batch.as_slice();
    let mut total = alloc::vec![0.0; width];
    let mut partial = alloc::vec![0.0; width];
    let mut scratch = alloc::vec![0.0; width];
    let mut start = 0;
    while start < pairs {
        let end = (start + CHUNK).min(pairs);
        partial.iter_mut().for_each(|v| *v = 0.0);
        for i in start..end {
            let row = 2 * i * d;
            f(&data[row..row + d], &mut scratch);
            for (p, s) in partial.iter_mut().zip(&scratch) {
                *p += s;
            }
        }
        for (t, p) in total.iter_mut().zip(&partial) {
            *t += p;
        }
        start = end;
    }
    for t in total.iter_mut() {
        *t /= pairs as f64;
    }
    total
}

/// `(1/n)·Σᵢ tanh(⟨λ, xᵢ⟩_Σ)·xᵢ` over a stabilized batch.
pub fn sample_update(lambda: &DVector<f64>, batch: &SampleBatch, cov: &CovarianceModel) -> Result<DVector<f64>> {
    require_stabilized(batch, cov)?;
    check_dim(cov.dim(), lambda.len())?;
    let g = cov.precision_mul(lambda)?;
    let g = g.as_slice();
    let mean = pair_mean(batch, batch.dim(), |x, out| {
        let t = libm::tanh(g.iter().zip(x).map(|(a, b)| a * b).sum());
        for (o, v) in out.iter_mut().zip(x) {
            *o = t * v;
        }
    });
    Ok(DVector::from_vec(mean))
}

/// `(1/n)·Σᵢ x̃ᵢx̃ᵢᵀ` in whitened coordinates `x̃ = Σ^{-1/2}x`.
pub fn empirical_covariance(batch: &SampleBatch, cov: &CovarianceModel) -> Result<DMatrix<f64>> {
    require_stabilized(batch, cov)?;
    let d = batch.dim();
    let mut w = alloc::vec![0.0; d];
    let flat = {
        let w = core::cell::RefCell::new(&mut w);
        pair_mean(batch, d * d, |x, out| {
            let mut w = w.borrow_mut();
            cov.whiten_into(x, &mut w);
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = w[i] * w[j];
                }
            }
        })
    };
    Ok(DMatrix::from_row_slice(d, d, &flat))
}

/// Spectral summary of the whitened empirical covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Principal eigenvector in whitened coordinates.
    pub principal: DVector<f64>,
    /// `λ₁/λ₂` (`λ₁` alone when `d = 1`, the noise eigenvalue being 1).
    pub gap_ratio: f64,
    /// `√max(λ₁ − 1, 0)`, an estimate of `‖μ‖_Σ`.
    pub snr_estimate: f64,
}

pub fn spectrum(covariance: &DMatrix<f64>) -> Spectrum {
    let (values, vectors) = stats::sorted_eigen(covariance);
    let top = values[0];
    let gap_ratio = if values.len() > 1 {
        top / values[1]
    } else {
        top
    };
    Spectrum {
        principal: vectors.column(0).into_owned(),
        snr_estimate: libm::sqrt((top - 1.0).max(0.0)),
        gap_ratio,
        eigenvalues: values,
    }
}

/// `⌈8·log₂ d / min(SNR², 1)⌉`, at least 1.
pub fn default_bootstrap_cap(d: usize, snr: f64) -> usize {
    let denom = (snr * snr).min(1.0);
    if !(denom > 0.0) {
        return usize::MAX;
    }
    let cap = libm::ceil(8.0 * libm::log2(d as f64) / denom);
    (cap as usize).max(1)
}

/// Result of the bootstrap power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapState {
    /// Σ-unit direction `λ̂`.
    pub direction: DVector<f64>,
    /// Renormalization magnitude `√(2/S)·ε`.
    pub magnitude: f64,
    /// `S = Σᵢ ‖xᵢ‖³_Σ`.
    pub s: f64,
    pub iterations_done: usize,
    /// Angle (radians, Σ-geometry) between the last two directions.
    pub last_angle: f64,
}

/// Runs EM at magnitude `√(2/S)·ε`, renormalizing after every step, from a
/// uniformly random direction drawn with `seed`.
pub fn bootstrap_init(
    batch: &SampleBatch,
    cov: &CovarianceModel,
    epsilon: f64,
    cap: usize,
    seed: u64,
) -> Result<BootstrapState> {
    require_stabilized(batch, cov)?;
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    if cap == 0 {
        return Err(invalid("boot_cap", "must be at least 1"));
    }
    let d = cov.dim();
    let mut w = alloc::vec![0.0; d];
    let s: f64 = batch
        .points()
        .map(|p| {
            cov.whiten_into(p, &mut w);
            let r = w.iter().map(|v| v * v).sum::<f64>();
            r * libm::sqrt(r)
        })
        .sum();
    let magnitude = libm::sqrt(2.0 / s) * epsilon;
    if !(magnitude > 0.0) || !magnitude.is_finite() {
        return Err(invalid("batch", "degenerate batch (zero third moment)"));
    }

    let mut rng = RngStream::new(seed, 0);
    let start: DVector<f64> = DVector::from_iterator(d, (0..d).map(|_| rng.normal()));
    let mut direction = cov.unwhiten(&stats::unit(&start))?;

    let mut last_angle = core::f64::consts::PI;
    let mut iterations_done = 0;
    while iterations_done < cap {
        let next = sample_update(&(&direction * magnitude), batch, cov)?;
        let len = cov.norm(&next)?;
        if !(len > 0.0) {
            return Err(Error::InitFailure {
                iterations: iterations_done,
                last_angle,
            });
        }
        let next = next / len;
        let cos = cov.inner(&direction, &next)?.clamp(-1.0, 1.0);
        last_angle = libm::acos(cos);
        direction = next;
        iterations_done += 1;
        if last_angle <= INIT_ANGLE_CONVERGED {
            break;
        }
    }
    if last_angle > INIT_ANGLE_LIMIT {
        return Err(Error::InitFailure {
            iterations: iterations_done,
            last_angle,
        });
    }
    Ok(BootstrapState {
        direction,
        magnitude,
        s,
        iterations_done,
        last_angle,
    })
}

/// Where pipeline batches come from.
pub trait SampleSource {
    fn dim(&self) -> usize;
    /// An unstabilized batch of `n` points for `(stage, step)`.
    fn fetch(&mut self, stage: Stage, step: u64, n: usize) -> Result<SampleBatch>;
    /// `(μ₁, μ₂)` when the generating model is known.
    fn truth(&self) -> Option<(&DVector<f64>, &DVector<f64>)>;
}

/// Draws every batch from its own substream: seed `derive_seed(seed, stage)`, stream `step`.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    mu1: DVector<f64>,
    mu2: DVector<f64>,
    cov: CovarianceModel,
    seed: u64,
}

impl SyntheticSource {
    pub fn new(mu1: DVector<f64>, mu2: DVector<f64>, cov: CovarianceModel, seed: u64) -> Result<Self> {
        check_dim(cov.dim(), mu1.len())?;
        check_dim(cov.dim(), mu2.len())?;
        Ok(Self { mu1, mu2, cov, seed })
    }

    /// Symmetric model `½N(c + μ, Σ) + ½N(c − μ, Σ)`.
    pub fn symmetric(center: &DVector<f64>, mu: &DVector<f64>, cov: CovarianceModel, seed: u64) -> Result<Self> {
        Self::new(center + mu, center - mu, cov, seed)
    }
}

impl SampleSource for SyntheticSource {
    fn dim(&self) -> usize {
        self.cov.dim()
    }

    fn fetch(&mut self, stage: Stage, step: u64, n: usize) -> Result<SampleBatch> {
        draw_stream(n, &self.mu1, &self.mu2, &self.cov, derive_seed(self.seed, stage.label()), step)
    }

    fn truth(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        Some((&self.mu1, &self.mu2))
    }
}

/// Serves consecutive disjoint slices of a fixed batch; with `wrap`, restarts at the top when exhausted.
#[derive(Debug, Clone)]
pub struct InMemorySource {
    batch: SampleBatch,
    cursor: usize,
    wrap: bool,
}

impl InMemorySource {
    pub fn new(batch: SampleBatch, wrap: bool) -> Result<Self> {
        if batch.is_stabilized() || batch.centered_by().is_some() {
            return Err(Error::AlreadyCentered);
        }
        Ok(Self {
            batch,
            cursor: 0,
            wrap,
        })
    }
}

impl SampleSource for InMemorySource {
    fn dim(&self) -> usize {
        self.batch.dim()
    }

    fn fetch(&mut self, _stage: Stage, _step: u64, n: usize) -> Result<SampleBatch> {
        let total = self.batch.len();
        if self.cursor + n > total {
            if self.wrap && n <= total {
                self.cursor = 0;
            } else {
                return Err(Error::SourceExhausted {
                    requested: n,
                    available: total - self.cursor,
                });
            }
        }
        let out = self.batch.slice(self.cursor, n)?;
        self.cursor += n;
        Ok(out)
    }

    fn truth(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Target Mahalanobis accuracy.
    pub epsilon: f64,
    /// Failure probability budget; sets the default stage sizes.
    pub eta: f64,
    pub n_center: usize,
    pub n_init: usize,
    pub n_step: usize,
    /// Bootstrap iteration cap; `None` uses [`default_bootstrap_cap`].
    pub boot_cap: Option<usize>,
    /// Main-loop steps; `None` uses `⌈4·max(1, 1/SNR̂²)·ln(d/ε)⌉` (at least 3).
    pub main_steps: Option<usize>,
    /// Blow-up constant `Μ`; `None` uses 4× the largest `‖x‖_Σ` of a 64-point probe.
    pub blowup: Option<f64>,
    /// Reuse one main-loop batch for every step (experimentation only).
    pub reuse_samples: bool,
    pub seed: u64,
}

impl PipelineConfig {
    /// Stage sizes default to `⌈200·d·ln(1/η)/ε²⌉`, clamped to at least 1000.
    pub fn new(dim: usize, epsilon: f64, eta: f64, seed: u64) -> Self {
        let n = default_stage_size(dim, epsilon, eta);
        Self {
            epsilon,
            eta,
            n_center: n,
            n_init: n,
            n_step: n,
            boot_cap: None,
            main_steps: None,
            blowup: None,
            reuse_samples: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(invalid("epsilon", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(invalid("eta", "must lie in (0, 1)"));
        }
        if self.n_center < CENTER_MIN_SAMPLES {
            return Err(invalid("n_center", "must be at least 8"));
        }
        if self.n_init == 0 {
            return Err(invalid("n_init", "must be at least 1"));
        }
        if self.n_step == 0 {
            return Err(invalid("n_step", "must be at least 1"));
        }
        if let Some(m) = self.blowup {
            if !(m > 0.0) || !m.is_finite() {
                return Err(invalid("blowup", "must be positive"));
            }
        }
        if self.boot_cap == Some(0) {
            return Err(invalid("boot_cap", "must be at least 1"));
        }
        Ok(())
    }
}

pub fn default_stage_size(dim: usize, epsilon: f64, eta: f64) -> usize {
    let n = libm::ceil(200.0 * dim as f64 * libm::log(1.0 / eta) / (epsilon * epsilon));
    if n.is_finite() {
        (n as usize).max(1000)
    } else {
        1000
    }
}

pub fn default_main_steps(dim: usize, epsilon: f64, snr: f64) -> usize {
    let inv = if snr > 0.0 { (1.0 / (snr * snr)).max(1.0) } else { 1.0 };
    let steps = libm::ceil(4.0 * inv * libm::log(dim as f64 / epsilon));
    if steps.is_finite() {
        (steps as usize).max(3)
    } else {
        3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostic {
    pub step: usize,
    /// Sign-resolved `min(‖λ − μ‖_Σ, ‖λ + μ‖_Σ)`; synthetic mode only.
    pub error: Option<f64>,
    /// `⟨λ̂, μ̂⟩_Σ` when the truth is known, else `⟨λ̂, λ̂_boot⟩_Σ`.
    pub alignment: f64,
    pub batch_size: usize,
    pub seed_stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    /// Final `λ*` (relative to the estimated center).
    pub lambda: DVector<f64>,
    pub center: CenterEstimate,
    pub spectrum: Spectrum,
    pub bootstrap: BootstrapState,
    pub blowup: f64,
    pub steps: Vec<StepDiagnostic>,
    /// `‖c − (μ₁+μ₂)/2‖_Σ` when the truth is known.
    pub delta_norm: Option<f64>,
    /// Sign-resolved `|⟨λ̂_boot, μ̂⟩_Σ|` when the truth is known.
    pub init_alignment: Option<f64>,
    /// Sign-resolved final error when the truth is known.
    pub final_error: Option<f64>,
}

impl PipelineOutcome {
    /// The unordered estimate `(c + λ*, c − λ*)` of `(μ₁, μ₂)`.
    pub fn means(&self) -> (DVector<f64>, DVector<f64>) {
        (&self.center.c + &self.lambda, &self.center.c - &self.lambda)
    }
}

fn sign_resolved(lambda: &DVector<f64>, mu: &DVector<f64>, cov: &CovarianceModel) -> Result<f64> {
    Ok(cov.distance(lambda, mu)?.min(cov.distance(lambda, &-mu)?))
}

/// Runs the three stages end to end.
pub fn run_pipeline(
    config: &PipelineConfig,
    cov: &CovarianceModel,
    source: &mut dyn SampleSource,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let d = cov.dim();
    check_dim(d, source.dim())?;
    let truth = source
        .truth()
        .map(|(m1, m2)| ((m1 - m2) * 0.5, (m1 + m2) * 0.5));

    // Stage 1: centering.
    let center = source
        .fetch(Stage::Centering, 0, config.n_center)
        .and_then(|b| estimate_center(&b, cov))
        .map_err(tag(Stage::Centering))?;
    let delta_norm = match &truth {
        Some((_, mid)) => Some(cov.distance(&center.c, mid)?),
        None => None,
    };

    // Stage 2: bootstrap initialization.
    let init = source
        .fetch(Stage::Initialization, 0, config.n_init)
        .and_then(|b| b.stabilize(&center.c))
        .map_err(tag(Stage::Initialization))?;
    let spec = spectrum(&empirical_covariance(&init, cov).map_err(tag(Stage::Initialization))?);
    if spec.gap_ratio < NO_SIGNAL_GAP {
        return Err(tag(Stage::Initialization)(Error::NoSignal {
            gap: spec.gap_ratio,
            threshold: NO_SIGNAL_GAP,
        }));
    }
    if config.epsilon > spec.snr_estimate {
        return Err(Error::EpsilonExceedsSnr {
            epsilon: config.epsilon,
            snr: spec.snr_estimate,
        });
    }
    let cap = config
        .boot_cap
        .unwrap_or_else(|| default_bootstrap_cap(d, spec.snr_estimate));
    let bootstrap = bootstrap_init(
        &init,
        cov,
        config.epsilon,
        cap,
        derive_seed(config.seed, 0xB007),
    )
    .map_err(tag(Stage::Initialization))?;
    drop(init);
    let init_alignment = match &truth {
        Some((mu, _)) => Some((cov.inner(&bootstrap.direction, mu)? / cov.norm(mu)?).abs()),
        None => None,
    };

    // Stage 3: blow-up and stabilized sample EM.
    let blowup = match config.blowup {
        Some(m) => m,
        None => {
            let probe = source
                .fetch(Stage::MainLoop, u64::MAX, PROBE_POINTS)
                .map_err(tag(Stage::MainLoop))?;
            let mut largest = 0.0f64;
            for p in probe.points() {
                let x = DVector::from_column_slice(p) - &center.c;
                largest = largest.max(cov.norm(&x)?);
            }
            BLOWUP_FACTOR * largest
        }
    };
    let steps_total = config
        .main_steps
        .unwrap_or_else(|| default_main_steps(d, config.epsilon, spec.snr_estimate));

    let mu_unit = match &truth {
        Some((mu, _)) => Some(mu / cov.norm(mu)?),
        None => None,
    };
    let alignment_of = |lambda: &DVector<f64>| -> Result<f64> {
        let len = cov.norm(lambda)?;
        if len == 0.0 {
            return Ok(0.0);
        }
        let reference = mu_unit.as_ref().unwrap_or(&bootstrap.direction);
        Ok(cov.inner(lambda, reference)? / len)
    };

    let mut lambda = &bootstrap.direction * blowup;
    let mut steps = Vec::with_capacity(steps_total);
    let mut reused: Option<SampleBatch> = None;
    for t in 1..=steps_total {
        let stream = if config.reuse_samples { 0 } else { t as u64 };
        let batch = match &reused {
            Some(b) => b.clone(),
            None => {
                let b = source
                    .fetch(Stage::MainLoop, stream, config.n_step)
                    .and_then(|b| b.stabilize(&center.c))
                    .map_err(tag(Stage::MainLoop))?;
                if config.reuse_samples {
                    reused = Some(b.clone());
                }
                b
            }
        };
        lambda = sample_update(&lambda, &batch, cov).map_err(tag(Stage::MainLoop))?;
        let error = match &truth {
            Some((mu, _)) => Some(sign_resolved(&lambda, mu, cov)?),
            None => None,
        };
        steps.push(StepDiagnostic {
            step: t,
            error,
            alignment: alignment_of(&lambda)?,
            batch_size: batch.len(),
            seed_stream: stream,
        });
    }

    let final_error = match &truth {
        Some((mu, _)) => Some(sign_resolved(&lambda, mu, cov)?),
        None => None,
    };
    Ok(PipelineOutcome {
        lambda,
        center,
        spectrum: spec,
        bootstrap,
        blowup,
        steps,
        delta_norm,
        init_alignment,
        final_error,
    })
}
