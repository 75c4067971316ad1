//! The population EM operator `M(λ, μ) = E_{x~N(μ,Σ)}[tanh(⟨λ, x⟩_Σ)·x]`.
//!
//! In whitened coordinates the update only depends on the plane spanned by
//! `λ` and `μ`. With `λ̂ = λ/‖λ‖`, `b = ⟨λ̂, μ⟩` and `μ⊥ = μ − b·λ̂`:
//!
//! ```text
//! ⟨λ̂, λ'⟩  = E_y[tanh(‖λ‖(y + b))·(y + b)]       (a one-dimensional EM step)
//! λ' − ⟨λ̂, λ'⟩λ̂ = E_y[tanh(‖λ‖(y + b))]·μ⊥
//! ```
//!
//! and every component orthogonal to `span{λ, μ}` is exactly zero. Both
//! expectations are one-dimensional and are evaluated with [`Quadrature`].

use alloc::vec::Vec;
use core::f64::consts::{FRAC_2_PI, SQRT_2};

use nalgebra::DVector;

use crate::error::{check_dim, invalid, Error, Result};
use crate::geometry::CovarianceModel;
use crate::quadrature::Quadrature;

/// Ground-truth symmetric mixture `½N(μ, Σ) + ½N(−μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    mu: DVector<f64>,
    cov: CovarianceModel,
    snr: f64,
}

impl MixtureSpec {
    pub fn new(mu: DVector<f64>, cov: CovarianceModel) -> Result<Self> {
        check_dim(cov.dim(), mu.len())?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mu", "entries must be finite"));
        }
        let snr = cov.norm(&mu)?;
        Ok(Self { mu, cov, snr })
    }

    /// One-dimensional mixture `½N(μ, σ²) + ½N(−μ, σ²)`.
    pub fn scalar(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("sigma", "must be positive"));
        }
        Self::new(
            DVector::from_element(1, mu),
            CovarianceModel::diagonal(&[sigma * sigma])?,
        )
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn cov(&self) -> &CovarianceModel {
        &self.cov
    }

    /// `‖μ‖_Σ`.
    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// An EM estimate `λ^(t)` with cached Mahalanobis quantities.
///
/// An iterate "at infinity" stands for `lim_{M→∞} M·v`; `lambda` then holds the
/// Σ-unit direction `v`, `norm` is `+∞` and `alignment` is `⟨v, μ⟩_Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    lambda: DVector<f64>,
    step: usize,
    norm: f64,
    alignment: Option<f64>,
    at_infinity: bool,
}

impl Iterate {
    pub fn new(
        lambda: DVector<f64>,
        step: usize,
        cov: &CovarianceModel,
        mu: Option<&DVector<f64>>,
    ) -> Result<Self> {
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(invalid("lambda", "entries must be finite"));
        }
        let norm = cov.norm(&lambda)?;
        let alignment = mu.map(|m| cov.inner(&lambda, m)).transpose()?;
        Ok(Self {
            lambda,
            step,
            norm,
            alignment,
            at_infinity: false,
        })
    }

    /// The infinitely-far start in direction `direction` (any nonzero vector).
    pub fn at_infinity(
        direction: DVector<f64>,
        cov: &CovarianceModel,
        mu: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let len = cov.norm(&direction)?;
        if !(len > 0.0) || !len.is_finite() {
            return Err(invalid("lambda0", "direction must be finite and nonzero"));
        }
        let lambda = direction / len;
        let alignment = mu.map(|m| cov.inner(&lambda, m)).transpose()?;
        Ok(Self {
            lambda,
            step: 0,
            norm: f64::INFINITY,
            alignment,
            at_infinity: true,
        })
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `‖λ‖_Σ` (`+∞` for the infinite start).
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// `⟨λ, μ⟩_Σ` when the truth is known.
    pub fn alignment(&self) -> Option<f64> {
        self.alignment
    }

    pub fn is_at_infinity(&self) -> bool {
        self.at_infinity
    }

    pub fn is_zero(&self) -> bool {
        !self.at_infinity && self.lambda.iter().all(|&v| v == 0.0)
    }
}

/// Which argument of `min(⟨λ,λ⟩_Σ, ⟨μ,λ⟩_Σ)` is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateBranch {
    /// `⟨λ, λ⟩_Σ` (the iterate is still short of the true mean).
    Norm,
    /// `⟨μ, λ⟩_Σ`.
    Alignment,
}

/// Closed-form contraction factor `κ = exp(−min(⟨λ,λ⟩_Σ, ⟨μ,λ⟩_Σ)² / (2⟨λ,λ⟩_Σ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCertificate {
    pub kappa: f64,
    /// The active minimum; `+∞` for the infinite start.
    pub min_term: f64,
    /// `⟨λ, λ⟩_Σ`; `+∞` for the infinite start.
    pub norm_sq: f64,
    pub branch: RateBranch,
}

impl RateCertificate {
    fn from_terms(norm_sq: f64, alignment: f64) -> Self {
        let (min_term, branch) = if norm_sq <= alignment {
            (norm_sq, RateBranch::Norm)
        } else {
            (alignment, RateBranch::Alignment)
        };
        Self {
            kappa: libm::exp(-min_term * min_term / (2.0 * norm_sq)),
            min_term,
            norm_sq,
            branch,
        }
    }

    /// Limit of the certificate as `‖λ‖ → ∞` along a unit direction with `⟨λ̂, μ⟩_Σ = b`.
    fn at_infinity(unit_alignment: f64) -> Self {
        Self {
            kappa: libm::exp(-0.5 * unit_alignment * unit_alignment),
            min_term: f64::INFINITY,
            norm_sq: f64::INFINITY,
            branch: RateBranch::Alignment,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid("sigma", "must be positive and finite"))
    }
}

/// Mean of the folded normal: `E|X|` for `X ~ N(μ, σ²)`.
pub fn folded_normal_mean(mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(folded_unit(mu / sigma) * sigma)
}

fn folded_unit(b: f64) -> f64 {
    b * libm::erf(b / SQRT_2) + libm::sqrt(FRAC_2_PI) * libm::exp(-0.5 * b * b)
}

/// `(E[tanh(a(y+b))(y+b)], E[tanh(a(y+b))])` for `y ~ N(0, 1)`.
fn plane_moments(a: f64, b: f64, quad: &Quadrature) -> (f64, f64) {
    if a.is_infinite() {
        let s = a.signum();
        return (s * folded_unit(b), s * libm::erf(b / SQRT_2));
    }
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let [along, mean] = quad.expect_shifted_many(b, a, |u| {
        let t = libm::tanh(a * u);
        [t * u, t]
    });
    (along, mean)
}

/// One-dimensional update `E_{x~N(μ,σ²)}[tanh(λx/σ²)·x]`. `λ = ±∞` gives `±E|x|`.
pub fn update_1d(lambda: f64, mu: f64, sigma: f64, quad: &Quadrature) -> Result<f64> {
    check_sigma(sigma)?;
    if lambda.is_nan() || !mu.is_finite() {
        return Err(invalid("lambda", "must not be NaN"));
    }
    let (along, _) = plane_moments(lambda / sigma, mu / sigma, quad);
    Ok(sigma * along)
}

/// `E_{X~N(α,σ²)}[tanh(βX/σ²)]`.
pub fn tanh_expectation(alpha: f64, beta: f64, sigma: f64, quad: &Quadrature) -> Result<f64> {
    check_sigma(sigma)?;
    let a = beta / sigma;
    if a == 0.0 {
        return Ok(0.0);
    }
    Ok(quad.expect_shifted(alpha / sigma, a, |u| libm::tanh(a * u)))
}

/// `E_{X~N(α,σ²)}[tanh'(βX/σ²)·X]`, which is nonnegative for `α, β > 0`.
pub fn tanh_derivative_moment(alpha: f64, beta: f64, sigma: f64, quad: &Quadrature) -> Result<f64> {
    check_sigma(sigma)?;
    let a = beta / sigma;
    Ok(sigma * quad.expect_shifted(alpha / sigma, a, |u| sech_sq(a * u) * u))
}

fn sech_sq(x: f64) -> f64 {
    let e = libm::exp(-2.0 * x.abs());
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// `M(λ, m) = E_{x~N(m,Σ)}[tanh(⟨λ, x⟩_Σ)·x]` for an arbitrary component mean `m`.
pub fn component_update(
    lambda: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &CovarianceModel,
    quad: &Quadrature,
) -> Result<DVector<f64>> {
    check_dim(cov.dim(), lambda.len())?;
    check_dim(cov.dim(), mean.len())?;
    if lambda.iter().any(|v| v.is_nan()) {
        return Err(invalid("lambda", "must not be NaN"));
    }
    plane_update(&cov.whiten(lambda)?, &cov.whiten(mean)?, 1.0, quad)
        .map(|w| cov.unwhiten(&w))?
}

/// The plane reduction in whitened coordinates. `scale = +∞` treats `lambda` as a direction at infinity.
fn plane_update(
    lambda_w: &DVector<f64>,
    mean_w: &DVector<f64>,
    scale: f64,
    quad: &Quadrature,
) -> Result<DVector<f64>> {
    let len = lambda_w.norm();
    if len == 0.0 {
        return Ok(DVector::zeros(lambda_w.len()));
    }
    let unit = lambda_w / len;
    let b = unit.dot(mean_w);
    let perp = mean_w - &unit * b;
    let (along, mean_tanh) = plane_moments(len * scale, b, quad);
    Ok(unit * along + perp * mean_tanh)
}

/// One population EM step for the symmetric mixture.
pub fn update(it: &Iterate, spec: &MixtureSpec, quad: &Quadrature) -> Result<Iterate> {
    check_dim(spec.dim(), it.lambda.len())?;
    let cov = spec.cov();
    let next_w = plane_update(
        &cov.whiten(&it.lambda)?,
        &cov.whiten(spec.mu())?,
        if it.at_infinity { f64::INFINITY } else { 1.0 },
        quad,
    )?;
    Iterate::new(cov.unwhiten(&next_w)?, it.step + 1, cov, Some(spec.mu()))
}

/// Population update under the off-center stabilized mixture with components at `±μ ± δ`:
/// `½·M(λ, μ + δ) + ½·M(λ, μ − δ)`.
pub fn shifted_update(
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    delta: &DVector<f64>,
    cov: &CovarianceModel,
    quad: &Quadrature,
) -> Result<DVector<f64>> {
    let plus = component_update(lambda, &(mu + delta), cov, quad)?;
    let minus = component_update(lambda, &(mu - delta), cov, quad)?;
    Ok((plus + minus) * 0.5)
}

/// Contraction certificate in one dimension, `κ = exp(−min(λ, μ)²/(2σ²))`.
pub fn rate_1d(lambda: f64, mu: f64, sigma: f64) -> Result<RateCertificate> {
    check_sigma(sigma)?;
    if !(lambda > 0.0) {
        return Err(invalid("lambda", "certificate requires lambda > 0"));
    }
    if !(mu > 0.0) {
        return Err(invalid("mu", "certificate requires mu > 0"));
    }
    if lambda.is_infinite() {
        return Ok(RateCertificate::at_infinity(mu / sigma));
    }
    let s2 = sigma * sigma;
    Ok(RateCertificate::from_terms(
        lambda * lambda / s2,
        lambda * mu / s2,
    ))
}

/// Multi-dimensional certificate; requires `⟨λ, μ⟩_Σ > 0`.
pub fn rate(it: &Iterate, spec: &MixtureSpec) -> Result<RateCertificate> {
    certificate(&it.lambda, it.at_infinity, spec.mu(), spec.cov())
}

fn certificate(
    lambda: &DVector<f64>,
    at_infinity: bool,
    mu: &DVector<f64>,
    cov: &CovarianceModel,
) -> Result<RateCertificate> {
    let alignment = cov.inner(lambda, mu)?;
    if !(alignment > 0.0) {
        return Err(Error::OutsideBasin { alignment });
    }
    if at_infinity {
        return Ok(RateCertificate::at_infinity(alignment / cov.norm(lambda)?));
    }
    Ok(RateCertificate::from_terms(cov.inner(lambda, lambda)?, alignment))
}

/// Initial point of a population run.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    Finite(DVector<f64>),
    /// `λ⁰ = +∞` along the given direction.
    Infinite(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_steps: usize,
    /// Tolerance on `‖λ − target‖_Σ`.
    pub tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_steps: 10_000,
            tol: 1e-6,
        }
    }
}

/// Fixed point a run is heading to, chosen by the sign of `⟨λ⁰, μ⟩_Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Plus,
    Minus,
    /// Equidistant start: the run drifts to the origin.
    Origin,
}

/// Relative tolerance on `|⟨λ, μ⟩_Σ| / (‖λ‖_Σ‖μ‖_Σ)` below which a start counts as equidistant.
pub const EQUIDISTANT_RTOL: f64 = 1e-12;

impl Target {
    /// Classifies a finite start (or direction at infinity) by its alignment with `μ`.
    pub fn of(lambda: &DVector<f64>, spec: &MixtureSpec) -> Result<Self> {
        let cov = spec.cov();
        let alignment = cov.inner(lambda, spec.mu())?;
        Ok(if alignment.abs() <= EQUIDISTANT_RTOL * cov.norm(lambda)? * spec.snr() {
            Target::Origin
        } else if alignment > 0.0 {
            Target::Plus
        } else {
            Target::Minus
        })
    }

    fn sign(self) -> f64 {
        match self {
            Target::Plus => 1.0,
            Target::Minus => -1.0,
            Target::Origin => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxSteps,
    FixedAtZero,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxSteps => "max_steps",
            Termination::FixedAtZero => "fixed_at_zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub iterate: Iterate,
    /// `‖λ^(t) − target‖_Σ`.
    pub error: f64,
    /// Absent on the equidistant branch, where no certificate is defined.
    pub certificate: Option<RateCertificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<TrajectoryStep>,
    target: Target,
    termination: Termination,
}

impl Trajectory {
    pub fn steps(&self) -> &[TrajectoryStep] {
        &self.steps
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    pub fn last(&self) -> &TrajectoryStep {
        self.steps.last().expect("trajectory is never empty")
    }

    /// Largest `error^(t+1) − κ^(t)·error^(t)` over the run (`−∞` if nothing to check).
    pub fn max_certificate_excess(&self) -> f64 {
        self.steps
            .windows(2)
            .filter_map(|w| {
                let kappa = w[0].certificate?.kappa;
                if w[0].error.is_finite() {
                    Some(w[1].error - kappa * w[0].error)
                } else {
                    None
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Iterates [`update`] from `start` until the target is reached within `stop.tol` or `stop.max_steps`.
pub fn run(
    start: Start,
    spec: &MixtureSpec,
    stop: StopRule,
    quad: &Quadrature,
) -> Result<Trajectory> {
    if !(stop.tol >= 0.0) {
        return Err(invalid("tol", "must be nonnegative"));
    }
    let cov = spec.cov();
    let mut current = match start {
        Start::Finite(l) => Iterate::new(l, 0, cov, Some(spec.mu()))?,
        Start::Infinite(dir) => Iterate::at_infinity(dir, cov, Some(spec.mu()))?,
    };
    let target = Target::of(&current.lambda, spec)?;
    let signed_mu = spec.mu() * target.sign();

    let record = |it: Iterate| -> Result<TrajectoryStep> {
        let error = if it.at_infinity {
            f64::INFINITY
        } else {
            cov.distance(&it.lambda, &signed_mu)?
        };
        let certificate = match target {
            Target::Origin => None,
            _ => Some(certificate(&it.lambda, it.at_infinity, &signed_mu, cov)?),
        };
        Ok(TrajectoryStep {
            iterate: it,
            error,
            certificate,
        })
    };

    let mut steps = Vec::new();
    loop {
        let zero = current.is_zero();
        let next = if zero || current.step >= stop.max_steps {
            None
        } else {
            let next = update(&current, spec, quad)?;
            match target {
                // ⟨λ, μ⟩_Σ = 0 is invariant; drop the rounding component, which would otherwise grow.
                Target::Origin if spec.snr() > 0.0 => {
                    let mu = spec.mu();
                    let drift = cov.inner(next.lambda(), mu)? / (spec.snr() * spec.snr());
                    Some(Iterate::new(next.lambda() - mu * drift, next.step, cov, Some(mu))?)
                }
                _ => Some(next),
            }
        };
        let entry = record(current)?;
        let error = entry.error;
        steps.push(entry);
        let termination = if zero {
            Some(Termination::FixedAtZero)
        } else if error <= stop.tol {
            Some(Termination::Converged)
        } else if next.is_none() {
            Some(Termination::MaxSteps)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(Trajectory {
                steps,
                target,
                termination,
            });
        }
        current = next.expect("checked above");
    }
}
