//! Experiment drivers: the ten-step table, the 2D vector-field grid and the
//! error-versus-sample-size scaling study.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::exec::Executor;
use crate::finite::{run_pipeline, PipelineConfig, SyntheticSource};
use crate::geometry::CovarianceModel;
use crate::population::{rate, rate_1d, update, update_1d, Iterate, MixtureSpec, Target};
use crate::quadrature::Quadrature;
use crate::sampling::derive_seed;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct TenStepRow {
    pub t: usize,
    /// `+∞` at `t = 0`.
    pub lambda: f64,
    /// `|λ^(t) − μ|/σ`.
    pub rel_error: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TenStepTable {
    pub snr: f64,
    pub target: f64,
    pub rows: Vec<TenStepRow>,
    /// First `t` with `|λ^(t) − μ|/σ ≤ target`, if reached within the step limit.
    pub steps_needed: Option<usize>,
}

/// Rows always cover `t = 0..=10`; the table is extended until the target is met or this many steps.
pub const TEN_STEP_LIMIT: usize = 1000;

/// 1D run (`σ = 1`, `μ = snr`) from the infinite start.
pub fn ten_step_table(snr: f64, target: f64, quad: &Quadrature) -> Result<TenStepTable> {
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(invalid("snr", "must be positive"));
    }
    if !(target > 0.0) {
        return Err(invalid("target", "must be positive"));
    }
    let mu = snr;
    let mut lambda = f64::INFINITY;
    let mut rows = Vec::new();
    let mut steps_needed = None;
    for t in 0..=TEN_STEP_LIMIT {
        let rel_error = (lambda - mu).abs();
        let kappa = rate_1d(lambda, mu, 1.0)?.kappa;
        rows.push(TenStepRow {
            t,
            lambda,
            rel_error,
            kappa,
        });
        if steps_needed.is_none() && rel_error <= target {
            steps_needed = Some(t);
        }
        if t >= 10 && steps_needed.is_some() {
            break;
        }
        lambda = update_1d(lambda, mu, 1.0, quad)?;
    }
    Ok(TenStepTable {
        snr,
        target,
        rows,
        steps_needed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basin {
    Plus,
    Minus,
    Equidistant,
}

impl Basin {
    pub fn as_str(self) -> &'static str {
        match self {
            Basin::Plus => "plus",
            Basin::Minus => "minus",
            Basin::Equidistant => "equidistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldCell {
    pub i: usize,
    pub j: usize,
    pub lambda_in: [f64; 2],
    pub lambda_out: [f64; 2],
    pub basin: Basin,
    /// Certificate toward the basin's fixed point; absent on the equidistant line.
    pub kappa: Option<f64>,
    /// `‖λ_out − μ*‖_Σ / ‖λ_in − μ*‖_Σ` with `μ* ∈ {μ, −μ, 0}`; absent when `λ_in = μ*`.
    pub decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
    /// Row-major: `cells[i·resolution + j]` has `λ_in = (x_i, x_j)`.
    pub cells: Vec<FieldCell>,
}

impl FieldGrid {
    pub fn cell(&self, i: usize, j: usize) -> &FieldCell {
        &self.cells[i * self.resolution + j]
    }
}

/// Grid coordinate `x_i`; mirrored indices give exactly negated values when `lo = −hi`.
pub fn grid_coordinate(lo: f64, hi: f64, resolution: usize, i: usize) -> f64 {
    let m = (resolution - 1) as f64;
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    center + half * (2.0 * i as f64 - m) / m
}

pub const FIELD_DEFAULT_BOUNDS: (f64, f64) = (-4.0, 4.0);
pub const FIELD_DEFAULT_RESOLUTION: usize = 81;

/// Evaluates the update, certificate and actual decay on a `resolution²` grid over `[lo, hi]²`.
pub fn field_grid<E: Executor>(
    spec: &MixtureSpec,
    bounds: (f64, f64),
    resolution: usize,
    quad: &Quadrature,
    exec: &E,
) -> Result<FieldGrid> {
    if spec.dim() != 2 {
        return Err(invalid("dim", "the field grid needs d = 2"));
    }
    if resolution < 2 {
        return Err(invalid("resolution", "must be at least 2"));
    }
    let (lo, hi) = bounds;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid("bounds", "need finite lo < hi"));
    }
    let cov = spec.cov();
    let mu = spec.mu();
    let cells = exec.map_indexed(resolution * resolution, |k| {
        let (i, j) = (k / resolution, k % resolution);
        let lin = DVector::from_column_slice(&[
            grid_coordinate(lo, hi, resolution, i),
            grid_coordinate(lo, hi, resolution, j),
        ]);
        field_cell(i, j, lin, spec, cov, mu, quad)
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FieldGrid {
        lo,
        hi,
        resolution,
        cells,
    })
}

fn field_cell(
    i: usize,
    j: usize,
    lin: DVector<f64>,
    spec: &MixtureSpec,
    cov: &CovarianceModel,
    mu: &DVector<f64>,
    quad: &Quadrature,
) -> Result<FieldCell> {
    let it = Iterate::new(lin.clone(), 0, cov, Some(mu))?;
    let out = update(&it, spec, quad)?;
    let (basin, fixed, kappa) = match Target::of(&lin, spec)? {
        Target::Plus => (Basin::Plus, mu.clone(), Some(rate(&it, spec)?.kappa)),
        Target::Minus => {
            let mirrored = MixtureSpec::new(-mu, cov.clone())?;
            (Basin::Minus, -mu, Some(rate(&it, &mirrored)?.kappa))
        }
        Target::Origin => (Basin::Equidistant, DVector::zeros(2), None),
    };
    let before = cov.distance(&lin, &fixed)?;
    let decay = if before > 0.0 {
        Some(cov.distance(out.lambda(), &fixed)? / before)
    } else {
        None
    };
    Ok(FieldCell {
        i,
        j,
        lambda_in: [lin[0], lin[1]],
        lambda_out: [out.lambda()[0], out.lambda()[1]],
        basin,
        kappa,
        decay,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub dim: usize,
    pub snr: f64,
    pub epsilon: f64,
    /// Per-stage sample sizes (`n_center = n_init = n_step = n`).
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

pub const SCALING_MIN_TRIALS: usize = 20;
/// Failure share above which a study is rejected.
pub const SCALING_MAX_FAILURE_SHARE: f64 = 0.1;

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(self.snr > 0.0) {
            return Err(invalid("snr", "must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if self.trials < SCALING_MIN_TRIALS {
            return Err(invalid("trials", "must be at least 20"));
        }
        let mut distinct = self.ns.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::DegenerateFit("all sample sizes coincide".into()));
        }
        if distinct.len() < 3 {
            return Err(invalid("ns", "need at least 3 distinct sample sizes"));
        }
        if distinct[0] == 0 || (*distinct.last().unwrap() as f64) < 10.0 * distinct[0] as f64 {
            return Err(invalid("ns", "sample sizes must span at least one decade"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub n: usize,
    /// Successful trial errors, in trial order.
    pub errors: Vec<f64>,
    /// Indices of trials whose pipeline run failed.
    pub failed_trials: Vec<usize>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    pub points: Vec<ScalingPoint>,
    /// Least-squares fit `ln(median) = intercept + slope·ln(n)`.
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

/// Seed of trial `trial` at sample size `n`.
pub fn trial_seed(master: u64, n: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(master, n as u64), trial as u64)
}

/// Sign-resolved pipeline errors for `trials` independent runs with ground truth
/// `μ = snr·e₁`, `Σ = I`, centered at the origin.
pub fn trial_errors<E: Executor>(
    dim: usize,
    snr: f64,
    epsilon: f64,
    n: usize,
    trials: usize,
    master: u64,
    exec: &E,
) -> Result<Vec<Result<f64>>> {
    let cov = CovarianceModel::identity(dim)?;
    let mut mu = DVector::zeros(dim);
    mu[0] = snr;
    let center = DVector::zeros(dim);
    Ok(exec.map_indexed(trials, |trial| {
        let seed = trial_seed(master, n, trial);
        let mut cfg = PipelineConfig::new(dim, epsilon, 0.1, seed);
        cfg.n_center = n;
        cfg.n_init = n;
        cfg.n_step = n;
        let mut source = SyntheticSource::symmetric(&center, &mu, cov.clone(), seed)?;
        let outcome = run_pipeline(&cfg, &cov, &mut source)?;
        Ok(outcome.final_error.expect("synthetic source knows the truth"))
    }))
}

/// Runs the pipeline `trials` times per sample size and fits the log-log slope of the median error.
pub fn scaling_study<E: Executor>(config: &ScalingConfig, exec: &E) -> Result<ScalingResult> {
    config.validate()?;
    let mut points = Vec::with_capacity(config.ns.len());
    for &n in &config.ns {
        let outcomes = trial_errors(config.dim, config.snr, config.epsilon, n, config.trials, config.seed, exec)?;
        let failed_trials: Vec<usize> = (0..outcomes.len()).filter(|&k| outcomes[k].is_err()).collect();
        let failures = failed_trials.len();
        if failures as f64 > SCALING_MAX_FAILURE_SHARE * config.trials as f64 {
            return Err(Error::TooManyFailures {
                failed: failures,
                total: config.trials,
            });
        }
        let errors: Vec<f64> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
        points.push(ScalingPoint {
            n,
            median: stats::median(&errors),
            errors,
            failed_trials,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| libm::log(p.n as f64)).collect();
    let y: Vec<f64> = points.iter().map(|p| libm::log(p.median)).collect();
    let (slope, intercept) =
        stats::linear_fit(&x, &y).ok_or_else(|| Error::DegenerateFit("all sample sizes coincide".into()))?;
    let residuals = x.iter().zip(&y).map(|(a, b)| b - (intercept + slope * a)).collect();
    Ok(ScalingResult {
        points,
        slope,
        intercept,
        residuals,
    })
}
