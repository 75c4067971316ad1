//! One function per subcommand. Each writes its CSV plus a `.manifest` sidecar.

use std::fmt;
use std::path::{Path, PathBuf};

use em2gauss_core::experiments::{
    field_grid, scaling_study, ten_step_table, ScalingConfig, FIELD_DEFAULT_BOUNDS, FIELD_DEFAULT_RESOLUTION,
};
use em2gauss_core::finite::{run_pipeline, InMemorySource, PipelineConfig, SampleSource, SyntheticSource};
use em2gauss_core::population::{run, Start, StopRule, Termination};
use em2gauss_core::quadrature::DEFAULT_ORDER;
use em2gauss_core::sampling::draw;
use em2gauss_core::{DVector, Error, MixtureSpec, Quadrature};

use crate::config::{ConfigError, RunConfig, StartSpec};
use crate::exec::Workers;
use crate::io::{fmt_f64, fmt_opt, fmt_vec, read_batch, sidecar, write_batch, write_csv, IoError, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Converge,
    Pipeline,
    Field,
    Scaling,
    Tensteps,
    Sample,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Converge,
        Command::Pipeline,
        Command::Field,
        Command::Scaling,
        Command::Tensteps,
        Command::Sample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Converge => "converge",
            Command::Pipeline => "pipeline",
            Command::Field => "field",
            Command::Scaling => "scaling",
            Command::Tensteps => "tensteps",
            Command::Sample => "sample",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Algorithm(#[from] Error),
}

impl CommandError {
    /// 1 for usage, config and input errors; 2 for algorithmic failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CommandError::Config(_) | CommandError::Io(_) => 1,
            CommandError::Algorithm(e) => match e {
                Error::InvalidParameter { .. }
                | Error::DimensionMismatch { .. }
                | Error::NotSymmetric { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::DegenerateFit(_) => 1,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// 0 on success, 2 when the run finished but did not reach its goal.
    pub exit_code: u8,
    pub outputs: Vec<PathBuf>,
    pub manifest: Manifest,
    /// One-line human summary.
    pub summary: String,
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome, CommandError> {
    let workers = cfg.workers.unwrap_or(1);
    if workers == 0 {
        return Err(ConfigError::new("workers", "must be at least 1").into());
    }
    let exec = Workers::new(workers).map_err(|e| ConfigError::new("workers", e.to_string()))?;
    let out = PathBuf::from(cfg.out.clone().unwrap_or_else(|| format!("{command}.csv")));
    let mut manifest = Manifest::new();
    manifest.push("command", command.name());
    manifest.push("seed", cfg.seed.unwrap_or(0).to_string());
    manifest.push("workers", workers.to_string());
    manifest.push("result.version", env!("CARGO_PKG_VERSION"));
    for (k, v) in cfg.entries() {
        if !matches!(k, "command" | "seed" | "workers") {
            manifest.push(k, v);
        }
    }
    let mut outcome = match command {
        Command::Converge => converge(cfg, &out, &mut manifest)?,
        Command::Pipeline => pipeline(cfg, &out, &mut manifest)?,
        Command::Field => field(cfg, &out, &mut manifest, &exec)?,
        Command::Scaling => scaling(cfg, &out, &mut manifest, &exec)?,
        Command::Tensteps => tensteps(cfg, &out, &mut manifest)?,
        Command::Sample => sample(cfg, &out, &mut manifest)?,
    };
    let manifest_path = sidecar(&out, "manifest");
    manifest.write(&manifest_path)?;
    outcome.outputs.push(manifest_path);
    outcome.manifest = manifest;
    Ok(outcome)
}

fn quadrature(cfg: &RunConfig) -> Result<Quadrature, ConfigError> {
    Quadrature::new(cfg.quad_order.unwrap_or(DEFAULT_ORDER)).map_err(|e| ConfigError::new("quad.order", e.to_string()))
}

fn mixture_spec(cfg: &RunConfig, default_mu: Option<&[f64]>) -> Result<MixtureSpec, ConfigError> {
    let mu = match cfg.symmetric_mu() {
        Ok(mu) => mu,
        Err(e) if e.field == "mu" && cfg.mu1.is_none() && cfg.mu2.is_none() => match default_mu {
            Some(d) => DVector::from_column_slice(d),
            None => return Err(e),
        },
        Err(e) => return Err(e),
    };
    let cov = cfg.covariance(mu.len())?;
    MixtureSpec::new(mu, cov).map_err(|e| ConfigError::new("model.mu", e.to_string()))
}

fn done(exit_code: u8, out: &Path, summary: String) -> Outcome {
    Outcome {
        exit_code,
        outputs: vec![out.to_path_buf()],
        manifest: Manifest::new(),
        summary,
    }
}

fn converge(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<Outcome, CommandError> {
    let spec = mixture_spec(cfg, None)?;
    let quad = quadrature(cfg)?;
    let d = spec.dim();
    let check = |v: &Vec<f64>| -> Result<DVector<f64>, ConfigError> {
        if v.len() != d {
            return Err(ConfigError::new(
                "converge.lambda0",
                format!("has dimension {}, the model has {d}", v.len()),
            ));
        }
        Ok(DVector::from_column_slice(v))
    };
    let start = match cfg.lambda0.clone().unwrap_or(StartSpec::Infinite(None)) {
        StartSpec::Infinite(None) => {
            if spec.snr() == 0.0 {
                return Err(ConfigError::new("converge.lambda0", "`inf` points along mu, which is zero").into());
            }
            Start::Infinite(spec.mu().clone())
        }
        StartSpec::Infinite(Some(v)) => Start::Infinite(check(&v)?),
        StartSpec::Finite(v) => Start::Finite(check(&v)?),
    };
    let defaults = StopRule::default();
    let stop = StopRule {
        max_steps: cfg.max_steps.unwrap_or(defaults.max_steps),
        tol: cfg.tol.unwrap_or(defaults.tol),
    };
    let traj = run(start, &spec, stop, &quad)?;

    let mut header = vec!["step".to_string()];
    header.extend((1..=d).map(|k| format!("lambda_{k}")));
    header.push("err".into());
    header.push("kappa".into());
    let rows: Vec<Vec<String>> = traj
        .steps()
        .iter()
        .map(|s| {
            let mut row = vec![s.iterate.step().to_string()];
            let inf = s.iterate.is_at_infinity();
            row.extend(s.iterate.lambda().iter().map(|&v| {
                if inf && v != 0.0 {
                    fmt_f64(v.signum() * f64::INFINITY)
                } else {
                    fmt_f64(v)
                }
            }));
            row.push(fmt_f64(s.error));
            row.push(fmt_opt(s.certificate.map(|c| c.kappa)));
            row
        })
        .collect();
    write_csv(out, &header, &rows)?;

    let last = traj.last();
    let termination = traj.termination();
    manifest.push("result.termination", termination.as_str());
    manifest.push("result.steps", last.iterate.step().to_string());
    manifest.push("result.final_error", fmt_f64(last.error));
    manifest.push("result.lambda", fmt_vec(last.iterate.lambda().as_slice()));
    let exit = if termination == Termination::MaxSteps { 2 } else { 0 };
    Ok(done(
        exit,
        out,
        format!(
            "{} after {} steps, error {:.3e}",
            termination.as_str(),
            last.iterate.step(),
            last.error
        ),
    ))
}

fn pipeline(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<Outcome, CommandError> {
    let seed = cfg.seed.unwrap_or(0);
    let epsilon = cfg.epsilon.unwrap_or(0.2);
    let eta = cfg.eta.unwrap_or(0.1);
    let (mut source, cov): (Box<dyn SampleSource>, _) = match &cfg.input {
        Some(input) => {
            if cfg.mu.is_some() || cfg.mu1.is_some() || cfg.mu2.is_some() {
                return Err(ConfigError::new("pipeline.input", "a CSV input cannot be combined with `model.mu`").into());
            }
            let batch = read_batch(Path::new(input))?;
            if batch.is_stabilized() || batch.centered_by().is_some() {
                return Err(ConfigError::new("pipeline.input", "batch is already centered or stabilized").into());
            }
            let cov = cfg.covariance(batch.dim())?;
            (Box::new(InMemorySource::new(batch, false)?), cov)
        }
        None => {
            let (mu1, mu2) = cfg.means()?;
            let cov = cfg.covariance(mu1.len())?;
            (Box::new(SyntheticSource::new(mu1, mu2, cov.clone(), seed)?), cov)
        }
    };
    let d = cov.dim();
    let mut pc = PipelineConfig::new(d, epsilon, eta, seed);
    pc.boot_cap = cfg.boot_cap;
    pc.main_steps = cfg.main_steps;
    pc.blowup = cfg.blowup;
    pc.reuse_samples = cfg.reuse_samples.unwrap_or(false);
    if let Some(input) = &cfg.input {
        // Split a fixed file into disjoint stage batches.
        let total = read_batch(Path::new(input))?.len();
        let steps = cfg.main_steps.unwrap_or(10);
        let probe = if pc.blowup.is_some() { 0 } else { 64 };
        let batches = 2 + if pc.reuse_samples { 1 } else { steps };
        let per = total.saturating_sub(probe) / batches;
        pc.main_steps = Some(steps);
        pc.n_center = per;
        pc.n_init = per;
        pc.n_step = per;
    }
    if let Some(n) = cfg.n_center {
        pc.n_center = n;
    }
    if let Some(n) = cfg.n_init {
        pc.n_init = n;
    }
    if let Some(n) = cfg.n_step {
        pc.n_step = n;
    }
    pc.validate()?;
    let res = run_pipeline(&pc, &cov, source.as_mut())?;

    let synthetic = res.final_error.is_some();
    let mut header = vec!["step".to_string()];
    if synthetic {
        header.push("err_mahalanobis".into());
    }
    header.extend(["alignment", "batch_size", "seed_stream"].map(String::from));
    let rows: Vec<Vec<String>> = res
        .steps
        .iter()
        .map(|s| {
            let mut row = vec![s.step.to_string()];
            if synthetic {
                row.push(fmt_opt(s.error));
            }
            row.push(fmt_f64(s.alignment));
            row.push(s.batch_size.to_string());
            row.push(s.seed_stream.to_string());
            row
        })
        .collect();
    write_csv(out, &header, &rows)?;

    let (m1, m2) = res.means();
    manifest.push("result.mode", if synthetic { "synthetic" } else { "estimation" });
    manifest.push("result.n_center", pc.n_center.to_string());
    manifest.push("result.n_init", pc.n_init.to_string());
    manifest.push("result.n_step", pc.n_step.to_string());
    manifest.push("result.lambda", fmt_vec(res.lambda.as_slice()));
    manifest.push("result.center", fmt_vec(res.center.c.as_slice()));
    manifest.push("result.mu1", fmt_vec(m1.as_slice()));
    manifest.push("result.mu2", fmt_vec(m2.as_slice()));
    manifest.push("result.snr_estimate", fmt_f64(res.spectrum.snr_estimate));
    manifest.push("result.gap_ratio", fmt_f64(res.spectrum.gap_ratio));
    manifest.push("result.bootstrap_iterations", res.bootstrap.iterations_done.to_string());
    manifest.push("result.bootstrap_magnitude", fmt_f64(res.bootstrap.magnitude));
    manifest.push("result.blowup", fmt_f64(res.blowup));
    manifest.push("result.main_steps", res.steps.len().to_string());
    if let Some(v) = res.delta_norm {
        manifest.push("result.delta_norm", fmt_f64(v));
    }
    if let Some(v) = res.init_alignment {
        manifest.push("result.init_alignment", fmt_f64(v));
    }
    if let Some(v) = res.final_error {
        manifest.push("result.final_error", fmt_f64(v));
    }
    let summary = match res.final_error {
        Some(e) => format!("estimate ({}) / ({}), error {e:.4}", fmt_vec(m1.as_slice()), fmt_vec(m2.as_slice())),
        None => format!("estimate ({}) / ({})", fmt_vec(m1.as_slice()), fmt_vec(m2.as_slice())),
    };
    Ok(done(0, out, summary))
}

fn field(cfg: &RunConfig, out: &Path, manifest: &mut Manifest, exec: &Workers) -> Result<Outcome, CommandError> {
    let spec = mixture_spec(cfg, Some(&[2.0, 2.0]))?;
    if spec.dim() != 2 {
        return Err(ConfigError::new("model.mu", format!("the field grid needs d = 2, got d = {}", spec.dim())).into());
    }
    let quad = quadrature(cfg)?;
    let bounds = (
        cfg.field_lo.unwrap_or(FIELD_DEFAULT_BOUNDS.0),
        cfg.field_hi.unwrap_or(FIELD_DEFAULT_BOUNDS.1),
    );
    let resolution = cfg.field_resolution.unwrap_or(FIELD_DEFAULT_RESOLUTION);
    let grid = field_grid(&spec, bounds, resolution, &quad, exec)?;
    let header = [
        "i", "j", "lambda_in_1", "lambda_in_2", "lambda_out_1", "lambda_out_2", "basin", "kappa", "decay",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = grid
        .cells
        .iter()
        .map(|c| {
            vec![
                c.i.to_string(),
                c.j.to_string(),
                fmt_f64(c.lambda_in[0]),
                fmt_f64(c.lambda_in[1]),
                fmt_f64(c.lambda_out[0]),
                fmt_f64(c.lambda_out[1]),
                c.basin.as_str().to_string(),
                fmt_opt(c.kappa),
                fmt_opt(c.decay),
            ]
        })
        .collect();
    write_csv(out, &header, &rows)?;
    manifest.push("result.mu", fmt_vec(spec.mu().as_slice()));
    manifest.push("result.bounds", format!("{},{}", fmt_f64(bounds.0), fmt_f64(bounds.1)));
    manifest.push("result.resolution", resolution.to_string());
    manifest.push("result.cells", grid.cells.len().to_string());
    Ok(done(0, out, format!("{} cells", grid.cells.len())))
}

fn scaling(cfg: &RunConfig, out: &Path, manifest: &mut Manifest, exec: &Workers) -> Result<Outcome, CommandError> {
    let sc = ScalingConfig {
        dim: cfg.scaling_dim.unwrap_or(2),
        snr: cfg.scaling_snr.unwrap_or(2.0),
        epsilon: cfg.scaling_epsilon.unwrap_or(0.2),
        ns: cfg.scaling_ns.clone().unwrap_or_else(|| vec![1000, 10_000, 100_000]),
        trials: cfg.scaling_trials.unwrap_or(50),
        seed: cfg.seed.unwrap_or(0),
    };
    let res = scaling_study(&sc, exec)?;
    let header = ["n", "median_error", "failures", "residual"].map(String::from);
    let rows: Vec<Vec<String>> = res
        .points
        .iter()
        .zip(&res.residuals)
        .map(|(p, r)| {
            vec![
                p.n.to_string(),
                fmt_f64(p.median),
                p.failed_trials.len().to_string(),
                fmt_f64(*r),
            ]
        })
        .collect();
    write_csv(out, &header, &rows)?;

    let trials_path = sidecar(out, "trials.csv");
    let mut trial_rows = Vec::new();
    for p in &res.points {
        let mut ok = p.errors.iter();
        for t in 0..sc.trials {
            let err = if p.failed_trials.contains(&t) {
                String::new()
            } else {
                fmt_f64(*ok.next().expect("one error per successful trial"))
            };
            trial_rows.push(vec![p.n.to_string(), t.to_string(), err]);
        }
    }
    write_csv(&trials_path, &["n", "trial", "error"].map(String::from), &trial_rows)?;
    manifest.push("result.slope", fmt_f64(res.slope));
    manifest.push("result.intercept", fmt_f64(res.intercept));
    let mut outcome = done(0, out, format!("log-log slope {:.4}", res.slope));
    outcome.outputs.push(trials_path);
    Ok(outcome)
}

fn tensteps(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<Outcome, CommandError> {
    let quad = quadrature(cfg)?;
    let snr = cfg.tensteps_snr.unwrap_or(1.0);
    let target = cfg.tensteps_target.unwrap_or(0.01);
    let table = ten_step_table(snr, target, &quad)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![r.t.to_string(), fmt_f64(r.lambda), fmt_f64(r.rel_error), fmt_f64(r.kappa)])
        .collect();
    write_csv(out, &["t", "lambda", "rel_error", "kappa"].map(String::from), &rows)?;
    let needed = table.steps_needed.map(|s| s.to_string()).unwrap_or_default();
    manifest.push("result.steps_needed", needed.clone());
    let exit = if table.steps_needed.is_some() { 0 } else { 2 };
    Ok(done(exit, out, format!("steps needed: {needed}")))
}

fn sample(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<Outcome, CommandError> {
    let (mu1, mu2) = cfg.means()?;
    let cov = cfg.covariance(mu1.len())?;
    let n = cfg.sample_n.unwrap_or(1000);
    let batch = draw(n, &mu1, &mu2, &cov, cfg.seed.unwrap_or(0))?;
    write_batch(out, &batch)?;
    manifest.push("result.n", n.to_string());
    let mut outcome = done(0, out, format!("{n} points"));
    outcome.outputs.push(sidecar(out, "meta"));
    Ok(outcome)
}
