//! Flat `key = value` run configuration with dotted keys.
//!
//! ```text
//! # comments start with '#'
//! command = pipeline
//! seed = 7
//! model.mu = 2,0
//! model.sigma = identity:2
//! pipeline.epsilon = 0.2
//! ```
//!
//! `model.sigma` accepts `identity:d`, `diag:a,b,...` or a literal matrix with
//! rows separated by `;` (`2,1;1,2`). Floats are written back with Rust's
//! shortest round-trip formatting, so [`RunConfig::to_text`] followed by
//! [`RunConfig::parse`] reproduces the config exactly. Keys under `result.`
//! are ignored, which lets a manifest be fed back in as a config.

use std::fmt;
use std::path::Path;

use em2gauss_core::{CovarianceModel, DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config error in `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaSpec {
    Identity(usize),
    Diag(Vec<f64>),
    /// Row-major rows.
    Full(Vec<Vec<f64>>),
}

impl SigmaSpec {
    pub fn dim(&self) -> usize {
        match self {
            SigmaSpec::Identity(d) => *d,
            SigmaSpec::Diag(v) => v.len(),
            SigmaSpec::Full(rows) => rows.len(),
        }
    }

    pub fn to_model(&self) -> Result<CovarianceModel, ConfigError> {
        let model = match self {
            SigmaSpec::Identity(d) => CovarianceModel::identity(*d),
            SigmaSpec::Diag(v) => CovarianceModel::diagonal(v),
            SigmaSpec::Full(rows) => {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(ConfigError::new("model.sigma", "matrix must be square"));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                CovarianceModel::new(DMatrix::from_row_slice(d, d, &flat))
            }
        };
        model.map_err(|e| ConfigError::new("model.sigma", e.to_string()))
    }

    fn parse(field: &str, s: &str) -> Result<Self, ConfigError> {
        if let Some(d) = s.strip_prefix("identity:") {
            let d = parse_scalar::<usize>(field, d)?;
            if d == 0 {
                return Err(ConfigError::new(field, "dimension must be positive"));
            }
            Ok(SigmaSpec::Identity(d))
        } else if let Some(v) = s.strip_prefix("diag:") {
            Ok(SigmaSpec::Diag(parse_list(field, v)?))
        } else {
            let rows = s
                .split(';')
                .map(|r| parse_list(field, r))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SigmaSpec::Full(rows))
        }
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaSpec::Identity(d) => write!(f, "identity:{d}"),
            SigmaSpec::Diag(v) => write!(f, "diag:{}", join(v)),
            SigmaSpec::Full(rows) => {
                let rows: Vec<String> = rows.iter().map(|r| join(r)).collect();
                f.write_str(&rows.join(";"))
            }
        }
    }
}

/// `converge.lambda0`: `inf` (along μ), `inf:v1,v2,...`, or a finite vector.
#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    Infinite(Option<Vec<f64>>),
    Finite(Vec<f64>),
}

impl StartSpec {
    fn parse(field: &str, s: &str) -> Result<Self, ConfigError> {
        if s == "inf" || s == "+inf" {
            Ok(StartSpec::Infinite(None))
        } else if let Some(v) = s.strip_prefix("inf:") {
            Ok(StartSpec::Infinite(Some(parse_list(field, v)?)))
        } else {
            let v: Vec<f64> = parse_list(field, s)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ConfigError::new(field, "use `inf` or `inf:direction` for an infinite start"));
            }
            Ok(StartSpec::Finite(v))
        }
    }
}

impl fmt::Display for StartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartSpec::Infinite(None) => f.write_str("inf"),
            StartSpec::Infinite(Some(v)) => write!(f, "inf:{}", join(v)),
            StartSpec::Finite(v) => f.write_str(&join(v)),
        }
    }
}

/// Every setting a command may read. Unset fields fall back to per-command defaults.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub workers: Option<usize>,

    pub mu: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub mu2: Option<Vec<f64>>,
    pub center: Option<Vec<f64>>,
    pub sigma: Option<SigmaSpec>,
    pub quad_order: Option<usize>,

    pub lambda0: Option<StartSpec>,
    pub max_steps: Option<usize>,
    pub tol: Option<f64>,

    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub n_center: Option<usize>,
    pub n_init: Option<usize>,
    pub n_step: Option<usize>,
    pub boot_cap: Option<usize>,
    pub main_steps: Option<usize>,
    pub blowup: Option<f64>,
    pub reuse_samples: Option<bool>,
    pub input: Option<String>,

    pub field_lo: Option<f64>,
    pub field_hi: Option<f64>,
    pub field_resolution: Option<usize>,

    pub scaling_dim: Option<usize>,
    pub scaling_snr: Option<f64>,
    pub scaling_epsilon: Option<f64>,
    pub scaling_ns: Option<Vec<usize>>,
    pub scaling_trials: Option<usize>,

    pub tensteps_snr: Option<f64>,
    pub tensteps_target: Option<f64>,

    pub sample_n: Option<usize>,
}

fn join<T: fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_scalar<T: std::str::FromStr>(field: &str, s: &str) -> Result<T, ConfigError> {
    s.trim()
        .parse()
        .map_err(|_| ConfigError::new(field, format!("cannot parse `{}`", s.trim())))
}

fn parse_list<T: std::str::FromStr>(field: &str, s: &str) -> Result<Vec<T>, ConfigError> {
    if s.trim().is_empty() {
        return Err(ConfigError::new(field, "empty list"));
    }
    s.split(',').map(|x| parse_scalar(field, x)).collect()
}

fn parse_bool(field: &str, s: &str) -> Result<bool, ConfigError> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::new(field, format!("expected true/false, got `{other}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::new(
                    "config",
                    format!("line {}: expected `key = value`", lineno + 1),
                ));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key; `assignment` has the form `key=value`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(assignment, "override must look like key=value"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = key;
        match key {
            "command" => self.command = Some(value.to_string()),
            "seed" => self.seed = Some(parse_scalar(k, value)?),
            "out" => self.out = Some(value.to_string()),
            "workers" => self.workers = Some(parse_scalar(k, value)?),
            "model.mu" => self.mu = Some(parse_list(k, value)?),
            "model.mu1" => self.mu1 = Some(parse_list(k, value)?),
            "model.mu2" => self.mu2 = Some(parse_list(k, value)?),
            "model.center" => self.center = Some(parse_list(k, value)?),
            "model.sigma" => self.sigma = Some(SigmaSpec::parse(k, value)?),
            "quad.order" => self.quad_order = Some(parse_scalar(k, value)?),
            "converge.lambda0" => self.lambda0 = Some(StartSpec::parse(k, value)?),
            "converge.max_steps" => self.max_steps = Some(parse_scalar(k, value)?),
            "converge.tol" => self.tol = Some(parse_scalar(k, value)?),
            "pipeline.epsilon" => self.epsilon = Some(parse_scalar(k, value)?),
            "pipeline.eta" => self.eta = Some(parse_scalar(k, value)?),
            "pipeline.n_center" => self.n_center = Some(parse_scalar(k, value)?),
            "pipeline.n_init" => self.n_init = Some(parse_scalar(k, value)?),
            "pipeline.n_step" => self.n_step = Some(parse_scalar(k, value)?),
            "pipeline.boot_cap" => self.boot_cap = Some(parse_scalar(k, value)?),
            "pipeline.main_steps" => self.main_steps = Some(parse_scalar(k, value)?),
            "pipeline.blowup" => self.blowup = Some(parse_scalar(k, value)?),
            "pipeline.reuse_samples" => self.reuse_samples = Some(parse_bool(k, value)?),
            "pipeline.input" => self.input = Some(value.to_string()),
            "field.lo" => self.field_lo = Some(parse_scalar(k, value)?),
            "field.hi" => self.field_hi = Some(parse_scalar(k, value)?),
            "field.resolution" => self.field_resolution = Some(parse_scalar(k, value)?),
            "scaling.dim" => self.scaling_dim = Some(parse_scalar(k, value)?),
            "scaling.snr" => self.scaling_snr = Some(parse_scalar(k, value)?),
            "scaling.epsilon" => self.scaling_epsilon = Some(parse_scalar(k, value)?),
            "scaling.ns" => self.scaling_ns = Some(parse_list(k, value)?),
            "scaling.trials" => self.scaling_trials = Some(parse_scalar(k, value)?),
            "tensteps.snr" => self.tensteps_snr = Some(parse_scalar(k, value)?),
            "tensteps.target" => self.tensteps_target = Some(parse_scalar(k, value)?),
            "sample.n" => self.sample_n = Some(parse_scalar(k, value)?),
            _ if key.starts_with("result.") => {}
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Present keys in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        fn put<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        fn put_f(out: &mut Vec<(&'static str, String)>, key: &'static str, v: Option<f64>) {
            if let Some(v) = v {
                out.push((key, format!("{v:?}")));
            }
        }
        fn put_list<T: fmt::Debug>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<Vec<T>>) {
            if let Some(v) = v {
                out.push((key, join(v)));
            }
        }
        let mut out = Vec::new();
        put(&mut out, "command", &self.command);
        put(&mut out, "seed", &self.seed);
        put(&mut out, "out", &self.out);
        put(&mut out, "workers", &self.workers);
        put_list(&mut out, "model.mu", &self.mu);
        put_list(&mut out, "model.mu1", &self.mu1);
        put_list(&mut out, "model.mu2", &self.mu2);
        put_list(&mut out, "model.center", &self.center);
        put(&mut out, "model.sigma", &self.sigma);
        put(&mut out, "quad.order", &self.quad_order);
        put(&mut out, "converge.lambda0", &self.lambda0);
        put(&mut out, "converge.max_steps", &self.max_steps);
        put_f(&mut out, "converge.tol", self.tol);
        put_f(&mut out, "pipeline.epsilon", self.epsilon);
        put_f(&mut out, "pipeline.eta", self.eta);
        put(&mut out, "pipeline.n_center", &self.n_center);
        put(&mut out, "pipeline.n_init", &self.n_init);
        put(&mut out, "pipeline.n_step", &self.n_step);
        put(&mut out, "pipeline.boot_cap", &self.boot_cap);
        put(&mut out, "pipeline.main_steps", &self.main_steps);
        put_f(&mut out, "pipeline.blowup", self.blowup);
        put(&mut out, "pipeline.reuse_samples", &self.reuse_samples);
        put(&mut out, "pipeline.input", &self.input);
        put_f(&mut out, "field.lo", self.field_lo);
        put_f(&mut out, "field.hi", self.field_hi);
        put(&mut out, "field.resolution", &self.field_resolution);
        put(&mut out, "scaling.dim", &self.scaling_dim);
        put_f(&mut out, "scaling.snr", self.scaling_snr);
        put_f(&mut out, "scaling.epsilon", self.scaling_epsilon);
        put_list(&mut out, "scaling.ns", &self.scaling_ns);
        put(&mut out, "scaling.trials", &self.scaling_trials);
        put_f(&mut out, "tensteps.snr", self.tensteps_snr);
        put_f(&mut out, "tensteps.target", self.tensteps_target);
        put(&mut out, "sample.n", &self.sample_n);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn covariance(&self, dim: usize) -> Result<CovarianceModel, ConfigError> {
        let spec = self.sigma.clone().unwrap_or(SigmaSpec::Identity(dim));
        if spec.dim() != dim {
            return Err(ConfigError::new(
                "model.sigma",
                format!("dimension {} does not match the mean dimension {dim}", spec.dim()),
            ));
        }
        spec.to_model()
    }

    /// `(μ₁, μ₂)` from either `model.mu` (with optional `model.center`) or `model.mu1`/`model.mu2`.
    pub fn means(&self) -> Result<(DVector<f64>, DVector<f64>), ConfigError> {
        match (&self.mu, &self.mu1, &self.mu2) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(ConfigError::new(
                "mu",
                "set either `model.mu` or `model.mu1`/`model.mu2`, not both",
            )),
            (Some(mu), None, None) => {
                let mu = DVector::from_column_slice(mu);
                let c = match &self.center {
                    Some(c) if c.len() != mu.len() => {
                        return Err(ConfigError::new("model.center", "dimension does not match `model.mu`"))
                    }
                    Some(c) => DVector::from_column_slice(c),
                    None => DVector::zeros(mu.len()),
                };
                Ok((&c + &mu, &c - &mu))
            }
            (None, Some(a), Some(b)) => {
                if a.len() != b.len() {
                    return Err(ConfigError::new("model.mu2", "dimension does not match `model.mu1`"));
                }
                if self.center.is_some() {
                    return Err(ConfigError::new("model.center", "only used together with `model.mu`"));
                }
                Ok((DVector::from_column_slice(a), DVector::from_column_slice(b)))
            }
            (None, Some(_), None) => Err(ConfigError::new("model.mu2", "missing")),
            (None, None, Some(_)) => Err(ConfigError::new("model.mu1", "missing")),
            (None, None, None) => Err(ConfigError::new(
                "mu",
                "missing required field (set `model.mu`, or `model.mu1` and `model.mu2`)",
            )),
        }
    }

    /// Symmetric-mixture mean `μ = (μ₁ − μ₂)/2`.
    pub fn symmetric_mu(&self) -> Result<DVector<f64>, ConfigError> {
        let (a, b) = self.means()?;
        Ok((a - b) * 0.5)
    }
}
