//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use em2gauss::exec::Workers;
use em2gauss_core::experiments::{scaling_study, ScalingConfig};
use em2gauss_core::finite::{
    bootstrap_init, empirical_covariance, estimate_center, run_pipeline, spectrum, PipelineConfig, SyntheticSource,
};
use em2gauss_core::population::{
    rate, rate_1d, run, tanh_derivative_moment, tanh_expectation, update, update_1d, Iterate, MixtureSpec, Start,
    StopRule,
};
use em2gauss_core::sampling::{draw, mc_update, RngStream};
use em2gauss_core::{CovarianceModel, DMatrix, DVector, Quadrature};

type Check = fn() -> Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    check: Check,
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn random_spd(rng: &mut RngStream, d: usize) -> CovarianceModel {
    let a = DMatrix::from_fn(d, d, |_, _| rng.normal());
    let s = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
    CovarianceModel::new((&s + s.transpose()) * 0.5).unwrap()
}

fn random_vec(rng: &mut RngStream, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.normal())
}

/// Rescales `v` to Σ-norm `r`.
fn with_norm(v: DVector<f64>, cov: &CovarianceModel, r: f64) -> DVector<f64> {
    let n = cov.norm(&v).unwrap();
    v * (r / n)
}

fn e1(d: usize, scale: f64) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[0] = scale;
    v
}

fn iterate(l: &DVector<f64>, spec: &MixtureSpec) -> Iterate {
    Iterate::new(l.clone(), 0, spec.cov(), Some(spec.mu())).unwrap()
}

fn ten_step_claim() -> Result<String, String> {
    let q = Quadrature::default();
    let mut l = f64::INFINITY;
    for _ in 0..10 {
        l = update_1d(l, 1.0, 1.0, &q).map_err(|e| e.to_string())?;
    }
    let err = (l - 1.0).abs();
    let msg = format!("|λ10 − μ| = {err:.3e}");
    if err <= 0.01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn one_step_folded_bound() -> Result<String, String> {
    let q = Quadrature::default();
    let mut worst = f64::NEG_INFINITY;
    for sigma in [0.5, 1.0, 2.0] {
        for snr in [0.5, 1.0, 2.0, 4.0] {
            let mu = snr * sigma;
            let l1 = update_1d(f64::INFINITY, mu, sigma, &q).unwrap();
            let excess = (l1 - mu).abs() - sigma * (2.0 / std::f64::consts::PI).sqrt();
            worst = worst.max(excess);
        }
    }
    let msg = format!("max(|λ1 − μ| − σ√(2/π)) = {worst:.3e}");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn fixed_points() -> Result<String, String> {
    let q = Quadrature::default();
    let mut rng = RngStream::new(3, 0);
    let mut worst = 0.0f64;
    for d in [1, 2, 5, 16] {
        for _ in 0..20 {
            let cov = random_spd(&mut rng, d);
            let mu = random_vec(&mut rng, d);
            let spec = MixtureSpec::new(mu.clone(), cov.clone()).unwrap();
            for v in [-&mu, DVector::zeros(d), mu.clone()] {
                let out = update(&iterate(&v, &spec), &spec, &q).unwrap();
                worst = worst.max(cov.distance(out.lambda(), &v).unwrap());
            }
        }
    }
    let msg = format!("max ‖M(v) − v‖_Σ = {worst:.3e} over 240 cases");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn scalar_certificate() -> Result<String, String> {
    let q = Quadrature::default();
    let mut worst = f64::NEG_INFINITY;
    for i in 1..=30 {
        for j in 1..=30 {
            let (l, m) = (0.1 * i as f64, 0.1 * j as f64);
            let next = update_1d(l, m, 1.0, &q).unwrap();
            let kappa = rate_1d(l, m, 1.0).unwrap().kappa;
            worst = worst.max((next - m).abs() - kappa * (l - m).abs());
        }
    }
    let msg = format!("max excess over κ|λ − μ| = {worst:.3e}");
    if worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn multivariate_certificate() -> Result<String, String> {
    let q = Quadrature::default();
    let mut rng = RngStream::new(5, 0);
    let (mut excess, mut kappa_rise) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut done = 0;
    while done < 200 {
        let d = 1 + (rng.next_u64() % 8) as usize;
        let cov = random_spd(&mut rng, d);
        let mu = random_vec(&mut rng, d);
        let lambda = random_vec(&mut rng, d) * 2.0;
        if !(cov.inner(&lambda, &mu).unwrap() > 0.0) {
            continue;
        }
        done += 1;
        let spec = MixtureSpec::new(mu, cov).unwrap();
        let traj = run(Start::Finite(lambda), &spec, StopRule { max_steps: 20, tol: 0.0 }, &q).unwrap();
        excess = excess.max(traj.max_certificate_excess());
        for w in traj.steps().windows(2) {
            let k = |s: &em2gauss_core::population::TrajectoryStep| s.certificate.unwrap().kappa;
            kappa_rise = kappa_rise.max(k(&w[1]) - k(&w[0]));
        }
        let first = rate(&traj.steps()[0].iterate, &spec).unwrap();
        debug_assert!(first.kappa <= 1.0);
    }
    let msg = format!("max certificate excess {excess:.3e}, max κ increase {kappa_rise:.3e}");
    if excess <= 1e-6 && kappa_rise <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn plane_reduction() -> Result<String, String> {
    let q = Quadrature::default();
    let mut rng = RngStream::new(6, 0);
    let (mut off, mut collinear) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let d = 3 + (rng.next_u64() % 6) as usize;
        let cov = random_spd(&mut rng, d);
        let mu = random_vec(&mut rng, d);
        let lambda = random_vec(&mut rng, d);
        let spec = MixtureSpec::new(mu.clone(), cov.clone()).unwrap();
        let out = update(&iterate(&lambda, &spec), &spec, &q).unwrap();
        // Whitened orthonormal basis: λ, μ, then the rest.
        let wl = cov.whiten(&lambda).unwrap();
        let wm = cov.whiten(&mu).unwrap();
        let wo = cov.whiten(out.lambda()).unwrap();
        let mut basis = DMatrix::identity(d, d);
        basis.set_column(0, &wl);
        basis.set_column(1, &wm);
        let qr = basis.qr().q();
        for k in 2..d {
            off = off.max(qr.column(k).dot(&wo).abs());
        }

        let t = 0.2 + 2.0 * rng.uniform();
        let col = &mu * t;
        let out = update(&iterate(&col, &spec), &spec, &q).unwrap();
        let snr = spec.snr();
        let expected = &mu * (update_1d(t * snr, snr, 1.0, &q).unwrap() / snr);
        collinear = collinear.max(cov.distance(out.lambda(), &expected).unwrap());
    }
    let msg = format!("max off-plane {off:.3e}, collinear mismatch {collinear:.3e}");
    if off <= 1e-9 && collinear <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tanh_bounds() -> Result<String, String> {
    let q = Quadrature::default();
    let (mut deriv_min, mut tanh_slack) = (f64::INFINITY, f64::INFINITY);
    for sigma in [0.5, 1.0, 2.0] {
        for i in 1..=40 {
            for j in 1..=40 {
                let (alpha, beta) = (0.1 * i as f64, 0.1 * j as f64);
                deriv_min = deriv_min.min(tanh_derivative_moment(alpha, beta, sigma, &q).unwrap());
                let e = tanh_expectation(alpha, beta, sigma, &q).unwrap();
                let bound = 1.0 - (-alpha.min(beta) * alpha / (2.0 * sigma * sigma)).exp();
                tanh_slack = tanh_slack.min(e - bound);
            }
        }
    }
    let msg = format!("min derivative moment {deriv_min:.3e}, min tanh slack {tanh_slack:.3e}");
    if deriv_min >= -1e-6 && tanh_slack >= -1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn quadrature_vs_monte_carlo() -> Result<String, String> {
    let q = Quadrature::default();
    let mut rng = RngStream::new(8, 0);
    let mut worst = 0.0f64;
    let mut misses = 0;
    for k in 0..50 {
        let l = 6.0 * rng.uniform() - 3.0;
        let m = 6.0 * rng.uniform() - 3.0;
        let s = 0.3 + 2.7 * rng.uniform();
        let exact = update_1d(l, m, s, &q).unwrap();
        let cov = CovarianceModel::diagonal(&[s * s]).unwrap();
        let one = |v: f64| DVector::from_element(1, v);
        let mc = mc_update(&one(l), &one(m), &one(-m), &cov, 1_000_000, 8000 + k).unwrap();
        let z = (mc.mean[0] - exact).abs() / mc.std_err[0];
        worst = worst.max(z);
        if z > 3.0 {
            misses += 1;
        }
    }
    let msg = format!("max |z| = {worst:.2} over 50 instances, {misses} beyond 3 SE");
    if misses == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn covariance_structure() -> Result<String, String> {
    let (d, n, snr) = (4, 100_000, 2.0);
    let mut rng = RngStream::new(9, 0);
    let cov = random_spd(&mut rng, d);
    let mu = with_norm(random_vec(&mut rng, d), &cov, snr);
    let wmu = cov.whiten(&mu).unwrap();
    let ideal = DMatrix::identity(d, d) + &wmu * wmu.transpose();
    let gap_min = (1.0 + snr * snr / 4.0).min(2.0);
    let mut ok = 0;
    let (mut worst_op, mut worst_align, mut worst_gap) = (0.0f64, 1.0f64, f64::INFINITY);
    for s in 0..100 {
        let b = draw(n, &mu, &-&mu, &cov, 900 + s).unwrap().stabilize(&DVector::zeros(d)).unwrap();
        let emp = empirical_covariance(&b, &cov).unwrap();
        let op = (&emp - &ideal).symmetric_eigenvalues().amax();
        let sp = spectrum(&emp);
        let align = sp.principal.dot(&wmu).abs() / snr;
        worst_op = worst_op.max(op);
        worst_align = worst_align.min(align);
        worst_gap = worst_gap.min(sp.gap_ratio);
        if op <= 0.1 && align >= 0.75 && sp.gap_ratio >= gap_min {
            ok += 1;
        }
    }
    let msg = format!(
        "{ok}/100 seeds (worst op-norm {worst_op:.3}, alignment {worst_align:.3}, gap {worst_gap:.2})"
    );
    if ok >= 90 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bootstrap_alignment() -> Result<String, String> {
    let (d, n, snr, eps) = (32usize, 50_000, 2.0, 0.2);
    let cap = (8.0 * (d as f64).log2()).ceil() as usize;
    let cov = CovarianceModel::identity(d).unwrap();
    let mu = e1(d, snr);
    let mut ok = 0;
    let mut within_cap = true;
    for s in 0..100 {
        let b = draw(n, &mu, &-&mu, &cov, 1000 + s).unwrap().stabilize(&DVector::zeros(d)).unwrap();
        let st = bootstrap_init(&b, &cov, eps, cap, 2000 + s).map_err(|e| e.to_string())?;
        within_cap &= st.iterations_done <= cap;
        if cov.inner(&st.direction, &mu).unwrap().abs() / snr >= 0.5 {
            ok += 1;
        }
    }
    let msg = format!("{ok}/100 trials aligned ≥ 1/2 within a cap of {cap} iterations");
    if ok >= 90 && within_cap {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn centering() -> Result<String, String> {
    let (d, snr, eps) = (16usize, 1.0, 0.5);
    let n = 2000 * d * (d as f64).ln().ceil() as usize;
    let mut rng = RngStream::new(11, 0);
    let cov = random_spd(&mut rng, d);
    let mut ok = 0;
    let mut worst = 0.0f64;
    for s in 0..100 {
        let center = random_vec(&mut rng, d) * 3.0;
        let mu = with_norm(random_vec(&mut rng, d), &cov, snr);
        let b = draw(n, &(&center + &mu), &(&center - &mu), &cov, 1100 + s).unwrap();
        let est = estimate_center(&b, &cov).map_err(|e| e.to_string())?;
        let delta = cov.distance(&est.c, &center).unwrap();
        worst = worst.max(delta);
        if delta <= eps {
            ok += 1;
        }
    }
    let msg = format!("{ok}/100 trials with ‖δ‖_Σ ≤ {eps} at n = {n} (worst {worst:.3})");
    if ok >= 90 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn end_to_end() -> Result<String, String> {
    let (d, snr, eps) = (2usize, 2.0, 0.2);
    let cov = CovarianceModel::identity(d).unwrap();
    let mut rng = RngStream::new(12, 0);
    let mut ok = 0;
    let mut failures = 0;
    for s in 0..50u64 {
        let center = random_vec(&mut rng, d);
        let mu = with_norm(random_vec(&mut rng, d), &cov, snr);
        let cfg = PipelineConfig::new(d, eps, 0.1, 1200 + s);
        let mut src = SyntheticSource::symmetric(&center, &mu, cov.clone(), 1200 + s).unwrap();
        match run_pipeline(&cfg, &cov, &mut src) {
            Ok(out) if out.final_error.unwrap() <= 3.0 * eps => ok += 1,
            Ok(_) => {}
            Err(_) => failures += 1,
        }
    }
    let msg = format!("{ok}/50 trials with error ≤ 3ε ({failures} pipeline errors)");
    if ok >= 45 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn scaling_law() -> Result<String, String> {
    let cfg = ScalingConfig {
        dim: 2,
        snr: 2.0,
        epsilon: 0.2,
        ns: vec![1_000, 10_000, 100_000],
        trials: 50,
        seed: 13,
    };
    let workers = Workers::new(std::thread::available_parallelism().map_or(1, |n| n.get())).unwrap();
    let res = scaling_study(&cfg, &workers).map_err(|e| e.to_string())?;
    let medians: Vec<String> = res.points.iter().map(|p| format!("{:.4}", p.median)).collect();
    let msg = format!("slope {:.3} (medians {})", res.slope, medians.join(", "));
    if (-0.65..=-0.35).contains(&res.slope) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn equidistant_branch() -> Result<String, String> {
    let q = Quadrature::default();
    let mut rng = RngStream::new(14, 0);
    let (mut shape_ok, mut reached) = (true, 0);
    let mut finals = Vec::new();
    for _ in 0..20 {
        let d = 2 + (rng.next_u64() % 6) as usize;
        let cov = random_spd(&mut rng, d);
        let mu = random_vec(&mut rng, d);
        let spec = MixtureSpec::new(mu.clone(), cov.clone()).unwrap();
        // A standard normal in whitened coordinates, projected onto the Σ-complement of μ.
        let w = random_vec(&mut rng, d);
        let raw = cov.unwhiten(&w).unwrap();
        let lambda = &raw - &mu * (cov.inner(&raw, &mu).unwrap() / (spec.snr() * spec.snr()));

        let out = update(&iterate(&lambda, &spec), &spec, &q).unwrap();
        let (nl, no) = (cov.norm(&lambda).unwrap(), cov.norm(out.lambda()).unwrap());
        let cos = cov.inner(&lambda, out.lambda()).unwrap() / (nl * no);
        shape_ok &= (cos - 1.0).abs() <= 1e-9 && no < nl;

        let traj = run(Start::Finite(lambda), &spec, StopRule { max_steps: 200, tol: 0.0 }, &q).unwrap();
        let last = traj.steps().last().unwrap().iterate.norm();
        finals.push(last);
        if last < 0.05 {
            reached += 1;
        }
    }
    let worst = finals.iter().copied().fold(0.0, f64::max);
    let msg = format!(
        "collinear and shorter: {shape_ok}; {reached}/20 below 0.05 after 200 steps (largest {worst:.5})"
    );
    if shape_ok && reached == 20 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn em2gauss(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_em2gauss"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    match o.status.code() {
        Some(0) => Ok(()),
        c => Err(format!("{args:?} exited with {c:?}: {}", String::from_utf8_lossy(&o.stderr))),
    }
}

/// Field-wise equality, floats within 1e-12 relative.
fn numerically_equal(a: &[u8], b: &[u8]) -> bool {
    let fields = |t: &[u8]| -> Vec<String> {
        csv::Reader::from_reader(t)
            .records()
            .flat_map(|r| r.map(|r| r.iter().map(String::from).collect::<Vec<_>>()).unwrap_or_default())
            .collect()
    };
    let (fa, fb) = (fields(a), fields(b));
    fa.len() == fb.len()
        && fa.iter().zip(&fb).all(|(x, y)| {
            x == y
                || match (x.parse::<f64>(), y.parse::<f64>()) {
                    (Ok(u), Ok(v)) => (u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs())),
                    _ => false,
                }
        })
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    em2gauss(p, &["sample", "--seed", "15", "--set", "model.mu=2,0", "--set", "sample.n=20000", "--out", "in.csv"])?;
    let runs: [(&str, &[&str]); 7] = [
        ("converge", &["--set", "model.mu=1,0.5", "--set", "converge.lambda0=inf:1,1"]),
        ("pipeline", &["--set", "model.mu=2,0"]),
        ("pipeline", &["--set", "pipeline.input=in.csv"]),
        ("field", &["--set", "field.resolution=21"]),
        ("scaling", &["--set", "scaling.ns=1000,3000,10000", "--set", "scaling.trials=20"]),
        ("tensteps", &[]),
        ("sample", &["--set", "model.mu=1,1", "--set", "sample.n=500"]),
    ];
    let mut outputs = 0;
    for (k, (cmd, extra)) in runs.iter().enumerate() {
        let mut files = Vec::new();
        for (tag, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
            let out = format!("{cmd}{k}{tag}.csv");
            let mut args = vec![*cmd, "--seed", "15", "--workers", workers, "--out", &out];
            args.extend_from_slice(extra);
            em2gauss(p, &args)?;
            let mut contents = vec![std::fs::read(p.join(&out)).map_err(|e| e.to_string())?];
            let trials = p.join(format!("{out}.trials.csv"));
            if trials.exists() {
                contents.push(std::fs::read(trials).map_err(|e| e.to_string())?);
            }
            files.push(contents);
        }
        if files[0] != files[1] {
            return Err(format!("{cmd}: repeated run at --workers 1 differs"));
        }
        for (x, y) in files[0].iter().zip(&files[2]) {
            if !numerically_equal(x, y) {
                return Err(format!("{cmd}: --workers 4 differs beyond 1e-12"));
            }
        }
        outputs += files[0].len();
    }
    Ok(format!("{} runs, {outputs} CSV outputs identical across repeats and worker counts", runs.len()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "ten-step claim from the infinite start", limit: secs(1), check: ten_step_claim },
        Criterion { name: "one-step folded-normal bound", limit: None, check: one_step_folded_bound },
        Criterion { name: "fixed points at -mu, 0, mu", limit: None, check: fixed_points },
        Criterion { name: "scalar contraction certificate on a grid", limit: secs(5), check: scalar_certificate },
        Criterion { name: "multivariate contraction certificate", limit: None, check: multivariate_certificate },
        Criterion { name: "plane reduction", limit: None, check: plane_reduction },
        Criterion { name: "tanh moment bounds on grids", limit: None, check: tanh_bounds },
        Criterion { name: "quadrature versus Monte Carlo", limit: secs(30), check: quadrature_vs_monte_carlo },
        Criterion { name: "whitened covariance structure", limit: None, check: covariance_structure },
        Criterion { name: "bootstrap initialization alignment", limit: secs(60), check: bootstrap_alignment },
        Criterion { name: "quartile centering accuracy", limit: None, check: centering },
        Criterion { name: "end-to-end pipeline accuracy", limit: secs(120), check: end_to_end },
        Criterion { name: "error scaling slope", limit: secs(600), check: scaling_law },
        Criterion { name: "equidistant branch", limit: None, check: equidistant_branch },
        Criterion { name: "CLI determinism", limit: None, check: determinism },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = (c.check)();
        let elapsed = start.elapsed();
        let (ok, mut detail) = match result {
            Ok(m) => (true, m),
            Err(m) => (false, m),
        };
        let mut pass = ok;
        if let Some(limit) = c.limit {
            if elapsed > limit {
                pass = false;
                detail.push_str(&format!("; over the {}s limit", limit.as_secs()));
            }
        }
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{:02}] {}: {} ({:.2}s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            c.name,
            detail,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
