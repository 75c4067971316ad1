//! Expectations under the standard normal weight.
//!
//! Every population quantity in this crate reduces to `E_{y~N(0,1)}[f(y + b)]`
//! where `f` contains `tanh(a·u)` (or its derivative) and so changes on the
//! length scale `1/|a|` around `u = 0`. For `|a| <= 1/4` the integrand is
//! analytic in a wide strip and a Gauss–Hermite rule converges to machine
//! precision. For steeper transitions the rule loses accuracy (the poles of
//! `tanh` approach the real axis), so the integral is instead taken with
//! composite Gauss–Legendre panels on `[-12, 12]`, geometrically graded toward
//! the transition point.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Result};

pub const DEFAULT_ORDER: usize = 80;
pub const MIN_ORDER: usize = 20;

const GL_POINTS: usize = 20;
const HALF_WIDTH: f64 = 12.0;
const PANEL: f64 = 0.5;
const SMOOTH_SCALE: f64 = 0.25;

/// A Gauss–Hermite rule (probabilists' weight) plus the panel rule used for steep integrands.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    order: usize,
    gh_nodes: Vec<f64>,
    gh_weights: Vec<f64>,
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER).expect("default order is valid")
    }
}

impl Quadrature {
    pub fn new(order: usize) -> Result<Self> {
        if order < MIN_ORDER {
            return Err(invalid(
                "quad.order",
                alloc::format!("must be at least {MIN_ORDER}, got {order}"),
            ));
        }
        let (gh_nodes, gh_weights) = gauss_hermite_prob(order);
        let (gl_nodes, gl_weights) = gauss_legendre(GL_POINTS);
        Ok(Self {
            order,
            gh_nodes,
            gh_weights,
            gl_nodes,
            gl_weights,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `E_{y~N(0,1)}[f(y + shift)]`, where `f` varies on the scale `1/scale` around zero.
    pub fn expect_shifted<F: Fn(f64) -> f64>(&self, shift: f64, scale: f64, f: F) -> f64 {
        self.expect_shifted_many(shift, scale, |u| [f(u)])[0]
    }

    /// Vector-valued form of [`Quadrature::expect_shifted`]; all components share one set of nodes.
    pub fn expect_shifted_many<const N: usize, F>(&self, shift: f64, scale: f64, f: F) -> [f64; N]
    where
        F: Fn(f64) -> [f64; N],
    {
        let mut total = [0.0; N];
        let scale = scale.abs();
        if scale <= SMOOTH_SCALE {
            for (&y, &w) in self.gh_nodes.iter().zip(&self.gh_weights) {
                let v = f(y + shift);
                for k in 0..N {
                    total[k] += w * v[k];
                }
            }
            return total;
        }
        let breaks = panel_breaks(-shift, scale);
        for pair in breaks.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            let mut panel = [0.0; N];
            for (&t, &w) in self.gl_nodes.iter().zip(&self.gl_weights) {
                let y = mid + half * t;
                let wy = w * std_normal_pdf(y);
                let v = f(y + shift);
                for k in 0..N {
                    panel[k] += wy * v[k];
                }
            }
            for k in 0..N {
                total[k] += half * panel[k];
            }
        }
        total
    }

    /// Plain Gauss–Hermite expectation `E_{y~N(0,1)}[f(y)]`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.gh_nodes
            .iter()
            .zip(&self.gh_weights)
            .map(|(&y, &w)| w * f(y))
            .sum()
    }

    pub fn hermite_nodes(&self) -> &[f64] {
        &self.gh_nodes
    }

    pub fn hermite_weights(&self) -> &[f64] {
        &self.gh_weights
    }
}

pub(crate) fn std_normal_pdf(y: f64) -> f64 {
    libm::exp(-0.5 * y * y) / libm::sqrt(2.0 * PI)
}

fn panel_breaks(kink: f64, scale: f64) -> Vec<f64> {
    let count = (2.0 * HALF_WIDTH / PANEL) as usize;
    let mut breaks: Vec<f64> = (0..=count)
        .map(|k| -HALF_WIDTH + k as f64 * PANEL)
        .collect();
    if kink > -HALF_WIDTH && kink < HALF_WIDTH {
        breaks.push(kink);
        let mut w = 0.5 / scale;
        while w < PANEL {
            for p in [kink - w, kink + w] {
                if p > -HALF_WIDTH && p < HALF_WIDTH {
                    breaks.push(p);
                }
            }
            w *= 2.0;
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * b.abs().max(1.0));
    breaks
}

/// Nodes and weights for `∫ f(y) φ(y) dy` (weights sum to one).
///
/// Golub–Welsch eigenvalues seed a Newton polish on the orthonormal Hermite
/// recurrence; weights come from the Christoffel function `1 / Σ_k h_k(x)²`.
fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = libm::sqrt(k as f64);
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (hn, hn1, _) = hermite_orthonormal(n, *x);
            let deriv = libm::sqrt(n as f64) * hn1;
            if deriv != 0.0 {
                *x -= hn / deriv;
            }
        }
        let (_, _, christoffel) = hermite_orthonormal(n, *x);
        weights.push(1.0 / christoffel);
    }
    // Symmetrize to remove rounding asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    (nodes, weights)
}

/// Returns `(h_n(x), h_{n-1}(x), Σ_{k<n} h_k(x)²)` for the orthonormal probabilists' Hermite family.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - libm::sqrt(k as f64) * prev) / libm::sqrt((k + 1) as f64);
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = libm::cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            deriv = dp;
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        if dp != 0.0 {
            deriv = dp;
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
