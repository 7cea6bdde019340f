//! Markov chains with Gamma increments on a line graph.
//!
//! The approximating kernel uses a constant rate `β`, under which the
//! h-function stays a shifted Gamma density `ψ(x_v − x; A, β)` and each
//! pullback simply adds the increment's shape to `A`. The forward kernel may
//! use a state-dependent rate `β(x)`; the weight then involves
//! `E exp(−ξ Z)` with `Z ~ Beta(α, A)`, estimated by Gauss–Jacobi quadrature
//! or unbiasedly by Monte Carlo.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernel::GammaKernel;
use crate::linalg::log_sum_exp;
use crate::seed::{Rng64, Seed};

/// Number of Gauss–Jacobi nodes.
pub const QUAD_NODES: usize = 64;
/// Below this shape the Beta weight is too singular for the quadrature rule.
pub const MIN_QUAD_SHAPE: f64 = 0.02;
/// Draws used when the quadrature rule is not applicable.
pub const FALLBACK_DRAWS: usize = 100_000;

/// `h(x) = exp(logc) ψ(target − x; shape, rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaH {
    pub shape: f64,
    pub rate: f64,
    pub target: f64,
    #[serde(default)]
    pub logc: f64,
}

impl GammaH {
    pub fn new(shape: f64, rate: f64, target: f64) -> Self {
        GammaH {
            shape,
            rate,
            target,
            logc: 0.0,
        }
    }

    pub fn log_eval(&self, x: f64) -> f64 {
        self.logc + log_gamma_density(self.target - x, self.shape, self.rate)
    }

    pub fn shifted(&self, dc: f64) -> Self {
        GammaH {
            logc: self.logc + dc,
            ..self.clone()
        }
    }
}

/// Log density of `Gamma(a, b)` (shape, rate) at `u`; `-inf` for `u ≤ 0`.
pub fn log_gamma_density(u: f64, a: f64, b: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a * b.ln() - ln_gamma(a) + (a - 1.0) * u.ln() - b * u
}

/// Pullback through a constant-rate increment of shape `alpha`.
pub fn pullback_tilde(h: &GammaH, alpha: f64) -> GammaH {
    GammaH {
        shape: h.shape + alpha,
        ..h.clone()
    }
}

/// How `E exp(−ξZ)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightEstimator {
    /// Deterministic Gauss–Jacobi quadrature.
    Quadrature,
    /// Unbiased estimate of the weight from `draws` Beta variates.
    MonteCarlo { draws: usize, seed: Seed },
}

impl WeightEstimator {
    /// Independent estimator for the `i`-th use within one pass.
    pub fn for_index(&self, i: u64) -> WeightEstimator {
        match *self {
            WeightEstimator::Quadrature => WeightEstimator::Quadrature,
            WeightEstimator::MonteCarlo { draws, seed } => WeightEstimator::MonteCarlo {
                draws,
                seed: seed.derive(i),
            },
        }
    }
}

/// Normalised Gauss–Jacobi rule for `Beta(b + 1, a + 1)` on `(0, 1)`.
#[derive(Debug, Clone)]
pub struct BetaRule {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

/// Golub–Welsch for the Jacobi weight `(1 − t)^a (1 + t)^b` on `(−1, 1)`,
/// mapped to `z = (1 + t)/2`.
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> BetaRule {
    let ab = a + b;
    let mut j = DMatrix::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + ab;
        j[(k, k)] = if k == 0 {
            (b - a) / (ab + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        if k + 1 < n {
            let m = kf + 1.0;
            let s = 2.0 * m + ab;
            let beta = if k == 0 {
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))
            } else {
                4.0 * m * (m + a) * (m + b) * (m + ab) / (s * s * (s + 1.0) * (s - 1.0))
            };
            let off = beta.sqrt();
            j[(k, k + 1)] = off;
            j[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            ((1.0 + eig.eigenvalues[i]) / 2.0, (v0 * v0).ln())
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let norm = log_sum_exp(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    BetaRule {
        nodes: pairs.iter().map(|p| p.0.clamp(0.0, 1.0)).collect(),
        log_weights: pairs.iter().map(|p| p.1 - norm).collect(),
    }
}

thread_local! {
    static RULES: RefCell<HashMap<(u64, u64), Rc<BetaRule>>> = RefCell::new(HashMap::new());
}

/// Cached rule for `Z ~ Beta(alpha, shape)`.
pub fn beta_rule(alpha: f64, shape: f64) -> Rc<BetaRule> {
    RULES.with(|cache| {
        cache
            .borrow_mut()
            .entry((alpha.to_bits(), shape.to_bits()))
            .or_insert_with(|| Rc::new(gauss_jacobi(QUAD_NODES, shape - 1.0, alpha - 1.0)))
            .clone()
    })
}

/// `log E exp(−ξZ)` for `Z ~ Beta(alpha, shape)` by quadrature.
pub fn log_laplace_beta(xi: f64, alpha: f64, shape: f64) -> f64 {
    if xi == 0.0 {
        return 0.0;
    }
    let rule = beta_rule(alpha, shape);
    let terms: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.log_weights)
        .map(|(z, lw)| lw - xi * z)
        .collect();
    log_sum_exp(&terms)
}

/// Monte Carlo version of [`log_laplace_beta`]; the exponential of the
/// returned value is unbiased for `E exp(−ξZ)`.
pub fn log_laplace_beta_mc(xi: f64, alpha: f64, shape: f64, draws: usize, rng: &mut Rng64) -> f64 {
    if xi == 0.0 {
        return 0.0;
    }
    let beta = Beta::new(alpha, shape).expect("positive Beta parameters");
    let terms: Vec<f64> = (0..draws).map(|_| -xi * beta.sample(rng)).collect();
    log_sum_exp(&terms) - (draws as f64).ln()
}

/// `α log(β_x/β) + log E exp(−ξ(x) Z)`, the log of `(κh)(x)/(κ̃h)(x)`.
pub fn log_weight(
    x: f64,
    alpha: f64,
    rate_x: f64,
    h: &GammaH,
    est: &WeightEstimator,
) -> Result<f64> {
    if x >= h.target {
        return Err(Error::StateBeyondTarget {
            state: x,
            target: h.target,
        });
    }
    let xi = (rate_x - h.rate) * (h.target - x);
    let tilt = alpha * (rate_x / h.rate).ln();
    let expectation = match est {
        _ if xi == 0.0 => 0.0,
        WeightEstimator::Quadrature if alpha >= MIN_QUAD_SHAPE && h.shape >= MIN_QUAD_SHAPE => {
            log_laplace_beta(xi, alpha, h.shape)
        }
        WeightEstimator::Quadrature => {
            // deterministic seed so the fallback is still a function of x
            let key =
                x.to_bits() ^ alpha.to_bits().rotate_left(21) ^ h.shape.to_bits().rotate_left(42);
            log_laplace_beta_mc(
                xi,
                alpha,
                h.shape,
                FALLBACK_DRAWS,
                &mut Seed::new(key).rng(),
            )
        }
        WeightEstimator::MonteCarlo { draws, seed } => {
            log_laplace_beta_mc(xi, alpha, h.shape, *draws, &mut seed.rng())
        }
    };
    Ok(tilt + expectation)
}

/// Draw from the exponentially tilted Beta law
/// `∝ z^{γ₁−1}(1 − z)^{γ₂−1} e^{−λz}` by rejection from `Beta(γ₁, γ₂)`.
pub fn sample_expbeta<R: Rng + ?Sized>(g1: f64, g2: f64, lambda: f64, rng: &mut R) -> f64 {
    let beta = Beta::new(g1, g2).expect("positive Beta parameters");
    loop {
        let z: f64 = beta.sample(rng);
        let log_accept = if lambda >= 0.0 {
            -lambda * z
        } else {
            -lambda * (z - 1.0)
        };
        let u: f64 = rng.random();
        if u.ln() < log_accept {
            return z;
        }
    }
}

/// Guided step out of `x` towards `h.target`. Returns `log (κh)(x)` and the
/// new state.
pub fn forward_draw(
    kernel: &GammaKernel,
    h: &GammaH,
    x: f64,
    rng: &mut Rng64,
    est: &WeightEstimator,
) -> Result<(f64, f64)> {
    let rate_x = kernel.rate_at(x);
    let lw = log_weight(x, kernel.alpha, rate_x, h, est)?;
    let log_kh = pullback_tilde(h, kernel.alpha).log_eval(x) + lw;
    let xi = (rate_x - h.rate) * (h.target - x);
    let z = sample_expbeta(kernel.alpha, h.shape, xi, rng);
    let y = x + z * (h.target - x);
    // keep the draw strictly inside (x, target) despite rounding
    let y = y.clamp(next_up(x), next_down(h.target));
    Ok((log_kh, y))
}

/// Unconditional draw `x + Gamma(α, β(x))`.
pub fn sample_increment(kernel: &GammaKernel, x: f64, rng: &mut Rng64) -> f64 {
    let g = Gamma::new(kernel.alpha, 1.0 / kernel.rate_at(x)).expect("positive Gamma parameters");
    x + g.sample(rng)
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let b = x.to_bits();
    f64::from_bits(if x > 0.0 { b + 1 } else { b - 1 })
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Sample the adjoint process on a line graph `0 → s₁ → … → sₙ → v`.
/// `shapes[j]` is the increment shape on the edge into `s_{j+1}` (the last
/// entry belongs to the edge into the leaf). Returns `X†` at `s₀ = 0, s₁, …, sₙ`.
pub fn adjoint_sample_line(shapes: &[f64], rate: f64, target: f64, rng: &mut Rng64) -> Vec<f64> {
    let mut out = vec![0.0; shapes.len()];
    let mut cur = target;
    for j in (0..shapes.len()).rev() {
        let g = Gamma::new(shapes[j], 1.0 / rate).expect("positive Gamma parameters");
        cur -= g.sample(rng);
        out[j] = cur;
    }
    out
}

/// Law of `X†` at `s_j`: `target − Gamma(Σ_{k≥j} shapes[k], rate)`, with the
/// shapes summed from the leaf backwards in the same order as filtering.
pub fn adjoint_marginal(shapes: &[f64], rate: f64, target: f64, j: usize) -> GammaH {
    let n = shapes.len() - 1;
    let mut a = shapes[n];
    for k in (j..n).rev() {
        a += shapes[k];
    }
    GammaH::new(a, rate, target)
}
