//! Inference on top of guided sampling: self-normalised importance
//! sampling, evidence estimation, pCN moves on the innovations,
//! pseudo-marginal MH with an estimated weight, and random-walk updates of
//! parameters on the augmented space.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gamma::WeightEstimator;
use crate::graph::TransitionGraph;
use crate::kernel::passes::{
    run_backward_pass, run_forward_pass, run_forward_with, BackwardPlan, BackwardResult,
    ForwardOutcome,
};
use crate::seed::Seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ess: f64,
}

/// Failures that make a proposal impossible rather than the run broken.
/// A proposal hitting one of these has Ψ = 0 and is rejected.
fn is_zero_weight(e: &Error) -> bool {
    matches!(
        e,
        Error::ZeroDenominator | Error::ImpossibleState | Error::ZeroH
    )
}

fn psi_or_zero(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) if v.is_nan() => Ok(f64::NEG_INFINITY),
        Ok(v) => Ok(v),
        Err(e) if is_zero_weight(&e) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// `B` guided draws, the `i`-th from `seed.derive(i)`, run in parallel.
/// Returns `(log Ψ_i, φ(X°ⁱ))` in draw order.
fn weighted_draws<F>(
    g: &TransitionGraph,
    bw: &BackwardResult,
    phi: &F,
    b: usize,
    seed: Seed,
) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&ForwardOutcome) -> f64 + Sync,
{
    (0..b as u64)
        .into_par_iter()
        .map(|i| match run_forward_pass(g, bw, seed.derive(i)) {
            Ok(out) => Ok((out.log_psi, phi(&out))),
            Err(e) if is_zero_weight(&e) => Ok((f64::NEG_INFINITY, 0.0)),
            Err(e) => Err(e),
        })
        .collect()
}

/// Self-normalised estimate of `E[φ(X) | observations]`, with a
/// delta-method standard error and the effective sample size.
pub fn importance_estimate<F>(
    g: &TransitionGraph,
    bw: &BackwardResult,
    phi: F,
    b: usize,
    seed: Seed,
) -> Result<ImportanceEstimate>
where
    F: Fn(&ForwardOutcome) -> f64 + Sync,
{
    if b < 2 {
        return Err(Error::ConfigInvalid(format!(
            "importance sampling needs B ≥ 2, got {b}"
        )));
    }
    let draws = weighted_draws(g, bw, &phi, b, seed)?;
    let m = draws.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::AllWeightsZero);
    }
    let w: Vec<f64> = draws.iter().map(|d| (d.0 - m).exp()).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let num: f64 = w.iter().zip(&draws).map(|(w, d)| w * d.1).sum();
    let estimate = num / sw;
    let var: f64 = w
        .iter()
        .zip(&draws)
        .map(|(w, d)| w * w * (d.1 - estimate).powi(2))
        .sum();
    Ok(ImportanceEstimate {
        estimate,
        se: var.sqrt() / sw,
        ess: sw * sw / sw2,
    })
}

/// `log ĥ₀(x₀) = log h̃₀(x₀) + log mean(Π w)` and the standard error of
/// that log estimate.
pub fn evidence_estimate(
    g: &TransitionGraph,
    bw: &BackwardResult,
    b: usize,
    seed: Seed,
) -> Result<(f64, f64)> {
    if b == 0 {
        return Err(Error::ConfigInvalid(
            "evidence needs at least one draw".into(),
        ));
    }
    let draws = weighted_draws(g, bw, &|_: &ForwardOutcome| 0.0, b, seed)?;
    let m = draws.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    let w: Vec<f64> = draws.iter().map(|d| (d.0 - m).exp()).collect();
    let n = b as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = if b > 1 {
        w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((m + mean.ln(), (var / n).sqrt() / mean))
}

/// A guided sampler seen as a deterministic map from standard normal
/// innovations `Z` and parameters `θ` to a sample and its `log Ψ`.
pub trait GuidedModel {
    type Sample: Clone;

    fn innovation_dim(&self) -> usize;

    fn evaluate(
        &self,
        theta: &[f64],
        z: &[f64],
        est: &WeightEstimator,
    ) -> Result<(f64, Self::Sample)>;
}

/// A graph with messages computed once; `θ` is ignored.
#[derive(Debug, Clone)]
pub struct GraphModel {
    pub graph: TransitionGraph,
    pub backward: BackwardResult,
}

impl GraphModel {
    pub fn new(graph: TransitionGraph, plan: &BackwardPlan) -> Result<Self> {
        let backward = run_backward_pass(&graph, plan)?;
        Ok(GraphModel { graph, backward })
    }
}

impl GuidedModel for GraphModel {
    type Sample = ForwardOutcome;

    fn innovation_dim(&self) -> usize {
        self.backward.layout.total()
    }

    fn evaluate(
        &self,
        _theta: &[f64],
        z: &[f64],
        est: &WeightEstimator,
    ) -> Result<(f64, ForwardOutcome)> {
        let out = run_forward_with(&self.graph, &self.backward, z, est)?;
        Ok((out.log_psi, out))
    }
}

/// A graph and backward plan rebuilt from `θ` on every evaluation. The
/// innovation layout must not depend on `θ`.
pub struct ParametricGraphModel<F> {
    build: F,
    dim: usize,
}

impl<F> ParametricGraphModel<F>
where
    F: Fn(&[f64]) -> Result<(TransitionGraph, BackwardPlan)>,
{
    pub fn new(build: F, theta0: &[f64]) -> Result<Self> {
        let (g, _) = build(theta0)?;
        let dim = crate::kernel::passes::InnovationLayout::new(&g).total();
        Ok(ParametricGraphModel { build, dim })
    }
}

impl<F> GuidedModel for ParametricGraphModel<F>
where
    F: Fn(&[f64]) -> Result<(TransitionGraph, BackwardPlan)>,
{
    type Sample = ForwardOutcome;

    fn innovation_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(
        &self,
        theta: &[f64],
        z: &[f64],
        est: &WeightEstimator,
    ) -> Result<(f64, ForwardOutcome)> {
        let (g, plan) = (self.build)(theta)?;
        let bw = run_backward_pass(&g, &plan)?;
        let out = run_forward_with(&g, &bw, z, est)?;
        Ok((out.log_psi, out))
    }
}

#[derive(Debug, Clone)]
pub struct ChainState<S> {
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    /// `log Ψ` of the current state; under pseudo-marginal moves this is
    /// the recycled estimate.
    pub log_psi: f64,
    pub sample: S,
    pub iter: u64,
    /// Whether the most recent move was accepted.
    pub accepted: bool,
}

impl<S: Clone> ChainState<S> {
    /// Innovations drawn from `seed`, evaluated at `theta`.
    pub fn start<M: GuidedModel<Sample = S>>(
        model: &M,
        theta: Vec<f64>,
        est: &WeightEstimator,
        seed: Seed,
    ) -> Result<Self> {
        let z = seed.normals(model.innovation_dim());
        Self::at(model, z, theta, est)
    }

    pub fn at<M: GuidedModel<Sample = S>>(
        model: &M,
        z: Vec<f64>,
        theta: Vec<f64>,
        est: &WeightEstimator,
    ) -> Result<Self> {
        let (log_psi, sample) = model.evaluate(&theta, &z, est)?;
        Ok(ChainState {
            z,
            theta,
            log_psi,
            sample,
            iter: 0,
            accepted: true,
        })
    }
}

/// `est` with a fresh auxiliary stream when it is a Monte Carlo estimator.
fn refreshed(est: &WeightEstimator, seed: Seed) -> WeightEstimator {
    match *est {
        WeightEstimator::Quadrature => WeightEstimator::Quadrature,
        WeightEstimator::MonteCarlo { draws, .. } => WeightEstimator::MonteCarlo { draws, seed },
    }
}

fn metropolis<S: Clone>(
    state: &ChainState<S>,
    proposal: Option<(Vec<f64>, Vec<f64>, f64, S)>,
    log_extra: f64,
    u: f64,
) -> ChainState<S> {
    let mut next = state.clone();
    next.iter += 1;
    next.accepted = false;
    if let Some((z, theta, log_psi, sample)) = proposal {
        let log_ratio = log_psi - state.log_psi + log_extra;
        if log_psi > f64::NEG_INFINITY && u.ln() < log_ratio {
            next.z = z;
            next.theta = theta;
            next.log_psi = log_psi;
            next.sample = sample;
            next.accepted = true;
        }
    }
    next
}

fn evaluate_soft<M: GuidedModel>(
    model: &M,
    theta: &[f64],
    z: &[f64],
    est: &WeightEstimator,
) -> Result<Option<(f64, M::Sample)>> {
    match model.evaluate(theta, z, est) {
        Ok((l, s)) => Ok(Some((psi_or_zero(Ok(l))?, s))),
        Err(e) if is_zero_weight(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Pseudo-marginal pCN move. The proposal `Z′ = αZ + √(1−α²)W` is scored
/// with a fresh draw of the weight estimator's auxiliary variables, all
/// vertices at once; the current estimate is kept until a proposal is
/// accepted. With the quadrature estimator this is exactly [`pcn_step`].
pub fn pmmh_step<M: GuidedModel>(
    model: &M,
    state: &ChainState<M::Sample>,
    alpha: f64,
    est: &WeightEstimator,
    seed: Seed,
) -> Result<ChainState<M::Sample>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::ConfigInvalid(format!(
            "pCN α must lie in [0, 1), got {alpha}"
        )));
    }
    let (prop_seed, rest) = seed.split();
    let (accept_seed, est_seed) = rest.split();
    let w = prop_seed.normals(state.z.len());
    let s = (1.0 - alpha * alpha).sqrt();
    let z: Vec<f64> = state
        .z
        .iter()
        .zip(&w)
        .map(|(z, w)| alpha * z + s * w)
        .collect();
    let proposal = evaluate_soft(model, &state.theta, &z, &refreshed(est, est_seed))?
        .map(|(l, smp)| (z, state.theta.clone(), l, smp));
    let u: f64 = accept_seed.rng().random();
    Ok(metropolis(state, proposal, 0.0, u))
}

/// pCN move on the innovations with exact (quadrature) weights. The
/// proposal leaves `N(0, I)` invariant, so only the Ψ ratio enters.
pub fn pcn_step<M: GuidedModel>(
    model: &M,
    state: &ChainState<M::Sample>,
    alpha: f64,
    seed: Seed,
) -> Result<ChainState<M::Sample>> {
    pmmh_step(model, state, alpha, &WeightEstimator::Quadrature, seed)
}

/// Prior on the parameter vector.
/// Log prior density supplied by the caller.
pub type LogDensity = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Prior {
    Flat,
    /// Independent exponentials with the given rates.
    Exponential(Vec<f64>),
    /// Independent normals.
    Gaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
    },
    Custom(LogDensity),
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Flat => write!(f, "Flat"),
            Prior::Exponential(r) => f.debug_tuple("Exponential").field(r).finish(),
            Prior::Gaussian { mean, sd } => f
                .debug_struct("Gaussian")
                .field("mean", mean)
                .field("sd", sd)
                .finish(),
            Prior::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Prior {
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match self {
            Prior::Flat => 0.0,
            Prior::Exponential(rates) => theta
                .iter()
                .zip(rates)
                .map(|(&t, &r)| {
                    if t < 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        r.ln() - r * t
                    }
                })
                .sum(),
            Prior::Gaussian { mean, sd } => theta
                .iter()
                .zip(mean.iter().zip(sd))
                .map(|(&t, (&m, &s))| {
                    let z = (t - m) / s;
                    -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                })
                .sum(),
            Prior::Custom(f) => f(theta),
        }
    }

    /// One independent draw, for the priors that support it.
    pub fn sample(&self, seed: Seed) -> Option<Vec<f64>> {
        use rand_distr::{Distribution, Exp, Normal};
        let mut rng = seed.rng();
        match self {
            Prior::Exponential(rates) => Some(
                rates
                    .iter()
                    .map(|&r| Exp::new(r).ok().map(|d| d.sample(&mut rng)))
                    .collect::<Option<_>>()?,
            ),
            Prior::Gaussian { mean, sd } => Some(
                mean.iter()
                    .zip(sd)
                    .map(|(&m, &s)| Normal::new(m, s).ok().map(|d| d.sample(&mut rng)))
                    .collect::<Option<_>>()?,
            ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Random walk on `log θ`; `θ` stays positive.
    #[default]
    Log,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalk {
    pub scales: Vec<f64>,
    pub transform: Transform,
}

impl RandomWalk {
    pub fn log(scales: Vec<f64>) -> Self {
        RandomWalk {
            scales,
            transform: Transform::Log,
        }
    }

    pub fn identity(scales: Vec<f64>) -> Self {
        RandomWalk {
            scales,
            transform: Transform::Identity,
        }
    }
}

/// Metropolis–Hastings on `θ` with the innovations held fixed. The target
/// on `(θ, Z)` is `π(θ) φ(Z) Ψ_θ(g_θ(Z))`, so the ratio is the Ψ ratio
/// times the prior ratio, plus `Σ log(θ′/θ)` for the log walk.
pub fn mh_parameter_step<M: GuidedModel>(
    model: &M,
    state: &ChainState<M::Sample>,
    prior: &Prior,
    rw: &RandomWalk,
    est: &WeightEstimator,
    seed: Seed,
) -> Result<ChainState<M::Sample>> {
    if rw.scales.len() != state.theta.len() {
        return Err(Error::DimMismatch(format!(
            "{} scales for {} parameters",
            rw.scales.len(),
            state.theta.len()
        )));
    }
    let (prop_seed, rest) = seed.split();
    let (accept_seed, est_seed) = rest.split();
    let eps = prop_seed.normals(state.theta.len());
    let (theta, jac): (Vec<f64>, f64) = match rw.transform {
        Transform::Log => {
            let t: Vec<f64> = state
                .theta
                .iter()
                .zip(&rw.scales)
                .zip(&eps)
                .map(|((t, s), e)| t * (s * e).exp())
                .collect();
            let j = rw.scales.iter().zip(&eps).map(|(s, e)| s * e).sum();
            (t, j)
        }
        Transform::Identity => (
            state
                .theta
                .iter()
                .zip(&rw.scales)
                .zip(&eps)
                .map(|((t, s), e)| t + s * e)
                .collect(),
            0.0,
        ),
    };
    let prior_new = prior.log_density(&theta);
    let u: f64 = accept_seed.rng().random();
    if prior_new == f64::NEG_INFINITY {
        return Ok(metropolis(state, None, 0.0, u));
    }
    let extra = prior_new - prior.log_density(&state.theta) + jac;
    let proposal = evaluate_soft(model, &theta, &state.z, &refreshed(est, est_seed))?
        .map(|(l, smp)| (state.z.clone(), theta, l, smp));
    Ok(metropolis(state, proposal, extra, u))
}

/// CSV trace with columns `iter,log_psi,accepted` and one per parameter.
pub struct TraceWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W, theta_names: &[&str]) -> Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["iter", "log_psi", "accepted"];
        header.extend_from_slice(theta_names);
        out.write_record(&header)?;
        Ok(TraceWriter { out })
    }

    pub fn record<S>(&mut self, state: &ChainState<S>) -> Result<()> {
        let mut row = vec![
            state.iter.to_string(),
            state.log_psi.to_string(),
            (state.accepted as u8).to_string(),
        ];
        row.extend(state.theta.iter().map(|t| t.to_string()));
        self.out.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Mean and batch-means standard error of a correlated series, using
/// `⌊√n⌋` batches.
pub fn batch_means(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let nb = (n as f64).sqrt().floor().max(2.0) as usize;
    let len = n / nb;
    if len == 0 {
        return (mean, f64::INFINITY);
    }
    let bm: Vec<f64> = (0..nb)
        .map(|b| xs[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let m = bm.iter().sum::<f64>() / nb as f64;
    let var = bm.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
    (mean, (var / nb as f64).sqrt())
}
