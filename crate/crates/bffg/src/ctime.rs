//! Guided continuous-time processes: Poisson bridges and finite-state
//! Markov chains conditioned on their state at a horizon `T`.
//!
//! Both tilt the generator by a tractable `h̃(t, x)` and correct with the
//! likelihood-ratio integrand `(L − L̃)h̃ / h̃` along the path.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::discrete::DiscreteH;
use crate::error::{Error, Result};
use crate::kernel::RateFn;
use crate::seed::{Rng64, Seed};

/// Share of the horizon over which weights are not accumulated.
pub const DEFAULT_EPS_FRACTION: f64 = 1e-4;
/// Number of thinning cells on `[0, T − ε]`.
pub const DEFAULT_GRID: usize = 1000;
const BOUND_MARGIN: f64 = 1.25;
const SIMPSON_TOL: f64 = 1e-8;

fn ln_factorial(n: u64) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

/// Counting process with intensity `λ(x)`, conditioned on `X_T = target`
/// and guided through the constant-rate process with intensity `λ̃`.
#[derive(Debug, Clone)]
pub struct PoissonBridgeSpec {
    pub rate: RateFn,
    pub rate_tilde: f64,
    pub target: u64,
    pub horizon: f64,
    pub eps: f64,
}

impl PoissonBridgeSpec {
    pub fn new(rate: RateFn, rate_tilde: f64, target: u64, horizon: f64) -> Result<Self> {
        if !(rate_tilde > 0.0) || !(horizon > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "need λ̃ > 0 and T > 0, got λ̃ = {rate_tilde}, T = {horizon}"
            )));
        }
        let spec = PoissonBridgeSpec {
            rate,
            rate_tilde,
            target,
            horizon,
            eps: DEFAULT_EPS_FRACTION * horizon,
        };
        let inf = (0..=target)
            .map(|x| spec.rate.eval(x as f64))
            .fold(f64::INFINITY, f64::min);
        if rate_tilde > inf {
            warn!("λ̃ = {rate_tilde} exceeds inf λ = {inf} on the reachable counts");
        }
        Ok(spec)
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps.clamp(0.0, self.horizon);
        self
    }
}

/// `λ°(t, x) = (λ(x)/λ̃)·(x_T − x)/(T − t)`.
pub fn guided_poisson_rate(t: f64, x: u64, spec: &PoissonBridgeSpec) -> Result<f64> {
    if t >= spec.horizon {
        return Err(Error::PastHorizon {
            t,
            horizon: spec.horizon,
        });
    }
    if x > spec.target {
        return Err(Error::StateBeyondTarget {
            state: x as f64,
            target: spec.target as f64,
        });
    }
    let k = (spec.target - x) as f64;
    Ok(spec.rate.eval(x as f64) / spec.rate_tilde * k / (spec.horizon - t))
}

/// `log h̃(t, x)`: the Poisson probability of the `x_T − x` missing jumps.
pub fn poisson_log_htilde(t: f64, x: u64, spec: &PoissonBridgeSpec) -> f64 {
    if x > spec.target {
        return f64::NEG_INFINITY;
    }
    let m = spec.rate_tilde * (spec.horizon - t);
    let k = spec.target - x;
    if k == 0 {
        -m
    } else {
        k as f64 * m.ln() - m - ln_factorial(k)
    }
}

/// Integral of `(λ(x) − λ̃)(k/(λ̃(T − u)) − 1)` over `[s, u]` at fixed `x`.
fn poisson_segment(spec: &PoissonBridgeSpec, x: u64, s: f64, u: f64) -> f64 {
    if u <= s {
        return 0.0;
    }
    let d = spec.rate.eval(x as f64) - spec.rate_tilde;
    if d == 0.0 {
        return 0.0;
    }
    let k = (spec.target - x) as f64;
    let t = spec.horizon;
    let log_part = if k > 0.0 {
        k / spec.rate_tilde * ((t - s) / (t - u)).ln()
    } else {
        0.0
    };
    d * (log_part - (u - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonPath {
    pub x0: u64,
    pub times: Vec<f64>,
    pub logw: f64,
    /// `log h̃(0, x₀) + logw`.
    pub log_psi: f64,
}

impl PoissonPath {
    pub fn state_at(&self, t: f64) -> u64 {
        self.x0 + self.times.iter().take_while(|&&s| s <= t).count() as u64
    }

    pub fn end(&self) -> u64 {
        self.x0 + self.times.len() as u64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let states: Vec<u64> = (0..=self.times.len() as u64).map(|i| self.x0 + i).collect();
        let times: Vec<f64> = std::iter::once(0.0)
            .chain(self.times.iter().copied())
            .collect();
        write_event_csv(w, &times, &states)
    }
}

/// Simulate the guided bridge. Between jumps the guided intensity is
/// `a/(T − t)` with `a` fixed, so the next jump time is drawn exactly by
/// inverting its integrated hazard; the bridge therefore always lands on
/// the target. Weights are accumulated in closed form on `[0, T − ε]`.
pub fn simulate_guided_poisson(
    spec: &PoissonBridgeSpec,
    x0: u64,
    seed: Seed,
) -> Result<PoissonPath> {
    if x0 > spec.target {
        return Err(Error::StateBeyondTarget {
            state: x0 as f64,
            target: spec.target as f64,
        });
    }
    let mut rng = seed.rng();
    let big_t = spec.horizon;
    let stop = big_t - spec.eps;
    let (mut t, mut x) = (0.0f64, x0);
    let mut logw = 0.0;
    let mut times = Vec::with_capacity((spec.target - x0) as usize);
    while x < spec.target {
        let lam = spec.rate.eval(x as f64);
        if !(lam > 0.0) || !lam.is_finite() {
            return Err(Error::ImpossibleState);
        }
        let a = lam * (spec.target - x) as f64 / spec.rate_tilde;
        let e: f64 = Exp1.sample(&mut rng);
        let next = big_t - (big_t - t) * (-e / a).exp();
        // keep event times strictly increasing and below T
        let next = next.max(t.next_up()).min(big_t.next_down());
        logw += poisson_segment(spec, x, t.min(stop), next.min(stop));
        t = next;
        x += 1;
        times.push(t);
    }
    logw += poisson_segment(spec, x, t.min(stop), stop);
    Ok(PoissonPath {
        x0,
        times,
        logw,
        log_psi: poisson_log_htilde(0.0, x0, spec) + logw,
    })
}

/// `e^{sQ}h` for `s ∈ [0, horizon]` by uniformization: with `P = I + Q/Λ`,
/// `e^{sQ}h = Σₙ Poisson(n; Λs) Pⁿh`. All terms are nonnegative, so small
/// entries keep their relative accuracy.
#[derive(Debug, Clone)]
pub struct Uniformized {
    lambda: f64,
    powers: Vec<DVector<f64>>,
}

impl Uniformized {
    pub fn new(q: &DMatrix<f64>, h: &DVector<f64>, horizon: f64) -> Self {
        let lambda = (0..q.nrows()).map(|i| -q[(i, i)]).fold(0.0, f64::max);
        if lambda == 0.0 {
            return Uniformized {
                lambda,
                powers: vec![h.clone()],
            };
        }
        let m = lambda * horizon;
        let n = (m + 12.0 * m.sqrt() + 40.0).ceil() as usize;
        let p = DMatrix::identity(q.nrows(), q.ncols()) + q / lambda;
        let mut powers = Vec::with_capacity(n + 1);
        powers.push(h.clone());
        for i in 0..n {
            let next = &p * &powers[i];
            powers.push(next);
        }
        Uniformized { lambda, powers }
    }

    pub fn apply(&self, s: f64) -> DVector<f64> {
        let m = self.lambda * s.max(0.0);
        if m == 0.0 {
            return self.powers[0].clone();
        }
        let lm = m.ln();
        let mut out = DVector::zeros(self.powers[0].len());
        for (n, v) in self.powers.iter().enumerate() {
            let lw = n as f64 * lm - m - ln_factorial(n as u64);
            if lw > -745.0 {
                out.axpy(lw.exp(), v, 1.0);
            }
        }
        out
    }
}

/// Finite-state chain with generator `Q`, conditioned through the
/// terminal function `h_T` and guided by `h̃(t) = e^{(T−t)Q̃} h_T`.
#[derive(Debug, Clone)]
pub struct CtmcGuideSpec {
    pub q: DMatrix<f64>,
    pub q_tilde: DMatrix<f64>,
    pub horizon: f64,
    pub h_t: DVector<f64>,
    pub eps: f64,
    pub grid: usize,
}

fn check_generator(q: &DMatrix<f64>, name: &str) -> Result<()> {
    if !q.is_square() {
        return Err(Error::DimMismatch(format!("{name} is not square")));
    }
    for i in 0..q.nrows() {
        let row = q.row(i);
        if (0..q.ncols()).any(|j| j != i && !(row[j] >= 0.0)) {
            return Err(Error::ConfigInvalid(format!(
                "{name} has a negative off-diagonal rate in row {i}"
            )));
        }
        let s: f64 = row.iter().sum();
        let scale = row.iter().map(|v| v.abs()).fold(1.0, f64::max);
        if s.abs() > 1e-12 * scale {
            return Err(Error::ConfigInvalid(format!(
                "row {i} of {name} sums to {s}"
            )));
        }
    }
    Ok(())
}

impl CtmcGuideSpec {
    pub fn new(
        q: DMatrix<f64>,
        q_tilde: DMatrix<f64>,
        horizon: f64,
        h_t: DVector<f64>,
    ) -> Result<Self> {
        check_generator(&q, "Q")?;
        check_generator(&q_tilde, "Q̃")?;
        if q.shape() != q_tilde.shape() || h_t.len() != q.nrows() {
            return Err(Error::DimMismatch("Q, Q̃ and h_T disagree".into()));
        }
        if h_t.iter().any(|v| !(*v >= 0.0)) || h_t.sum() <= 0.0 {
            return Err(Error::ZeroVector);
        }
        if !(horizon > 0.0) {
            return Err(Error::ConfigInvalid(format!("horizon {horizon}")));
        }
        Ok(CtmcGuideSpec {
            q,
            q_tilde,
            horizon,
            h_t,
            eps: DEFAULT_EPS_FRACTION * horizon,
            grid: DEFAULT_GRID,
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps.clamp(0.0, self.horizon);
        self
    }
}

/// `h̃(t, ·) = e^{(T−t)Q̃} h_T` by scaling and squaring.
pub fn ctmc_htilde(spec: &CtmcGuideSpec, t: f64) -> Result<DiscreteH> {
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::PastHorizon {
            t,
            horizon: spec.horizon,
        });
    }
    let e = (&spec.q_tilde * (spec.horizon - t)).exp();
    DiscreteH::from_raw(e * &spec.h_t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmcPath {
    /// Jump times, starting with `0`.
    pub times: Vec<f64>,
    /// State entered at each time, starting with `x₀`.
    pub states: Vec<usize>,
    pub logw: f64,
    /// `log h̃(0, x₀) + logw`.
    pub log_psi: f64,
}

impl CtmcPath {
    pub fn end(&self) -> usize {
        *self.states.last().expect("path has a start")
    }

    pub fn state_at(&self, t: f64) -> usize {
        let i = self.times.iter().take_while(|&&s| s <= t).count();
        self.states[i.saturating_sub(1)]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_event_csv(w, &self.times, &self.states)
    }
}

/// Precomputed tables for repeated guided simulation under one spec.
#[derive(Debug, Clone)]
pub struct CtmcGuide {
    spec: CtmcGuideSpec,
    tilde: Uniformized,
    stop: f64,
    cell: f64,
    /// Guided exit rate of every state at every grid point.
    grid_rates: Vec<Vec<f64>>,
    final_step: DMatrix<f64>,
    h_stop: DVector<f64>,
}

impl CtmcGuide {
    pub fn new(spec: CtmcGuideSpec) -> Result<Self> {
        let tilde = Uniformized::new(&spec.q_tilde, &spec.h_t, spec.horizon);
        let stop = spec.horizon - spec.eps;
        let n = spec.grid.max(1);
        let cell = stop / n as f64;
        let mut guide = CtmcGuide {
            final_step: (&spec.q * spec.eps).exp(),
            h_stop: tilde.apply(spec.eps),
            spec,
            tilde,
            stop,
            cell,
            grid_rates: Vec::with_capacity(n + 1),
        };
        for i in 0..=n {
            let t = (i as f64 * cell).min(stop);
            let h = guide.htilde(t);
            let rates = (0..h.len()).map(|x| guide.exit_rate_with(&h, x)).collect();
            guide.grid_rates.push(rates);
        }
        Ok(guide)
    }

    pub fn spec(&self) -> &CtmcGuideSpec {
        &self.spec
    }

    /// Unnormalised `h̃(t, ·)`.
    pub fn htilde(&self, t: f64) -> DVector<f64> {
        self.tilde.apply(self.spec.horizon - t)
    }

    fn exit_rate_with(&self, h: &DVector<f64>, x: usize) -> f64 {
        if h[x] <= 0.0 {
            return 0.0;
        }
        (0..h.len())
            .filter(|&y| y != x)
            .map(|y| self.spec.q[(x, y)] * h[y])
            .sum::<f64>()
            / h[x]
    }

    /// Tilted generator `q°_t(x, y) = q(x, y) h̃(t, y)/h̃(t, x)` with the
    /// diagonal making rows sum to zero. Rows of states with `h̃ = 0` are
    /// left at zero.
    pub fn guided_generator(&self, t: f64) -> DMatrix<f64> {
        let h = self.htilde(t);
        let r = h.len();
        let mut g = DMatrix::zeros(r, r);
        for x in 0..r {
            if h[x] <= 0.0 {
                continue;
            }
            let mut out = 0.0;
            for y in (0..r).filter(|&y| y != x) {
                g[(x, y)] = self.spec.q[(x, y)] * h[y] / h[x];
                out += g[(x, y)];
            }
            g[(x, x)] = -out;
        }
        g
    }

    /// `Σ_y (q − q̃)(x, y) h̃(t, y) / h̃(t, x)`.
    fn integrand(&self, x: usize, t: f64) -> f64 {
        let h = self.htilde(t);
        let d = self.spec.q.row(x) - self.spec.q_tilde.row(x);
        d.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>() / h[x]
    }

    fn segment_weight(&self, x: usize, s: f64, u: f64) -> f64 {
        if u <= s
            || (0..self.spec.q.ncols()).all(|y| self.spec.q[(x, y)] == self.spec.q_tilde[(x, y)])
        {
            return 0.0;
        }
        let f = |t: f64| self.integrand(x, t);
        let (fa, fm, fb) = (f(s), f(0.5 * (s + u)), f(u));
        let whole = (u - s) / 6.0 * (fa + 4.0 * fm + fb);
        simpson(&f, s, u, fa, fm, fb, whole, SIMPSON_TOL, 40)
    }

    fn cell_bound(&self, i: usize, x: usize) -> f64 {
        let n = self.grid_rates.len() - 1;
        let a = self.grid_rates[i.min(n)][x];
        let b = self.grid_rates[(i + 1).min(n)][x];
        BOUND_MARGIN * a.max(b)
    }

    /// Thinning on `[0, T − ε]` with a bound refreshed per grid cell and
    /// per jump, then one exact guided step over `[T − ε, T]` drawn from
    /// `e^{εQ}(x, y) h_T(y)`.
    pub fn simulate(&self, x0: usize, seed: Seed) -> Result<CtmcPath> {
        let mut rng: Rng64 = seed.rng();
        let h0 = self.htilde(0.0);
        if x0 >= h0.len() {
            return Err(Error::DimMismatch(format!(
                "state {x0} outside the alphabet"
            )));
        }
        if h0[x0] <= 0.0 {
            return Err(Error::ZeroH);
        }
        let (mut t, mut x) = (0.0f64, x0);
        let mut seg_start = 0.0;
        let mut logw = 0.0;
        let mut times = vec![0.0];
        let mut states = vec![x0];
        let cells = self.grid_rates.len() - 1;
        for i in 0..cells {
            let cell_end = if i + 1 == cells {
                self.stop
            } else {
                (i + 1) as f64 * self.cell
            };
            let mut bound = self.cell_bound(i, x);
            while bound > 0.0 {
                let e: f64 = Exp1.sample(&mut rng);
                t += e / bound;
                if t >= cell_end {
                    break;
                }
                let h = self.htilde(t);
                if h[x] <= 0.0 {
                    return Err(Error::ZeroH);
                }
                let rate = self.exit_rate_with(&h, x);
                if rate > bound {
                    return Err(Error::BoundExceeded { rate, bound });
                }
                if rng.random::<f64>() * bound < rate {
                    logw += self.segment_weight(x, seg_start, t);
                    let u = rng.random::<f64>() * rate;
                    let mut acc = 0.0;
                    let mut next = x;
                    for y in (0..h.len()).filter(|&y| y != x) {
                        let r = self.spec.q[(x, y)] * h[y] / h[x];
                        if r > 0.0 {
                            next = y;
                            acc += r;
                            if u < acc {
                                break;
                            }
                        }
                    }
                    x = next;
                    seg_start = t;
                    times.push(t);
                    states.push(x);
                    bound = self.cell_bound(i, x);
                }
            }
            t = cell_end;
        }
        logw += self.segment_weight(x, seg_start, self.stop);

        // exact last step
        let probs: Vec<f64> = (0..self.spec.h_t.len())
            .map(|y| self.final_step[(x, y)] * self.spec.h_t[y])
            .collect();
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || self.h_stop[x] <= 0.0 {
            return Err(Error::ZeroH);
        }
        logw += total.ln() - self.h_stop[x].ln();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut end = x;
        for (y, p) in probs.iter().enumerate() {
            if *p > 0.0 {
                end = y;
                acc += p;
                if u < acc {
                    break;
                }
            }
        }
        if end != x {
            times.push(self.spec.horizon);
            states.push(end);
        }
        Ok(CtmcPath {
            times,
            states,
            logw,
            log_psi: h0[x0].ln() + logw,
        })
    }
}

/// One guided path; builds the tables on every call, so prefer
/// [`CtmcGuide`] for repeated draws.
pub fn simulate_guided_ctmc(spec: &CtmcGuideSpec, x0: usize, seed: Seed) -> Result<CtmcPath> {
    CtmcGuide::new(spec.clone())?.simulate(x0, seed)
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Event path as CSV with header `time,state`.
pub fn write_event_csv<W: Write, S: std::fmt::Display>(
    w: W,
    times: &[f64],
    states: &[S],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "state"])?;
    for (t, s) in times.iter().zip(states) {
        out.write_record([format!("{t}"), format!("{s}")])?;
    }
    out.flush()?;
    Ok(())
}
