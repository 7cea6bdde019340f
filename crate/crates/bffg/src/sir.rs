//! A discrete-time S/I/R/S epidemic on a line of individuals.
//!
//! Each individual becomes infected at a rate proportional to its number of
//! infected neighbours within a fixed radius, recovers at rate `μ` and loses
//! immunity at rate `ν`. Snapshots of the whole population are taken every
//! few steps; the latent configuration between snapshots and `θ = (λ, μ, ν)`
//! are sampled jointly by pCN moves on the innovations and a random walk on
//! `log θ`, with backward kernels adapted to the current reconstruction.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use log::info;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discrete::{self, DiscreteH};
use crate::error::{Error, Result};
use crate::gamma::WeightEstimator;
use crate::inference::{
    mh_parameter_step, pcn_step, ChainState, GuidedModel, Prior, RandomWalk, TraceWriter,
};
use crate::seed::{normal_cdf, Seed};

pub const S: usize = 0;
pub const I: usize = 1;
pub const R: usize = 2;
const LETTERS: [char; 3] = ['S', 'I', 'R'];

pub fn letter(state: usize) -> char {
    LETTERS[state]
}

pub fn parse_letter(c: &str) -> Result<usize> {
    match c.trim() {
        "S" | "s" => Ok(S),
        "I" | "i" => Ok(I),
        "R" | "r" => Ok(R),
        other => Err(Error::Parse(format!("unknown state {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
}

impl SirParams {
    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.lambda, self.mu, self.nu]
    }

    pub fn from_slice(t: &[f64]) -> Self {
        SirParams {
            lambda: t[0],
            mu: t[1],
            nu: t[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub pcn_alpha: f64,
    /// Random-walk scales on `log λ`, `log μ`, `log ν`.
    pub rw_scales: [f64; 3],
    pub adapt_fraction: f64,
    /// Weight `ρ` of the previous backward kernels in each adaptation.
    pub mix: f64,
    /// Rate of the independent exponential priors.
    pub prior_rate: f64,
    /// Starting parameters; drawn from the prior when absent.
    pub theta_init: Option<SirParams>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 5000,
            pcn_alpha: 0.95,
            rw_scales: [0.1; 3],
            adapt_fraction: 1.0 / 3.0,
            mix: 0.9,
            prior_rate: 0.1,
            theta_init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SirConfig {
    pub n: usize,
    pub tau: f64,
    pub steps_between_obs: usize,
    /// Number of snapshots, the one at time 0 included.
    pub num_obs: usize,
    pub theta: SirParams,
    pub delta: f64,
    pub radius: usize,
    /// Individuals `0..initial_infected` start infected in simulations.
    pub initial_infected: usize,
    pub mcmc: McmcConfig,
    pub seed: u64,
    pub output_dir: Option<String>,
}

impl Default for SirConfig {
    fn default() -> Self {
        SirConfig {
            n: 20,
            tau: 0.1,
            steps_between_obs: 9,
            num_obs: 5,
            theta: SirParams {
                lambda: 2.5,
                mu: 0.6,
                nu: 0.1,
            },
            delta: 0.001,
            radius: 2,
            initial_infected: 7,
            mcmc: McmcConfig::default(),
            seed: 1,
            output_dir: None,
        }
    }
}

impl SirConfig {
    /// Settings of the 100-individual experiment with 20 snapshots.
    pub fn full_scale() -> Self {
        SirConfig {
            n: 100,
            steps_between_obs: 48,
            num_obs: 20,
            mcmc: McmcConfig {
                iterations: 10_000,
                ..McmcConfig::default()
            },
            ..SirConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        let th = &self.theta;
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if ![th.lambda, th.mu, th.nu]
            .iter()
            .all(|r| *r > 0.0 && r.is_finite())
        {
            return bad(format!("rates must be positive, got {th:?}"));
        }
        if self.num_obs < 2 {
            return bad("need at least two snapshots".into());
        }
        if self.initial_infected > self.n {
            return bad("more initially infected than individuals".into());
        }
        let m = &self.mcmc;
        if !(0.0..1.0).contains(&m.pcn_alpha) {
            return bad(format!("pcn_alpha must lie in [0, 1), got {}", m.pcn_alpha));
        }
        if m.rw_scales.iter().any(|s| !(*s >= 0.0)) {
            return bad("random-walk scales must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&m.adapt_fraction) || !(0.0..=1.0).contains(&m.mix) {
            return bad("adapt_fraction and mix must lie in [0, 1]".into());
        }
        if !(m.prior_rate > 0.0) {
            return bad("prior_rate must be positive".into());
        }
        if let Some(t) = &m.theta_init {
            if ![t.lambda, t.mu, t.nu].iter().all(|r| *r > 0.0) {
                return bad("theta_init must be positive".into());
            }
        }
        Ok(())
    }

    /// Number of transitions from the first to the last snapshot.
    pub fn horizon(&self) -> usize {
        (self.num_obs - 1) * (self.steps_between_obs + 1)
    }

    pub fn observation_times(&self) -> Vec<usize> {
        (0..self.num_obs)
            .map(|j| j * (self.steps_between_obs + 1))
            .collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }
}

/// `ψ(u) = exp(−τu)`.
pub fn psi(u: f64, tau: f64) -> f64 {
    (-tau * u).exp()
}

/// Infected individuals within `radius` of `i`, the line being cut off at
/// both ends.
pub fn infected_neighbours(x: &[usize], i: usize, radius: usize) -> usize {
    let lo = i.saturating_sub(radius);
    let hi = (i + radius).min(x.len() - 1);
    (lo..=hi).filter(|&j| j != i && x[j] == I).count()
}

fn kernel_rows(stay_s: f64, theta: &SirParams, tau: f64) -> [[f64; 3]; 3] {
    let (pm, pn) = (psi(theta.mu, tau), psi(theta.nu, tau));
    [
        [stay_s, 1.0 - stay_s, 0.0],
        [0.0, pm, 1.0 - pm],
        [1.0 - pn, 0.0, pn],
    ]
}

/// Row `from` of `K_i(x)`.
pub fn sir_forward_row(
    x: &[usize],
    i: usize,
    from: usize,
    theta: &SirParams,
    tau: f64,
    delta: f64,
    radius: usize,
) -> [f64; 3] {
    let stay = (1.0 - delta) * psi(theta.lambda * infected_neighbours(x, i, radius) as f64, tau);
    kernel_rows(stay, theta, tau)[from]
}

/// The 3×3 transition matrix of individual `i` given the population `x`.
pub fn sir_forward_kernel(
    x: &[usize],
    i: usize,
    theta: &SirParams,
    tau: f64,
    delta: f64,
    radius: usize,
) -> DMatrix<f64> {
    let stay = (1.0 - delta) * psi(theta.lambda * infected_neighbours(x, i, radius) as f64, tau);
    let rows = kernel_rows(stay, theta, tau);
    DMatrix::from_fn(3, 3, |r, c| rows[r][c])
}

/// Backward kernel with the S row replaced by `[c, 1 − c, 0]`.
pub fn backward_kernel(c: f64, theta: &SirParams, tau: f64) -> DMatrix<f64> {
    let rows = kernel_rows(c, theta, tau);
    DMatrix::from_fn(3, 3, |r, c| rows[r][c])
}

/// Population states over time: `states[t][i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SirGrid {
    pub states: Vec<Vec<usize>>,
}

impl SirGrid {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.states {
            let line: String = row
                .iter()
                .map(|&s| letter(s).to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn write_ppm<W: Write>(&self, w: W, scale: usize) -> Result<()> {
        let cells: Vec<Vec<Option<usize>>> = self
            .states
            .iter()
            .map(|r| r.iter().map(|&s| Some(s)).collect())
            .collect();
        write_ppm(w, &cells, scale)
    }
}

const COLOURS: [[u8; 3]; 4] = [
    [235, 235, 225],
    [200, 30, 30],
    [40, 90, 200],
    [120, 120, 120],
];

/// Binary PPM, one `scale × scale` block per cell; unobserved cells grey.
pub fn write_ppm<W: Write>(mut w: W, cells: &[Vec<Option<usize>>], scale: usize) -> Result<()> {
    let rows = cells.len();
    let cols = cells.first().map_or(0, Vec::len);
    write!(w, "P6\n{} {}\n255\n", cols * scale, rows * scale)?;
    let mut line = Vec::with_capacity(cols * scale * 3);
    for row in cells {
        line.clear();
        for c in row {
            let rgb = COLOURS[c.unwrap_or(3)];
            for _ in 0..scale {
                line.extend_from_slice(&rgb);
            }
        }
        for _ in 0..scale {
            w.write_all(&line)?;
        }
    }
    Ok(())
}

/// Observed labels by time step; `None` marks an unobserved individual.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SirObservations {
    pub n: usize,
    pub by_time: BTreeMap<usize, Vec<Option<usize>>>,
}

impl SirObservations {
    /// Full snapshots of `truth` at `times`.
    pub fn snapshots(truth: &SirGrid, times: &[usize]) -> Self {
        let n = truth.states[0].len();
        let by_time = times
            .iter()
            .map(|&t| (t, truth.states[t].iter().map(|&s| Some(s)).collect()))
            .collect();
        SirObservations { n, by_time }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time", "individual", "state"])?;
        for (t, row) in &self.by_time {
            for (i, s) in row.iter().enumerate() {
                if let Some(s) = s {
                    out.write_record([t.to_string(), i.to_string(), letter(*s).to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Parse `time,individual,state` rows; `time` is the step index.
    pub fn read_csv<Rd: BufRead>(r: Rd, n: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["time", "individual", "state"] {
            return Err(Error::Parse(format!(
                "expected header time,individual,state, got {headers:?}"
            )));
        }
        let mut by_time: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<usize> {
                rec.get(k)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("{e} in {rec:?}")))
            };
            let (t, i) = (num(0)?, num(1)?);
            if i >= n {
                return Err(Error::ConfigInvalid(format!(
                    "individual {i} outside population of {n}"
                )));
            }
            let s = parse_letter(rec.get(2).unwrap_or(""))?;
            by_time.entry(t).or_insert_with(|| vec![None; n])[i] = Some(s);
        }
        Ok(SirObservations { n, by_time })
    }

    /// Grid of `horizon + 1` rows, unobserved cells `None`.
    pub fn cells(&self, horizon: usize) -> Vec<Vec<Option<usize>>> {
        (0..=horizon)
            .map(|t| {
                self.by_time
                    .get(&t)
                    .cloned()
                    .unwrap_or_else(|| vec![None; self.n])
            })
            .collect()
    }
}

/// Forward simulation from the configured initial state.
pub fn forward_simulate(cfg: &SirConfig, seed: Seed) -> SirGrid {
    let x0: Vec<usize> = (0..cfg.n)
        .map(|i| if i < cfg.initial_infected { I } else { S })
        .collect();
    simulate_from(cfg, x0, cfg.horizon(), seed)
}

pub fn simulate_from(cfg: &SirConfig, x0: Vec<usize>, steps: usize, seed: Seed) -> SirGrid {
    let mut rng = seed.rng();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0);
    for t in 0..steps {
        let x = &states[t];
        let next: Vec<usize> = (0..cfg.n)
            .map(|i| {
                let row = sir_forward_row(x, i, x[i], &cfg.theta, cfg.tau, cfg.delta, cfg.radius);
                discrete::draw_index(&row, rng.random::<f64>())
            })
            .collect();
        states.push(next);
    }
    SirGrid { states }
}

/// Guided sampler over the latent configuration. `c[t][i]` is the
/// stay-susceptible probability of the backward kernel from `t` to `t + 1`.
#[derive(Debug, Clone)]
pub struct SirModel {
    pub n: usize,
    pub horizon: usize,
    pub tau: f64,
    pub delta: f64,
    pub radius: usize,
    pub obs: SirObservations,
    pub x0: Vec<usize>,
    pub c: Vec<Vec<f64>>,
}

impl SirModel {
    /// Backward kernels start from the infected counts of the most recent
    /// snapshot.
    pub fn new(cfg: &SirConfig, obs: SirObservations, theta: &SirParams) -> Result<Self> {
        let horizon = cfg.horizon();
        if obs.n != cfg.n {
            return Err(Error::ConfigInvalid(format!(
                "observations cover {} individuals, config has {}",
                obs.n, cfg.n
            )));
        }
        if let Some((&t, _)) = obs.by_time.range(horizon + 1..).next() {
            return Err(Error::ConfigInvalid(format!(
                "observation at step {t} beyond horizon {horizon}"
            )));
        }
        let x0: Vec<usize> = match obs.by_time.get(&0) {
            Some(row) if row.iter().all(Option::is_some) => {
                row.iter().map(|s| s.unwrap()).collect()
            }
            _ => {
                return Err(Error::ConfigInvalid(
                    "the population must be fully observed at time 0".into(),
                ))
            }
        };
        let mut c = Vec::with_capacity(horizon);
        let mut last: Vec<usize> = x0.clone();
        for t in 0..horizon {
            if let Some(row) = obs.by_time.get(&t) {
                // unobserved individuals count as not infected
                last = row.iter().map(|s| s.unwrap_or(S)).collect();
            }
            c.push(
                (0..cfg.n)
                    .map(|i| {
                        (1.0 - cfg.delta)
                            * psi(
                                theta.lambda * infected_neighbours(&last, i, cfg.radius) as f64,
                                cfg.tau,
                            )
                    })
                    .collect(),
            );
        }
        Ok(SirModel {
            n: cfg.n,
            horizon,
            tau: cfg.tau,
            delta: cfg.delta,
            radius: cfg.radius,
            obs,
            x0,
            c,
        })
    }

    fn fuse_obs(&self, t: usize, i: usize, h: DiscreteH) -> Result<DiscreteH> {
        match self.obs.by_time.get(&t).and_then(|row| row[i]) {
            Some(k) => h.fuse(&DiscreteH::indicator(k, 3)?),
            None => Ok(h),
        }
    }

    /// `h[t][i]` with the snapshot at `t` fused in.
    pub fn backward(&self, theta: &SirParams) -> Result<Vec<Vec<DiscreteH>>> {
        let mut h = vec![Vec::new(); self.horizon + 1];
        h[self.horizon] = (0..self.n)
            .map(|i| self.fuse_obs(self.horizon, i, DiscreteH::ones(3)))
            .collect::<Result<_>>()?;
        for t in (0..self.horizon).rev() {
            h[t] = (0..self.n)
                .map(|i| {
                    let k = backward_kernel(self.c[t][i], theta, self.tau);
                    self.fuse_obs(t, i, discrete::pullback(&k, &h[t + 1][i])?)
                })
                .collect::<Result<_>>()?;
        }
        Ok(h)
    }

    /// Move every `c[t][i]` towards `(1 − δ)ψ(λ n_i)` of the current
    /// reconstruction, keeping a share `rho` of the old value.
    pub fn adapt(&mut self, grid: &SirGrid, theta: &SirParams, rho: f64) {
        for t in 0..self.horizon {
            for i in 0..self.n {
                let fresh = (1.0 - self.delta)
                    * psi(
                        theta.lambda * infected_neighbours(&grid.states[t], i, self.radius) as f64,
                        self.tau,
                    );
                self.c[t][i] = rho * self.c[t][i] + (1.0 - rho) * fresh;
            }
        }
    }

    pub fn backward_kernels(&self, theta: &SirParams) -> Vec<Vec<DMatrix<f64>>> {
        self.c
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| backward_kernel(c, theta, self.tau))
                    .collect()
            })
            .collect()
    }
}

impl GuidedModel for SirModel {
    type Sample = SirGrid;

    fn innovation_dim(&self) -> usize {
        self.n * self.horizon
    }

    fn evaluate(&self, theta: &[f64], z: &[f64], _est: &WeightEstimator) -> Result<(f64, SirGrid)> {
        let th = SirParams::from_slice(theta);
        let h = self.backward(&th)?;
        let mut log_psi: f64 = (0..self.n).map(|i| h[0][i].log_eval(self.x0[i])).sum();
        if log_psi == f64::NEG_INFINITY {
            return Err(Error::ImpossibleState);
        }
        let mut states = Vec::with_capacity(self.horizon + 1);
        states.push(self.x0.clone());
        for t in 0..self.horizon {
            let x = &states[t];
            let mut next = Vec::with_capacity(self.n);
            for i in 0..self.n {
                let row = sir_forward_row(x, i, x[i], &th, self.tau, self.delta, self.radius);
                let u = normal_cdf(z[t * self.n + i])
                    .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                let (log_kh, y) = discrete::guided_step(&row, &h[t + 1][i], 0.0, u)?;
                log_psi += log_kh - h[t][i].log_eval(x[i]);
                next.push(y);
            }
            states.push(next);
        }
        Ok((log_psi, SirGrid { states }))
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct SirRun {
    /// `θ` after each iteration.
    pub theta: Vec<SirParams>,
    pub log_psi: Vec<f64>,
    pub pcn_accepted: Vec<bool>,
    pub theta_accepted: Vec<bool>,
    /// Iterations with adaptation switched on.
    pub adapt_iters: usize,
    pub initial: SirGrid,
    pub midpoint: SirGrid,
    pub last: SirGrid,
    pub truth: Option<SirGrid>,
    pub observations: SirObservations,
}

impl SirRun {
    fn post(&self, xs: &[bool]) -> f64 {
        let tail = &xs[self.adapt_iters.min(xs.len())..];
        tail.iter().filter(|&&a| a).count() as f64 / tail.len().max(1) as f64
    }

    /// Acceptance rates `(pCN, θ)` after adaptation stopped.
    pub fn acceptance_rates(&self) -> (f64, f64) {
        (
            self.post(&self.pcn_accepted),
            self.post(&self.theta_accepted),
        )
    }

    /// Equal-tailed credible interval of parameter `k` (0 = λ, 1 = μ,
    /// 2 = ν) over the post-adaptation draws.
    pub fn credible_interval(&self, k: usize, level: f64) -> (f64, f64) {
        let mut xs: Vec<f64> = self.theta[self.adapt_iters.min(self.theta.len())..]
            .iter()
            .map(|t| t.as_vec()[k])
            .collect();
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| xs[((p * (xs.len() - 1) as f64).round() as usize).min(xs.len() - 1)];
        let a = (1.0 - level) / 2.0;
        (q(a), q(1.0 - a))
    }
}

/// Simulate or take the observations, run the sampler, and write the
/// artifacts to `out` when given.
pub fn run_experiment(
    cfg: &SirConfig,
    data: Option<SirObservations>,
    out: Option<&Path>,
) -> Result<SirRun> {
    cfg.validate()?;
    let root = Seed::new(cfg.seed);
    let (sim_seed, mcmc_seed) = root.split();
    let (truth, observations) = match data {
        Some(d) => (None, d),
        None => {
            let truth = forward_simulate(cfg, sim_seed);
            let obs = SirObservations::snapshots(&truth, &cfg.observation_times());
            (Some(truth), obs)
        }
    };

    let m = &cfg.mcmc;
    let prior = Prior::Exponential(vec![m.prior_rate; 3]);
    let (init_seed, chain_seed) = mcmc_seed.split();
    let (theta_seed, z_seed) = init_seed.split();
    let theta0 = match m.theta_init {
        Some(t) => t,
        None => SirParams::from_slice(&prior.sample(theta_seed).expect("exponential prior")),
    };
    let mut model = SirModel::new(cfg, observations.clone(), &theta0)?;
    let est = WeightEstimator::Quadrature;
    let mut state = ChainState::start(&model, theta0.as_vec(), &est, z_seed)?;
    let initial = state.sample.clone();
    let rw = RandomWalk::log(m.rw_scales.to_vec());
    let adapt_iters = (m.adapt_fraction * m.iterations as f64).floor() as usize;
    info!(
        "SIR: n = {}, {} steps, {} snapshots, {} iterations ({} adaptive)",
        cfg.n,
        cfg.horizon(),
        cfg.num_obs,
        m.iterations,
        adapt_iters
    );

    let mut run = SirRun {
        theta: Vec::with_capacity(m.iterations),
        log_psi: Vec::with_capacity(m.iterations),
        pcn_accepted: Vec::with_capacity(m.iterations),
        theta_accepted: Vec::with_capacity(m.iterations),
        adapt_iters,
        midpoint: initial.clone(),
        last: initial.clone(),
        initial,
        truth,
        observations,
    };
    for it in 0..m.iterations {
        let (a, b) = chain_seed.derive(it as u64).split();
        state = pcn_step(&model, &state, m.pcn_alpha, a)?;
        run.pcn_accepted.push(state.accepted);
        state = mh_parameter_step(&model, &state, &prior, &rw, &est, b)?;
        run.theta_accepted.push(state.accepted);
        if it < adapt_iters {
            model.adapt(&state.sample, &SirParams::from_slice(&state.theta), m.mix);
            let z = std::mem::take(&mut state.z);
            let (iter, accepted) = (state.iter, state.accepted);
            state = ChainState::at(&model, z, state.theta.clone(), &est)?;
            state.iter = iter;
            state.accepted = accepted;
        }
        run.theta.push(SirParams::from_slice(&state.theta));
        run.log_psi.push(state.log_psi);
        if it + 1 == m.iterations / 2 {
            run.midpoint = state.sample.clone();
        }
        if (it + 1) % 1000 == 0 {
            info!(
                "iteration {}: θ = {:?}, log Ψ = {:.3}",
                it + 1,
                state.theta,
                state.log_psi
            );
        }
    }
    run.last = state.sample.clone();
    if let Some(dir) = out {
        write_artifacts(&run, cfg, dir)?;
    }
    Ok(run)
}

fn write_artifacts(run: &SirRun, cfg: &SirConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = |name: &str| -> Result<std::io::BufWriter<fs::File>> {
        Ok(std::io::BufWriter::new(fs::File::create(dir.join(name))?))
    };

    let mut trace = TraceWriter::new(file("theta_trace.csv")?, &["lambda", "mu", "nu"])?;
    for (k, th) in run.theta.iter().enumerate() {
        trace.record(&ChainState {
            z: Vec::new(),
            theta: th.as_vec(),
            log_psi: run.log_psi[k],
            sample: (),
            iter: k as u64 + 1,
            accepted: run.theta_accepted[k],
        })?;
    }
    trace.finish()?.flush()?;

    let mut w = csv::Writer::from_writer(file("logpsi_trace.csv")?);
    w.write_record(["iter", "log_psi", "accepted"])?;
    for (k, (l, a)) in run.log_psi.iter().zip(&run.pcn_accepted).enumerate() {
        w.write_record([(k + 1).to_string(), l.to_string(), (*a as u8).to_string()])?;
    }
    w.flush()?;

    let scale = 4;
    run.observations.write_csv(file("observations.csv")?)?;
    write_ppm(
        file("observed.ppm")?,
        &run.observations.cells(cfg.horizon()),
        scale,
    )?;
    let grids = [
        ("initial", Some(&run.initial)),
        ("midpoint", Some(&run.midpoint)),
        ("final", Some(&run.last)),
        ("truth", run.truth.as_ref()),
    ];
    for (name, g) in grids {
        if let Some(g) = g {
            g.write_csv(file(&format!("{name}.csv"))?)?;
            g.write_ppm(file(&format!("{name}.ppm"))?, scale)?;
        }
    }
    let (pa, ta) = run.acceptance_rates();
    let summary = serde_json::json!({
        "config": cfg,
        "acceptance": { "pcn": pa, "theta": ta },
        "credible_90": {
            "lambda": run.credible_interval(0, 0.9),
            "mu": run.credible_interval(1, 0.9),
            "nu": run.credible_interval(2, 0.9),
        },
    });
    let mut f = file("summary.json")?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> SirParams {
        SirParams {
            lambda: 2.5,
            mu: 0.6,
            nu: 0.1,
        }
    }

    #[test]
    fn kernel_rows_match_plug_in_values() {
        let x = vec![S, S, S, S, S];
        let k = sir_forward_kernel(&x, 2, &theta(), 0.1, 0.0, 2);
        assert_eq!(
            k.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0]
        );
        let k = sir_forward_kernel(&x, 2, &theta(), 0.1, 0.001, 2);
        assert!((k[(0, 1)] - 0.001).abs() < 1e-15);
        assert!((k[(1, 2)] - (1.0 - f64::exp(-0.06))).abs() < 1e-15);
        for r in 0..3 {
            assert!((k.row(r).sum() - 1.0).abs() < 1e-15);
        }
        // two infected neighbours: S stays with (1 − δ)e^{−τ·2λ}
        let x = vec![I, S, S, I, R];
        let k = sir_forward_kernel(&x, 2, &theta(), 0.1, 0.001, 2);
        assert!((k[(0, 0)] - 0.999 * f64::exp(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn neighbourhoods_are_truncated_at_the_ends() {
        let x = vec![I, I, I, I, I];
        assert_eq!(infected_neighbours(&x, 0, 2), 2);
        assert_eq!(infected_neighbours(&x, 1, 2), 3);
        assert_eq!(infected_neighbours(&x, 2, 2), 4);
        assert_eq!(infected_neighbours(&x, 4, 2), 2);
    }

    #[test]
    fn healthy_population_stays_healthy_without_delta() {
        let cfg = SirConfig {
            initial_infected: 0,
            delta: 1e-300,
            ..SirConfig::default()
        };
        let g = forward_simulate(&cfg, Seed::new(5));
        assert!(g.states.iter().all(|r| r.iter().all(|&s| s == S)));
    }

    #[test]
    fn infection_front_moves_right_on_average() {
        let cfg = SirConfig::full_scale();
        let runs = 100;
        let checkpoints = [0usize, 5, 10, 15, 20];
        let mut mean = [0.0; 5];
        for r in 0..runs {
            let g = simulate_from(
                &cfg,
                forward_simulate(&cfg, Seed::new(0)).states[0].clone(),
                20,
                Seed::new(r),
            );
            for (k, &t) in checkpoints.iter().enumerate() {
                let front = g.states[t]
                    .iter()
                    .rposition(|&s| s == I)
                    .map_or(-1.0, |p| p as f64);
                mean[k] += front / runs as f64;
            }
        }
        assert!(mean.windows(2).all(|w| w[0] <= w[1]), "{mean:?}");
    }

    #[test]
    fn adaptation_limits() {
        let cfg = SirConfig::default();
        let truth = forward_simulate(&cfg, Seed::new(1));
        let obs = SirObservations::snapshots(&truth, &cfg.observation_times());
        let mut m = SirModel::new(&cfg, obs, &theta()).unwrap();
        let before = m.c.clone();
        m.adapt(&truth, &theta(), 1.0);
        assert_eq!(m.c, before);
        m.adapt(&truth, &theta(), 0.0);
        for t in 0..cfg.horizon() {
            for i in 0..cfg.n {
                let want = 0.999
                    * psi(
                        2.5 * infected_neighbours(&truth.states[t], i, 2) as f64,
                        0.1,
                    );
                assert_eq!(m.c[t][i], want);
            }
        }
        m.adapt(
            &truth,
            &SirParams {
                lambda: 7.0,
                ..theta()
            },
            0.9,
        );
        for row in m.backward_kernels(&theta()) {
            for k in row {
                for r in 0..3 {
                    assert!((k.row(r).sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn guided_draws_agree_with_snapshots() {
        let cfg = SirConfig::default();
        let truth = forward_simulate(&cfg, Seed::new(2));
        let obs = SirObservations::snapshots(&truth, &cfg.observation_times());
        let model = SirModel::new(&cfg, obs, &theta()).unwrap();
        for s in 0..20 {
            let z = Seed::new(s).normals(model.innovation_dim());
            let (lp, g) = model
                .evaluate(&theta().as_vec(), &z, &WeightEstimator::Quadrature)
                .unwrap();
            assert!(lp.is_finite());
            for &t in &cfg.observation_times() {
                assert_eq!(g.states[t], truth.states[t]);
            }
        }
    }

    #[test]
    fn fully_observed_psi_is_constant() {
        let cfg = SirConfig {
            steps_between_obs: 0,
            num_obs: 6,
            ..SirConfig::default()
        };
        let truth = forward_simulate(&cfg, Seed::new(3));
        let obs = SirObservations::snapshots(&truth, &cfg.observation_times());
        let model = SirModel::new(&cfg, obs, &theta()).unwrap();
        let mut st = ChainState::start(
            &model,
            theta().as_vec(),
            &WeightEstimator::Quadrature,
            Seed::new(0),
        )
        .unwrap();
        let first = st.log_psi;
        for i in 0..50 {
            st = pcn_step(&model, &st, 0.5, Seed::new(i)).unwrap();
            assert_eq!(st.log_psi.to_bits(), first.to_bits());
        }
        // and Ψ is then the complete-data likelihood
        let mut want = 0.0;
        for t in 0..cfg.horizon() {
            for i in 0..cfg.n {
                let row = sir_forward_row(
                    &truth.states[t],
                    i,
                    truth.states[t][i],
                    &theta(),
                    0.1,
                    0.001,
                    2,
                );
                want += row[truth.states[t + 1][i]].ln();
            }
        }
        assert!((first - want).abs() < 1e-9, "{first} vs {want}");
    }

    #[test]
    fn observations_round_trip_through_csv() {
        let cfg = SirConfig::default();
        let truth = forward_simulate(&cfg, Seed::new(4));
        let mut obs = SirObservations::snapshots(&truth, &cfg.observation_times());
        obs.by_time.get_mut(&10).unwrap()[3] = None;
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"time,individual,state\n0,0,I\n"));
        let back = SirObservations::read_csv(&buf[..], cfg.n).unwrap();
        assert_eq!(back, obs);
        assert!(SirObservations::read_csv(&b"t,i,s\n"[..], 3).is_err());
        assert!(SirObservations::read_csv(&b"time,individual,state\n0,1,X\n"[..], 3).is_err());
    }

    #[test]
    fn ppm_header_and_size() {
        let g = SirGrid {
            states: vec![vec![S, I, R], vec![R, I, S]],
        };
        let mut buf = Vec::new();
        g.write_ppm(&mut buf, 2).unwrap();
        let header = b"P6\n6 4\n255\n";
        assert!(buf.starts_with(header));
        assert_eq!(buf.len(), header.len() + 6 * 4 * 3);
        assert_eq!(&buf[header.len() + 6..header.len() + 9], &COLOURS[1]);
    }

    #[test]
    fn config_validation() {
        assert!(SirConfig::default().validate().is_ok());
        for bad in [
            SirConfig {
                delta: 0.0,
                ..SirConfig::default()
            },
            SirConfig {
                tau: -1.0,
                ..SirConfig::default()
            },
            SirConfig {
                theta: SirParams {
                    lambda: 0.0,
                    ..theta()
                },
                ..SirConfig::default()
            },
            SirConfig {
                num_obs: 1,
                ..SirConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::ConfigInvalid(_))));
        }
        assert!(SirConfig::from_json(r#"{"n": 10, "bogus": 1}"#).is_err());
        let c = SirConfig::from_json(r#"{"n": 10, "mcmc": {"iterations": 7}}"#).unwrap();
        assert_eq!((c.n, c.mcmc.iterations, c.mcmc.pcn_alpha), (10, 7, 0.95));
    }

    #[test]
    fn short_runs_are_reproducible() {
        let cfg = SirConfig {
            mcmc: McmcConfig {
                iterations: 60,
                ..McmcConfig::default()
            },
            ..SirConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, None, Some(a.path())).unwrap();
        run_experiment(&cfg, None, Some(b.path())).unwrap();
        for name in [
            "theta_trace.csv",
            "logpsi_trace.csv",
            "final.csv",
            "observations.csv",
            "truth.ppm",
            "summary.json",
        ] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
