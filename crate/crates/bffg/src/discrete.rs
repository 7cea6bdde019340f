//! Finite-state chains, interacting particle systems and backward
//! diagonalisation.
//!
//! An h-vector is stored as `exp(logc) · v` with `v` summing to one, so long
//! backward recursions never underflow.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::serde_dvec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteH {
    pub logc: f64,
    #[serde(with = "serde_dvec")]
    pub v: DVector<f64>,
}

impl DiscreteH {
    /// Normalise a nonnegative vector, folding its sum into `logc`.
    pub fn from_raw(u: DVector<f64>) -> Result<Self> {
        Self::from_scaled(0.0, u)
    }

    pub fn from_scaled(logc: f64, u: DVector<f64>) -> Result<Self> {
        if u.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::DimMismatch(
                "h vector has a negative or non-finite entry".into(),
            ));
        }
        let s = u.sum();
        if s <= 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(DiscreteH {
            logc: logc + s.ln(),
            v: u / s,
        })
    }

    /// The unit vector `e_k`.
    pub fn indicator(k: usize, r: usize) -> Result<Self> {
        if k >= r {
            return Err(Error::DimMismatch(format!(
                "label {k} outside alphabet of size {r}"
            )));
        }
        let mut v = DVector::zeros(r);
        v[k] = 1.0;
        Ok(DiscreteH { logc: 0.0, v })
    }

    pub fn ones(r: usize) -> Self {
        DiscreteH {
            logc: (r as f64).ln(),
            v: DVector::from_element(r, 1.0 / r as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn log_eval(&self, k: usize) -> f64 {
        match self.v.get(k) {
            Some(&p) => self.logc + p.ln(),
            None => f64::NEG_INFINITY,
        }
    }

    /// Unnormalised vector `exp(logc) · v`.
    pub fn raw(&self) -> DVector<f64> {
        &self.v * self.logc.exp()
    }

    pub fn shifted(&self, dc: f64) -> Self {
        DiscreteH {
            logc: self.logc + dc,
            v: self.v.clone(),
        }
    }

    /// Hadamard product.
    pub fn fuse(&self, other: &DiscreteH) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimMismatch(format!(
                "fusing h vectors of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Self::from_scaled(self.logc + other.logc, self.v.component_mul(&other.v))
    }
}

/// `K h`.
pub fn pullback(k: &DMatrix<f64>, h: &DiscreteH) -> Result<DiscreteH> {
    if k.ncols() != h.len() {
        return Err(Error::DimMismatch(format!(
            "matrix with {} columns applied to h of length {}",
            k.ncols(),
            h.len()
        )));
    }
    DiscreteH::from_scaled(h.logc, k * &h.v)
}

/// h at a leaf: `e_k` for an exact observation.
pub fn leaf_init(k: usize, r: usize) -> Result<DiscreteH> {
    DiscreteH::indicator(k, r)
}

/// h at a leaf observed through an emission matrix: column `k` of `e`.
pub fn leaf_init_emission(e: &DMatrix<f64>, k: usize) -> Result<DiscreteH> {
    if k >= e.ncols() {
        return Err(Error::DimMismatch(format!(
            "observation {k} outside emission alphabet"
        )));
    }
    DiscreteH::from_raw(e.column(k).into_owned())
}

/// `log ⟨row, h⟩` together with the unnormalised guided weights `row ⊙ v`.
pub fn guided_row(row: &[f64], h: &DiscreteH) -> (f64, Vec<f64>) {
    let w: Vec<f64> = row.iter().zip(h.v.iter()).map(|(a, b)| a * b).collect();
    let s: f64 = w.iter().sum();
    (h.logc + s.ln(), w)
}

/// Inverse-CDF draw from unnormalised weights, ties going to the lowest index.
pub fn draw_index(w: &[f64], u: f64) -> usize {
    let total: f64 = w.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &wi) in w.iter().enumerate() {
        if wi <= 0.0 {
            continue;
        }
        acc += wi;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// One guided step out of `x`: returns `log (Kh)(x)` and the draw. `den_at_x`
/// is `log (K̃h)(x)` and is checked first so a vanishing denominator is
/// reported as such.
pub fn guided_step(row: &[f64], h: &DiscreteH, den_at_x: f64, u: f64) -> Result<(f64, usize)> {
    if den_at_x == f64::NEG_INFINITY {
        return Err(Error::ZeroDenominator);
    }
    if row.len() != h.len() {
        return Err(Error::DimMismatch(
            "kernel row and h differ in length".into(),
        ));
    }
    let (log_kh, w) = guided_row(row, h);
    if log_kh == f64::NEG_INFINITY {
        return Err(Error::ImpossibleState);
    }
    Ok((log_kh, draw_index(&w, u)))
}

/// Convenience wrapper: guided draw through the matrix `k` with message
/// `num/den` from state `x`. Returns the log-weight increment and the draw.
pub fn forward_draw(
    k: &DMatrix<f64>,
    num: &DiscreteH,
    den: &DiscreteH,
    x: usize,
    u: f64,
) -> Result<(f64, usize)> {
    let row: Vec<f64> = k.row(x).iter().copied().collect();
    let d = den.log_eval(x);
    let (log_kh, y) = guided_step(&row, num, d, u)?;
    Ok((log_kh - d, y))
}

/// Guided transition law `K[x,·] ⊙ h / ⟨K h⟩_x`.
pub fn guided_law(k: &DMatrix<f64>, h: &DiscreteH, x: usize) -> Result<DVector<f64>> {
    let row = k.row(x).transpose().component_mul(&h.v);
    let s = row.sum();
    if s <= 0.0 {
        return Err(Error::ImpossibleState);
    }
    Ok(row / s)
}

/// Backward marginalisation of a table over `R₁ × R₂` with reference
/// measures `lam1`, `lam2`: weighted row and column sums, each divided by
/// `√c` with `c` the total weighted mass.
pub fn marginalise_pair_weighted(
    h: &DMatrix<f64>,
    lam1: &DVector<f64>,
    lam2: &DVector<f64>,
) -> Result<(DiscreteH, DiscreteH)> {
    if h.nrows() != lam1.len() || h.ncols() != lam2.len() {
        return Err(Error::DimMismatch(
            "reference measures do not match the table".into(),
        ));
    }
    let rows = h * lam2;
    let cols = h.transpose() * lam1;
    let c = lam1.dot(&rows);
    if !(c > 0.0) {
        return Err(Error::ZeroVector);
    }
    let half = -0.5 * c.ln();
    Ok((
        DiscreteH::from_scaled(half, rows)?,
        DiscreteH::from_scaled(half, cols)?,
    ))
}

/// [`marginalise_pair_weighted`] under counting measure.
pub fn marginalise_pair(h: &DMatrix<f64>) -> Result<(DiscreteH, DiscreteH)> {
    marginalise_pair_weighted(
        h,
        &DVector::from_element(h.nrows(), 1.0),
        &DVector::from_element(h.ncols(), 1.0),
    )
}

/// Backward marginalisation of an h-vector over the joint (row-major) index
/// of `sizes`, under counting measure. Each factor carries `c^{1/k}`.
pub fn marginalise(h: &DiscreteH, sizes: &[usize]) -> Result<Vec<DiscreteH>> {
    let total: usize = sizes.iter().product();
    if total != h.len() || sizes.is_empty() {
        return Err(Error::DimMismatch(format!(
            "sizes {sizes:?} do not match h of length {}",
            h.len()
        )));
    }
    let mut sums: Vec<DVector<f64>> = sizes.iter().map(|&r| DVector::zeros(r)).collect();
    for (idx, &p) in h.v.iter().enumerate() {
        let labels = crate::space::unravel(idx, sizes);
        for (s, &l) in sums.iter_mut().zip(&labels) {
            s[l] += p;
        }
    }
    // every marginal of v has (up to rounding) unit mass, so c = exp(logc)
    let share = h.logc / sizes.len() as f64;
    sums.into_iter()
        .map(|s| DiscreteH::from_scaled(share, s))
        .collect()
}

/// The marginalisation map on a finite measure over `R₁ × R₂`: row and
/// column marginals each scaled by `1/√c`.
pub fn marginalise_measure_pair(mu: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let c = mu.sum();
    let s = if c > 0.0 { c.sqrt() } else { 1.0 };
    let rows = mu.column_sum() / s;
    let cols = mu.row_sum().transpose() / s;
    (rows, cols)
}

/// Forward map on a measure over the input states: `ν = μ (M ⊙ K)` with
/// message `M[x,y] = h(y) / (K̃h)(x)`.
pub fn push_forward(
    k: &DMatrix<f64>,
    num: &DiscreteH,
    den: &DiscreteH,
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    if mu.len() != k.nrows() || num.len() != k.ncols() || den.len() != k.nrows() {
        return Err(Error::DimMismatch(
            "measure, kernel and message disagree".into(),
        ));
    }
    let hy = num.raw();
    let mut out = DVector::zeros(k.ncols());
    for x in 0..k.nrows() {
        if mu[x] == 0.0 {
            continue;
        }
        let d = den.log_eval(x);
        if d == f64::NEG_INFINITY {
            return Err(Error::ZeroDenominator);
        }
        let scale = mu[x] * (-d).exp();
        for y in 0..k.ncols() {
            out[y] += scale * k[(x, y)] * hy[y];
        }
    }
    Ok(out)
}

/// Backward filtering on `n` separate line graphs. `ktilde[t][i]` maps the
/// state of particle `i` at time `t` to time `t + 1`; `observations` maps a
/// time index in `0..=ktilde.len()` to the observed labels. Returns
/// `h[t][i]` for every time, with observations at `t` already fused.
pub fn particle_backward_pass(
    ktilde: &[Vec<DMatrix<f64>>],
    observations: &BTreeMap<usize, Vec<usize>>,
    n: usize,
    r: usize,
) -> Result<Vec<Vec<DiscreteH>>> {
    let horizon = ktilde.len();
    if ktilde.iter().any(|row| row.len() != n) {
        return Err(Error::DimMismatch(
            "one backward matrix per particle and step".into(),
        ));
    }
    let fuse_obs = |t: usize, hs: Vec<DiscreteH>| -> Result<Vec<DiscreteH>> {
        match observations.get(&t) {
            None => Ok(hs),
            Some(obs) if obs.len() == n => hs
                .iter()
                .zip(obs)
                .map(|(h, &k)| h.fuse(&DiscreteH::indicator(k, r)?))
                .collect(),
            Some(_) => Err(Error::DimMismatch(format!(
                "observation at time {t} has wrong length"
            ))),
        }
    };
    let mut out = vec![Vec::new(); horizon + 1];
    out[horizon] = fuse_obs(horizon, vec![DiscreteH::ones(r); n])?;
    for t in (0..horizon).rev() {
        let pulled = ktilde[t]
            .iter()
            .zip(&out[t + 1])
            .map(|(k, h)| pullback(k, h))
            .collect::<Result<Vec<_>>>()?;
        out[t] = fuse_obs(t, pulled)?;
    }
    Ok(out)
}
