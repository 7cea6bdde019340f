//! Closed-form backward and forward rules for Gaussian transitions.
//!
//! h-functions are kept in canonical form `h(y) = exp(c − ½ y'Hy + y'F)`.
//! Pullbacks are computed without inverting `H`: with `P = H + Q⁻¹`,
//!
//! ```text
//! log (κh)(x) = c − ½log|Q| − ½log|P| + ½ b'P⁻¹b − ½ m'Q⁻¹m,   b = F + Q⁻¹m,  m = μ(x)
//! ```
//!
//! which only needs `Q` and `P` to be positive definite, so rank-deficient
//! `H` coming from partial observations flows through unchanged.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::AffineGaussian;
use crate::linalg::{inverse, logdet, serde_dmat, serde_dvec, spd, spd_jittered, symmetrize, Chol};
use crate::seed::Innovations;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCanonical {
    pub c: f64,
    #[serde(with = "serde_dvec")]
    pub f: DVector<f64>,
    #[serde(with = "serde_dmat")]
    pub h: DMatrix<f64>,
}

impl GaussianCanonical {
    pub fn new(c: f64, f: DVector<f64>, h: DMatrix<f64>) -> Self {
        GaussianCanonical {
            c,
            f,
            h: symmetrize(&h),
        }
    }

    /// The constant function `exp(c)` in canonical form.
    pub fn flat(dim: usize, c: f64) -> Self {
        GaussianCanonical {
            c,
            f: DVector::zeros(dim),
            h: DMatrix::zeros(dim, dim),
        }
    }

    /// Canonical form of the density of `N(mean, cov)`.
    pub fn from_density(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let cc = spd(cov, Error::SingularCovariance)?;
        let prec = inverse(&cc);
        let f = &prec * mean;
        let d = mean.len() as f64;
        let c = -0.5 * d * LN_2PI - 0.5 * logdet(&cc) - 0.5 * mean.dot(&f);
        Ok(GaussianCanonical { c, f, h: prec })
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn log_eval(&self, x: &DVector<f64>) -> f64 {
        self.c - 0.5 * (x.transpose() * &self.h * x)[(0, 0)] + x.dot(&self.f)
    }

    /// `log ϖ = c − log φ^can(0; F, H)`, the log of the total mass.
    pub fn log_mass(&self) -> Result<f64> {
        let hc = spd(&self.h, Error::SingularH)?;
        let d = self.dim() as f64;
        let mean = hc.solve(&self.f);
        Ok(self.c + 0.5 * d * LN_2PI - 0.5 * logdet(&hc) + 0.5 * self.f.dot(&mean))
    }

    /// Mean `H⁻¹F` and covariance `H⁻¹` of the normalised density.
    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let hc = spd(&self.h, Error::SingularH)?;
        Ok((hc.solve(&self.f), inverse(&hc)))
    }

    pub fn shifted(&self, dc: f64) -> Self {
        GaussianCanonical {
            c: self.c + dc,
            ..self.clone()
        }
    }

    pub fn fuse(&self, other: &GaussianCanonical) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch(format!(
                "fusing Gaussian h of dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(GaussianCanonical::new(
            self.c + other.c,
            &self.f + &other.f,
            &self.h + &other.h,
        ))
    }

    /// Block-diagonal joint function of independent factors.
    pub fn block_diagonal(parts: &[GaussianCanonical]) -> Self {
        let n: usize = parts.iter().map(|p| p.dim()).sum();
        let mut f = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        let mut c = 0.0;
        let mut at = 0;
        for p in parts {
            let d = p.dim();
            f.rows_mut(at, d).copy_from(&p.f);
            h.view_mut((at, at), (d, d)).copy_from(&p.h);
            c += p.c;
            at += d;
        }
        GaussianCanonical { c, f, h }
    }
}

/// `log φ(y; mean, cov)` given a Cholesky factor of `cov`.
pub fn log_normal_pdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &Chol) -> f64 {
    let r = y - mean;
    let s = cov.solve(&r);
    -0.5 * (r.len() as f64 * LN_2PI + logdet(cov) + r.dot(&s))
}

/// Leaf initialisation: `h(x) = φ(y; Φx + β, Q)` in canonical form.
pub fn leaf_init(
    y: &DVector<f64>,
    phi: &DMatrix<f64>,
    beta: &DVector<f64>,
    q: &DMatrix<f64>,
) -> Result<GaussianCanonical> {
    if y.len() != phi.nrows() || beta.len() != phi.nrows() {
        return Err(Error::DimMismatch("observation does not match Φ".into()));
    }
    let qc = spd(q, Error::SingularQ)?;
    let qi_phi = qc.solve(phi);
    let h = phi.transpose() * &qi_phi;
    let f = qi_phi.transpose() * (y - beta);
    let c = log_normal_pdf(beta, y, &qc);
    Ok(GaussianCanonical::new(c, f, h))
}

struct Tilt {
    q: Chol,
    p: Chol,
    log_norm: f64,
}

/// Factorisations shared by the pullback and the guided draw.
fn tilt(h: &GaussianCanonical, q: &DMatrix<f64>) -> Result<Tilt> {
    if q.nrows() != h.dim() {
        return Err(Error::DimMismatch(format!(
            "kernel output dim {} vs h dim {}",
            q.nrows(),
            h.dim()
        )));
    }
    let qc = spd(q, Error::SingularQ)?;
    let p = &h.h + inverse(&qc);
    let pc = spd(&p, Error::SingularC)?;
    let log_norm = h.c - 0.5 * logdet(&qc) - 0.5 * logdet(&pc);
    Ok(Tilt {
        q: qc,
        p: pc,
        log_norm,
    })
}

/// `log (κh)(x)` for `κ(x, ·) = N(mean, cov)`.
pub fn log_pullback_at(
    h: &GaussianCanonical,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let t = tilt(h, cov)?;
    Ok(log_pullback_with(h, &t, mean))
}

fn log_pullback_with(h: &GaussianCanonical, t: &Tilt, mean: &DVector<f64>) -> f64 {
    let qi_m = t.q.solve(mean);
    let b = &h.f + &qi_m;
    let pb = t.p.solve(&b);
    t.log_norm + 0.5 * b.dot(&pb) - 0.5 * mean.dot(&qi_m)
}

/// Pullback of `h` through `x ↦ N(Φx + β, Q)`, as a canonical function of `x`.
pub fn pullback_affine(h: &GaussianCanonical, k: &AffineGaussian) -> Result<GaussianCanonical> {
    let t = tilt(h, &k.q)?;
    let qi = inverse(&t.q);
    // W = (Q + H⁻¹)⁻¹ written without H⁻¹, g = (HQ + I)⁻¹F
    let w = symmetrize(&(&qi - &qi * t.p.solve(&qi)));
    let g = &qi * t.p.solve(&h.f);
    let w_beta = &w * &k.beta;
    let hbar = k.phi.transpose() * &w * &k.phi;
    let fbar = k.phi.transpose() * (&g - &w_beta);
    let cbar =
        t.log_norm + 0.5 * h.f.dot(&t.p.solve(&h.f)) + k.beta.dot(&g) - 0.5 * k.beta.dot(&w_beta);
    Ok(GaussianCanonical::new(cbar, fbar, hbar))
}

/// Guided transition `N^can(F + Q⁻¹μ, H + Q⁻¹)`: returns its mean and the
/// Cholesky factor of its precision.
pub fn guided_law(
    h: &GaussianCanonical,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, Chol)> {
    let t = tilt(h, cov)?;
    let b = &h.f + t.q.solve(mean);
    Ok((t.p.solve(&b), t.p))
}

/// Draw from the guided transition out of a state where the forward kernel
/// is `N(mean, cov)`. Returns `log (κh)(x)` and the draw.
pub fn forward_draw(
    h: &GaussianCanonical,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    innov: &mut dyn Innovations,
) -> Result<(f64, DVector<f64>)> {
    let t = tilt(h, cov)?;
    let log_kh = log_pullback_with(h, &t, mean);
    let b = &h.f + t.q.solve(mean);
    let centre = t.p.solve(&b);
    let y = centre + precision_noise(&t.p, innov);
    Ok((log_kh, y))
}

/// `L⁻ᵀ z` for `P = LLᵀ`, which has covariance `P⁻¹`.
pub fn precision_noise(p: &Chol, innov: &mut dyn Innovations) -> DVector<f64> {
    let n = p.l_dirty().nrows();
    let z = DVector::from_fn(n, |_, _| innov.normal());
    p.l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal")
}

/// Unconditional draw from `N(mean, cov)`.
pub fn sample_normal(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    innov: &mut dyn Innovations,
) -> Result<DVector<f64>> {
    let c = spd(cov, Error::SingularQ)?;
    let z = DVector::from_fn(mean.len(), |_, _| innov.normal());
    Ok(mean + c.l() * z)
}

/// Backward marginalisation onto blocks of the given sizes: each factor is
/// `ϖ^{1/k} φ(·; μ⁽ⁱ⁾, P⁽ⁱⁱ⁾)` with `μ = H⁻¹F`, `P = H⁻¹`.
pub fn marginalise(h: &GaussianCanonical, blocks: &[usize]) -> Result<Vec<GaussianCanonical>> {
    if blocks.iter().sum::<usize>() != h.dim() || blocks.is_empty() {
        return Err(Error::DimMismatch(format!(
            "blocks {blocks:?} do not partition dimension {}",
            h.dim()
        )));
    }
    let hc = spd_jittered(&h.h, Error::SingularH)?;
    let mean = hc.solve(&h.f);
    let cov = inverse(&hc);
    let d = h.dim() as f64;
    let log_mass = h.c + 0.5 * d * LN_2PI - 0.5 * logdet(&hc) + 0.5 * h.f.dot(&mean);
    let share = log_mass / blocks.len() as f64;
    let mut out = Vec::with_capacity(blocks.len());
    let mut at = 0;
    for &b in blocks {
        let m = mean.rows(at, b).into_owned();
        let p = cov.view((at, at), (b, b)).into_owned();
        out.push(GaussianCanonical::from_density(&m, &p)?.shifted(share));
        at += b;
    }
    Ok(out)
}

/// A finite measure on a Euclidean space that the forward map can act on
/// in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianMeasure {
    /// `exp(log_mass) δ_x`.
    Dirac { x: DVector<f64>, log_mass: f64 },
    /// A measure with an exp-quadratic density.
    Density(GaussianCanonical),
}

impl GaussianMeasure {
    pub fn log_mass(&self) -> Result<f64> {
        match self {
            GaussianMeasure::Dirac { log_mass, .. } => Ok(*log_mass),
            GaussianMeasure::Density(g) => g.log_mass(),
        }
    }

    /// Mean and covariance of the normalised measure.
    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match self {
            GaussianMeasure::Dirac { x, .. } => Ok((x.clone(), DMatrix::zeros(x.len(), x.len()))),
            GaussianMeasure::Density(g) => g.moments(),
        }
    }
}

/// The forward map on measures: `ν(dy) = ∫ μ(dx) h(y)/(κ̃h)(x) κ(x, dy)` for a
/// point mass pushed through `κ(x, ·) = N(mean, cov)`.
pub fn push_forward_dirac(
    num: &GaussianCanonical,
    den_at_x: f64,
    log_mass: f64,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<GaussianCanonical> {
    let p = GaussianCanonical::from_density(mean, cov).map_err(|_| Error::SingularQ)?;
    Ok(p.fuse(num)?.shifted(log_mass - den_at_x))
}

/// The forward map on measures for an affine kernel and a measure with an
/// exp-quadratic density.
pub fn push_forward_density(
    k: &AffineGaussian,
    num: &GaussianCanonical,
    den: &GaussianCanonical,
    mu: &GaussianCanonical,
) -> Result<GaussianCanonical> {
    // μ(dx)/(κ̃h)(x) as an exp-quadratic function of x
    let cp = mu.c - den.c;
    let fp = &mu.f - &den.f;
    let hp = &mu.h - &den.h;
    let qc = spd(&k.q, Error::SingularQ)?;
    let g = qc.solve(&k.phi);
    let p = symmetrize(&(hp + k.phi.transpose() * &g));
    let pc = spd(&p, Error::SingularC)?;
    let m = symmetrize(&(inverse(&qc) - &g * pc.solve(&g.transpose())));
    let pf = pc.solve(&fp);
    let gv = &g * &pf;
    let dx = mu.dim() as f64;
    let dy = num.dim() as f64;
    let cst = cp - 0.5 * (dy * LN_2PI + logdet(&qc)) + 0.5 * dx * LN_2PI - 0.5 * logdet(&pc)
        + 0.5 * fp.dot(&pf);
    let m_beta = &m * &k.beta;
    let out = GaussianCanonical::new(
        cst - 0.5 * k.beta.dot(&m_beta) - k.beta.dot(&gv),
        m_beta + gv,
        m,
    );
    out.fuse(num)
}

/// Gaussian with mean and covariance given, as `(mean, cov)` of `N^can(F, H)`.
pub fn canonical_to_moments(
    f: &DVector<f64>,
    h: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    GaussianCanonical::new(0.0, f.clone(), h.clone()).moments()
}

/// `(2π)^{-d/2}` in log form, exposed for callers assembling densities.
pub fn log_norm_const(d: usize) -> f64 {
    -0.5 * d as f64 * (2.0 * PI).ln()
}
