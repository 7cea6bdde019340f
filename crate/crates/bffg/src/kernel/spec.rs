//! Tagged descriptions of Markov kernels.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mat_from_rows, mat_to_rows, spd, vec_to_list};
use crate::space::StateSpaceDesc;

/// State-dependent mean and covariance of a Gaussian transition.
pub trait GaussianDrift: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn mean(&self, x: &DVector<f64>) -> DVector<f64>;
    fn cov(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Serializable form, if there is one.
    fn to_doc(&self) -> Option<KernelDoc> {
        None
    }
}

/// `y ~ N(Φx + β, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGaussian {
    pub phi: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl AffineGaussian {
    pub fn new(phi: DMatrix<f64>, beta: DVector<f64>, q: DMatrix<f64>) -> Self {
        AffineGaussian { phi, beta, q }
    }

    /// Scalar kernel `y ~ N(a x + b, q)`.
    pub fn scalar(a: f64, b: f64, q: f64) -> Self {
        AffineGaussian {
            phi: DMatrix::from_element(1, 1, a),
            beta: DVector::from_element(1, b),
            q: DMatrix::from_element(1, 1, q),
        }
    }

    /// Kernel of the two-step transition `self` followed by `next`.
    pub fn then(&self, next: &AffineGaussian) -> AffineGaussian {
        AffineGaussian {
            phi: &next.phi * &self.phi,
            beta: &next.phi * &self.beta + &next.beta,
            q: &next.phi * &self.q * next.phi.transpose() + &next.q,
        }
    }
}

/// `y ~ N(Φx + β + a ⊙ sin(x), Q)` for square `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineDrift {
    pub phi: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub amp: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl GaussianDrift for SineDrift {
    fn input_dim(&self) -> usize {
        self.phi.ncols()
    }
    fn output_dim(&self) -> usize {
        self.phi.nrows()
    }
    fn mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.phi * x + &self.beta + self.amp.component_mul(&x.map(f64::sin))
    }
    fn cov(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.q.clone()
    }
    fn to_doc(&self) -> Option<KernelDoc> {
        Some(KernelDoc::GaussianSine {
            phi: mat_to_rows(&self.phi),
            beta: vec_to_list(&self.beta),
            amp: vec_to_list(&self.amp),
            q: mat_to_rows(&self.q),
        })
    }
}

/// Per-particle transition matrices `K_i(x)` of an interacting particle system.
pub trait ParticleTransition: Send + Sync {
    fn particles(&self) -> usize;
    fn alphabet(&self) -> usize;
    fn matrix(&self, x: &[usize], i: usize) -> DMatrix<f64>;
    /// Row `x[i]` of `K_i(x)`.
    fn row(&self, x: &[usize], i: usize) -> Vec<f64> {
        let m = self.matrix(x, i);
        m.row(x[i]).iter().copied().collect()
    }
}

/// A state-dependent rate: `β(x)` of a Gamma increment or `λ(x)` of a
/// counting process.
#[derive(Clone)]
pub enum RateFn {
    Constant(f64),
    Affine { intercept: f64, slope: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for RateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFn::Constant(b) => write!(f, "Constant({b})"),
            RateFn::Affine { intercept, slope } => write!(f, "Affine({intercept} + {slope} x)"),
            RateFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl RateFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RateFn::Constant(b) => *b,
            RateFn::Affine { intercept, slope } => intercept + slope * x,
            RateFn::Custom(f) => f(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GammaKernel {
    pub alpha: f64,
    pub rate: RateFn,
    pub bound: f64,
}

impl GammaKernel {
    pub const DEFAULT_BOUND: f64 = 1e3;

    pub fn constant(alpha: f64, rate: f64) -> Self {
        GammaKernel {
            alpha,
            rate: RateFn::Constant(rate),
            bound: Self::DEFAULT_BOUND,
        }
    }

    pub fn rate_at(&self, x: f64) -> f64 {
        self.rate.eval(x).clamp(1.0 / self.bound, self.bound)
    }

    pub fn constant_rate(&self) -> Option<f64> {
        match self.rate {
            RateFn::Constant(b) => Some(b.clamp(1.0 / self.bound, self.bound)),
            _ => None,
        }
    }
}

#[derive(Clone)]
pub enum KernelSpec {
    GaussianAffine(AffineGaussian),
    GaussianNonlinear(Arc<dyn GaussianDrift>),
    DiscreteMatrix(DMatrix<f64>),
    /// Forward kernel of an interacting particle system.
    DiscreteInteracting(Arc<dyn ParticleTransition>),
    /// Independent per-particle matrices; the backward-diagonalised form.
    DiscreteProduct(Vec<DMatrix<f64>>),
    GammaIncrement(GammaKernel),
    Dirac,
    Duplicate(usize),
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::GaussianAffine(k) => f.debug_tuple("GaussianAffine").field(k).finish(),
            KernelSpec::GaussianNonlinear(d) => {
                f.debug_tuple("GaussianNonlinear").field(d).finish()
            }
            KernelSpec::DiscreteMatrix(k) => f.debug_tuple("DiscreteMatrix").field(k).finish(),
            KernelSpec::DiscreteInteracting(t) => write!(
                f,
                "DiscreteInteracting(n={}, R={})",
                t.particles(),
                t.alphabet()
            ),
            KernelSpec::DiscreteProduct(ks) => write!(f, "DiscreteProduct({} factors)", ks.len()),
            KernelSpec::GammaIncrement(g) => f.debug_tuple("GammaIncrement").field(g).finish(),
            KernelSpec::Dirac => write!(f, "Dirac"),
            KernelSpec::Duplicate(k) => write!(f, "Duplicate({k})"),
        }
    }
}

fn check_stochastic(k: &DMatrix<f64>) -> Result<()> {
    for (i, row) in k.row_iter().enumerate() {
        if row.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidGraph(format!("negative entry in row {i}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGraph(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

fn mismatch(kernel: &str, input: &StateSpaceDesc, output: &StateSpaceDesc) -> Error {
    Error::SpaceMismatch(format!("{kernel} cannot map {input:?} to {output:?}"))
}

impl KernelSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            KernelSpec::GaussianAffine(_) => "gaussian_affine",
            KernelSpec::GaussianNonlinear(_) => "gaussian_nonlinear",
            KernelSpec::DiscreteMatrix(_) => "discrete",
            KernelSpec::DiscreteInteracting(_) => "discrete_interacting",
            KernelSpec::DiscreteProduct(_) => "discrete_product",
            KernelSpec::GammaIncrement(_) => "gamma_increment",
            KernelSpec::Dirac => "dirac",
            KernelSpec::Duplicate(_) => "duplicate",
        }
    }

    /// Parameter sanity: stochastic rows, positive definite covariances,
    /// positive shapes.
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::GaussianAffine(k) => {
                if k.phi.nrows() != k.beta.len() || k.q.nrows() != k.beta.len() {
                    return Err(Error::DimMismatch("Φ, β and Q disagree".into()));
                }
                spd(&k.q, Error::SingularQ).map(|_| ())
            }
            KernelSpec::DiscreteMatrix(k) => check_stochastic(k),
            KernelSpec::DiscreteProduct(ks) => ks.iter().try_for_each(check_stochastic),
            KernelSpec::GammaIncrement(g) => {
                if g.alpha > 0.0 && g.bound >= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidGraph(format!("invalid Gamma kernel {g:?}")))
                }
            }
            KernelSpec::Duplicate(k) if *k < 2 => {
                Err(Error::InvalidGraph("duplication needs k >= 2".into()))
            }
            _ => Ok(()),
        }
    }

    /// Check that the kernel maps `input` (the joint parent space) to `output`.
    pub fn check_spaces(&self, input: &StateSpaceDesc, output: &StateSpaceDesc) -> Result<()> {
        let ok = match self {
            KernelSpec::GaussianAffine(k) => {
                input.real_dim() == Some(k.phi.ncols()) && output.real_dim() == Some(k.phi.nrows())
            }
            KernelSpec::GaussianNonlinear(d) => {
                input.real_dim() == Some(d.input_dim()) && output.real_dim() == Some(d.output_dim())
            }
            KernelSpec::DiscreteMatrix(k) => {
                input.cardinality() == Some(k.nrows())
                    && matches!(output, StateSpaceDesc::Finite(r) if *r == k.ncols())
            }
            KernelSpec::DiscreteInteracting(t) => {
                let want = Some((t.particles(), t.alphabet()));
                input.particles() == want && output.particles() == want
            }
            KernelSpec::DiscreteProduct(ks) => {
                let n = ks.len();
                match (input.particles(), output.particles()) {
                    (Some((ni, ri)), Some((no, ro))) => {
                        ni == n && no == n && ks.iter().all(|k| k.nrows() == ri && k.ncols() == ro)
                    }
                    _ => false,
                }
            }
            KernelSpec::GammaIncrement(_) => {
                input.real_dim() == Some(1) && output.real_dim() == Some(1)
            }
            KernelSpec::Dirac => input == output,
            KernelSpec::Duplicate(k) => *output == StateSpaceDesc::Product(vec![input.clone(); *k]),
        };
        if ok {
            Ok(())
        } else {
            Err(mismatch(self.tag(), input, output))
        }
    }

    pub fn to_doc(&self) -> Result<KernelDoc> {
        Ok(match self {
            KernelSpec::GaussianAffine(k) => KernelDoc::GaussianAffine {
                phi: mat_to_rows(&k.phi),
                beta: vec_to_list(&k.beta),
                q: mat_to_rows(&k.q),
            },
            KernelSpec::GaussianNonlinear(d) => d.to_doc().ok_or_else(|| {
                Error::Parse("this nonlinear drift has no serializable form".into())
            })?,
            KernelSpec::DiscreteMatrix(k) => KernelDoc::Discrete { k: mat_to_rows(k) },
            KernelSpec::DiscreteProduct(ks) => KernelDoc::DiscreteProduct {
                k: ks.iter().map(mat_to_rows).collect(),
            },
            KernelSpec::DiscreteInteracting(_) => {
                return Err(Error::Parse(
                    "interacting particle kernels are not serializable".into(),
                ))
            }
            KernelSpec::GammaIncrement(g) => KernelDoc::GammaIncrement {
                alpha: g.alpha,
                rate: match &g.rate {
                    RateFn::Constant(b) => RateDoc::Constant { value: *b },
                    RateFn::Affine { intercept, slope } => RateDoc::Affine {
                        intercept: *intercept,
                        slope: *slope,
                    },
                    RateFn::Custom(_) => {
                        return Err(Error::Parse(
                            "custom rate functions are not serializable".into(),
                        ))
                    }
                },
                bound: g.bound,
            },
            KernelSpec::Dirac => KernelDoc::Dirac,
            KernelSpec::Duplicate(k) => KernelDoc::Duplicate { k: *k },
        })
    }
}

/// JSON form of a kernel: a `kind` tag plus numeric parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelDoc {
    GaussianAffine {
        phi: Vec<Vec<f64>>,
        beta: Vec<f64>,
        q: Vec<Vec<f64>>,
    },
    GaussianSine {
        phi: Vec<Vec<f64>>,
        beta: Vec<f64>,
        amp: Vec<f64>,
        q: Vec<Vec<f64>>,
    },
    Discrete {
        k: Vec<Vec<f64>>,
    },
    DiscreteProduct {
        k: Vec<Vec<Vec<f64>>>,
    },
    GammaIncrement {
        alpha: f64,
        rate: RateDoc,
        #[serde(default = "default_bound")]
        bound: f64,
    },
    Dirac,
    Duplicate {
        k: usize,
    },
}

fn default_bound() -> f64 {
    GammaKernel::DEFAULT_BOUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum RateDoc {
    Constant { value: f64 },
    Affine { intercept: f64, slope: f64 },
}

impl KernelDoc {
    pub fn into_spec(self) -> Result<KernelSpec> {
        Ok(match self {
            KernelDoc::GaussianAffine { phi, beta, q } => {
                KernelSpec::GaussianAffine(AffineGaussian {
                    phi: mat_from_rows(&phi)?,
                    beta: DVector::from_vec(beta),
                    q: mat_from_rows(&q)?,
                })
            }
            KernelDoc::GaussianSine { phi, beta, amp, q } => {
                KernelSpec::GaussianNonlinear(Arc::new(SineDrift {
                    phi: mat_from_rows(&phi)?,
                    beta: DVector::from_vec(beta),
                    amp: DVector::from_vec(amp),
                    q: mat_from_rows(&q)?,
                }))
            }
            KernelDoc::Discrete { k } => KernelSpec::DiscreteMatrix(mat_from_rows(&k)?),
            KernelDoc::DiscreteProduct { k } => KernelSpec::DiscreteProduct(
                k.iter().map(|m| mat_from_rows(m)).collect::<Result<_>>()?,
            ),
            KernelDoc::GammaIncrement { alpha, rate, bound } => {
                KernelSpec::GammaIncrement(GammaKernel {
                    alpha,
                    rate: match rate {
                        RateDoc::Constant { value } => RateFn::Constant(value),
                        RateDoc::Affine { intercept, slope } => RateFn::Affine { intercept, slope },
                    },
                    bound,
                })
            }
            KernelDoc::Dirac => KernelSpec::Dirac,
            KernelDoc::Duplicate { k } => KernelSpec::Duplicate(k),
        })
    }
}
