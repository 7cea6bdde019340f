//! Closed-form h-functions and messages.

use serde::{Deserialize, Serialize};

use crate::discrete::DiscreteH;
use crate::error::{Error, Result};
use crate::gamma::GammaH;
use crate::gaussian::GaussianCanonical;
use crate::space::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum HFun {
    GaussianCanonical(GaussianCanonical),
    DiscreteVec(DiscreteH),
    #[serde(rename = "gamma_h")]
    Gamma(GammaH),
    /// The constant function `exp(logc)`.
    Constant {
        logc: f64,
    },
    /// `h(x₁, …, x_k) = Π hᵢ(xᵢ)` on a product space.
    #[serde(rename = "product_h")]
    Product {
        factors: Vec<HFun>,
    },
}

impl HFun {
    pub fn one() -> HFun {
        HFun::Constant { logc: 0.0 }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            HFun::GaussianCanonical(_) => "gaussian_canonical",
            HFun::DiscreteVec(_) => "discrete_vec",
            HFun::Gamma(_) => "gamma_h",
            HFun::Constant { .. } => "constant",
            HFun::Product { .. } => "product_h",
        }
    }

    pub fn log_eval(&self, x: &Value) -> Result<f64> {
        match (self, x) {
            (HFun::Constant { logc }, _) => Ok(*logc),
            (HFun::GaussianCanonical(g), Value::Real(v)) if v.len() == g.dim() => Ok(g.log_eval(v)),
            (HFun::DiscreteVec(d), Value::Label(k)) => Ok(d.log_eval(*k)),
            (HFun::Gamma(g), Value::Real(v)) if v.len() == 1 => Ok(g.log_eval(v[0])),
            (HFun::Product { factors }, Value::Tuple(vs)) if vs.len() == factors.len() => factors
                .iter()
                .zip(vs)
                .try_fold(0.0, |acc, (f, v)| Ok(acc + f.log_eval(v)?)),
            (HFun::Product { factors }, Value::Labels(ks)) if ks.len() == factors.len() => factors
                .iter()
                .zip(ks)
                .try_fold(0.0, |acc, (f, k)| Ok(acc + f.log_eval(&Value::Label(*k))?)),
            (HFun::Product { factors }, Value::Real(v)) => {
                // concatenated real components
                let mut at = 0;
                let mut acc = 0.0;
                for f in factors {
                    let d = match f {
                        HFun::GaussianCanonical(g) => g.dim(),
                        HFun::Gamma(_) => 1,
                        _ => return Err(Error::DimMismatch("product of non-real factors".into())),
                    };
                    if at + d > v.len() {
                        return Err(Error::DimMismatch(
                            "real vector too short for product".into(),
                        ));
                    }
                    acc += f.log_eval(&Value::Real(v.rows(at, d).into_owned()))?;
                    at += d;
                }
                if at != v.len() {
                    return Err(Error::DimMismatch(
                        "real vector too long for product".into(),
                    ));
                }
                Ok(acc)
            }
            (h, x) => Err(Error::DimMismatch(format!(
                "cannot evaluate `{}` at {x:?}",
                h.tag()
            ))),
        }
    }

    /// Multiply by `exp(dc)`.
    pub fn shifted(&self, dc: f64) -> HFun {
        match self {
            HFun::GaussianCanonical(g) => HFun::GaussianCanonical(g.shifted(dc)),
            HFun::DiscreteVec(d) => HFun::DiscreteVec(d.shifted(dc)),
            HFun::Gamma(g) => HFun::Gamma(g.shifted(dc)),
            HFun::Constant { logc } => HFun::Constant { logc: logc + dc },
            HFun::Product { factors } => {
                let mut f = factors.clone();
                if let Some(first) = f.first_mut() {
                    *first = first.shifted(dc);
                }
                HFun::Product { factors: f }
            }
        }
    }

    /// A product of Gaussian factors as one joint canonical function.
    pub fn as_joint_gaussian(&self) -> Option<GaussianCanonical> {
        match self {
            HFun::GaussianCanonical(g) => Some(g.clone()),
            HFun::Product { factors } => {
                let parts: Option<Vec<GaussianCanonical>> =
                    factors.iter().map(|f| f.as_joint_gaussian()).collect();
                parts.map(|p| GaussianCanonical::block_diagonal(&p))
            }
            _ => None,
        }
    }

    /// Pointwise product of functions on the same space.
    pub fn fuse(hs: &[HFun]) -> Result<HFun> {
        let mut logc = 0.0;
        let mut rest: Vec<&HFun> = Vec::new();
        for h in hs {
            match h {
                HFun::Constant { logc: c } => logc += c,
                other => rest.push(other),
            }
        }
        let Some(first) = rest.first() else {
            return Ok(HFun::Constant { logc });
        };
        if rest.len() == 1 {
            return Ok(first.shifted(logc));
        }
        let fused = match first {
            HFun::GaussianCanonical(_) => {
                let mut acc: Option<GaussianCanonical> = None;
                for h in &rest {
                    let g = h
                        .as_joint_gaussian()
                        .ok_or(Error::UnsupportedFusion(h.tag()))?;
                    acc = Some(match acc {
                        None => g,
                        Some(a) => a.fuse(&g)?,
                    });
                }
                HFun::GaussianCanonical(acc.expect("at least two factors"))
            }
            HFun::DiscreteVec(_) => {
                let mut acc: Option<DiscreteH> = None;
                for h in &rest {
                    let HFun::DiscreteVec(d) = h else {
                        return Err(Error::UnsupportedFusion(h.tag()));
                    };
                    acc = Some(match acc {
                        None => d.clone(),
                        Some(a) => a.fuse(d)?,
                    });
                }
                HFun::DiscreteVec(acc.expect("at least two factors"))
            }
            HFun::Gamma(_) => return Err(Error::UnsupportedFusion("gamma_h")),
            HFun::Product { factors } => {
                let k = factors.len();
                if rest
                    .iter()
                    .all(|h| matches!(h, HFun::Product { factors } if factors.len() == k))
                {
                    let mut out = Vec::with_capacity(k);
                    for i in 0..k {
                        let column: Vec<HFun> = rest
                            .iter()
                            .map(|h| match h {
                                HFun::Product { factors } => factors[i].clone(),
                                _ => unreachable!(),
                            })
                            .collect();
                        out.push(HFun::fuse(&column)?);
                    }
                    HFun::Product { factors: out }
                } else if rest.iter().all(|h| h.as_joint_gaussian().is_some()) {
                    let mut acc = first.as_joint_gaussian().expect("checked");
                    for h in &rest[1..] {
                        acc = acc.fuse(&h.as_joint_gaussian().expect("checked"))?;
                    }
                    HFun::GaussianCanonical(acc)
                } else {
                    return Err(Error::UnsupportedFusion("product_h"));
                }
            }
            HFun::Constant { .. } => unreachable!("constants were filtered out"),
        };
        Ok(fused.shifted(logc))
    }
}

/// Quotient-form message `m(x, y) = numerator(y) / denominator(x)`.
///
/// For a vertex with several parents the denominator is a product over the
/// parents, evaluated at the tuple of parent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub numerator: HFun,
    pub denominator: HFun,
}

impl Message {
    pub fn trivial() -> Message {
        Message {
            numerator: HFun::one(),
            denominator: HFun::one(),
        }
    }

    pub fn log_eval(&self, x: &Value, y: &Value) -> Result<f64> {
        Ok(self.numerator.log_eval(y)? - self.denominator.log_eval(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn g(c: f64, f: f64, h: f64) -> HFun {
        HFun::GaussianCanonical(GaussianCanonical::new(
            c,
            DVector::from_element(1, f),
            DMatrix::from_element(1, 1, h),
        ))
    }

    #[test]
    fn single_input_is_unchanged() {
        let h = g(0.3, 1.0, 2.0);
        assert_eq!(HFun::fuse(std::slice::from_ref(&h)).unwrap(), h);
    }

    #[test]
    fn gaussian_fusion_adds_parameters() {
        let fused = HFun::fuse(&[g(0.3, 1.0, 2.0), g(-0.1, 0.5, 0.25)]).unwrap();
        assert_eq!(fused, g(0.3 - 0.1, 1.5, 2.25));
    }

    #[test]
    fn discrete_fusion_is_hadamard() {
        let a = DiscreteH::from_raw(DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let b = DiscreteH::from_raw(DVector::from_vec(vec![0.5, 0.0, 2.0])).unwrap();
        let HFun::DiscreteVec(f) =
            HFun::fuse(&[HFun::DiscreteVec(a), HFun::DiscreteVec(b)]).unwrap()
        else {
            panic!("wrong tag");
        };
        let raw = f.raw();
        assert!((raw[0] - 0.5).abs() < 1e-14 && raw[1] == 0.0 && (raw[2] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn gamma_fusion_is_refused() {
        let h = HFun::Gamma(GammaH::new(1.0, 1.0, 2.0));
        assert_eq!(
            HFun::fuse(&[h.clone(), h]),
            Err(Error::UnsupportedFusion("gamma_h"))
        );
    }

    #[test]
    fn constants_fold_into_the_other_factor() {
        let fused = HFun::fuse(&[HFun::Constant { logc: 0.7 }, g(0.3, 1.0, 2.0)]).unwrap();
        assert_eq!(fused, g(1.0, 1.0, 2.0));
    }

    #[test]
    fn json_round_trip_keeps_the_tag() {
        let h = HFun::Product {
            factors: vec![
                g(0.1, 0.2, 0.3),
                HFun::DiscreteVec(DiscreteH::indicator(1, 3).unwrap()),
            ],
        };
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"tag\":\"product_h\"") && s.contains("\"tag\":\"discrete_vec\""));
        assert_eq!(serde_json::from_str::<HFun>(&s).unwrap(), h);
    }
}
