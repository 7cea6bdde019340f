//! State spaces and the values living in them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSpaceDesc {
    Euclidean(usize),
    Finite(usize),
    HalfLine,
    Product(Vec<StateSpaceDesc>),
}

impl StateSpaceDesc {
    pub fn validate(&self) -> Result<()> {
        match self {
            StateSpaceDesc::Euclidean(0) => Err(Error::SpaceMismatch("Euclidean(0)".into())),
            StateSpaceDesc::Finite(r) if *r < 2 => Err(Error::SpaceMismatch(format!(
                "Finite({r}) needs at least 2 states"
            ))),
            StateSpaceDesc::Product(parts) if parts.is_empty() => {
                Err(Error::SpaceMismatch("empty product space".into()))
            }
            StateSpaceDesc::Product(parts) => parts.iter().try_for_each(|p| p.validate()),
            _ => Ok(()),
        }
    }

    /// Dimension of the flattened real vector, for spaces made of real factors.
    pub fn real_dim(&self) -> Option<usize> {
        match self {
            StateSpaceDesc::Euclidean(d) => Some(*d),
            StateSpaceDesc::HalfLine => Some(1),
            StateSpaceDesc::Finite(_) => None,
            StateSpaceDesc::Product(p) => p.iter().map(|s| s.real_dim()).sum(),
        }
    }

    /// Number of joint states, for spaces made of finite factors.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            StateSpaceDesc::Finite(r) => Some(*r),
            StateSpaceDesc::Product(p) => p.iter().map(|s| s.cardinality()).product(),
            _ => None,
        }
    }

    /// `(n, R)` when the space is a product of `n` copies of `Finite(R)`.
    pub fn particles(&self) -> Option<(usize, usize)> {
        match self {
            StateSpaceDesc::Product(p) => {
                let r = match p.first()? {
                    StateSpaceDesc::Finite(r) => *r,
                    _ => return None,
                };
                p.iter()
                    .all(|s| *s == StateSpaceDesc::Finite(r))
                    .then_some((p.len(), r))
            }
            _ => None,
        }
    }

    /// Space of the joint input of a kernel with the given parents.
    pub fn joint(parents: &[&StateSpaceDesc]) -> StateSpaceDesc {
        if parents.len() == 1 {
            parents[0].clone()
        } else {
            StateSpaceDesc::Product(parents.iter().map(|s| (*s).clone()).collect())
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (StateSpaceDesc::Euclidean(d), Value::Real(x)) => x.len() == *d,
            (StateSpaceDesc::HalfLine, Value::Real(x)) => x.len() == 1 && x[0] > 0.0,
            (StateSpaceDesc::Finite(r), Value::Label(k)) => k < r,
            (StateSpaceDesc::Product(p), Value::Tuple(vs)) => {
                p.len() == vs.len() && p.iter().zip(vs).all(|(s, v)| s.contains(v))
            }
            (StateSpaceDesc::Product(p), Value::Labels(ks)) => {
                p.len() == ks.len()
                    && p.iter()
                        .zip(ks)
                        .all(|(s, k)| matches!(s, StateSpaceDesc::Finite(r) if k < r))
            }
            (StateSpaceDesc::Product(_), Value::Real(x)) => self.real_dim() == Some(x.len()),
            _ => false,
        }
    }
}

/// A point of a state space. `Labels` is the compact form of a point in a
/// product of finite spaces (one label per particle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Real(#[serde(with = "crate::linalg::serde_dvec")] DVector<f64>),
    Label(usize),
    Labels(Vec<usize>),
    Tuple(Vec<Value>),
}

impl Value {
    pub fn real(xs: &[f64]) -> Value {
        Value::Real(DVector::from_column_slice(xs))
    }

    pub fn scalar(x: f64) -> Value {
        Value::Real(DVector::from_element(1, x))
    }

    pub fn as_real(&self) -> Result<&DVector<f64>> {
        match self {
            Value::Real(x) => Ok(x),
            other => Err(Error::DimMismatch(format!(
                "expected a real vector, got {other:?}"
            ))),
        }
    }

    pub fn as_scalar(&self) -> Result<f64> {
        match self {
            Value::Real(x) if x.len() == 1 => Ok(x[0]),
            other => Err(Error::DimMismatch(format!(
                "expected a scalar, got {other:?}"
            ))),
        }
    }

    pub fn as_label(&self) -> Result<usize> {
        match self {
            Value::Label(k) => Ok(*k),
            other => Err(Error::DimMismatch(format!(
                "expected a label, got {other:?}"
            ))),
        }
    }

    pub fn as_labels(&self) -> Result<&[usize]> {
        match self {
            Value::Labels(k) => Ok(k),
            other => Err(Error::DimMismatch(format!(
                "expected labels, got {other:?}"
            ))),
        }
    }

    /// The `i`-th factor of a product value.
    pub fn component(&self, i: usize) -> Result<Value> {
        match self {
            Value::Tuple(vs) => vs
                .get(i)
                .cloned()
                .ok_or_else(|| Error::DimMismatch(format!("no component {i}"))),
            Value::Labels(ks) => ks
                .get(i)
                .map(|k| Value::Label(*k))
                .ok_or_else(|| Error::DimMismatch(format!("no component {i}"))),
            other => Err(Error::DimMismatch(format!(
                "{other:?} is not a product value"
            ))),
        }
    }

    /// Joint value handed to a kernel with several parents: real parents are
    /// concatenated, finite parents are combined into one row-major index
    /// (first parent most significant), anything else becomes a tuple.
    pub fn joint(parts: &[&Value], spaces: &[&StateSpaceDesc]) -> Value {
        if parts.len() == 1 {
            return parts[0].clone();
        }
        if parts.iter().all(|v| matches!(v, Value::Real(_))) {
            let xs: Vec<f64> = parts
                .iter()
                .flat_map(|v| match v {
                    Value::Real(x) => x.iter().copied().collect::<Vec<_>>(),
                    _ => unreachable!(),
                })
                .collect();
            return Value::Real(DVector::from_vec(xs));
        }
        let labels: Option<Vec<(usize, usize)>> = parts
            .iter()
            .zip(spaces)
            .map(|(v, s)| match (v, s) {
                (Value::Label(k), StateSpaceDesc::Finite(r)) => Some((*k, *r)),
                _ => None,
            })
            .collect();
        if let Some(ls) = labels {
            let idx = ls.iter().fold(0usize, |acc, (k, r)| acc * r + k);
            return Value::Label(idx);
        }
        Value::Tuple(parts.iter().map(|v| (*v).clone()).collect())
    }
}

/// Inverse of the row-major joint index used by [`Value::joint`].
pub fn unravel(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (o, r) in out.iter_mut().zip(sizes).rev() {
        *o = idx % r;
        idx /= r;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_index_round_trips() {
        let (a, b) = (StateSpaceDesc::Finite(2), StateSpaceDesc::Finite(3));
        let v = Value::joint(&[&Value::Label(1), &Value::Label(2)], &[&a, &b]);
        assert_eq!(v, Value::Label(5));
        assert_eq!(unravel(5, &[2, 3]), vec![1, 2]);
    }

    #[test]
    fn real_parents_concatenate() {
        let e1 = StateSpaceDesc::Euclidean(1);
        let e2 = StateSpaceDesc::Euclidean(2);
        let v = Value::joint(
            &[&Value::scalar(1.0), &Value::real(&[2.0, 3.0])],
            &[&e1, &e2],
        );
        assert_eq!(v, Value::real(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn membership() {
        assert!(StateSpaceDesc::HalfLine.contains(&Value::scalar(0.5)));
        assert!(!StateSpaceDesc::HalfLine.contains(&Value::scalar(-0.5)));
        let p = StateSpaceDesc::Product(vec![StateSpaceDesc::Finite(3); 4]);
        assert_eq!(p.particles(), Some((4, 3)));
        assert!(p.contains(&Value::Labels(vec![0, 1, 2, 0])));
        assert!(StateSpaceDesc::Finite(1).validate().is_err());
    }
}
