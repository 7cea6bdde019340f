//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Below this reciprocal condition estimate a factorisation counts as singular.
pub const RCOND_MIN: f64 = 1e-12;
pub const JITTER: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a symmetric positive definite matrix. `err` is returned
/// when the matrix is not numerically positive definite.
pub fn spd(m: &DMatrix<f64>, err: Error) -> Result<Chol> {
    if m.nrows() != m.ncols() || m.iter().any(|v| !v.is_finite()) {
        return Err(err);
    }
    let c = Cholesky::new(symmetrize(m)).ok_or_else(|| err.clone())?;
    if rcond(&c) < RCOND_MIN {
        return Err(err);
    }
    Ok(c)
}

/// Like [`spd`], but retries once with `JITTER * I` added.
pub fn spd_jittered(m: &DMatrix<f64>, err: Error) -> Result<Chol> {
    match spd(m, err.clone()) {
        Ok(c) => Ok(c),
        Err(_) => {
            log::warn!("adding jitter {JITTER:e} to a nearly singular matrix");
            let n = m.nrows();
            spd(&(m + DMatrix::identity(n, n) * JITTER), err)
        }
    }
}

/// Crude reciprocal condition estimate from the diagonal of the factor.
pub fn rcond(c: &Chol) -> f64 {
    let l = c.l_dirty();
    let d = l.diagonal();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in d.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if hi == 0.0 {
        0.0
    } else {
        (lo / hi).powi(2)
    }
}

pub fn logdet(c: &Chol) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn inverse(c: &Chol) -> DMatrix<f64> {
    symmetrize(&c.inverse())
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::DimMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn vec_to_list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Numerically stable `log(sum(exp(v)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Serde adapter storing a vector as a plain array.
pub mod serde_dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapter storing a matrix as an array of rows.
pub mod serde_dmat {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::mat_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::mat_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
