//! Projection of functions and measures on product spaces to product form.

use nalgebra::DVector;

use crate::discrete::{self, DiscreteH};
use crate::error::{Error, Result};
use crate::gaussian;
use crate::kernel::HFun;
use crate::space::{unravel, StateSpaceDesc};

/// Total log mass of `h` against Lebesgue or counting measure on `space`.
pub fn log_total_mass(h: &HFun, space: &StateSpaceDesc) -> Result<f64> {
    match h {
        HFun::GaussianCanonical(g) => g.log_mass(),
        HFun::DiscreteVec(d) => Ok(d.logc),
        HFun::Constant { logc } => match space.cardinality() {
            Some(r) => Ok(logc + (r as f64).ln()),
            None => Err(Error::UnsupportedTag("constant")),
        },
        HFun::Product { factors } => {
            let parts = product_parts(space, factors.len())?;
            factors
                .iter()
                .zip(&parts)
                .map(|(f, s)| log_total_mass(f, s))
                .sum()
        }
        HFun::Gamma(_) => Err(Error::UnsupportedTag("gamma_h")),
    }
}

fn product_parts(space: &StateSpaceDesc, k: usize) -> Result<Vec<StateSpaceDesc>> {
    match space {
        StateSpaceDesc::Product(p) if p.len() == k => Ok(p.clone()),
        _ if k == 1 => Ok(vec![space.clone()]),
        other => Err(Error::SpaceMismatch(format!(
            "{other:?} is not a product of {k} factors"
        ))),
    }
}

/// Normalised marginals of `h` on each factor space, each carrying
/// `mass^{1/k}`, together with the log of the total mass.
pub fn marginal_factors(h: &HFun, parts: &[StateSpaceDesc]) -> Result<(Vec<HFun>, f64)> {
    let k = parts.len();
    if k == 0 {
        return Err(Error::DimMismatch("empty partition".into()));
    }
    match h {
        HFun::GaussianCanonical(g) => {
            let blocks = parts
                .iter()
                .map(|s| {
                    s.real_dim()
                        .ok_or_else(|| Error::SpaceMismatch(format!("{s:?} is not real")))
                })
                .collect::<Result<Vec<_>>>()?;
            let fs = gaussian::marginalise(g, &blocks)?;
            let mass = fs.iter().map(|f| f.log_mass()).sum::<Result<f64>>()?;
            Ok((fs.into_iter().map(HFun::GaussianCanonical).collect(), mass))
        }
        HFun::DiscreteVec(d) => {
            let sizes = parts
                .iter()
                .map(|s| {
                    s.cardinality()
                        .ok_or_else(|| Error::SpaceMismatch(format!("{s:?} is not finite")))
                })
                .collect::<Result<Vec<_>>>()?;
            let fs = discrete::marginalise(d, &sizes)?;
            Ok((fs.into_iter().map(HFun::DiscreteVec).collect(), d.logc))
        }
        HFun::Product { factors } if factors.len() == k => {
            let masses = factors
                .iter()
                .zip(parts)
                .map(|(f, s)| log_total_mass(f, s))
                .collect::<Result<Vec<_>>>()?;
            let total: f64 = masses.iter().sum();
            let share = total / k as f64;
            Ok((
                factors
                    .iter()
                    .zip(&masses)
                    .map(|(f, m)| f.shifted(share - m))
                    .collect(),
                total,
            ))
        }
        HFun::Constant { logc } => {
            let sizes = parts
                .iter()
                .map(|s| s.cardinality().ok_or(Error::UnsupportedTag("constant")))
                .collect::<Result<Vec<_>>>()?;
            let total = logc + sizes.iter().map(|&r| (r as f64).ln()).sum::<f64>();
            let share = total / k as f64;
            Ok((
                sizes
                    .iter()
                    .map(|&r| HFun::Constant {
                        logc: share - (r as f64).ln(),
                    })
                    .collect(),
                total,
            ))
        }
        HFun::Gamma(_) => Err(Error::UnsupportedTag("gamma_h")),
        HFun::Product { .. } => Err(Error::SpaceMismatch(
            "product arity differs from the partition".into(),
        )),
    }
}

/// Backward marginalisation: project `h` on `E₁ × … × E_k` to a product of
/// functions whose total mass equals that of `h`.
pub fn backward_marginalise(h: &HFun, parts: &[StateSpaceDesc]) -> Result<HFun> {
    Ok(HFun::Product {
        factors: marginal_factors(h, parts)?.0,
    })
}

/// The function sent to parent `keep` when a multi-parent vertex filters
/// along one parent only: the full marginal of `h` on that factor.
pub fn subtree_piece(h: &HFun, parts: &[StateSpaceDesc], keep: usize) -> Result<HFun> {
    let (fs, mass) = marginal_factors(h, parts)?;
    let k = parts.len() as f64;
    Ok(fs[keep].shifted(mass * (k - 1.0) / k))
}

/// The marginalisation map on a finite measure over a product of finite
/// spaces (flattened row-major): the `k` marginals, each scaled so that the
/// product measure has the mass of `mu`.
pub fn marginalise_measure(mu: &DVector<f64>, sizes: &[usize]) -> Result<Vec<DVector<f64>>> {
    if sizes.iter().product::<usize>() != mu.len() || sizes.is_empty() {
        return Err(Error::DimMismatch("sizes do not match the measure".into()));
    }
    let mut out: Vec<DVector<f64>> = sizes.iter().map(|&r| DVector::zeros(r)).collect();
    for (idx, &m) in mu.iter().enumerate() {
        for (o, &l) in out.iter_mut().zip(&unravel(idx, sizes)) {
            o[l] += m;
        }
    }
    let c = mu.sum();
    let k = sizes.len() as f64;
    let scale = if c > 0.0 { c.powf(1.0 / k - 1.0) } else { 1.0 };
    Ok(out.into_iter().map(|o| o * scale).collect())
}

/// Product of discrete factor functions as one function on the joint index.
pub fn discrete_outer(factors: &[DiscreteH]) -> Result<DiscreteH> {
    let mut v = DVector::from_element(1, 1.0);
    let mut logc = 0.0;
    for f in factors {
        let next = DVector::from_iterator(
            v.len() * f.len(),
            v.iter().flat_map(|a| f.v.iter().map(move |b| a * b)),
        );
        v = next;
        logc += f.logc;
    }
    DiscreteH::from_scaled(logc, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianCanonical;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.kronecker(b)
    }

    /// Birkhoff mixture of cyclic shifts: doubly stochastic.
    fn doubly_stochastic(r: usize, w: &[f64]) -> DMatrix<f64> {
        let total: f64 = w.iter().sum();
        let mut k = DMatrix::zeros(r, r);
        for (s, wi) in w.iter().enumerate() {
            for i in 0..r {
                k[(i, (i + s) % r)] += wi / total;
            }
        }
        k
    }

    fn stochastic(r: usize, c: usize, w: &[f64]) -> DMatrix<f64> {
        let mut k = DMatrix::from_fn(r, c, |i, j| w[(i * c + j) % w.len()] + 0.01);
        for mut row in k.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        k
    }

    #[test]
    fn discrete_table_rows_and_columns() {
        let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let h = HFun::DiscreteVec(DiscreteH::from_raw(DVector::from_row_slice(&t)).unwrap());
        let parts = [StateSpaceDesc::Finite(2), StateSpaceDesc::Finite(3)];
        let HFun::Product { factors } = backward_marginalise(&h, &parts).unwrap() else {
            panic!()
        };
        let c: f64 = 21.0;
        let (HFun::DiscreteVec(a), HFun::DiscreteVec(b)) = (&factors[0], &factors[1]) else {
            panic!()
        };
        let rows = [6.0 / c.sqrt(), 15.0 / c.sqrt()];
        let cols = [5.0 / c.sqrt(), 7.0 / c.sqrt(), 9.0 / c.sqrt()];
        for (x, y) in a.raw().iter().zip(rows) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in b.raw().iter().zip(cols) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn product_input_recovers_factors() {
        let a = DiscreteH::from_raw(DVector::from_vec(vec![0.2, 0.8])).unwrap();
        let b = DiscreteH::from_raw(DVector::from_vec(vec![1.0, 3.0, 0.5])).unwrap();
        let parts = [StateSpaceDesc::Finite(2), StateSpaceDesc::Finite(3)];
        let prod = HFun::Product {
            factors: vec![HFun::DiscreteVec(a.clone()), HFun::DiscreteVec(b.clone())],
        };
        let joint = HFun::DiscreteVec(discrete_outer(&[a.clone(), b.clone()]).unwrap());
        let from_joint = backward_marginalise(&joint, &parts).unwrap();
        let from_prod = backward_marginalise(&prod, &parts).unwrap();
        let (HFun::Product { factors: f1 }, HFun::Product { factors: f2 }) =
            (&from_joint, &from_prod)
        else {
            panic!()
        };
        let mass = (a.raw().sum() * b.raw().sum()).sqrt();
        for ((x, y), orig) in f1.iter().zip(f2).zip([&a, &b]) {
            let (HFun::DiscreteVec(x), HFun::DiscreteVec(y)) = (x, y) else {
                panic!()
            };
            let want = orig.raw() / orig.raw().sum() * mass;
            assert!((x.raw() - &want).amax() < 1e-12 && (y.raw() - &want).amax() < 1e-12);
        }
    }

    #[test]
    fn gaussian_blocks_keep_marginal_moments() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let f = DVector::from_vec(vec![0.4, -0.1, 0.7]);
        let g = GaussianCanonical::new(0.25, f, h);
        let (mean, cov) = g.moments().unwrap();
        let parts = [StateSpaceDesc::Euclidean(1), StateSpaceDesc::Euclidean(2)];
        let (fs, mass) = marginal_factors(&HFun::GaussianCanonical(g.clone()), &parts).unwrap();
        assert!((mass - g.log_mass().unwrap()).abs() < 1e-10);
        let HFun::GaussianCanonical(g2) = &fs[1] else {
            panic!()
        };
        let (m2, p2) = g2.moments().unwrap();
        assert!((m2 - mean.rows(1, 2)).amax() < 1e-10);
        assert!((p2 - cov.view((1, 1), (2, 2))).amax() < 1e-10);
    }

    #[test]
    fn gamma_is_not_marginalised() {
        let h = HFun::Gamma(crate::gamma::GammaH::new(1.0, 1.0, 1.0));
        let parts = [StateSpaceDesc::HalfLine, StateSpaceDesc::HalfLine];
        assert_eq!(
            backward_marginalise(&h, &parts),
            Err(Error::UnsupportedTag("gamma_h"))
        );
    }

    #[test]
    fn subtree_piece_is_the_full_marginal() {
        let t = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let h = HFun::DiscreteVec(DiscreteH::from_raw(t).unwrap());
        let parts = [StateSpaceDesc::Finite(2), StateSpaceDesc::Finite(3)];
        let HFun::DiscreteVec(p) = subtree_piece(&h, &parts, 0).unwrap() else {
            panic!()
        };
        assert!((p.raw() - DVector::from_row_slice(&[6.0, 15.0])).amax() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn measure_marginalisation_commutes_with_product_kernels(
            r1 in 2usize..5, r2 in 2usize..5,
            w in proptest::collection::vec(0.0f64..1.0, 30),
            m in proptest::collection::vec(0.0f64..2.0, 16),
        ) {
            let k1 = stochastic(r1, r1, &w);
            let k2 = stochastic(r2, r2, &w[7..]);
            let mu = DVector::from_fn(r1 * r2, |i, _| m[i % m.len()] + 0.05);
            // μ(κ⊗κ')M
            let pushed = kron(&k1, &k2).transpose() * &mu;
            let lhs = marginalise_measure(&pushed, &[r1, r2]).unwrap();
            // μM(κ⊗κ')
            let parts = marginalise_measure(&mu, &[r1, r2]).unwrap();
            let rhs = [k1.transpose() * &parts[0], k2.transpose() * &parts[1]];
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).amax() < 1e-12);
            }
        }

        #[test]
        fn backward_marginalisation_commutes_with_invariant_kernels(
            r1 in 2usize..5, r2 in 2usize..5,
            w1 in proptest::collection::vec(0.01f64..1.0, 1..5),
            w2 in proptest::collection::vec(0.01f64..1.0, 1..5),
            hv in proptest::collection::vec(0.01f64..3.0, 16),
        ) {
            let k1 = doubly_stochastic(r1, &w1);
            let k2 = doubly_stochastic(r2, &w2);
            let raw = DVector::from_fn(r1 * r2, |i, _| hv[i % hv.len()]);
            let parts = [StateSpaceDesc::Finite(r1), StateSpaceDesc::Finite(r2)];
            // (κ⊗κ')M*h
            let h = HFun::DiscreteVec(DiscreteH::from_raw(raw.clone()).unwrap());
            let HFun::Product { factors } = backward_marginalise(&h, &parts).unwrap() else { panic!() };
            let lhs: Vec<DVector<f64>> = factors.iter().zip([&k1, &k2]).map(|(f, k)| {
                let HFun::DiscreteVec(d) = f else { panic!() };
                k * d.raw()
            }).collect();
            // M*(κ⊗κ')h
            let pulled = HFun::DiscreteVec(DiscreteH::from_raw(kron(&k1, &k2) * raw).unwrap());
            let HFun::Product { factors } = backward_marginalise(&pulled, &parts).unwrap() else { panic!() };
            for (a, f) in lhs.iter().zip(&factors) {
                let HFun::DiscreteVec(d) = f else { panic!() };
                prop_assert!((a - d.raw()).amax() < 1e-12);
            }
        }

        #[test]
        fn product_mass_equals_input_mass(hv in proptest::collection::vec(0.01f64..3.0, 12)) {
            let h = HFun::DiscreteVec(DiscreteH::from_raw(DVector::from_vec(hv.clone())).unwrap());
            let parts = [StateSpaceDesc::Finite(2), StateSpaceDesc::Finite(2), StateSpaceDesc::Finite(3)];
            let p = backward_marginalise(&h, &parts).unwrap();
            let mass = log_total_mass(&p, &StateSpaceDesc::Product(parts.to_vec())).unwrap();
            prop_assert!((mass - hv.iter().sum::<f64>().ln()).abs() < 1e-12);
        }
    }
}
