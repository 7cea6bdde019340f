//! Dispatch from (kernel, h-function) pairs to the closed-form rules.

use nalgebra::DVector;

use crate::discrete::{self, DiscreteH};
use crate::error::{Error, Result};
use crate::gamma::{self, GammaH, WeightEstimator};
use crate::gaussian::{self, GaussianCanonical};
use crate::kernel::{HFun, KernelSpec, Message};
use crate::seed::Innovations;
use crate::space::{StateSpaceDesc, Value};

fn unsupported(k: &KernelSpec, h: &HFun) -> Error {
    Error::UnsupportedPair {
        kernel: k.tag(),
        hfun: h.tag(),
    }
}

fn discrete_factors<'a>(k: &KernelSpec, h: &'a HFun, n: usize) -> Result<Vec<&'a DiscreteH>> {
    match h {
        HFun::Product { factors } if factors.len() == n => factors
            .iter()
            .map(|f| match f {
                HFun::DiscreteVec(d) => Ok(d),
                _ => Err(unsupported(k, h)),
            })
            .collect(),
        _ => Err(unsupported(k, h)),
    }
}

/// `(κ̃h)` in closed form.
pub fn pullback(k: &KernelSpec, h: &HFun) -> Result<HFun> {
    if let HFun::Constant { .. } = h {
        // every kernel here is a probability kernel
        return Ok(h.clone());
    }
    match (k, h) {
        (KernelSpec::Dirac, _) => Ok(h.clone()),
        (KernelSpec::Duplicate(n), HFun::Product { factors }) if factors.len() == *n => {
            HFun::fuse(factors)
        }
        (KernelSpec::GaussianAffine(a), _) => {
            let g = h.as_joint_gaussian().ok_or_else(|| unsupported(k, h))?;
            Ok(HFun::GaussianCanonical(gaussian::pullback_affine(&g, a)?))
        }
        (KernelSpec::DiscreteMatrix(m), HFun::DiscreteVec(d)) => {
            Ok(HFun::DiscreteVec(discrete::pullback(m, d)?))
        }
        (KernelSpec::DiscreteProduct(ms), _) => {
            let ds = discrete_factors(k, h, ms.len())?;
            let factors = ms
                .iter()
                .zip(ds)
                .map(|(m, d)| discrete::pullback(m, d).map(HFun::DiscreteVec))
                .collect::<Result<Vec<_>>>()?;
            Ok(HFun::Product { factors })
        }
        (KernelSpec::GammaIncrement(g), HFun::Gamma(gh)) => match g.constant_rate() {
            Some(b) if b == gh.rate => Ok(HFun::Gamma(gamma::pullback_tilde(gh, g.alpha))),
            _ => Err(unsupported(k, h)),
        },
        _ => Err(unsupported(k, h)),
    }
}

/// The backward map: a message and the pulled-back function.
pub fn backward(k: &KernelSpec, h: &HFun) -> Result<(Message, HFun)> {
    let pulled = pullback(k, h)?;
    Ok((
        Message {
            numerator: h.clone(),
            denominator: pulled.clone(),
        },
        pulled,
    ))
}

/// `h(x) = p(obs | x)` for a leaf reached through `k` from a parent living
/// in `input`.
pub fn leaf_h(k: &KernelSpec, obs: &Value, input: &StateSpaceDesc) -> Result<HFun> {
    let fail = || Error::UnsupportedPair {
        kernel: k.tag(),
        hfun: "leaf",
    };
    match (k, obs) {
        (KernelSpec::GaussianAffine(a), Value::Real(y)) => Ok(HFun::GaussianCanonical(
            gaussian::leaf_init(y, &a.phi, &a.beta, &a.q)?,
        )),
        (KernelSpec::DiscreteMatrix(m), Value::Label(j)) => {
            Ok(HFun::DiscreteVec(discrete::leaf_init_emission(m, *j)?))
        }
        (KernelSpec::DiscreteProduct(ms), Value::Labels(js)) if js.len() == ms.len() => {
            Ok(HFun::Product {
                factors: ms
                    .iter()
                    .zip(js)
                    .map(|(m, j)| discrete::leaf_init_emission(m, *j).map(HFun::DiscreteVec))
                    .collect::<Result<_>>()?,
            })
        }
        (KernelSpec::GammaIncrement(g), Value::Real(y)) if y.len() == 1 => {
            let b = g.constant_rate().ok_or_else(fail)?;
            Ok(HFun::Gamma(GammaH::new(g.alpha, b, y[0])))
        }
        (KernelSpec::Dirac, Value::Label(_)) => {
            indicator_h(obs, input.cardinality().ok_or_else(fail)?)
        }
        (KernelSpec::Dirac, Value::Labels(_)) => {
            indicator_h(obs, input.particles().ok_or_else(fail)?.1)
        }
        _ => Err(fail()),
    }
}

/// `h = e_obs` for an exact observation of a finite or particle state.
pub fn indicator_h(obs: &Value, r: usize) -> Result<HFun> {
    match obs {
        Value::Label(k) => Ok(HFun::DiscreteVec(DiscreteH::indicator(*k, r)?)),
        Value::Labels(ks) => Ok(HFun::Product {
            factors: ks
                .iter()
                .map(|k| DiscreteH::indicator(*k, r).map(HFun::DiscreteVec))
                .collect::<Result<_>>()?,
        }),
        other => Err(Error::DimMismatch(format!(
            "{other:?} is not a finite observation"
        ))),
    }
}

/// Log transition density of the forward kernel, with respect to Lebesgue
/// or counting measure.
pub fn log_density(k: &KernelSpec, x: &Value, y: &Value) -> Result<f64> {
    match (k, x, y) {
        (KernelSpec::GaussianAffine(a), Value::Real(xv), Value::Real(yv)) => {
            let c = crate::linalg::spd(&a.q, Error::SingularQ)?;
            Ok(gaussian::log_normal_pdf(yv, &(&a.phi * xv + &a.beta), &c))
        }
        (KernelSpec::GaussianNonlinear(d), Value::Real(xv), Value::Real(yv)) => {
            let c = crate::linalg::spd(&d.cov(xv), Error::SingularQ)?;
            Ok(gaussian::log_normal_pdf(yv, &d.mean(xv), &c))
        }
        (KernelSpec::DiscreteMatrix(m), Value::Label(i), Value::Label(j)) => Ok(m[(*i, *j)].ln()),
        (KernelSpec::DiscreteProduct(ms), Value::Labels(xs), Value::Labels(ys)) => Ok(ms
            .iter()
            .zip(xs.iter().zip(ys))
            .map(|(m, (i, j))| m[(*i, *j)].ln())
            .sum()),
        (KernelSpec::DiscreteInteracting(t), Value::Labels(xs), Value::Labels(ys)) => {
            Ok((0..t.particles()).map(|i| t.row(xs, i)[ys[i]].ln()).sum())
        }
        (KernelSpec::GammaIncrement(g), Value::Real(xv), Value::Real(yv)) => Ok(
            gamma::log_gamma_density(yv[0] - xv[0], g.alpha, g.rate_at(xv[0])),
        ),
        (KernelSpec::Dirac, _, _) => Ok(if x == y { 0.0 } else { f64::NEG_INFINITY }),
        (KernelSpec::Duplicate(n), _, Value::Tuple(vs)) => {
            Ok(if vs.len() == *n && vs.iter().all(|v| v == x) {
                0.0
            } else {
                f64::NEG_INFINITY
            })
        }
        _ => Err(Error::UnsupportedPair {
            kernel: k.tag(),
            hfun: "density",
        }),
    }
}

/// Number of innovations one forward step through `k` consumes.
pub fn innovation_count(k: &KernelSpec) -> usize {
    match k {
        KernelSpec::GaussianAffine(a) => a.phi.nrows(),
        KernelSpec::GaussianNonlinear(d) => d.output_dim(),
        KernelSpec::DiscreteMatrix(_) => 1,
        KernelSpec::DiscreteInteracting(t) => t.particles(),
        KernelSpec::DiscreteProduct(ms) => ms.len(),
        KernelSpec::GammaIncrement(_) => 1,
        KernelSpec::Dirac | KernelSpec::Duplicate(_) => 0,
    }
}

fn gaussian_moments(
    k: &KernelSpec,
    x: &DVector<f64>,
) -> Option<(DVector<f64>, nalgebra::DMatrix<f64>)> {
    match k {
        KernelSpec::GaussianAffine(a) => Some((&a.phi * x + &a.beta, a.q.clone())),
        KernelSpec::GaussianNonlinear(d) => Some((d.mean(x), d.cov(x))),
        _ => None,
    }
}

fn particle_rows(k: &KernelSpec, xs: &[usize]) -> Option<Vec<Vec<f64>>> {
    match k {
        KernelSpec::DiscreteInteracting(t) => {
            Some((0..t.particles()).map(|i| t.row(xs, i)).collect())
        }
        KernelSpec::DiscreteProduct(ms) => Some(
            ms.iter()
                .zip(xs)
                .map(|(m, &x)| m.row(x).iter().copied().collect())
                .collect(),
        ),
        _ => None,
    }
}

/// Draw from the guided transition `κ(x, dy) h(y) / (κh)(x)`.
/// Returns `log (κh)(x)` and the draw; when `h` is constant this is an
/// unconditional draw from `κ(x, ·)`.
pub fn guided_draw(
    k: &KernelSpec,
    h: &HFun,
    x: &Value,
    innov: &mut dyn Innovations,
    est: &WeightEstimator,
) -> Result<(f64, Value)> {
    match (k, x) {
        (KernelSpec::Dirac, _) => Ok((h.log_eval(x)?, x.clone())),
        (KernelSpec::Duplicate(n), _) => {
            let y = Value::Tuple(vec![x.clone(); *n]);
            Ok((h.log_eval(&y)?, y))
        }
        (KernelSpec::GaussianAffine(_) | KernelSpec::GaussianNonlinear(_), Value::Real(xv)) => {
            let (mean, cov) = gaussian_moments(k, xv).expect("Gaussian kernel");
            if let HFun::Constant { logc } = h {
                return Ok((
                    *logc,
                    Value::Real(gaussian::sample_normal(&mean, &cov, innov)?),
                ));
            }
            let g: GaussianCanonical = h.as_joint_gaussian().ok_or_else(|| unsupported(k, h))?;
            let (log_kh, y) = gaussian::forward_draw(&g, &mean, &cov, innov)?;
            Ok((log_kh, Value::Real(y)))
        }
        (KernelSpec::DiscreteMatrix(m), Value::Label(i)) => {
            let u = innov.uniform();
            let row: Vec<f64> = m.row(*i).iter().copied().collect();
            let (log_kh, j) = match h {
                HFun::Constant { logc } => (*logc, discrete::draw_index(&row, u)),
                HFun::DiscreteVec(d) => discrete::guided_step(&row, d, 0.0, u)?,
                _ => return Err(unsupported(k, h)),
            };
            Ok((log_kh, Value::Label(j)))
        }
        (
            KernelSpec::DiscreteInteracting(_) | KernelSpec::DiscreteProduct(_),
            Value::Labels(xs),
        ) => {
            let rows = particle_rows(k, xs).expect("particle kernel");
            let us: Vec<f64> = (0..rows.len()).map(|_| innov.uniform()).collect();
            let mut ys = Vec::with_capacity(rows.len());
            let mut log_kh = 0.0;
            match h {
                HFun::Constant { logc } => {
                    log_kh = *logc;
                    for (row, u) in rows.iter().zip(&us) {
                        ys.push(discrete::draw_index(row, *u));
                    }
                }
                _ => {
                    let ds = discrete_factors(k, h, rows.len())?;
                    for ((row, d), u) in rows.iter().zip(ds).zip(&us) {
                        let (l, j) = discrete::guided_step(row, d, 0.0, *u)?;
                        log_kh += l;
                        ys.push(j);
                    }
                }
            }
            Ok((log_kh, Value::Labels(ys)))
        }
        (KernelSpec::GammaIncrement(g), Value::Real(xv)) if xv.len() == 1 => {
            let mut rng = innov.substream();
            match h {
                HFun::Constant { logc } => Ok((
                    *logc,
                    Value::scalar(gamma::sample_increment(g, xv[0], &mut rng)),
                )),
                HFun::Gamma(gh) => {
                    let (log_kh, y) = gamma::forward_draw(g, gh, xv[0], &mut rng, est)?;
                    Ok((log_kh, Value::scalar(y)))
                }
                _ => Err(unsupported(k, h)),
            }
        }
        _ => Err(Error::SpaceMismatch(format!(
            "{} cannot start from {x:?}",
            k.tag()
        ))),
    }
}

/// `log (κh)(x)` without drawing.
pub fn log_kernel_h(k: &KernelSpec, h: &HFun, x: &Value, est: &WeightEstimator) -> Result<f64> {
    if let HFun::Constant { logc } = h {
        return Ok(*logc);
    }
    match (k, x) {
        (KernelSpec::Dirac, _) => h.log_eval(x),
        (KernelSpec::Duplicate(n), _) => h.log_eval(&Value::Tuple(vec![x.clone(); *n])),
        (KernelSpec::GaussianAffine(_) | KernelSpec::GaussianNonlinear(_), Value::Real(xv)) => {
            let (mean, cov) = gaussian_moments(k, xv).expect("Gaussian kernel");
            let g = h.as_joint_gaussian().ok_or_else(|| unsupported(k, h))?;
            gaussian::log_pullback_at(&g, &mean, &cov)
        }
        (KernelSpec::DiscreteMatrix(m), Value::Label(i)) => match h {
            HFun::DiscreteVec(d) => {
                let row: Vec<f64> = m.row(*i).iter().copied().collect();
                Ok(discrete::guided_row(&row, d).0)
            }
            _ => Err(unsupported(k, h)),
        },
        (
            KernelSpec::DiscreteInteracting(_) | KernelSpec::DiscreteProduct(_),
            Value::Labels(xs),
        ) => {
            let rows = particle_rows(k, xs).expect("particle kernel");
            let ds = discrete_factors(k, h, rows.len())?;
            Ok(rows
                .iter()
                .zip(ds)
                .map(|(row, d)| discrete::guided_row(row, d).0)
                .sum())
        }
        (KernelSpec::GammaIncrement(g), Value::Real(xv)) if xv.len() == 1 => match h {
            HFun::Gamma(gh) => {
                let lw = gamma::log_weight(xv[0], g.alpha, g.rate_at(xv[0]), gh, est)?;
                Ok(gamma::pullback_tilde(gh, g.alpha).log_eval(xv[0]) + lw)
            }
            _ => Err(unsupported(k, h)),
        },
        _ => Err(Error::SpaceMismatch(format!(
            "{} cannot start from {x:?}",
            k.tag()
        ))),
    }
}

/// One weighted forward step: `(log-weight increment, draw)` with the
/// increment `log (κh)(x) − log (κ̃h)(x)` read off the message.
pub fn forward(
    k: &KernelSpec,
    m: &Message,
    x: &Value,
    innov: &mut dyn Innovations,
    est: &WeightEstimator,
) -> Result<(f64, Value)> {
    let den = m.denominator.log_eval(x)?;
    if den == f64::NEG_INFINITY {
        return Err(Error::ZeroDenominator);
    }
    let (log_kh, y) = guided_draw(k, &m.numerator, x, innov, est)?;
    Ok((log_kh - den, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::AffineGaussian;
    use crate::oracles::enumerate_discrete_smoothing;
    use crate::seed::{NormalInnovations, Seed};
    use nalgebra::DMatrix;

    fn k3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.1, 0.8])
    }

    #[test]
    fn dirac_backward_is_trivial() {
        let h = HFun::DiscreteVec(DiscreteH::from_raw(DVector::from_vec(vec![0.3, 0.7])).unwrap());
        let (m, p) = backward(&KernelSpec::Dirac, &h).unwrap();
        assert_eq!(p, h);
        assert_eq!(m.denominator, h);
    }

    #[test]
    fn identity_matrix_pullback() {
        let h =
            HFun::DiscreteVec(DiscreteH::from_raw(DVector::from_vec(vec![0.3, 0.2, 0.5])).unwrap());
        let (_, p) = backward(&KernelSpec::DiscreteMatrix(DMatrix::identity(3, 3)), &h).unwrap();
        let (HFun::DiscreteVec(a), HFun::DiscreteVec(b)) = (&p, &h) else {
            panic!()
        };
        assert!((a.raw() - b.raw()).amax() < 1e-15);
    }

    #[test]
    fn gaussian_backward_uses_the_closed_form() {
        let k = AffineGaussian::scalar(0.9, 0.2, 0.5);
        let h = GaussianCanonical::new(
            0.1,
            DVector::from_element(1, 0.4),
            DMatrix::from_element(1, 1, 1.5),
        );
        let (_, p) = backward(
            &KernelSpec::GaussianAffine(k.clone()),
            &HFun::GaussianCanonical(h.clone()),
        )
        .unwrap();
        assert_eq!(
            p,
            HFun::GaussianCanonical(gaussian::pullback_affine(&h, &k).unwrap())
        );
    }

    #[test]
    fn mismatched_pair_is_reported() {
        let h = HFun::Gamma(GammaH::new(1.0, 1.0, 1.0));
        assert_eq!(
            pullback(&KernelSpec::DiscreteMatrix(k3()), &h),
            Err(Error::UnsupportedPair {
                kernel: "discrete",
                hfun: "gamma_h"
            })
        );
    }

    #[test]
    fn exact_message_has_zero_increment() {
        let k = KernelSpec::GaussianAffine(AffineGaussian::scalar(0.9, 0.2, 0.5));
        let h = HFun::GaussianCanonical(GaussianCanonical::new(
            0.1,
            DVector::from_element(1, 0.4),
            DMatrix::from_element(1, 1, 1.5),
        ));
        let (m, _) = backward(&k, &h).unwrap();
        let z = Seed::new(4).normals(1);
        for x in [-1.0, 0.0, 2.5] {
            let (inc, _) = forward(
                &k,
                &m,
                &Value::scalar(x),
                &mut NormalInnovations::new(&z),
                &WeightEstimator::Quadrature,
            )
            .unwrap();
            assert!(inc.abs() < 1e-12, "x = {x}: {inc}");
        }
    }

    #[test]
    fn three_state_guided_law_matches_enumeration() {
        // exact one-step smoothing law from state 1 with leaf likelihood h
        let k = k3();
        let hv = DVector::from_vec(vec![0.2, 0.9, 0.4]);
        let h = HFun::DiscreteVec(DiscreteH::from_raw(hv.clone()).unwrap());
        let kernel = KernelSpec::DiscreteMatrix(k.clone());
        let (m, _) = backward(&kernel, &h).unwrap();
        let nodes = crate::oracles::chain_nodes(1, std::slice::from_ref(&k), &[Some(hv)]);
        let exact = enumerate_discrete_smoothing(&nodes).unwrap().marginals[0].clone();
        // invert the draw: the law is read off the inverse-CDF thresholds
        let mut counts = [0usize; 3];
        let n = 30_000;
        let zs = Seed::new(6).normals(n);
        for z in &zs {
            let (_, y) = forward(
                &kernel,
                &m,
                &Value::Label(1),
                &mut NormalInnovations::new(std::slice::from_ref(z)),
                &WeightEstimator::Quadrature,
            )
            .unwrap();
            counts[y.as_label().unwrap()] += 1;
        }
        for j in 0..3 {
            let p = exact[j];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[j] as f64 / n as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn innovation_counts() {
        assert_eq!(innovation_count(&KernelSpec::Dirac), 0);
        assert_eq!(innovation_count(&KernelSpec::DiscreteMatrix(k3())), 1);
        assert_eq!(
            innovation_count(&KernelSpec::GaussianAffine(AffineGaussian::new(
                DMatrix::zeros(3, 2),
                DVector::zeros(3),
                DMatrix::identity(3, 3)
            ))),
            3
        );
    }
}
