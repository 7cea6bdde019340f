//! Guided optics: a forward kernel paired with the backward kernel used to
//! build its messages, closed under sequential and parallel composition.

use nalgebra::DVector;

use crate::discrete::{self, DiscreteH};
use crate::error::{Error, Result};
use crate::gamma::WeightEstimator;
use crate::gaussian::{self, GaussianCanonical, GaussianMeasure};
use crate::kernel::marginal::backward_marginalise;
use crate::kernel::rules;
use crate::kernel::sample::{join_points, split_point, WeightedPoint};
use crate::kernel::{HFun, KernelSpec, Message};
use crate::seed::RngInnovations;
use crate::space::{StateSpaceDesc, Value};

/// A finite measure that the forward map acts on in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Gaussian(GaussianMeasure),
    /// Weights on `0..R` (not necessarily normalised).
    Discrete(DVector<f64>),
    Product(Vec<Measure>),
}

impl Measure {
    pub fn dirac(x: &Value) -> Result<Measure> {
        Measure::dirac_on(x, None)
    }

    /// A unit point mass; `r` gives the alphabet size for finite labels.
    pub fn dirac_on(x: &Value, r: Option<usize>) -> Result<Measure> {
        match (x, r) {
            (Value::Real(v), _) => Ok(Measure::Gaussian(GaussianMeasure::Dirac {
                x: v.clone(),
                log_mass: 0.0,
            })),
            (Value::Label(k), Some(r)) if *k < r => {
                let mut w = DVector::zeros(r);
                w[*k] = 1.0;
                Ok(Measure::Discrete(w))
            }
            (Value::Labels(ks), Some(r)) => Ok(Measure::Product(
                ks.iter()
                    .map(|k| Measure::dirac_on(&Value::Label(*k), Some(r)))
                    .collect::<Result<_>>()?,
            )),
            (Value::Tuple(vs), _) => Ok(Measure::Product(
                vs.iter()
                    .map(|v| Measure::dirac_on(v, r))
                    .collect::<Result<_>>()?,
            )),
            (other, _) => Err(Error::SpaceMismatch(format!("no point mass for {other:?}"))),
        }
    }

    pub fn log_mass(&self) -> Result<f64> {
        match self {
            Measure::Gaussian(g) => g.log_mass(),
            Measure::Discrete(w) => Ok(w.sum().ln()),
            Measure::Product(ms) => ms.iter().map(Measure::log_mass).sum(),
        }
    }

    /// Normalised probabilities of a discrete measure.
    pub fn probabilities(&self) -> Option<DVector<f64>> {
        match self {
            Measure::Discrete(w) => Some(w / w.sum()),
            _ => None,
        }
    }
}

fn gaussian_h(h: &HFun, dim: usize) -> Option<GaussianCanonical> {
    match h {
        HFun::Constant { logc } => Some(GaussianCanonical::flat(dim, *logc)),
        other => other.as_joint_gaussian(),
    }
}

fn discrete_h(h: &HFun, r: usize) -> Option<DiscreteH> {
    match h {
        HFun::Constant { logc } => Some(DiscreteH::ones(r).shifted(*logc)),
        HFun::DiscreteVec(d) if d.len() == r => Some(d.clone()),
        _ => None,
    }
}

fn factor(h: &HFun, i: usize, n: usize) -> Option<HFun> {
    match h {
        HFun::Constant { logc } => Some(HFun::Constant {
            logc: logc / n as f64,
        }),
        HFun::Product { factors } if factors.len() == n => Some(factors[i].clone()),
        _ => None,
    }
}

/// The forward map on measures: `ν(dy) = ∫ μ(dx) κ(x, dy) h(y) / (κ̃h)(x)`
/// with `h` and `κ̃h` read from the message.
pub fn push_measure(k: &KernelSpec, m: &Message, mu: &Measure) -> Result<Measure> {
    let fail = || Error::UnsupportedPair {
        kernel: k.tag(),
        hfun: m.numerator.tag(),
    };
    match (k, mu) {
        (
            KernelSpec::GaussianAffine(_) | KernelSpec::GaussianNonlinear(_),
            Measure::Gaussian(GaussianMeasure::Dirac { x, log_mass }),
        ) => {
            let (mean, cov) = match k {
                KernelSpec::GaussianAffine(a) => (&a.phi * x + &a.beta, a.q.clone()),
                KernelSpec::GaussianNonlinear(d) => (d.mean(x), d.cov(x)),
                _ => unreachable!(),
            };
            let num = gaussian_h(&m.numerator, mean.len()).ok_or_else(fail)?;
            let den = m.denominator.log_eval(&Value::Real(x.clone()))?;
            if den == f64::NEG_INFINITY {
                return Err(Error::ZeroDenominator);
            }
            Ok(Measure::Gaussian(GaussianMeasure::Density(
                gaussian::push_forward_dirac(&num, den, *log_mass, &mean, &cov)?,
            )))
        }
        (KernelSpec::GaussianAffine(a), Measure::Gaussian(GaussianMeasure::Density(g))) => {
            let num = gaussian_h(&m.numerator, a.phi.nrows()).ok_or_else(fail)?;
            let den = gaussian_h(&m.denominator, a.phi.ncols()).ok_or_else(fail)?;
            Ok(Measure::Gaussian(GaussianMeasure::Density(
                gaussian::push_forward_density(a, &num, &den, g)?,
            )))
        }
        (KernelSpec::DiscreteMatrix(mat), Measure::Discrete(w)) => {
            let num = discrete_h(&m.numerator, mat.ncols()).ok_or_else(fail)?;
            let den = discrete_h(&m.denominator, mat.nrows()).ok_or_else(fail)?;
            Ok(Measure::Discrete(discrete::push_forward(
                mat, &num, &den, w,
            )?))
        }
        (KernelSpec::DiscreteProduct(ms), Measure::Product(mus)) if mus.len() == ms.len() => {
            let n = ms.len();
            let parts = ms
                .iter()
                .zip(mus)
                .enumerate()
                .map(|(i, (mat, mu))| {
                    let msg = Message {
                        numerator: factor(&m.numerator, i, n).ok_or_else(fail)?,
                        denominator: factor(&m.denominator, i, n).ok_or_else(fail)?,
                    };
                    push_measure(&KernelSpec::DiscreteMatrix(mat.clone()), &msg, mu)
                })
                .collect::<Result<_>>()?;
            Ok(Measure::Product(parts))
        }
        (KernelSpec::Dirac, Measure::Discrete(w)) => {
            let r = w.len();
            let num = discrete_h(&m.numerator, r).ok_or_else(fail)?;
            let den = discrete_h(&m.denominator, r).ok_or_else(fail)?;
            let mut out = DVector::zeros(r);
            for x in 0..r {
                if w[x] > 0.0 {
                    let d = den.log_eval(x);
                    if d == f64::NEG_INFINITY {
                        return Err(Error::ZeroDenominator);
                    }
                    out[x] = w[x] * (num.log_eval(x) - d).exp();
                }
            }
            Ok(Measure::Discrete(out))
        }
        (KernelSpec::Dirac, Measure::Gaussian(GaussianMeasure::Dirac { x, log_mass })) => {
            let v = Value::Real(x.clone());
            let den = m.denominator.log_eval(&v)?;
            if den == f64::NEG_INFINITY {
                return Err(Error::ZeroDenominator);
            }
            Ok(Measure::Gaussian(GaussianMeasure::Dirac {
                x: x.clone(),
                log_mass: log_mass + m.numerator.log_eval(&v)? - den,
            }))
        }
        (KernelSpec::Dirac, Measure::Gaussian(GaussianMeasure::Density(g))) => {
            let num = gaussian_h(&m.numerator, g.dim()).ok_or_else(fail)?;
            let den = gaussian_h(&m.denominator, g.dim()).ok_or_else(fail)?;
            let inv = GaussianCanonical::new(-den.c, -&den.f, -&den.h);
            Ok(Measure::Gaussian(GaussianMeasure::Density(
                g.fuse(&num)?.fuse(&inv)?,
            )))
        }
        _ => Err(fail()),
    }
}

/// Messages produced by an optic's backward map, shaped like the optic.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageTree {
    Leaf(Message),
    Seq(Box<MessageTree>, Box<MessageTree>),
    Par(Box<MessageTree>, Box<MessageTree>),
}

#[derive(Debug, Clone)]
pub enum GuidedOptic {
    Kernel {
        forward: KernelSpec,
        backward: KernelSpec,
        input: StateSpaceDesc,
        output: StateSpaceDesc,
    },
    Sequential(Box<GuidedOptic>, Box<GuidedOptic>),
    Parallel(Box<GuidedOptic>, Box<GuidedOptic>),
}

fn bad_tree() -> Error {
    Error::SpaceMismatch("message tree does not match the optic".into())
}

impl GuidedOptic {
    pub fn new(
        forward: KernelSpec,
        backward: KernelSpec,
        input: StateSpaceDesc,
        output: StateSpaceDesc,
    ) -> Result<Self> {
        forward.check_spaces(&input, &output)?;
        backward.check_spaces(&input, &output)?;
        Ok(GuidedOptic::Kernel {
            forward,
            backward,
            input,
            output,
        })
    }

    /// The optic that guides with the forward kernel itself.
    pub fn exact(k: KernelSpec, input: StateSpaceDesc, output: StateSpaceDesc) -> Result<Self> {
        Self::new(k.clone(), k, input, output)
    }

    pub fn identity(space: StateSpaceDesc) -> Self {
        GuidedOptic::Kernel {
            forward: KernelSpec::Dirac,
            backward: KernelSpec::Dirac,
            input: space.clone(),
            output: space,
        }
    }

    pub fn input(&self) -> StateSpaceDesc {
        match self {
            GuidedOptic::Kernel { input, .. } => input.clone(),
            GuidedOptic::Sequential(a, _) => a.input(),
            GuidedOptic::Parallel(a, b) => StateSpaceDesc::Product(vec![a.input(), b.input()]),
        }
    }

    pub fn output(&self) -> StateSpaceDesc {
        match self {
            GuidedOptic::Kernel { output, .. } => output.clone(),
            GuidedOptic::Sequential(_, b) => b.output(),
            GuidedOptic::Parallel(a, b) => StateSpaceDesc::Product(vec![a.output(), b.output()]),
        }
    }

    /// Backward map, running the components right to left. A parallel optic
    /// first projects a non-product `h` to product form.
    pub fn backward(&self, h: &HFun) -> Result<(MessageTree, HFun)> {
        match self {
            GuidedOptic::Kernel { backward, .. } => {
                let (m, pulled) = rules::backward(backward, h)?;
                Ok((MessageTree::Leaf(m), pulled))
            }
            GuidedOptic::Sequential(a, b) => {
                let (mb, hb) = b.backward(h)?;
                let (ma, ha) = a.backward(&hb)?;
                Ok((MessageTree::Seq(Box::new(ma), Box::new(mb)), ha))
            }
            GuidedOptic::Parallel(a, b) => {
                let pieces = match h {
                    HFun::Product { factors } if factors.len() == 2 => factors.clone(),
                    HFun::Constant { logc } => vec![HFun::Constant { logc: logc / 2.0 }; 2],
                    other => match backward_marginalise(other, &[a.output(), b.output()])? {
                        HFun::Product { factors } => factors,
                        _ => unreachable!("marginalisation returns a product"),
                    },
                };
                let (ma, ha) = a.backward(&pieces[0])?;
                let (mb, hb) = b.backward(&pieces[1])?;
                Ok((
                    MessageTree::Par(Box::new(ma), Box::new(mb)),
                    HFun::Product {
                        factors: vec![ha, hb],
                    },
                ))
            }
        }
    }

    /// Forward map on a weighted point, consuming the messages of the
    /// matching backward call left to right.
    pub fn forward_sample(
        &self,
        msgs: &MessageTree,
        p: &WeightedPoint,
        est: &WeightEstimator,
    ) -> Result<WeightedPoint> {
        match (self, msgs) {
            (GuidedOptic::Kernel { forward, .. }, MessageTree::Leaf(m)) => {
                let (now, next) = p.seed.split();
                let mut rng = now.rng();
                let (inc, y) =
                    rules::forward(forward, m, &p.value, &mut RngInnovations(&mut rng), est)?;
                Ok(WeightedPoint {
                    logw: p.logw + inc,
                    value: y,
                    seed: next,
                })
            }
            (GuidedOptic::Sequential(a, b), MessageTree::Seq(ma, mb)) => {
                let mid = a.forward_sample(ma, p, est)?;
                b.forward_sample(mb, &mid, est)
            }
            (GuidedOptic::Parallel(a, b), MessageTree::Par(ma, mb)) => {
                let (pa, pb) = split_point(p)?;
                Ok(join_points(
                    &a.forward_sample(ma, &pa, est)?,
                    &b.forward_sample(mb, &pb, est)?,
                ))
            }
            _ => Err(bad_tree()),
        }
    }

    /// Forward map on measures.
    pub fn forward_measure(&self, msgs: &MessageTree, mu: &Measure) -> Result<Measure> {
        match (self, msgs) {
            (GuidedOptic::Kernel { forward, .. }, MessageTree::Leaf(m)) => {
                push_measure(forward, m, mu)
            }
            (GuidedOptic::Sequential(a, b), MessageTree::Seq(ma, mb)) => {
                b.forward_measure(mb, &a.forward_measure(ma, mu)?)
            }
            (GuidedOptic::Parallel(a, b), MessageTree::Par(ma, mb)) => match mu {
                Measure::Product(ms) if ms.len() == 2 => Ok(Measure::Product(vec![
                    a.forward_measure(ma, &ms[0])?,
                    b.forward_measure(mb, &ms[1])?,
                ])),
                _ => Err(Error::SpaceMismatch(
                    "parallel optic needs a product measure".into(),
                )),
            },
            _ => Err(bad_tree()),
        }
    }
}

pub fn compose_sequential(a: GuidedOptic, b: GuidedOptic) -> Result<GuidedOptic> {
    if a.output() != b.input() {
        return Err(Error::SpaceMismatch(format!(
            "cannot chain {:?} into {:?}",
            a.output(),
            b.input()
        )));
    }
    Ok(GuidedOptic::Sequential(Box::new(a), Box::new(b)))
}

pub fn compose_parallel(a: GuidedOptic, b: GuidedOptic) -> Result<GuidedOptic> {
    Ok(GuidedOptic::Parallel(Box::new(a), Box::new(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::AffineGaussian;
    use crate::seed::Seed;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn random_spd(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    fn random_affine(dout: usize, din: usize, rng: &mut impl Rng) -> AffineGaussian {
        AffineGaussian::new(
            DMatrix::from_fn(dout, din, |_, _| rng.random_range(-1.5..1.5)),
            DVector::from_fn(dout, |_, _| rng.random_range(-1.0..1.0)),
            random_spd(dout, rng),
        )
    }

    fn random_h(d: usize, rng: &mut impl Rng) -> GaussianCanonical {
        GaussianCanonical::new(
            rng.random_range(-1.0..1.0),
            DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            random_spd(d, rng),
        )
    }

    fn close(a: &GaussianCanonical, b: &GaussianCanonical, tol: f64) -> bool {
        (a.c - b.c).abs() < tol * (1.0 + b.c.abs())
            && (&a.f - &b.f).amax() < tol * (1.0 + b.f.amax())
            && (&a.h - &b.h).amax() < tol * (1.0 + b.h.amax())
    }

    #[test]
    fn sequential_composite_equals_composed_kernel() {
        let mut rng = Seed::new(42).rng();
        for _ in 0..50 {
            let (d0, d1, d2) = (
                rng.random_range(1..4),
                rng.random_range(1..4),
                rng.random_range(1..4),
            );
            let k1 = random_affine(d1, d0, &mut rng);
            let k2 = random_affine(d2, d1, &mut rng);
            let t1 = random_affine(d1, d0, &mut rng);
            let t2 = random_affine(d2, d1, &mut rng);
            let (e0, e1, e2) = (
                StateSpaceDesc::Euclidean(d0),
                StateSpaceDesc::Euclidean(d1),
                StateSpaceDesc::Euclidean(d2),
            );
            let o1 = GuidedOptic::new(
                KernelSpec::GaussianAffine(k1.clone()),
                KernelSpec::GaussianAffine(t1.clone()),
                e0.clone(),
                e1.clone(),
            )
            .unwrap();
            let o2 = GuidedOptic::new(
                KernelSpec::GaussianAffine(k2.clone()),
                KernelSpec::GaussianAffine(t2.clone()),
                e1,
                e2.clone(),
            )
            .unwrap();
            let seq = compose_sequential(o1, o2).unwrap();
            let joint = GuidedOptic::new(
                KernelSpec::GaussianAffine(k1.then(&k2)),
                KernelSpec::GaussianAffine(t1.then(&t2)),
                e0,
                e2,
            )
            .unwrap();
            let h = HFun::GaussianCanonical(random_h(d2, &mut rng));
            let (ms, hs) = seq.backward(&h).unwrap();
            let (mj, hj) = joint.backward(&h).unwrap();
            let (HFun::GaussianCanonical(a), HFun::GaussianCanonical(b)) = (&hs, &hj) else {
                panic!()
            };
            assert!(close(a, b, 1e-10), "{a:?} vs {b:?}");

            let x = Value::Real(DVector::from_fn(d0, |_, _| rng.random_range(-1.0..1.0)));
            let mu = Measure::dirac(&x).unwrap();
            let (Measure::Gaussian(ns), Measure::Gaussian(nj)) = (
                seq.forward_measure(&ms, &mu).unwrap(),
                joint.forward_measure(&mj, &mu).unwrap(),
            ) else {
                panic!()
            };
            let ((m1, c1), (m2, c2)) = (ns.moments().unwrap(), nj.moments().unwrap());
            assert!((&m1 - &m2).amax() < 1e-10 * (1.0 + m2.amax()));
            assert!((&c1 - &c2).amax() < 1e-10 * (1.0 + c2.amax()));
            let (l1, l2) = (ns.log_mass().unwrap(), nj.log_mass().unwrap());
            assert!((l1 - l2).abs() < 1e-9 * (1.0 + l2.abs()));
        }
    }

    #[test]
    fn identity_optic_changes_nothing() {
        let k = AffineGaussian::scalar(0.8, 0.1, 0.4);
        let e = StateSpaceDesc::Euclidean(1);
        let o = GuidedOptic::exact(KernelSpec::GaussianAffine(k), e.clone(), e.clone()).unwrap();
        let with_id = compose_sequential(o.clone(), GuidedOptic::identity(e)).unwrap();
        let h = HFun::GaussianCanonical(GaussianCanonical::new(
            0.2,
            DVector::from_element(1, 0.3),
            DMatrix::from_element(1, 1, 2.0),
        ));
        let (m1, h1) = o.backward(&h).unwrap();
        let (m2, h2) = with_id.backward(&h).unwrap();
        assert_eq!(h1, h2);
        let p = WeightedPoint::new(Value::scalar(0.5), Seed::new(9));
        let est = WeightEstimator::Quadrature;
        let a = o.forward_sample(&m1, &p, &est).unwrap();
        let b = with_id.forward_sample(&m2, &p, &est).unwrap();
        assert_eq!(a.value, b.value);
        assert!((a.logw - b.logw).abs() < 1e-12);
    }

    #[test]
    fn parallel_discrete_optics_act_componentwise() {
        let ka = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        let kb = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4]);
        let (f2, f3) = (StateSpaceDesc::Finite(2), StateSpaceDesc::Finite(3));
        let oa = GuidedOptic::exact(KernelSpec::DiscreteMatrix(ka), f2.clone(), f2).unwrap();
        let ob = GuidedOptic::exact(KernelSpec::DiscreteMatrix(kb), f3.clone(), f3).unwrap();
        let par = compose_parallel(oa.clone(), ob.clone()).unwrap();
        let ha = HFun::DiscreteVec(DiscreteH::from_raw(DVector::from_vec(vec![0.2, 0.9])).unwrap());
        let hb =
            HFun::DiscreteVec(DiscreteH::from_raw(DVector::from_vec(vec![0.5, 0.1, 0.7])).unwrap());
        let (mp, hp) = par
            .backward(&HFun::Product {
                factors: vec![ha.clone(), hb.clone()],
            })
            .unwrap();
        let (ma, pa) = oa.backward(&ha).unwrap();
        let (mb, pb) = ob.backward(&hb).unwrap();
        assert_eq!(
            hp,
            HFun::Product {
                factors: vec![pa, pb]
            }
        );

        let mu = Measure::Product(vec![
            Measure::Discrete(DVector::from_vec(vec![0.4, 0.6])),
            Measure::Discrete(DVector::from_vec(vec![0.2, 0.3, 0.5])),
        ]);
        let Measure::Product(nu) = par.forward_measure(&mp, &mu).unwrap() else {
            panic!()
        };
        let Measure::Product(parts) = &mu else {
            panic!()
        };
        assert_eq!(nu[0], oa.forward_measure(&ma, &parts[0]).unwrap());
        assert_eq!(nu[1], ob.forward_measure(&mb, &parts[1]).unwrap());

        let est = WeightEstimator::Quadrature;
        let p = WeightedPoint::new(
            Value::Tuple(vec![Value::Label(1), Value::Label(2)]),
            Seed::new(5),
        );
        let joint = par.forward_sample(&mp, &p, &est).unwrap();
        let (pa, pb) = split_point(&p).unwrap();
        let a = oa.forward_sample(&ma, &pa, &est).unwrap();
        let b = ob.forward_sample(&mb, &pb, &est).unwrap();
        assert_eq!(joint.value, Value::Tuple(vec![a.value, b.value]));
        assert!((joint.logw - a.logw - b.logw).abs() < 1e-12);
    }

    #[test]
    fn messages_cancel_along_a_chain() {
        let mut rng = Seed::new(8).rng();
        let e = StateSpaceDesc::Euclidean(2);
        let o1 = GuidedOptic::exact(
            KernelSpec::GaussianAffine(random_affine(2, 2, &mut rng)),
            e.clone(),
            e.clone(),
        )
        .unwrap();
        let o2 = GuidedOptic::exact(
            KernelSpec::GaussianAffine(random_affine(2, 2, &mut rng)),
            e.clone(),
            e.clone(),
        )
        .unwrap();
        let seq = compose_sequential(o1, o2).unwrap();
        let h = HFun::GaussianCanonical(random_h(2, &mut rng));
        let (MessageTree::Seq(m1, m2), h0) = seq.backward(&h).unwrap() else {
            panic!()
        };
        let (MessageTree::Leaf(m1), MessageTree::Leaf(m2)) = (*m1, *m2) else {
            panic!()
        };
        for _ in 0..100 {
            let mut pt = || Value::Real(DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)));
            let (x, y, z) = (pt(), pt(), pt());
            let lhs = m1.log_eval(&x, &y).unwrap()
                + m2.log_eval(&y, &z).unwrap()
                + h0.log_eval(&x).unwrap();
            let rhs = h.log_eval(&z).unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn exact_forward_map_preserves_probability() {
        let mut rng = Seed::new(2).rng();
        for _ in 0..20 {
            let r = 4;
            let mut k = DMatrix::from_fn(r, r, |_, _| rng.random_range(0.01..1.0));
            for mut row in k.row_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            let o = GuidedOptic::exact(
                KernelSpec::DiscreteMatrix(k),
                StateSpaceDesc::Finite(r),
                StateSpaceDesc::Finite(r),
            )
            .unwrap();
            let h = HFun::DiscreteVec(
                DiscreteH::from_raw(DVector::from_fn(r, |_, _| rng.random_range(0.0..2.0)))
                    .unwrap(),
            );
            let (m, _) = o.backward(&h).unwrap();
            let w = DVector::from_fn(r, |_, _| rng.random_range(0.0..1.0));
            let mu = Measure::Discrete(&w / w.sum());
            let Measure::Discrete(nu) = o.forward_measure(&m, &mu).unwrap() else {
                panic!()
            };
            assert!((nu.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let o1 = GuidedOptic::identity(StateSpaceDesc::Euclidean(1));
        let o2 = GuidedOptic::identity(StateSpaceDesc::Euclidean(2));
        assert!(matches!(
            compose_sequential(o1, o2),
            Err(Error::SpaceMismatch(_))
        ));
    }
}
