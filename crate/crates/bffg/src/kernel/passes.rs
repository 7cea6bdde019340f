//! The backward filtering pass over a whole graph and the guided forward
//! pass that consumes its messages.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gamma::WeightEstimator;
use crate::gaussian::GaussianCanonical;
use crate::graph::{MultiParentMode, Role, TransitionGraph, VertexId};
use crate::kernel::marginal::{marginal_factors, subtree_piece};
use crate::kernel::optic::{push_measure, Measure};
use crate::kernel::rules;
use crate::kernel::sample::WeightedSample;
use crate::kernel::{HFun, KernelSpec, Message};
use crate::seed::{NormalInnovations, Seed};
use crate::space::{StateSpaceDesc, Value};

/// Backward kernels to use in place of the forward ones. Vertices without
/// an entry are filtered with their own forward kernel.
#[derive(Debug, Clone, Default)]
pub struct BackwardPlan {
    approx: HashMap<VertexId, KernelSpec>,
}

impl BackwardPlan {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn with(mut self, v: VertexId, k: KernelSpec) -> Self {
        self.approx.insert(v, k);
        self
    }

    pub fn set(&mut self, v: VertexId, k: KernelSpec) {
        self.approx.insert(v, k);
    }

    pub fn kernel<'a>(&'a self, g: &'a TransitionGraph, i: usize) -> Option<&'a KernelSpec> {
        self.approx.get(&g.id(i)).or_else(|| g.kernel(i))
    }
}

/// Where each latent vertex reads its innovations in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnovationLayout {
    slots: Vec<Option<(usize, usize)>>,
    total: usize,
}

impl InnovationLayout {
    /// Topological order over the latent vertices, each taking as many
    /// innovations as its forward kernel consumes.
    pub fn new(g: &TransitionGraph) -> Self {
        let mut slots = vec![None; g.len()];
        let mut at = 0;
        for &i in g.topological_indices() {
            if g.role(i) == Role::Latent {
                let n = rules::innovation_count(g.kernel(i).expect("validated graph"));
                slots[i] = Some((at, n));
                at += n;
            }
        }
        InnovationLayout { slots, total: at }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn slot(&self, i: usize) -> Option<(usize, usize)> {
        self.slots[i]
    }
}

#[derive(Debug, Clone)]
pub struct BackwardResult {
    /// Fused h at every latent vertex and at the root.
    pub h: Vec<Option<HFun>>,
    /// Message of the edge(s) into every non-root vertex.
    pub messages: Vec<Option<Message>>,
    /// `h_{v→p}` for each parent `p` of `v`, in parent order.
    pub pieces: Vec<Vec<HFun>>,
    pub h0: HFun,
    pub log_h0: f64,
    pub layout: InnovationLayout,
}

impl BackwardResult {
    pub fn message(&self, i: usize) -> Option<&Message> {
        self.messages[i].as_ref()
    }
}

fn regulariser_h(g: &TransitionGraph, i: usize) -> Result<Option<GaussianCanonical>> {
    g.regulariser(i)
        .map(|r| GaussianCanonical::from_density(&r.mean, &r.cov))
        .transpose()
}

/// Filter from the leaves to the root in reverse topological order.
pub fn run_backward_pass(g: &TransitionGraph, plan: &BackwardPlan) -> Result<BackwardResult> {
    let n = g.len();
    let mut h: Vec<Option<HFun>> = vec![None; n];
    let mut messages: Vec<Option<Message>> = vec![None; n];
    let mut pieces: Vec<Vec<HFun>> = vec![Vec::new(); n];
    let root = g.root();

    for &v in g.topological_indices().iter().rev() {
        // fuse what the children sent
        let (edge_h, numerator) = if g.role(v) == Role::Leaf {
            let k = plan.kernel(g, v).ok_or(Error::MissingKernel(g.id(v).0))?;
            let obs = g.observation(v).expect("validated graph");
            (Some(rules::leaf_h(k, obs, &g.input_space(v))?), HFun::one())
        } else {
            let mut incoming: Vec<HFun> = g
                .children(v)
                .iter()
                .map(|&c| {
                    let at = g
                        .parents(c)
                        .iter()
                        .position(|&p| p == v)
                        .expect("edge lists agree");
                    pieces[c][at].clone()
                })
                .collect();
            if let Some(q) = regulariser_h(g, v)? {
                incoming.push(HFun::GaussianCanonical(q));
            }
            let fused = HFun::fuse(&incoming)?;
            h[v] = Some(fused.clone());
            if v == root {
                continue;
            }
            (None, fused)
        };

        // pull back through the edge(s) into v
        let k = plan.kernel(g, v).ok_or(Error::MissingKernel(g.id(v).0))?;
        let pulled = match edge_h {
            Some(leaf) => leaf,
            None => rules::backward(k, &numerator)?.1,
        };
        let parents = g.parents(v);
        let (to_parents, denominator) = if parents.len() == 1 {
            (vec![pulled.clone()], pulled)
        } else {
            let spaces: Vec<StateSpaceDesc> = parents.iter().map(|&p| g.space(p).clone()).collect();
            let ps = match g.mode(v) {
                MultiParentMode::Marginalise => marginal_factors(&pulled, &spaces)?.0,
                MultiParentMode::SubTree { parent } => {
                    let keep = g.index_of(*parent).expect("validated graph");
                    let at = parents
                        .iter()
                        .position(|&p| p == keep)
                        .expect("validated graph");
                    (0..parents.len())
                        .map(|j| {
                            if j == at {
                                subtree_piece(&pulled, &spaces, at)
                            } else {
                                Ok(HFun::one())
                            }
                        })
                        .collect::<Result<_>>()?
                }
            };
            let den = HFun::Product {
                factors: ps.clone(),
            };
            (ps, den)
        };
        pieces[v] = to_parents;
        messages[v] = Some(Message {
            numerator,
            denominator,
        });
    }

    let h0 = h[root].clone().expect("root visited last");
    let log_h0 = h0.log_eval(g.root_value())?;
    Ok(BackwardResult {
        h,
        messages,
        pieces,
        h0,
        log_h0,
        layout: InnovationLayout::new(g),
    })
}

#[derive(Debug, Clone)]
pub struct ForwardOutcome {
    pub sample: WeightedSample,
    /// Log-weight contribution of the edge(s) into each vertex.
    pub increments: Vec<f64>,
    /// `log h̃₀(x₀) + Σ log w`.
    pub log_psi: f64,
}

fn parent_values(g: &TransitionGraph, state: &[Option<Value>], v: usize) -> (Value, Value) {
    let ps = g.parents(v);
    let vals: Vec<&Value> = ps
        .iter()
        .map(|&p| state[p].as_ref().expect("parents come first"))
        .collect();
    let spaces: Vec<&StateSpaceDesc> = ps.iter().map(|&p| g.space(p)).collect();
    let joint = Value::joint(&vals, &spaces);
    let tuple = if vals.len() == 1 {
        vals[0].clone()
    } else {
        Value::Tuple(vals.into_iter().cloned().collect())
    };
    (joint, tuple)
}

/// Guided forward pass driven by a fixed vector of standard normal
/// innovations laid out by [`InnovationLayout`].
pub fn run_forward_with(
    g: &TransitionGraph,
    bw: &BackwardResult,
    z: &[f64],
    est: &WeightEstimator,
) -> Result<ForwardOutcome> {
    if z.len() < bw.layout.total() {
        return Err(Error::DimMismatch(format!(
            "{} innovations for a layout of {}",
            z.len(),
            bw.layout.total()
        )));
    }
    let n = g.len();
    let mut state: Vec<Option<Value>> = vec![None; n];
    let mut increments = vec![0.0; n];
    state[g.root()] = Some(g.root_value().clone());

    for &v in g.topological_indices() {
        if v == g.root() {
            continue;
        }
        let (x, x_tuple) = parent_values(g, &state, v);
        let m = bw.message(v).expect("backward pass covers every edge");
        let den = m.denominator.log_eval(&x_tuple)?;
        if den == f64::NEG_INFINITY {
            return Err(Error::ZeroDenominator);
        }
        let k = g.kernel(v).expect("validated graph");
        if g.role(v) == Role::Leaf {
            let obs = g.observation(v).expect("validated graph");
            let lp = rules::log_density(k, &x, obs)?;
            if lp == f64::NEG_INFINITY {
                return Err(Error::ImpossibleState);
            }
            increments[v] = lp - den;
        } else {
            let (at, len) = bw.layout.slot(v).expect("latent vertex");
            let mut innov = NormalInnovations::new(&z[at..at + len]);
            let (log_kh, y) =
                rules::guided_draw(k, &m.numerator, &x, &mut innov, &est.for_index(v as u64))?;
            let mut inc = log_kh - den;
            if let Some(q) = regulariser_h(g, v)? {
                inc -= q.log_eval(y.as_real()?);
            }
            increments[v] = inc;
            state[v] = Some(y);
        }
    }
    let logw: f64 = g.topological_indices().iter().map(|&i| increments[i]).sum();
    Ok(ForwardOutcome {
        sample: WeightedSample {
            logw,
            state,
            seed: Seed(0),
        },
        increments,
        log_psi: bw.log_h0 + logw,
    })
}

/// Forward pass with innovations drawn from `seed`; a pure function of
/// `(graph, messages, seed)`.
pub fn run_forward_pass(
    g: &TransitionGraph,
    bw: &BackwardResult,
    seed: Seed,
) -> Result<ForwardOutcome> {
    let z = seed.normals(bw.layout.total());
    let mut out = run_forward_with(g, bw, &z, &WeightEstimator::Quadrature)?;
    out.sample.seed = seed;
    Ok(out)
}

/// Push the root point mass through every message of a tree-shaped graph.
/// With exact backward kernels the result at each latent vertex is its
/// smoothing marginal.
pub fn forward_marginals(g: &TransitionGraph, bw: &BackwardResult) -> Result<Vec<Option<Measure>>> {
    let mut out: Vec<Option<Measure>> = vec![None; g.len()];
    let root = g.root();
    let alphabet = |s: &StateSpaceDesc| s.cardinality().or_else(|| s.particles().map(|p| p.1));
    out[root] = Some(Measure::dirac_on(g.root_value(), alphabet(g.space(root)))?);
    for &v in g.topological_indices() {
        if v == root || g.role(v) == Role::Leaf {
            continue;
        }
        let [p] = g.parents(v) else {
            return Err(Error::InvalidGraph(
                "measure propagation needs a tree".into(),
            ));
        };
        let mu = out[*p].as_ref().expect("parents come first");
        let k = g.kernel(v).expect("validated graph");
        out[v] = Some(push_measure(k, bw.message(v).expect("every edge"), mu)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::kernel::AffineGaussian;
    use crate::oracles::{chain_nodes, enumerate_discrete_smoothing, snis};
    use nalgebra::{DMatrix, DVector};

    fn k3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.1, 0.8])
    }

    fn k3_perturbed() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.2, 0.2, 0.6])
    }

    fn emission() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.5, 0.5, 0.2, 0.8])
    }

    /// Root label 0, six latent steps, a leaf observing the last one.
    fn chain(steps: u64) -> TransitionGraph {
        let f3 = StateSpaceDesc::Finite(3);
        let mut b = GraphBuilder::new().root(0, f3.clone(), Value::Label(0));
        for i in 1..=steps {
            b = b
                .latent(i, f3.clone())
                .transition(i - 1, i, KernelSpec::DiscreteMatrix(k3()));
        }
        b.leaf(100, StateSpaceDesc::Finite(2), Value::Label(1))
            .transition(steps, 100, KernelSpec::DiscreteMatrix(emission()))
            .build()
            .unwrap()
    }

    fn oracle(steps: usize) -> crate::oracles::Enumeration {
        let mut lik = vec![None; steps];
        lik[steps - 1] = Some(emission().column(1).into_owned());
        enumerate_discrete_smoothing(&chain_nodes(0, &vec![k3(); steps], &lik)).unwrap()
    }

    #[test]
    fn discrete_chain_h0_matches_path_sum() {
        let g = chain(6);
        let bw = run_backward_pass(&g, &BackwardPlan::exact()).unwrap();
        let exact = oracle(6);
        assert!((bw.log_h0 - exact.log_evidence).abs() < 1e-12);
    }

    #[test]
    fn exact_h_gives_zero_weights_and_exact_marginals() {
        let g = chain(6);
        let bw = run_backward_pass(&g, &BackwardPlan::exact()).unwrap();
        for s in 0..20 {
            let out = run_forward_pass(&g, &bw, Seed::new(s)).unwrap();
            assert!(out.sample.logw.abs() < 1e-12, "{}", out.sample.logw);
        }
        let marg = forward_marginals(&g, &bw).unwrap();
        let exact = oracle(6);
        for t in 1..=6 {
            let p = marg[g.index_of(VertexId(t)).unwrap()]
                .as_ref()
                .unwrap()
                .probabilities()
                .unwrap();
            let tv: f64 = 0.5 * (p - &exact.marginals[t as usize - 1]).abs().sum();
            assert!(tv < 1e-12);
        }
    }

    #[test]
    fn forward_pass_is_reproducible() {
        let g = chain(6);
        let mut plan = BackwardPlan::exact();
        for i in 1..=6 {
            plan.set(VertexId(i), KernelSpec::DiscreteMatrix(k3_perturbed()));
        }
        let bw = run_backward_pass(&g, &plan).unwrap();
        let a = run_forward_pass(&g, &bw, Seed::new(77)).unwrap();
        let b = run_forward_pass(&g, &bw, Seed::new(77)).unwrap();
        assert_eq!(a.sample, b.sample);
        assert_eq!(a.log_psi.to_bits(), b.log_psi.to_bits());
    }

    #[test]
    fn perturbed_guide_is_corrected_by_weights() {
        let g = chain(4);
        let mut plan = BackwardPlan::exact();
        for i in 1..=4 {
            plan.set(VertexId(i), KernelSpec::DiscreteMatrix(k3_perturbed()));
        }
        let bw = run_backward_pass(&g, &plan).unwrap();
        let exact = oracle(4);
        let b = 20_000;
        let outs: Vec<ForwardOutcome> = (0..b)
            .map(|i| run_forward_pass(&g, &bw, Seed::new(1000 + i)).unwrap())
            .collect();
        let logw: Vec<f64> = outs.iter().map(|o| o.sample.logw).collect();
        for t in 1..=4usize {
            let v = g.index_of(VertexId(t as u64)).unwrap();
            for state in 0..3 {
                let phi: Vec<f64> = outs
                    .iter()
                    .map(|o| (o.sample.value(v).unwrap().as_label().unwrap() == state) as u8 as f64)
                    .collect();
                let (est, se) = snis(&logw, &phi);
                let want = exact.marginals[t - 1][state];
                assert!(
                    (est - want).abs() < 4.0 * se + 1e-3,
                    "t={t} s={state}: {est} vs {want} (se {se})"
                );
            }
        }
    }

    fn scalar(a: f64, b: f64, q: f64) -> KernelSpec {
        KernelSpec::GaussianAffine(AffineGaussian::scalar(a, b, q))
    }

    #[test]
    fn single_edge_h0_is_one_pullback() {
        let e = StateSpaceDesc::Euclidean(1);
        let g = GraphBuilder::new()
            .root(0, e.clone(), Value::scalar(0.3))
            .leaf(1, e, Value::scalar(1.2))
            .transition(0, 1, scalar(0.9, 0.1, 0.5))
            .build()
            .unwrap();
        let bw = run_backward_pass(&g, &BackwardPlan::exact()).unwrap();
        // N(1.2; 0.9·0.3 + 0.1, 0.5)
        let m = 0.9 * 0.3 + 0.1;
        let want =
            -0.5 * (2.0 * std::f64::consts::PI * 0.5).ln() - (1.2 - m) * (1.2 - m) / (2.0 * 0.5);
        assert!((bw.log_h0 - want).abs() < 1e-12);
    }

    #[test]
    fn tree_fusion_at_s() {
        // root 0 → s=1; s → t=2 → leaf v=4; s → leaf v'=5
        let e = StateSpaceDesc::Euclidean(1);
        let g = GraphBuilder::new()
            .root(0, e.clone(), Value::scalar(0.0))
            .latent(1, e.clone())
            .latent(2, e.clone())
            .leaf(4, e.clone(), Value::scalar(0.7))
            .leaf(5, e, Value::scalar(-0.4))
            .transition(0, 1, scalar(1.0, 0.0, 1.0))
            .transition(1, 2, scalar(0.8, 0.1, 0.5))
            .transition(2, 4, scalar(1.0, 0.0, 0.2))
            .transition(1, 5, scalar(1.0, 0.0, 0.3))
            .build()
            .unwrap();
        let bw = run_backward_pass(&g, &BackwardPlan::exact()).unwrap();
        let s = g.index_of(VertexId(1)).unwrap();
        let t = g.index_of(VertexId(2)).unwrap();
        let vp = g.index_of(VertexId(5)).unwrap();
        let want = HFun::fuse(&[bw.pieces[t][0].clone(), bw.pieces[vp][0].clone()]).unwrap();
        assert_eq!(bw.h[s].as_ref().unwrap(), &want);
    }

    #[test]
    fn diamond_uses_product_denominators() {
        let f2 = StateSpaceDesc::Finite(2);
        let k = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]);
        let k4 = DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.6, 0.4, 0.5, 0.5, 0.1, 0.9]);
        let g = GraphBuilder::new()
            .root(0, f2.clone(), Value::Label(0))
            .latent(1, f2.clone())
            .latent(2, f2.clone())
            .latent(3, f2.clone())
            .leaf(4, f2.clone(), Value::Label(1))
            .transition(0, 1, KernelSpec::DiscreteMatrix(k.clone()))
            .transition(0, 2, KernelSpec::DiscreteMatrix(k.clone()))
            .edge(1, 3)
            .edge(2, 3)
            .kernel(3, KernelSpec::DiscreteMatrix(k4))
            .transition(3, 4, KernelSpec::DiscreteMatrix(k))
            .build()
            .unwrap();
        let bw = run_backward_pass(&g, &BackwardPlan::exact()).unwrap();
        let v3 = g.index_of(VertexId(3)).unwrap();
        assert!(
            matches!(&bw.message(v3).unwrap().denominator, HFun::Product { factors } if factors.len() == 2)
        );
        // the projected guide still yields finite weights and a consistent evidence estimate
        let logw: Vec<f64> = (0..20_000)
            .map(|i| run_forward_pass(&g, &bw, Seed::new(i)).unwrap().sample.logw)
            .collect();
        let est = bw.log_h0 + crate::linalg::log_sum_exp(&logw) - (logw.len() as f64).ln();
        // brute force over x1, x2, x3
        let kk = [[0.7, 0.3], [0.2, 0.8]];
        let k4r = [[0.9, 0.1], [0.6, 0.4], [0.5, 0.5], [0.1, 0.9]];
        let mut ev = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    ev += kk[0][a] * kk[0][b] * k4r[2 * a + b][c] * kk[c][1];
                }
            }
        }
        assert!((est - f64::ln(ev)).abs() < 0.01, "{est} vs {}", ev.ln());

        let sub = GraphBuilder::new()
            .root(0, f2.clone(), Value::Label(0))
            .latent(1, f2.clone())
            .latent(2, f2.clone())
            .latent(3, f2.clone())
            .leaf(4, f2.clone(), Value::Label(1))
            .transition(
                0,
                1,
                KernelSpec::DiscreteMatrix(DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8])),
            )
            .transition(
                0,
                2,
                KernelSpec::DiscreteMatrix(DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8])),
            )
            .edge(1, 3)
            .edge(2, 3)
            .kernel(
                3,
                KernelSpec::DiscreteMatrix(DMatrix::from_row_slice(
                    4,
                    2,
                    &[0.9, 0.1, 0.6, 0.4, 0.5, 0.5, 0.1, 0.9],
                )),
            )
            .transition(
                3,
                4,
                KernelSpec::DiscreteMatrix(DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8])),
            )
            .mode(
                3,
                MultiParentMode::SubTree {
                    parent: VertexId(1),
                },
            )
            .build()
            .unwrap();
        let bw = run_backward_pass(&sub, &BackwardPlan::exact()).unwrap();
        let v2 = sub.index_of(VertexId(2)).unwrap();
        assert_eq!(bw.pieces[v3][1], HFun::one());
        assert_eq!(bw.h[v2].as_ref().unwrap(), &HFun::one());
    }

    #[test]
    fn leaf_regulariser_cancels_in_the_weights() {
        let e = StateSpaceDesc::Euclidean(1);
        let build = |reg: bool| {
            let mut b = GraphBuilder::new()
                .root(0, e.clone(), Value::scalar(0.0))
                .latent(1, e.clone())
                .leaf(2, e.clone(), Value::scalar(0.5))
                .transition(0, 1, scalar(1.0, 0.0, 1.0))
                .transition(1, 2, scalar(1.0, 0.0, 0.5));
            if reg {
                b = b.regulariser(
                    1,
                    crate::graph::Regulariser {
                        mean: DVector::from_element(1, 0.0),
                        cov: DMatrix::from_element(1, 1, 4.0),
                    },
                );
            }
            b.build().unwrap()
        };
        let plain = build(false);
        let reg = build(true);
        let bw_p = run_backward_pass(&plain, &BackwardPlan::exact()).unwrap();
        let bw_r = run_backward_pass(&reg, &BackwardPlan::exact()).unwrap();
        // Ψ is unbiased for the evidence either way
        let psi: Vec<f64> = (0..40_000)
            .map(|i| run_forward_pass(&reg, &bw_r, Seed::new(i)).unwrap().log_psi)
            .collect();
        let est = crate::linalg::log_sum_exp(&psi) - (psi.len() as f64).ln();
        assert!((est - bw_p.log_h0).abs() < 0.01, "{est} vs {}", bw_p.log_h0);
    }
}
