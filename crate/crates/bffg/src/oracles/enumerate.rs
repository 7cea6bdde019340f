use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest number of joint configurations the enumerator will visit.
pub const MAX_PATHS: u128 = 10_000_000;
/// Joint posteriors are returned only up to this many configurations.
pub const MAX_JOINT: usize = 1_000_000;

/// One finite variable of a Bayesian network, listed in topological order.
/// `cpt` has one row per joint configuration of `parents` (row-major, first
/// parent most significant) and one column per state; a parentless node has
/// a single row. `likelihood`, when present, multiplies in `p(obs | state)`.
#[derive(Debug, Clone)]
pub struct FiniteNode {
    pub parents: Vec<usize>,
    pub cpt: DMatrix<f64>,
    pub likelihood: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub log_evidence: f64,
    /// Posterior marginal of every node.
    pub marginals: Vec<DVector<f64>>,
    /// Posterior over joint configurations (row-major, first node most
    /// significant); empty when there are more than [`MAX_JOINT`] of them.
    pub joint: Vec<f64>,
}

/// Exact smoothing by summing over every joint configuration.
pub fn enumerate_discrete_smoothing(nodes: &[FiniteNode]) -> Result<Enumeration> {
    let cards: Vec<usize> = nodes.iter().map(|n| n.cpt.ncols()).collect();
    let count: u128 = cards.iter().map(|&c| c as u128).product();
    if count > MAX_PATHS {
        return Err(Error::TooLarge(count));
    }
    for (i, n) in nodes.iter().enumerate() {
        let rows: usize = n.parents.iter().map(|&p| cards[p]).product();
        if n.parents.iter().any(|&p| p >= i) || n.cpt.nrows() != rows {
            return Err(Error::DimMismatch(format!(
                "node {i} has an inconsistent table"
            )));
        }
    }
    let count = count as usize;
    let keep_joint = count <= MAX_JOINT;
    let mut joint = if keep_joint {
        vec![0.0; count]
    } else {
        Vec::new()
    };
    let mut marginals: Vec<DVector<f64>> = cards.iter().map(|&c| DVector::zeros(c)).collect();
    let mut total = 0.0;
    let mut state = vec![0usize; nodes.len()];
    for idx in 0..count {
        let mut rem = idx;
        for (s, &c) in state.iter_mut().zip(&cards).rev() {
            *s = rem % c;
            rem /= c;
        }
        let mut p = 1.0;
        for (i, n) in nodes.iter().enumerate() {
            let row = n
                .parents
                .iter()
                .fold(0, |acc, &q| acc * cards[q] + state[q]);
            p *= n.cpt[(row, state[i])];
            if let Some(l) = &n.likelihood {
                p *= l[state[i]];
            }
            if p == 0.0 {
                break;
            }
        }
        if p == 0.0 {
            continue;
        }
        total += p;
        for (m, &s) in marginals.iter_mut().zip(&state) {
            m[s] += p;
        }
        if keep_joint {
            joint[idx] = p;
        }
    }
    if total <= 0.0 {
        return Err(Error::AllWeightsZero);
    }
    for m in &mut marginals {
        *m /= total;
    }
    for j in &mut joint {
        *j /= total;
    }
    Ok(Enumeration {
        log_evidence: total.ln(),
        marginals,
        joint,
    })
}

/// Chain `x₀ → x₁ → … → x_T` from a fixed start, as a list of nodes.
/// `likelihoods[t]` belongs to `x_{t+1}`.
pub fn chain_nodes(
    x0: usize,
    transitions: &[DMatrix<f64>],
    likelihoods: &[Option<DVector<f64>>],
) -> Vec<FiniteNode> {
    transitions
        .iter()
        .enumerate()
        .map(|(t, k)| {
            if t == 0 {
                FiniteNode {
                    parents: vec![],
                    cpt: DMatrix::from_fn(1, k.ncols(), |_, j| k[(x0, j)]),
                    likelihood: likelihoods.first().cloned().flatten(),
                }
            } else {
                FiniteNode {
                    parents: vec![t - 1],
                    cpt: k.clone(),
                    likelihood: likelihoods.get(t).cloned().flatten(),
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_is_bayes_rule() {
        let k = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]);
        let lik = DVector::from_vec(vec![0.9, 0.4]);
        let e = enumerate_discrete_smoothing(&chain_nodes(0, &[k], &[Some(lik)])).unwrap();
        let z: f64 = 0.7 * 0.9 + 0.3 * 0.4;
        assert!((e.log_evidence - z.ln()).abs() < 1e-15);
        assert!((e.marginals[0][0] - 0.63 / z).abs() < 1e-15);
    }

    #[test]
    fn uniform_kernel_gives_marginals_proportional_to_h() {
        let u = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let h = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let ks = vec![u; 6];
        let mut liks = vec![None; 6];
        liks[5] = Some(h.clone());
        let e = enumerate_discrete_smoothing(&chain_nodes(1, &ks, &liks)).unwrap();
        assert_eq!(e.joint.len(), 729);
        assert!((&e.marginals[5] - &h / h.sum()).amax() < 1e-14);
        assert!((e.log_evidence - (h.sum() / 3.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn huge_models_are_refused() {
        let k = DMatrix::from_element(10, 10, 0.1);
        let nodes = chain_nodes(0, &vec![k; 8], &[]);
        assert_eq!(
            enumerate_discrete_smoothing(&nodes).unwrap_err(),
            Error::TooLarge(100_000_000)
        );
    }
}
