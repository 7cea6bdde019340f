//! Weighted samples and the structural maps on them.

use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::space::Value;

/// A guided draw over the vertices of a graph together with its log weight
/// and the seed that produced it. `state[i]` is `None` for vertices that
/// have not been sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub logw: f64,
    pub state: Vec<Option<Value>>,
    pub seed: Seed,
}

impl WeightedSample {
    pub fn value(&self, i: usize) -> Option<&Value> {
        self.state.get(i).and_then(Option::as_ref)
    }
}

/// Split the sampled vertices into `part` and the rest. Each half carries
/// `logw / 2` and one of the two split seeds.
pub fn split_sample(ws: &WeightedSample, part: &[usize]) -> (WeightedSample, WeightedSample) {
    let (r, rp) = ws.seed.split();
    let mut left = vec![None; ws.state.len()];
    let mut right = ws.state.clone();
    for &i in part {
        if let Some(v) = right.get_mut(i).and_then(Option::take) {
            left[i] = Some(v);
        }
    }
    (
        WeightedSample {
            logw: ws.logw / 2.0,
            state: left,
            seed: r,
        },
        WeightedSample {
            logw: ws.logw / 2.0,
            state: right,
            seed: rp,
        },
    )
}

/// Merge two samples on disjoint vertex sets: weights multiply, the first
/// seed is kept.
pub fn join_samples(a: &WeightedSample, b: &WeightedSample) -> Result<WeightedSample> {
    if a.state.len() != b.state.len() {
        return Err(Error::DimMismatch("samples over different graphs".into()));
    }
    let mut state = a.state.clone();
    for (i, v) in b.state.iter().enumerate() {
        if let Some(v) = v {
            if state[i].is_some() {
                return Err(Error::DimMismatch(format!(
                    "vertex {i} sampled on both sides"
                )));
            }
            state[i] = Some(v.clone());
        }
    }
    Ok(WeightedSample {
        logw: a.logw + b.logw,
        state,
        seed: a.seed,
    })
}

/// A weighted point of a single space, the value type flowing through an
/// optic's forward map.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoint {
    pub logw: f64,
    pub value: Value,
    pub seed: Seed,
}

impl WeightedPoint {
    pub fn new(value: Value, seed: Seed) -> Self {
        WeightedPoint {
            logw: 0.0,
            value,
            seed,
        }
    }
}

/// Split a point of a product space `E × E'` into its two factors. A tuple
/// with more than two parts splits into its head and a tuple of the rest.
pub fn split_point(p: &WeightedPoint) -> Result<(WeightedPoint, WeightedPoint)> {
    let (a, b) = match &p.value {
        Value::Tuple(vs) if vs.len() == 2 => (vs[0].clone(), vs[1].clone()),
        Value::Tuple(vs) if vs.len() > 2 => (vs[0].clone(), Value::Tuple(vs[1..].to_vec())),
        other => return Err(Error::SpaceMismatch(format!("cannot split {other:?}"))),
    };
    let (r, rp) = p.seed.split();
    Ok((
        WeightedPoint {
            logw: p.logw / 2.0,
            value: a,
            seed: r,
        },
        WeightedPoint {
            logw: p.logw / 2.0,
            value: b,
            seed: rp,
        },
    ))
}

pub fn join_points(a: &WeightedPoint, b: &WeightedPoint) -> WeightedPoint {
    WeightedPoint {
        logw: a.logw + b.logw,
        value: Value::Tuple(vec![a.value.clone(), b.value.clone()]),
        seed: a.seed,
    }
}

/// `k` copies of a point, each with weight `ϖ^{1/k}`. Seeds are produced by
/// splitting repeatedly: copy `i` takes the left half of the `i`-th right
/// half.
pub fn duplicate_forward(k: usize, p: &WeightedPoint) -> Vec<WeightedPoint> {
    let mut out = Vec::with_capacity(k);
    let mut rest = p.seed;
    for i in 0..k {
        let seed = if i + 1 == k {
            rest
        } else {
            let (l, r) = rest.split();
            rest = r;
            l
        };
        out.push(WeightedPoint {
            logw: p.logw / k as f64,
            value: p.value.clone(),
            seed,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(logw: f64) -> WeightedSample {
        WeightedSample {
            logw,
            state: vec![
                Some(Value::scalar(0.0)),
                Some(Value::scalar(1.5)),
                Some(Value::Label(2)),
                None,
            ],
            seed: Seed::new(11),
        }
    }

    #[test]
    fn split_halves_the_weight() {
        let (a, b) = split_sample(&sample(0.8), &[1]);
        assert_eq!((a.logw, b.logw), (0.4, 0.4));
        assert_eq!(a.value(1), Some(&Value::scalar(1.5)));
        assert!(b.value(1).is_none() && b.value(2).is_some());
        assert_ne!(a.seed, b.seed);
    }

    #[test]
    fn duplicate_counts() {
        let p = |logw| WeightedPoint {
            logw,
            value: Value::scalar(3.0),
            seed: Seed::new(1),
        };
        let two = duplicate_forward(2, &p(0.0));
        assert!(two.iter().all(|c| c.logw == 0.0));
        let two = duplicate_forward(2, &p(2.0));
        assert!(two.iter().all(|c| c.logw == 1.0));
        let three = duplicate_forward(3, &p(-0.9));
        assert!(three
            .iter()
            .all(|c| (c.logw + 0.3).abs() < 1e-15 && c.value == Value::scalar(3.0)));
        assert!(three[0].seed != three[1].seed && three[1].seed != three[2].seed);
    }

    #[test]
    fn split_streams_pass_an_independence_test() {
        // 2×2 contingency table of the first bits of the two child streams
        let n = 10_000;
        let mut table = [[0f64; 2]; 2];
        for i in 0..n {
            let (a, b) = Seed::new(i).split();
            let x = a.rng().random::<bool>() as usize;
            let y = b.rng().random::<bool>() as usize;
            table[x][y] += 1.0;
        }
        let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
        let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
        let mut chi2 = 0.0;
        for x in 0..2 {
            for y in 0..2 {
                let e = rows[x] * cols[y] / n as f64;
                chi2 += (table[x][y] - e).powi(2) / e;
            }
        }
        // 99.9% quantile of chi-square with one degree of freedom
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn join_inverts_split(logw in -50.0f64..50.0, mask in proptest::collection::vec(any::<bool>(), 4)) {
            let ws = sample(logw);
            let part: Vec<usize> = (0..4).filter(|&i| mask[i]).collect();
            let (a, b) = split_sample(&ws, &part);
            let back = join_samples(&a, &b).unwrap();
            prop_assert_eq!(&back.state, &ws.state);
            prop_assert!((back.logw - ws.logw).abs() < 1e-12);
        }

        #[test]
        fn point_round_trip(logw in -50.0f64..50.0, x in -5.0f64..5.0, k in 0usize..4) {
            let p = WeightedPoint { logw, value: Value::Tuple(vec![Value::scalar(x), Value::Label(k)]), seed: Seed::new(3) };
            let (a, b) = split_point(&p).unwrap();
            let back = join_points(&a, &b);
            prop_assert_eq!(&back.value, &p.value);
            prop_assert!((back.logw - logw).abs() < 1e-12);
        }
    }
}
