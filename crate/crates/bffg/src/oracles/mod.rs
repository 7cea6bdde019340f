//! Brute-force reference computations used to check the engine.
//!
//! Nothing in here calls into the filtering or sampling rules; each oracle
//! works from plain matrices and closures so that agreement with the engine
//! is evidence rather than tautology.

mod enumerate;
mod kalman;
mod quadrature;
mod rejection;
mod stats;

use nalgebra::DMatrix;

pub use enumerate::{
    chain_nodes, enumerate_discrete_smoothing, Enumeration, FiniteNode, MAX_PATHS,
};
pub use kalman::{
    kalman_rts_reference, KalmanResult, LinearGaussianLine, LinearObservation, LinearStep,
};
pub use quadrature::quadrature_1d;
pub use rejection::{
    rejection_conditioned_paths, simulate_counting_process, Rejection, MIN_ACCEPTANCE,
};
pub use stats::{ks_pvalue, ks_statistic, mean_se, snis};

/// `exp(A)` by scaling and squaring of a truncated Taylor series.
pub fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_generator_exponential() {
        let (a, b, t) = (0.7, 0.2, 1.3);
        let q = DMatrix::from_row_slice(2, 2, &[-a, a, b, -b]) * t;
        let e = expm_taylor(&q);
        let s = a + b;
        let decay = (-s * t).exp();
        assert!((e[(0, 0)] - (b + a * decay) / s).abs() < 1e-14);
        assert!((e[(1, 0)] - (b - b * decay) / s).abs() < 1e-14);
    }

    #[test]
    fn oracles_do_not_import_engine_rules() {
        let sources = [
            include_str!("mod.rs"),
            include_str!("enumerate.rs"),
            include_str!("kalman.rs"),
            include_str!("quadrature.rs"),
            include_str!("rejection.rs"),
            include_str!("stats.rs"),
        ];
        let forbidden = [
            "gaussian",
            "discrete",
            "gamma",
            "ctime",
            "kernel",
            "inference",
            "sir",
            "graph",
        ];
        for src in sources {
            for line in src
                .lines()
                .map(str::trim)
                .filter(|l| l.starts_with("use crate::"))
            {
                let module = line["use crate::".len()..]
                    .split([':', ';', '{'])
                    .next()
                    .unwrap();
                assert!(!forbidden.contains(&module), "oracle imports `{line}`");
            }
        }
    }
}
