/// Asymptotic p-value of the one-sample Kolmogorov–Smirnov statistic `d`
/// with Stephens' small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sided KS statistic of `xs` against the distribution function `cdf`.
pub fn ks_statistic(xs: &[f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0f64, |d, (i, x)| {
        let c = cdf(*x);
        d.max(c - i as f64 / n).max((i + 1) as f64 / n - c)
    })
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Self-normalised importance estimate of `E φ` from log-weights, with the
/// delta-method standard error.
pub fn snis(logw: &[f64], phi: &[f64]) -> (f64, f64) {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    let est = w.iter().zip(phi).map(|(w, p)| w * p).sum::<f64>() / s;
    let var = w
        .iter()
        .zip(phi)
        .map(|(w, p)| (w / s).powi(2) * (p - est).powi(2))
        .sum::<f64>();
    (est, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_kolmogorov_quantiles() {
        // the 5% critical value of the limiting law is 1.3581
        let n = 1_000_000;
        let d = 1.3581 / (n as f64).sqrt();
        assert!((ks_pvalue(d, n) - 0.05).abs() < 1e-3);
        assert_eq!(ks_pvalue(0.0, 10), 1.0);
    }

    #[test]
    fn uniform_grid_has_small_statistic() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&xs, &|x| x);
        assert!((d - 0.0005).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_reduce_to_the_sample_mean() {
        let (e, _) = snis(&[0.3; 4], &[1.0, 2.0, 3.0, 4.0]);
        assert!((e - 2.5).abs() < 1e-15);
    }
}
