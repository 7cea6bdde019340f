use crate::error::{Error, Result};

const PANELS: usize = 64;
const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson integration of `f` over `[a, b]` with relative tolerance
/// `rel_tol`. The interval is first cut into equal panels so that narrow
/// peaks are not missed by the coarse estimate.
pub fn quadrature_1d(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::ConfigInvalid(
            "quadrature needs a finite interval".into(),
        ));
    }
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let width = (hi - lo) / PANELS as f64;
    let mut panels = Vec::with_capacity(PANELS);
    let mut scale = 0.0;
    for i in 0..PANELS {
        let p0 = lo + i as f64 * width;
        let p1 = if i + 1 == PANELS { hi } else { p0 + width };
        let (f0, f1, fm) = (f(p0), f(p1), f(0.5 * (p0 + p1)));
        let s = (p1 - p0) / 6.0 * (f0 + 4.0 * fm + f1);
        scale += s.abs();
        panels.push((p0, p1, f0, fm, f1, s));
    }
    let tol = rel_tol * scale.max(f64::MIN_POSITIVE) / PANELS as f64;
    let total: f64 = panels
        .into_iter()
        .map(|(p0, p1, f0, fm, f1, s)| simpson(f, p0, p1, f0, fm, f1, s, tol, MAX_DEPTH))
        .sum();
    if !total.is_finite() {
        return Err(Error::ConfigInvalid(
            "integrand is not finite on the interval".into(),
        ));
    }
    Ok(sign * total)
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
