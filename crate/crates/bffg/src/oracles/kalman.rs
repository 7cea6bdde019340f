use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `x_t = Φ_t x_{t−1} + β_t + N(0, Q_t)`.
#[derive(Debug, Clone)]
pub struct LinearStep {
    pub phi: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub q: DMatrix<f64>,
}

/// `y = L x + b + N(0, R)`.
#[derive(Debug, Clone)]
pub struct LinearObservation {
    pub l: DMatrix<f64>,
    pub b: DVector<f64>,
    pub r: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// A line of affine Gaussian transitions from the fixed state `x0`;
/// `observations[t]` observes the state reached after `steps[t]`.
#[derive(Debug, Clone)]
pub struct LinearGaussianLine {
    pub x0: DVector<f64>,
    pub steps: Vec<LinearStep>,
    pub observations: Vec<Option<LinearObservation>>,
}

#[derive(Debug, Clone)]
pub struct KalmanResult {
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub smoothed_means: Vec<DVector<f64>>,
    pub smoothed_covs: Vec<DMatrix<f64>>,
    pub log_evidence: f64,
}

fn inv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let c = sym.cholesky().ok_or(Error::SingularCovariance)?;
    Ok(c.inverse())
}

fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    let c = ((m + m.transpose()) * 0.5)
        .cholesky()
        .ok_or(Error::SingularCovariance)?;
    Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Textbook Kalman filter followed by the Rauch–Tung–Striebel smoother.
pub fn kalman_rts_reference(model: &LinearGaussianLine) -> Result<KalmanResult> {
    let n = model.steps.len();
    let mut fm = Vec::with_capacity(n);
    let mut fc = Vec::with_capacity(n);
    let mut pm = Vec::with_capacity(n);
    let mut pc = Vec::with_capacity(n);
    let mut log_ev = 0.0;
    let mut m = model.x0.clone();
    let mut p = DMatrix::zeros(m.len(), m.len());
    for t in 0..n {
        let s = &model.steps[t];
        let mp = &s.phi * &m + &s.beta;
        let ppred = &s.phi * &p * s.phi.transpose() + &s.q;
        pm.push(mp.clone());
        pc.push(ppred.clone());
        m = mp;
        p = ppred;
        if let Some(Some(o)) = model.observations.get(t) {
            let resid = &o.y - (&o.l * &m + &o.b);
            let sc = &o.l * &p * o.l.transpose() + &o.r;
            let si = inv(&sc)?;
            let gain = &p * o.l.transpose() * &si;
            log_ev += -0.5
                * (resid.len() as f64 * (2.0 * std::f64::consts::PI).ln()
                    + log_det(&sc)?
                    + resid.dot(&(&si * &resid)));
            m = &m + &gain * resid;
            let ident = DMatrix::identity(p.nrows(), p.nrows());
            let joseph = &ident - &gain * &o.l;
            p = &joseph * &p * joseph.transpose() + &gain * &o.r * gain.transpose();
        }
        fm.push(m.clone());
        fc.push(p.clone());
    }
    let mut sm = fm.clone();
    let mut sc = fc.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        let next = &model.steps[t + 1];
        let g = &fc[t] * next.phi.transpose() * inv(&pc[t + 1])?;
        sm[t] = &fm[t] + &g * (&sm[t + 1] - &pm[t + 1]);
        let c = &fc[t] + &g * (&sc[t + 1] - &pc[t + 1]) * g.transpose();
        sc[t] = (&c + c.transpose()) * 0.5;
    }
    Ok(KalmanResult {
        filtered_means: fm,
        filtered_covs: fc,
        smoothed_means: sm,
        smoothed_covs: sc,
        log_evidence: log_ev,
    })
}
