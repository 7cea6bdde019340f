use crate::error::{Error, Result};
use crate::seed::{Rng64, Seed};

/// Below this pilot acceptance rate rejection sampling is refused.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Rejection<T> {
    pub paths: Vec<T>,
    pub pilot_acceptance: f64,
}

/// Exact conditional draws by simulating unconditionally and keeping the
/// paths that satisfy `accept`. A pilot run of `pilot` draws estimates the
/// acceptance rate first.
pub fn rejection_conditioned_paths<T>(
    mut simulate: impl FnMut(&mut Rng64) -> T,
    accept: impl Fn(&T) -> bool,
    n_accepted: usize,
    pilot: usize,
    seed: Seed,
) -> Result<Rejection<T>> {
    let (pilot_seed, main_seed) = seed.split();
    let mut rng = pilot_seed.rng();
    let mut paths = Vec::with_capacity(n_accepted);
    let mut hits = 0usize;
    for _ in 0..pilot {
        let p = simulate(&mut rng);
        if accept(&p) {
            hits += 1;
            if paths.len() < n_accepted {
                paths.push(p);
            }
        }
    }
    let rate = hits as f64 / pilot.max(1) as f64;
    if rate < MIN_ACCEPTANCE {
        return Err(Error::AcceptanceTooLow(rate));
    }
    let mut rng = main_seed.rng();
    while paths.len() < n_accepted {
        let p = simulate(&mut rng);
        if accept(&p) {
            paths.push(p);
        }
    }
    Ok(Rejection {
        paths,
        pilot_acceptance: rate,
    })
}

/// Jump times of a counting process with state-dependent intensity
/// `rate(count)` on `[0, horizon]`, simulated exactly (the intensity is
/// constant between jumps).
pub fn simulate_counting_process(
    rate: &dyn Fn(f64) -> f64,
    x0: f64,
    horizon: f64,
    rng: &mut Rng64,
) -> Vec<f64> {
    use rand_distr::{Distribution, Exp};
    let mut t = 0.0;
    let mut x = x0;
    let mut times = Vec::new();
    loop {
        let r = rate(x);
        if r <= 0.0 {
            return times;
        }
        t += Exp::new(r).expect("positive rate").sample(rng);
        if t > horizon {
            return times;
        }
        times.push(t);
        x += 1.0;
    }
}
