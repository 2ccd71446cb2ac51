use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{domain, Result};
use crate::rng::{stream_rng, Stream};
use crate::vg_model::VgParams;

/// Discounted payoff means with standard errors, from one set of paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McResult {
    pub put: f64,
    pub put_se: f64,
    pub call: f64,
    pub call_se: f64,
    /// Standard error of `call − put` under common random numbers.
    pub parity_se: f64,
}

/// Simulates `S_T = S·exp((r − q + ω)τ + θG + σ√G·Z)` with
/// `G ~ Gamma(τ/ν, ν)` and prices put and call on the same paths.
pub fn mc_put_call(s: f64, strike: f64, tau: f64, p: &VgParams, n_paths: usize, seed: u64) -> Result<McResult> {
    if n_paths < 2 {
        return Err(domain("Monte Carlo needs at least two paths"));
    }
    p.validate()?;
    let gamma = Gamma::new(tau / p.nu, p.nu).map_err(|e| domain(format!("gamma clock: {e}")))?;
    let mut rng = stream_rng(seed, Stream::MonteCarlo, 0);
    let drift = (p.r - p.q + p.martingale_drift()?) * tau;
    let df = (-p.r * tau).exp();

    let (mut sp, mut sp2, mut sc, mut sc2, mut sd, mut sd2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n_paths {
        let g: f64 = gamma.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let st = s * (drift + p.theta * g + p.sigma * g.sqrt() * z).exp();
        let put = df * (strike - st).max(0.0);
        let call = df * (st - strike).max(0.0);
        let diff = call - put;
        sp += put;
        sp2 += put * put;
        sc += call;
        sc2 += call * call;
        sd += diff;
        sd2 += diff * diff;
    }
    let n = n_paths as f64;
    let se = |sum: f64, sum2: f64| {
        let mean = sum / n;
        ((sum2 / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
    };
    Ok(McResult {
        put: sp / n,
        put_se: se(sp, sp2),
        call: sc / n,
        call_se: se(sc, sc2),
        parity_se: se(sd, sd2),
    })
}

/// `(price, standard error)` of the European put.
pub fn mc_put_price(s: f64, strike: f64, tau: f64, p: &VgParams, n_paths: usize, seed: u64) -> Result<(f64, f64)> {
    let r = mc_put_call(s, strike, tau, p, n_paths, seed)?;
    Ok((r.put, r.put_se))
}
