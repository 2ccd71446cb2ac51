use statrs::distribution::{ContinuousCDF, Normal};

fn d1_d2(s: f64, strike: f64, tau: f64, sigma: f64, r: f64, q: f64) -> (f64, f64) {
    let vol = sigma * tau.sqrt();
    let d1 = ((s / strike).ln() + (r - q + 0.5 * sigma * sigma) * tau) / vol;
    (d1, d1 - vol)
}

/// Black–Scholes–Merton European put with continuous dividend yield.
pub fn bms_put_price(s: f64, strike: f64, tau: f64, sigma: f64, r: f64, q: f64) -> f64 {
    let df = (-r * tau).exp();
    let dq = (-q * tau).exp();
    if sigma * tau.sqrt() < 1e-12 {
        return (strike * df - s * dq).max(0.0);
    }
    let n = Normal::standard();
    let (d1, d2) = d1_d2(s, strike, tau, sigma, r, q);
    strike * df * n.cdf(-d2) - s * dq * n.cdf(-d1)
}

pub fn bms_call_price(s: f64, strike: f64, tau: f64, sigma: f64, r: f64, q: f64) -> f64 {
    let df = (-r * tau).exp();
    let dq = (-q * tau).exp();
    if sigma * tau.sqrt() < 1e-12 {
        return (s * dq - strike * df).max(0.0);
    }
    let n = Normal::standard();
    let (d1, d2) = d1_d2(s, strike, tau, sigma, r, q);
    s * dq * n.cdf(d1) - strike * df * n.cdf(d2)
}
