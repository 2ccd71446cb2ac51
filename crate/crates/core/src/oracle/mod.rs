//! Reference prices that do not involve the network: Carr–Madan FFT
//! pricing under VG, Monte Carlo through the gamma time change, and the
//! Black–Scholes closed form. Used for metrics and validation only.

mod bms;
pub mod fft;
mod monte_carlo;

pub use bms::{bms_call_price, bms_put_price};
pub use monte_carlo::{mc_put_call, mc_put_price, McResult};

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::residuals::{OptionKind, Sample};
use crate::vg_model::VgParams;

/// Characteristic function of the VG increment `X(t)`:
/// `E[e^{iuX(t)}] = (1 − iuθν + σ²νu²/2)^{−t/ν}`.
///
/// Defined through the principal logarithm, which is the analytic
/// continuation as long as the base keeps a positive real part.
pub fn vg_charfn(u: Complex64, t: f64, p: &VgParams) -> Result<Complex64> {
    let i = Complex64::i();
    let base = 1.0 - i * u * p.theta * p.nu + 0.5 * p.sigma * p.sigma * p.nu * u * u;
    if base.re <= 0.0 {
        return Err(domain(format!(
            "characteristic function base {base} leaves the right half-plane at u = {u}"
        )));
    }
    Ok((-(t / p.nu) * base.ln()).exp())
}

/// Settings of the Carr–Madan transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FftConfig {
    /// Number of FFT points, a power of two.
    pub points: usize,
    /// Spacing of the integration grid in frequency.
    pub eta: f64,
    /// Damping exponent applied to the call price in log-strike.
    pub alpha: f64,
}

impl Default for FftConfig {
    fn default() -> Self {
        Self {
            points: 1 << 14,
            eta: 0.25,
            alpha: 1.5,
        }
    }
}

impl FftConfig {
    /// Log-strike spacing `λ = 2π/(Nη)`.
    pub fn log_strike_step(&self) -> f64 {
        2.0 * PI / (self.points as f64 * self.eta)
    }

    fn check(&self, p: &VgParams) -> Result<()> {
        if !self.points.is_power_of_two() || self.points < 4 {
            return Err(Error::Config(format!("FFT size {} must be a power of two >= 4", self.points)));
        }
        if !(self.alpha > 0.0 && self.eta > 0.0) {
            return Err(Error::Config("FFT alpha and eta must be positive".into()));
        }
        let (lambda_p, _) = p.lambdas()?;
        if lambda_p <= 1.0 + self.alpha {
            return Err(Error::Config(format!(
                "damping alpha = {} needs E[S^(1+alpha)] finite, i.e. lambda_p = {lambda_p} > {}",
                self.alpha,
                1.0 + self.alpha
            )));
        }
        Ok(())
    }
}

/// Call prices per unit spot on an equidistant log-moneyness grid.
#[derive(Debug, Clone)]
pub struct CallCurve {
    /// `ln(K/S)` of the first node.
    pub k0: f64,
    pub dk: f64,
    pub calls: Vec<f64>,
    pub tau: f64,
    pub params: VgParams,
}

impl CallCurve {
    /// Carr–Madan transform centred at log-moneyness `k_center`, which falls
    /// exactly on node `N/2`.
    pub fn new(k_center: f64, tau: f64, p: &VgParams, cfg: &FftConfig) -> Result<Self> {
        cfg.check(p)?;
        if !(tau > 0.0) {
            return Err(domain(format!("tau must be positive, got {tau}")));
        }
        let n = cfg.points;
        let alpha = cfg.alpha;
        let dk = cfg.log_strike_step();
        let k0 = k_center - (n / 2) as f64 * dk;
        let drift = (p.r - p.q + p.martingale_drift()?) * tau;
        let discount = (-p.r * tau).exp();
        let i = Complex64::i();

        let mut data = Vec::with_capacity(n);
        for j in 0..n {
            let v = j as f64 * cfg.eta;
            let u = Complex64::new(v, -(alpha + 1.0));
            let phi = (i * u * drift).exp() * vg_charfn(u, tau, p)?;
            let denom = Complex64::new(alpha * alpha + alpha - v * v, (2.0 * alpha + 1.0) * v);
            let psi = discount * phi / denom;
            let simpson = (3.0 + if j % 2 == 0 { -1.0 } else { 1.0 } - if j == 0 { 1.0 } else { 0.0 }) / 3.0;
            data.push(Complex64::from_polar(1.0, -v * k0) * psi * cfg.eta * simpson);
        }
        fft::fft_in_place(&mut data)?;
        let calls = data
            .iter()
            .enumerate()
            .map(|(u, x)| (-alpha * (k0 + u as f64 * dk)).exp() / PI * x.re)
            .collect();
        Ok(Self {
            k0,
            dk,
            calls,
            tau,
            params: *p,
        })
    }

    /// Call price per unit spot at log-moneyness `k`, by four-point cubic
    /// Lagrange interpolation.
    pub fn call_at(&self, k: f64) -> Result<f64> {
        let t = (k - self.k0) / self.dk;
        let n = self.calls.len();
        if !(t >= 1.0 && t <= (n - 3) as f64) {
            return Err(domain(format!("log-moneyness {k} outside the FFT grid")));
        }
        let i = (t.floor() as usize).min(n - 3);
        let f = t - i as f64;
        if f == 0.0 {
            return Ok(self.calls[i]);
        }
        let y = &self.calls[i - 1..i + 3];
        let w = [
            -f * (f - 1.0) * (f - 2.0) / 6.0,
            (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
            -(f + 1.0) * f * (f - 2.0) / 2.0,
            (f + 1.0) * f * (f - 1.0) / 6.0,
        ];
        Ok(y.iter().zip(w).map(|(a, b)| a * b).sum())
    }

    /// Put price for spot `s` and strike `k`, by put–call parity, floored
    /// at the no-arbitrage lower bound.
    pub fn put(&self, s: f64, strike: f64) -> Result<f64> {
        let p = &self.params;
        let call = s * self.call_at((strike / s).ln())?;
        let fwd_gap = strike * (-p.r * self.tau).exp() - s * (-p.q * self.tau).exp();
        Ok((call + fwd_gap).max(fwd_gap.max(0.0)))
    }

    pub fn call(&self, s: f64, strike: f64) -> Result<f64> {
        Ok((s * self.call_at((strike / s).ln())?).max(0.0))
    }
}

/// European call by Carr–Madan FFT.
pub fn fft_call_price(s: f64, strike: f64, tau: f64, p: &VgParams, cfg: &FftConfig) -> Result<f64> {
    check_spot_strike(s, strike)?;
    CallCurve::new((strike / s).ln(), tau, p, cfg)?.call(s, strike)
}

/// European put by Carr–Madan FFT and put–call parity.
pub fn fft_put_price(s: f64, strike: f64, tau: f64, p: &VgParams, cfg: &FftConfig) -> Result<f64> {
    check_spot_strike(s, strike)?;
    CallCurve::new((strike / s).ln(), tau, p, cfg)?.put(s, strike)
}

/// Put prices at many spots sharing one maturity, from a single transform.
pub fn fft_put_curve(spots: &[f64], strike: f64, tau: f64, p: &VgParams, cfg: &FftConfig) -> Result<Vec<f64>> {
    let curve = CallCurve::new(0.0, tau, p, cfg)?;
    spots
        .iter()
        .map(|&s| {
            check_spot_strike(s, strike)?;
            curve.put(s, strike)
        })
        .collect()
}

/// FFT prices at `S = e^x` for every sample, each with its own `τ` and
/// parameters.
pub fn fft_prices(samples: &[Sample], strike: f64, kind: OptionKind, cfg: &FftConfig) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| match kind {
            OptionKind::Put => fft_put_price(s.x.exp(), strike, s.tau, &s.params, cfg),
            OptionKind::Call => fft_call_price(s.x.exp(), strike, s.tau, &s.params, cfg),
        })
        .collect()
}

fn check_spot_strike(s: f64, strike: f64) -> Result<()> {
    if !(s > 0.0 && strike > 0.0) {
        return Err(domain(format!("spot {s} and strike {strike} must be positive")));
    }
    Ok(())
}
