//! Variance-gamma Lévy model quantities.
//!
//! The VG process is Brownian motion with drift `theta` and volatility
//! `sigma` run on a gamma clock with unit mean rate and variance rate `nu`.
//! Its Lévy density is
//!
//! ```text
//! k(y) = exp(-λp·y) / (ν·y)      for y > 0
//!        exp(-λn·|y|) / (ν·|y|)  for y < 0
//! ```
//!
//! with `λp,n = sqrt(θ²/σ⁴ + 2/(σ²ν)) ∓ θ/σ²`.
//!
//! For the pricing equation the jump integral is split at a small radius
//! `eps`. Small jumps collapse into a diffusion-like coefficient `σ²(ε)`
//! and the compensator of the large jumps into a drift correction `ω(ε)`;
//! both live in [`LevySplit`].

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Model and market parameters of one pricing problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VgParams {
    /// Volatility of the subordinated Brownian motion.
    pub sigma: f64,
    /// Variance rate of the gamma time change, in years.
    pub nu: f64,
    /// Drift of the subordinated Brownian motion.
    pub theta: f64,
    /// Continuously compounded risk-free rate.
    pub r: f64,
    /// Continuous dividend yield.
    pub q: f64,
}

/// Parameter box the networks are trained over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamBox {
    pub sigma: (f64, f64),
    pub nu: (f64, f64),
    pub theta: (f64, f64),
    pub r: (f64, f64),
    pub q: (f64, f64),
}

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            sigma: (0.01, 0.5),
            nu: (0.1, 0.6),
            theta: (-0.5, -0.1),
            r: (0.0, 0.1),
            q: (0.0, 0.1),
        }
    }
}

impl ParamBox {
    pub fn contains(&self, p: &VgParams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(p.sigma, self.sigma)
            && inside(p.nu, self.nu)
            && inside(p.theta, self.theta)
            && inside(p.r, self.r)
            && inside(p.q, self.q)
    }
}

impl VgParams {
    /// The parameter set used for the published price and Greek curves:
    /// σ = 0.4, ν = 0.4, θ = −0.4, r = 0.05, q = 0.02.
    pub const REFERENCE: VgParams = VgParams {
        sigma: 0.4,
        nu: 0.4,
        theta: -0.4,
        r: 0.05,
        q: 0.02,
    };

    /// Builds a parameter set, rejecting values for which the model or the
    /// pricing equation is undefined.
    pub fn new(sigma: f64, nu: f64, theta: f64, r: f64, q: f64) -> Result<Self> {
        let p = Self {
            sigma,
            nu,
            theta,
            r,
            q,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma, self.nu, self.theta, self.r, self.q];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite parameter in {self:?}")));
        }
        if self.sigma <= 0.0 || self.nu <= 0.0 {
            return Err(domain(format!(
                "sigma and nu must be positive (sigma={}, nu={})",
                self.sigma, self.nu
            )));
        }
        if self.drift_log_argument() <= 0.0 {
            return Err(domain(format!(
                "1 - sigma^2 nu/2 - theta nu = {} is not positive",
                self.drift_log_argument()
            )));
        }
        let (lambda_p, _) = self.lambdas()?;
        if lambda_p <= 1.0 {
            return Err(domain(format!(
                "lambda_p = {lambda_p} <= 1: E[S_T] is infinite"
            )));
        }
        Ok(())
    }

    fn drift_log_argument(&self) -> f64 {
        1.0 - 0.5 * self.sigma * self.sigma * self.nu - self.theta * self.nu
    }

    /// Exponential decay rates `(λp, λn)` of the positive and negative jump
    /// tails.
    pub fn lambdas(&self) -> Result<(f64, f64)> {
        if !(self.sigma > 0.0 && self.nu > 0.0) {
            return Err(domain(format!(
                "lambdas need sigma > 0 and nu > 0 (sigma={}, nu={})",
                self.sigma, self.nu
            )));
        }
        let s2 = self.sigma * self.sigma;
        let root = (self.theta * self.theta / (s2 * s2) + 2.0 / (s2 * self.nu)).sqrt();
        let tilt = self.theta / s2;
        Ok((root - tilt, root + tilt))
    }

    /// Lévy density `k(y)`. Undefined at `y = 0`.
    pub fn levy_density(&self, y: f64) -> Result<f64> {
        if y == 0.0 || !y.is_finite() {
            return Err(domain(format!("levy density evaluated at y = {y}")));
        }
        Ok(self.kernel()?.density(y))
    }

    /// Martingale drift `ω = ln(1 − σ²ν/2 − θν)/ν`, which makes
    /// `e^{-(r-q)t} S(t)` a martingale.
    pub fn martingale_drift(&self) -> Result<f64> {
        let arg = self.drift_log_argument();
        if !(arg > 0.0) || !(self.nu > 0.0) {
            return Err(domain(format!(
                "martingale drift undefined: log argument {arg}, nu {}",
                self.nu
            )));
        }
        Ok(arg.ln() / self.nu)
    }

    /// Precomputed density for repeated evaluation.
    pub fn kernel(&self) -> Result<LevyKernel> {
        let (lambda_p, lambda_n) = self.lambdas()?;
        Ok(LevyKernel {
            lambda_p,
            lambda_n,
            nu: self.nu,
        })
    }
}

/// The VG Lévy density with its decay rates resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyKernel {
    pub lambda_p: f64,
    pub lambda_n: f64,
    pub nu: f64,
}

impl LevyKernel {
    /// `k(y)` for `y != 0`. Returns `+inf` at zero.
    #[inline]
    pub fn density(&self, y: f64) -> f64 {
        if y > 0.0 {
            (-self.lambda_p * y).exp() / (self.nu * y)
        } else {
            let a = -y;
            (-self.lambda_n * a).exp() / (self.nu * a)
        }
    }
}

/// Small-jump / large-jump decomposition of the jump integral at radius
/// `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevySplit {
    pub eps: f64,
    /// `∫_{|y|≤ε} y² k(y) dy`.
    pub sigma2_eps: f64,
    /// `∫_{|y|>ε} (1 − e^y) k(y) dy`.
    pub omega_eps: f64,
}

impl LevySplit {
    pub fn new(p: &VgParams, eps: f64) -> Result<Self> {
        Ok(Self {
            eps,
            sigma2_eps: sigma2_eps(p, eps)?,
            omega_eps: omega_eps(p, eps)?,
        })
    }
}

/// `σ²(ε) = ∫_{|y|≤ε} y² k(y) dy` in closed form.
///
/// On each side the integrand is `y·e^{-λy}/ν`, whose integral over
/// `[0, ε]` is `(1 − e^{-λε}(1 + λε))/(νλ²)`.
pub fn sigma2_eps(p: &VgParams, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(domain(format!("eps must be positive and finite, got {eps}")));
    }
    let (lambda_p, lambda_n) = p.lambdas()?;
    let side = |lambda: f64| {
        let u = lambda * eps;
        // 1 − e^{-u}(1+u), written to avoid cancellation for small u
        let m = -(-u).exp_m1() - u * (-u).exp();
        m / (lambda * lambda)
    };
    Ok((side(lambda_p) + side(lambda_n)) / p.nu)
}

/// Values below this are treated as zero when truncating the tails of the
/// `ω(ε)` integrand.
const OMEGA_TAIL_CUTOFF: f64 = 1e-12;
const OMEGA_REL_TOL: f64 = 1e-11;

/// `ω(ε) = ∫_{|y|>ε} (1 − e^y) k(y) dy` by quadrature.
///
/// After folding the negative half-line onto the positive one and
/// substituting `y = ε·e^s`, each side becomes
/// `(1/ν) ∫_0^{s_max} (e^{-a·y(s)} − e^{-b·y(s)}) ds`, a smooth integrand on a
/// finite interval. The tails are cut where `e^{-(λp−1)y}` and `e^{-λn·y}`
/// fall below 1e-12, and the composite trapezoid rule on the log-spaced grid
/// is refined (with Richardson extrapolation) until two successive
/// refinements agree to 1e-11 relative.
pub fn omega_eps(p: &VgParams, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(domain(format!("eps must be positive and finite, got {eps}")));
    }
    let (lambda_p, lambda_n) = p.lambdas()?;
    if lambda_p <= 1.0 {
        return Err(domain(format!(
            "omega(eps) diverges: lambda_p = {lambda_p} <= 1"
        )));
    }
    let cut = -OMEGA_TAIL_CUTOFF.ln();
    // y > 0: (1 − e^y) e^{-λp y} = e^{-λp y} − e^{-(λp−1) y}
    let positive = log_spaced_difference(lambda_p, lambda_p - 1.0, eps, cut / (lambda_p - 1.0));
    // y < 0 folded: (1 − e^{-y}) e^{-λn y} = e^{-λn y} − e^{-(λn+1) y}
    let negative = log_spaced_difference(lambda_n, lambda_n + 1.0, eps, cut / lambda_n);
    Ok((positive + negative) / p.nu)
}

/// `∫_ε^{y_max} (e^{-a y} − e^{-b y}) / y dy` via `y = ε e^s`.
fn log_spaced_difference(a: f64, b: f64, eps: f64, y_max: f64) -> f64 {
    if y_max <= eps {
        return 0.0;
    }
    let s_max = (y_max / eps).ln();
    let f = |s: f64| {
        let y = eps * s.exp();
        (-a * y).exp() - (-b * y).exp()
    };
    romberg(f, 0.0, s_max, OMEGA_REL_TOL, 24)
}

/// Romberg integration: composite trapezoid with successive interval
/// halving and Richardson extrapolation.
pub(crate) fn romberg(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, max_levels: usize) -> f64 {
    let mut prev: Vec<f64> = Vec::with_capacity(max_levels);
    let mut h = b - a;
    let mut trap = 0.5 * h * (f(a) + f(b));
    prev.push(trap);
    let mut panels = 1usize;
    for level in 1..max_levels {
        // add midpoints of the current panels
        let mut mid = 0.0;
        for i in 0..panels {
            mid += f(a + (i as f64 + 0.5) * h);
        }
        trap = 0.5 * trap + 0.5 * h * mid;
        h *= 0.5;
        panels *= 2;

        let mut row = Vec::with_capacity(level + 1);
        row.push(trap);
        let mut factor = 1.0;
        for k in 1..=level {
            factor *= 4.0;
            let improved = row[k - 1] + (row[k - 1] - prev[k - 1]) / (factor - 1.0);
            row.push(improved);
        }
        let best = row[level];
        let last = prev[level - 1];
        if level >= 4 && (best - last).abs() <= rel_tol * best.abs().max(f64::MIN_POSITIVE) {
            return best;
        }
        prev = row;
    }
    prev[prev.len() - 1]
}
