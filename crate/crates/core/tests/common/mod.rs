//! Reference computations used only by tests. Kept deliberately naive and
//! independent from the library code paths.
#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;
use vg_pinn::VgParams;

/// Adaptive Simpson on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// VG put as a gamma mixture of Black–Scholes prices: conditional on the
/// clock `G = g` the log return is normal.
pub fn vg_put_by_mixture(s: f64, k: f64, tau: f64, p: &VgParams) -> f64 {
    let n = Normal::standard();
    let a = tau / p.nu;
    let omega = (1.0 - 0.5 * p.sigma * p.sigma * p.nu - p.theta * p.nu).ln() / p.nu;
    let conditional = |g: f64| {
        let m = s.ln() + (p.r - p.q + omega) * tau + p.theta * g;
        let sd = p.sigma * g.sqrt();
        if sd < 1e-300 {
            return (-p.r * tau).exp() * (k - m.exp()).max(0.0);
        }
        let d2 = (k.ln() - m) / sd;
        (-p.r * tau).exp() * (k * n.cdf(d2) - (m + 0.5 * sd * sd).exp() * n.cdf(d2 - sd))
    };
    let log_norm = -ln_gamma(a) - a * p.nu.ln();
    let g_max = p.nu * (a + 60.0 + 12.0 * a.sqrt());
    let pieces = 400;
    if a >= 1.0 {
        let density = |g: f64| if g <= 0.0 { 0.0 } else { (log_norm + (a - 1.0) * g.ln() - g / p.nu).exp() };
        let f = |g: f64| conditional(g) * density(g);
        let h = g_max / pieces as f64;
        return (0..pieces).map(|i| adaptive_simpson(&f, i as f64 * h, (i + 1) as f64 * h, 1e-13)).sum();
    }
    // substitute g = u^{1/a} to absorb the g^{a-1} singularity at zero
    let f = |u: f64| {
        let g = u.powf(1.0 / a);
        conditional(g) * (log_norm - g / p.nu).exp() / a
    };
    let h = g_max.powf(a) / pieces as f64;
    (0..pieces).map(|i| adaptive_simpson(&f, i as f64 * h, (i + 1) as f64 * h, 1e-13)).sum()
}

/// Fourth-order central difference, refined once by Richardson extrapolation.
pub fn derivative(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
    let (d1, d2) = (d(h), d(0.5 * h));
    d2 + (d2 - d1) / 15.0
}

/// Fourth-order central second difference, refined once by Richardson
/// extrapolation.
pub fn second_derivative(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| {
        (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h * h)
    };
    let (d1, d2) = (d(h), d(0.5 * h));
    d2 + (d2 - d1) / 15.0
}

/// Lévy density `k(y)`, written out from the tail rates.
pub fn levy_density(p: &VgParams, y: f64) -> f64 {
    let (lp, ln) = p.lambdas().unwrap();
    if y > 0.0 {
        (-lp * y).exp() / (p.nu * y)
    } else {
        (ln * y).exp() / (-p.nu * y)
    }
}

/// Adaptive Simpson with the tolerance set relative to a coarse estimate.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let peak = (0..=64).map(|i| f(a + (b - a) * i as f64 / 64.0).abs()).fold(1e-300, f64::max);
    let rough = adaptive_simpson(f, a, b, 1e-6 * (b - a) * peak);
    adaptive_simpson(f, a, b, rel * rough.abs().max(1e-300))
}

/// Halving pieces towards zero, so steep tails near the origin are resolved.
pub fn brute_sigma2(p: &VgParams, eps: f64) -> f64 {
    let f = |y: f64| y * y * levy_density(p, y);
    let g = |y: f64| f(-y);
    (0..60)
        .map(|i| {
            let (a, b) = (eps * 0.5f64.powi(i + 1), eps * 0.5f64.powi(i));
            integrate(&f, a, b, 1e-13) + integrate(&g, a, b, 1e-13)
        })
        .sum()
}

/// Geometric pieces from `eps` out to where the slower exponential is
/// negligible.
pub fn brute_omega(p: &VgParams, eps: f64) -> f64 {
    let (lp, ln) = p.lambdas().unwrap();
    let side = |decay: f64, f: &dyn Fn(f64) -> f64| {
        let y_max = 46.0 / decay;
        let mut a = eps;
        let mut total = 0.0;
        while a < y_max {
            let b = (2.0 * a).min(y_max);
            total += integrate(f, a, b, 1e-12);
            a = b;
        }
        total
    };
    let pos = |y: f64| -(y.exp_m1()) * levy_density(p, y);
    let neg = |y: f64| -((-y).exp_m1()) * levy_density(p, -y);
    side(lp - 1.0, &pos) + side(ln, &neg)
}

/// `C(1 − exp(−e^z/C))`: exponential well below `C`, flat well above.
pub struct Capped {
    pub cap: f64,
}

/// `e^{-v} − 1 + v` without cancellation near zero.
fn exp_remainder(v: f64) -> f64 {
    if v.abs() > 0.1 {
        return (-v).exp_m1() + v;
    }
    let (mut term, mut sum) = (0.5 * v * v, 0.0);
    for n in 3..20 {
        sum += term;
        term *= -v / n as f64;
    }
    sum
}

impl Capped {
    pub fn w(&self, z: f64) -> f64 {
        -self.cap * (-z.exp() / self.cap).exp_m1()
    }

    pub fn w_x(&self, z: f64) -> f64 {
        z.exp() * (-z.exp() / self.cap).exp()
    }

    pub fn w_xx(&self, z: f64) -> f64 {
        self.w_x(z) * (1.0 - z.exp() / self.cap)
    }

    /// `∫ [w(x+y) − w(x) − w_x(x)(e^y − 1)] k(y) dy` over the real line.
    pub fn jump_integral(&self, x: f64, p: &VgParams) -> f64 {
        // the bracket equals −C e^{−a} h(a(e^y − 1)) with a = e^x/C
        let a = x.exp() / self.cap;
        let g = |y: f64| {
            if y == 0.0 {
                0.0
            } else {
                -self.cap * (-a).exp() * exp_remainder(a * y.exp_m1()) * levy_density(p, y)
            }
        };
        let cuts = [-60.0, -4.0, -1.0, -0.1, 0.0, 0.1, 1.0, 4.0, 20.0];
        cuts.windows(2).map(|c| integrate(&g, c[0], c[1], 1e-10)).sum()
    }
}
