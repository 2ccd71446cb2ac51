//! Delta, gamma and theta of a trained network and of the FFT oracle, and
//! CSV export of price and Greek curves across spot.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jet_forward, Jet};
use crate::error::{domain, Error, Result};
use crate::network::Mlp;
use crate::oracle::{CallCurve, FftConfig};
use crate::vg_model::VgParams;

pub const CURVES_FORMAT: &str = "# vg-pinn curves v1";

pub const CURVE_COLUMNS: [&str; 9] = [
    "S",
    "price_net",
    "price_fft",
    "delta_net",
    "delta_fft",
    "gamma_net",
    "gamma_fft",
    "theta_net",
    "theta_fft",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreekPoint {
    pub s: f64,
    pub price: f64,
    pub delta: f64,
    pub gamma: f64,
    pub theta: f64,
}

/// Greeks in spot from derivatives in log-spot: `Δ = w_x/S`,
/// `Γ = (w_xx − w_x)/S²`, `Θ = −w_τ`.
pub fn greeks_from_jet(s: f64, jet: &Jet) -> GreekPoint {
    GreekPoint {
        s,
        price: jet.w,
        delta: jet.w_x / s,
        gamma: (jet.w_xx - jet.w_x) / (s * s),
        theta: -jet.w_tau,
    }
}

pub fn greeks(net: &Mlp, s: f64, tau: f64, p: &VgParams) -> Result<GreekPoint> {
    if !(s > 0.0) {
        return Err(domain(format!("spot must be positive, got {s}")));
    }
    let input = net.config().input.features(s.ln(), tau, p);
    Ok(greeks_from_jet(s, &jet_forward(net, &input, None)?))
}

/// FFT prices with Greeks by central differences: in spot for Δ and Γ, in
/// maturity for Θ.
pub struct FftGreeks {
    strike: f64,
    tau: f64,
    h_tau: f64,
    now: CallCurve,
    earlier: CallCurve,
    later: CallCurve,
}

impl FftGreeks {
    pub fn new(strike: f64, tau: f64, p: &VgParams, cfg: &FftConfig) -> Result<Self> {
        let h_tau = 1e-3 * tau.min(1.0);
        Ok(Self {
            strike,
            tau,
            h_tau,
            now: CallCurve::new(0.0, tau, p, cfg)?,
            earlier: CallCurve::new(0.0, tau - h_tau, p, cfg)?,
            later: CallCurve::new(0.0, tau + h_tau, p, cfg)?,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn at(&self, s: f64) -> Result<GreekPoint> {
        let k = self.strike;
        let h = 1e-2 * s;
        let (lo, mid, hi) = (self.now.put(s - h, k)?, self.now.put(s, k)?, self.now.put(s + h, k)?);
        let theta = -(self.later.put(s, k)? - self.earlier.put(s, k)?) / (2.0 * self.h_tau);
        Ok(GreekPoint {
            s,
            price: mid,
            delta: (hi - lo) / (2.0 * h),
            gamma: (hi - 2.0 * mid + lo) / (h * h),
            theta,
        })
    }
}

/// The parameter sets of the two published curve figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig6,
    Fig7,
}

impl Preset {
    pub fn spec(self) -> CurveSpec {
        let tau = match self {
            Preset::Fig6 => 1.0,
            Preset::Fig7 => 3.0,
        };
        CurveSpec {
            params: VgParams::REFERENCE,
            tau,
            strike: 200.0,
            spots: linspace(100.0, 400.0, 61),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig6" => Ok(Preset::Fig6),
            "fig7" => Ok(Preset::Fig7),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected fig6 or fig7)"))),
        }
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub params: VgParams,
    pub tau: f64,
    pub strike: f64,
    pub spots: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub net: GreekPoint,
    pub fft: GreekPoint,
}

pub fn curves(net: &Mlp, spec: &CurveSpec, cfg: &FftConfig) -> Result<Vec<CurveRow>> {
    let k = spec.strike;
    if let Some(s) = spec.spots.iter().find(|&&s| !(s >= 0.5 * k && s <= 2.0 * k)) {
        return Err(domain(format!("spot {s} outside [K/2, 2K]")));
    }
    let oracle = FftGreeks::new(k, spec.tau, &spec.params, cfg)?;
    spec.spots
        .par_iter()
        .map(|&s| {
            Ok(CurveRow {
                net: greeks(net, s, spec.tau, &spec.params)?,
                fft: oracle.at(s)?,
            })
        })
        .collect()
}

/// Writes the nine-column curve CSV, preceded by a format comment line.
pub fn write_curves<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{CURVES_FORMAT}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_COLUMNS)?;
    for r in rows {
        let vals = [
            r.net.s,
            r.net.price,
            r.fft.price,
            r.net.delta,
            r.fft.delta,
            r.net.gamma,
            r.fft.gamma,
            r.net.theta,
            r.fft.theta,
        ];
        w.write_record(vals.iter().map(|v| format!("{v:.10e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_curves(net: &Mlp, spec: &CurveSpec, cfg: &FftConfig, path: &Path) -> Result<Vec<CurveRow>> {
    let rows = curves(net, spec, cfg)?;
    write_curves(std::io::BufWriter::new(std::fs::File::create(path)?), &rows)?;
    Ok(rows)
}
