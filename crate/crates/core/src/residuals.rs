//! Residuals of the pricing equation, its initial and boundary conditions,
//! and the training loss assembled from them.
//!
//! In log-price `x = ln S` and time to maturity `τ` the European value
//! `w(x, τ)` satisfies, after splitting the jump integral at `ε`,
//!
//! ```text
//! ½σ²(ε) w_xx + ∫_{|y|>ε} [w(x+y) − w(x)] k(y) dy
//!     − w_τ + (r − q + ω(ε) − ½σ²(ε)) w_x − r w = 0
//! ```
//!
//! with `w(x, 0) = (K − eˣ)⁺` for a put. The loss of one sample is the sum
//! of the squared equation residual at `(x, τ)`, the initial residual at
//! `(x, 0)` and the two boundary residuals at `(x_min, τ)` and `(x_max, τ)`,
//! all with the sample's own parameters; a batch loss is the mean over its
//! samples.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adjoints, BatchOutput, EvalBatch, Jet};
use crate::error::{Error, Result};
use crate::network::{DropoutMasks, InputLayout, Mlp};
use crate::quadrature::{GridKind, QuadGrid};
use crate::vg_model::{LevySplit, VgParams};

/// One collocation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    pub tau: f64,
    pub params: VgParams,
}

/// A sample with its jump-split coefficients resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedSample {
    pub sample: Sample,
    pub split: LevySplit,
}

impl PreparedSample {
    pub fn new(sample: Sample, eps: f64) -> Result<Self> {
        Ok(Self {
            sample,
            split: LevySplit::new(&sample.params, eps)?,
        })
    }
}

/// Prepares a sample set, sharing the split between samples with equal
/// parameters.
pub fn prepare(samples: &[Sample], eps: f64) -> Result<Vec<PreparedSample>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut last: Option<(VgParams, LevySplit)> = None;
    for s in samples {
        let split = match last {
            Some((p, split)) if p == s.params => split,
            _ => {
                let split = LevySplit::new(&s.params, eps)?;
                last = Some((s.params, split));
                split
            }
        };
        out.push(PreparedSample { sample: *s, split });
    }
    Ok(out)
}

/// Truncated pricing domain and strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainBox {
    pub x_min: f64,
    pub x_max: f64,
    pub strike: f64,
}

impl Default for DomainBox {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 10_000f64.ln(),
            strike: 200.0,
        }
    }
}

impl DomainBox {
    pub fn validate(&self) -> Result<()> {
        let k = self.strike.ln();
        if !(self.strike > 0.0 && self.x_min < k && k < self.x_max) {
            return Err(Error::Config(format!(
                "need x_min < ln K < x_max, got {} < {} < {}",
                self.x_min, k, self.x_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    #[default]
    Put,
    Call,
}

impl OptionKind {
    pub fn payoff(self, x: f64, strike: f64) -> f64 {
        match self {
            OptionKind::Put => (strike - x.exp()).max(0.0),
            OptionKind::Call => (x.exp() - strike).max(0.0),
        }
    }
}

/// Which pricing equation the network is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    #[default]
    Vg,
    /// Black–Scholes, no jump integral.
    Bms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Dirichlet,
    /// `w_xx − w_x = 0` at both edges.
    Neumann,
}

/// Whether the gradient flows through the shifted values of the jump
/// integral (`Full`) or treats them as constants (`Fixed`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralMode {
    #[default]
    Full,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub pide: f64,
    pub init: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pide: 1.0,
            init: 1.0,
            lower: 1.0,
            upper: 1.0,
        }
    }
}

/// Everything about the equation being solved, independent of the network.
#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: DomainBox,
    pub option: OptionKind,
    pub equation: Equation,
    pub boundary: Boundary,
    pub integral: IntegralMode,
    pub weights: LossWeights,
    pub grid: QuadGrid,
}

impl Default for Problem {
    fn default() -> Self {
        Self {
            domain: DomainBox::default(),
            option: OptionKind::Put,
            equation: Equation::Vg,
            boundary: Boundary::Dirichlet,
            integral: IntegralMode::Full,
            weights: LossWeights::default(),
            grid: QuadGrid::build(),
        }
    }
}

impl Problem {
    pub fn with_grid(mut self, kind: GridKind) -> Self {
        self.grid = QuadGrid::of_kind(kind);
        self
    }

    /// Split radius implied by the grid.
    pub fn eps(&self) -> f64 {
        self.grid.eps()
    }

    fn shifts(&self) -> usize {
        match self.equation {
            Equation::Vg => self.grid.len(),
            Equation::Bms => 0,
        }
    }

    fn jets_per_sample(&self) -> usize {
        match self.boundary {
            Boundary::Dirichlet => 1,
            Boundary::Neumann => 3,
        }
    }
}

/// Squared residuals of one sample. Components are already multiplied by
/// their loss weights; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub pide_sq: f64,
    pub init_sq: f64,
    pub lower_sq: f64,
    pub upper_sq: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(pide_sq: f64, init_sq: f64, lower_sq: f64, upper_sq: f64) -> Self {
        Self {
            pide_sq,
            init_sq,
            lower_sq,
            upper_sq,
            total: pide_sq + init_sq + lower_sq + upper_sq,
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<(&'static str, f64)> {
        [
            ("pide", self.pide_sq),
            ("initial", self.init_sq),
            ("lower boundary", self.lower_sq),
            ("upper boundary", self.upper_sq),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown::new(
            sum(|b| b.pide_sq),
            sum(|b| b.init_sq),
            sum(|b| b.lower_sq),
            sum(|b| b.upper_sq),
        )
    }
}

/// Coefficients of the jet in the equation residual, which is linear in
/// `(w, w_x, w_xx, w_τ)` plus the integral term.
#[derive(Debug, Clone, Copy)]
struct JetCoefficients {
    w: f64,
    w_x: f64,
    w_xx: f64,
    w_tau: f64,
}

fn vg_coefficients(p: &VgParams, split: &LevySplit) -> JetCoefficients {
    JetCoefficients {
        w: -p.r,
        w_x: p.r - p.q + split.omega_eps - 0.5 * split.sigma2_eps,
        w_xx: 0.5 * split.sigma2_eps,
        w_tau: -1.0,
    }
}

fn bms_coefficients(p: &VgParams) -> JetCoefficients {
    let half_var = 0.5 * p.sigma * p.sigma;
    JetCoefficients {
        w: -p.r,
        w_x: p.r - p.q - half_var,
        w_xx: half_var,
        w_tau: -1.0,
    }
}

impl JetCoefficients {
    fn apply(&self, j: &Jet) -> f64 {
        self.w * j.w + self.w_x * j.w_x + self.w_xx * j.w_xx + self.w_tau * j.w_tau
    }
}

/// Equation residual at one sample:
/// `½σ²(ε)w_xx + outer − w_τ + (r − q + ω(ε) − ½σ²(ε))w_x − r w`.
pub fn pide_residual(s: &Sample, jet: &Jet, shifted_w: &[f64], split: &LevySplit, grid: &QuadGrid) -> Result<f64> {
    if (split.eps - grid.eps()).abs() > 1e-12 * grid.eps() {
        return Err(Error::Config(format!(
            "split radius {} does not match grid radius {}",
            split.eps,
            grid.eps()
        )));
    }
    let outer = grid.outer_integral(shifted_w, jet.w, &s.params)?;
    Ok(vg_coefficients(&s.params, split).apply(jet) + outer)
}

/// Black–Scholes residual `−w_τ + ½σ²w_xx + (r − q − ½σ²)w_x − r w`.
pub fn bms_residual(s: &Sample, jet: &Jet) -> f64 {
    bms_coefficients(&s.params).apply(jet)
}

/// `w(x, 0) − payoff(x)`.
pub fn initial_residual(w_at_tau0: f64, x: f64, strike: f64) -> f64 {
    w_at_tau0 - OptionKind::Put.payoff(x, strike)
}

/// Dirichlet targets `(w(x_min, τ), w(x_max, τ))`.
pub fn dirichlet_targets(tau: f64, p: &VgParams, domain: &DomainBox, option: OptionKind) -> (f64, f64) {
    let k = domain.strike;
    match option {
        OptionKind::Put => (k * (-p.r * tau).exp() - (domain.x_min - p.q * tau).exp(), 0.0),
        OptionKind::Call => (0.0, (domain.x_max - p.q * tau).exp() - k * (-p.r * tau).exp()),
    }
}

/// Put boundary residuals `(w(x_min) − (K e^{−rτ} − e^{x_min − qτ}), w(x_max))`.
pub fn dirichlet_residuals(w_lower: f64, w_upper: f64, tau: f64, p: &VgParams, domain: &DomainBox) -> (f64, f64) {
    let (lo, hi) = dirichlet_targets(tau, p, domain, OptionKind::Put);
    (w_lower - lo, w_upper - hi)
}

/// `(w_xx − w_x)` at the lower and upper edges.
pub fn neumann_residuals(lower: &Jet, upper: &Jet) -> (f64, f64) {
    (lower.w_xx - lower.w_x, upper.w_xx - upper.w_x)
}

/// Row layout of one assembled chunk.
///
/// Per sample the value rows are `[center, initial, lower, upper, shifts…]`;
/// the jet rows are the center and, with Neumann boundaries, the two edge
/// points.
pub(crate) struct Layout {
    pub batch: EvalBatch,
    rows_per_sample: usize,
    jets_per_sample: usize,
    shifts: usize,
}

const CENTER: usize = 0;
const INITIAL: usize = 1;
const LOWER: usize = 2;
const UPPER: usize = 3;
const FIRST_SHIFT: usize = 4;

pub(crate) fn assemble(samples: &[PreparedSample], problem: &Problem, input: InputLayout) -> Layout {
    let shifts = problem.shifts();
    let rows_per_sample = FIRST_SHIFT + shifts;
    let jets_per_sample = problem.jets_per_sample();
    let d = input.dim();
    let n = samples.len();
    let mut inputs = Array2::zeros((n * rows_per_sample, d));
    let mut jet_rows = Vec::with_capacity(n * jets_per_sample);
    let mut groups = Vec::with_capacity(n * rows_per_sample);
    let nodes = problem.grid.nodes();
    for (i, ps) in samples.iter().enumerate() {
        let s = &ps.sample;
        let base = i * rows_per_sample;
        let mut put = |row: usize, x: f64, tau: f64| {
            let mut r = inputs.row_mut(base + row);
            input.write(x, tau, &s.params, r.as_slice_mut().unwrap());
        };
        put(CENTER, s.x, s.tau);
        put(INITIAL, s.x, 0.0);
        put(LOWER, problem.domain.x_min, s.tau);
        put(UPPER, problem.domain.x_max, s.tau);
        for (j, y) in nodes.iter().take(shifts).enumerate() {
            put(FIRST_SHIFT + j, s.x + y, s.tau);
        }
        groups.extend(std::iter::repeat_n(i, rows_per_sample));
        jet_rows.push(base + CENTER);
        if problem.boundary == Boundary::Neumann {
            jet_rows.push(base + LOWER);
            jet_rows.push(base + UPPER);
        }
    }
    Layout {
        batch: EvalBatch {
            inputs,
            jet_rows,
            groups,
        },
        rows_per_sample,
        jets_per_sample,
        shifts,
    }
}

/// Residuals of every sample in the chunk and the adjoints of
/// `scale · Σ loss_i` with respect to the chunk's outputs.
pub(crate) fn breakdown_and_adjoints(
    samples: &[PreparedSample],
    problem: &Problem,
    layout: &Layout,
    out: &BatchOutput,
    scale: f64,
) -> (Vec<LossBreakdown>, Adjoints) {
    let mut adj = Adjoints::zeros(&layout.batch);
    let mut breakdowns = Vec::with_capacity(samples.len());
    let wt = &problem.weights;
    let mut kernel_w = vec![0.0; layout.shifts];
    for (i, ps) in samples.iter().enumerate() {
        let s = &ps.sample;
        let base = i * layout.rows_per_sample;
        let jbase = i * layout.jets_per_sample;
        let jet = out.jets[jbase];

        // equation residual
        let (coef, outer) = match problem.equation {
            Equation::Vg => {
                let kernel = s.params.kernel().expect("prepared samples have valid parameters");
                problem.grid.kernel_weights_into(&kernel, &mut kernel_w);
                let shifted = &out.values[base + FIRST_SHIFT..base + FIRST_SHIFT + layout.shifts];
                let outer: f64 = shifted.iter().zip(&kernel_w).map(|(w, k)| (w - jet.w) * k).sum();
                (vg_coefficients(&s.params, &ps.split), outer)
            }
            Equation::Bms => (bms_coefficients(&s.params), 0.0),
        };
        let r_pide = coef.apply(&jet) + outer;

        let r_init = out.values[base + INITIAL] - problem.option.payoff(s.x, problem.domain.strike);
        let (r_lower, r_upper) = match problem.boundary {
            Boundary::Dirichlet => {
                let (lo, hi) = dirichlet_targets(s.tau, &s.params, &problem.domain, problem.option);
                (out.values[base + LOWER] - lo, out.values[base + UPPER] - hi)
            }
            Boundary::Neumann => neumann_residuals(&out.jets[jbase + 1], &out.jets[jbase + 2]),
        };

        breakdowns.push(LossBreakdown::new(
            wt.pide * r_pide * r_pide,
            wt.init * r_init * r_init,
            wt.lower * r_lower * r_lower,
            wt.upper * r_upper * r_upper,
        ));

        // adjoints of scale·(weighted squares)
        let a_pide = 2.0 * scale * wt.pide * r_pide;
        let kernel_sum: f64 = kernel_w.iter().take(layout.shifts).sum();
        adj.values[base + CENTER] += a_pide * (coef.w - kernel_sum);
        adj.jets[jbase] = [a_pide * coef.w_x, a_pide * coef.w_tau, a_pide * coef.w_xx];
        if problem.integral == IntegralMode::Full {
            for (j, k) in kernel_w.iter().take(layout.shifts).enumerate() {
                adj.values[base + FIRST_SHIFT + j] = a_pide * k;
            }
        }
        adj.values[base + INITIAL] = 2.0 * scale * wt.init * r_init;
        let a_lo = 2.0 * scale * wt.lower * r_lower;
        let a_hi = 2.0 * scale * wt.upper * r_upper;
        match problem.boundary {
            Boundary::Dirichlet => {
                adj.values[base + LOWER] = a_lo;
                adj.values[base + UPPER] = a_hi;
            }
            Boundary::Neumann => {
                adj.jets[jbase + 1] = [-a_lo, 0.0, a_lo];
                adj.jets[jbase + 2] = [-a_hi, 0.0, a_hi];
            }
        }
    }
    (breakdowns, adj)
}

/// Batch-mean loss without gradients.
pub fn total_loss(
    net: &Mlp,
    samples: &[PreparedSample],
    problem: &Problem,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, Vec<LossBreakdown>)> {
    use rayon::prelude::*;
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let chunk = crate::autodiff::CHUNK_SAMPLES;
    let parts: Vec<Result<Vec<LossBreakdown>>> = samples
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, c)| {
            let sub = masks.map(|m| crate::autodiff::slice_masks(m, ci * chunk, c.len()));
            let layout = assemble(c, problem, net.config().input);
            let out = crate::autodiff::evaluate_batch(net, &layout.batch, sub.as_ref())?;
            Ok(breakdown_and_adjoints(c, problem, &layout, &out, 0.0).0)
        })
        .collect();
    let mut all = Vec::with_capacity(samples.len());
    for p in parts {
        all.extend(p?);
    }
    let loss = all.iter().map(|b| b.total).sum::<f64>() / samples.len() as f64;
    Ok((loss, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{InputLayout, MlpConfig};
    use approx::assert_relative_eq;

    const P: VgParams = VgParams::REFERENCE;

    fn sample(x: f64, tau: f64) -> Sample {
        Sample { x, tau, params: P }
    }

    fn split() -> LevySplit {
        LevySplit::new(&P, 0.01).unwrap()
    }

    #[test]
    fn zero_solution_has_zero_residual() {
        let g = QuadGrid::build();
        let r = pide_residual(&sample(5.0, 1.0), &Jet::default(), &vec![0.0; g.len()], &split(), &g).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn constant_solution_residual_is_minus_r_c() {
        let g = QuadGrid::build();
        let c = 17.0;
        let jet = Jet {
            w: c,
            ..Default::default()
        };
        let r = pide_residual(&sample(5.0, 1.0), &jet, &vec![c; g.len()], &split(), &g).unwrap();
        assert_relative_eq!(r, -P.r * c, max_relative = 1e-14);
    }

    #[test]
    fn split_must_match_grid() {
        let g = QuadGrid::build();
        let other = LevySplit::new(&P, 0.02).unwrap();
        assert!(pide_residual(&sample(5.0, 1.0), &Jet::default(), &vec![0.0; g.len()], &other, &g).is_err());
    }

    #[test]
    fn initial_targets() {
        let k: f64 = 200.0;
        assert!(initial_residual(0.0, k.ln(), k).abs() < 1e-12);
        assert_relative_eq!(-initial_residual(0.0, (k / 2.0).ln(), k), 100.0, max_relative = 1e-12);
        assert_eq!(initial_residual(0.0, (2.0 * k).ln(), k), 0.0);
    }

    #[test]
    fn dirichlet_targets_values() {
        let d = DomainBox::default();
        let (lo, hi) = dirichlet_targets(1.0, &P, &d, OptionKind::Put);
        // 200 e^{-0.05} − e^{-0.02}, mpmath
        assert_relative_eq!(lo, 189.26568622683605, max_relative = 1e-13);
        assert_eq!(hi, 0.0);
        let (lo0, _) = dirichlet_targets(0.0, &P, &d, OptionKind::Put);
        assert_eq!(lo0, 199.0);
        let (rl, ru) = dirichlet_residuals(0.0, 2.0, 1.0, &P, &d);
        assert_relative_eq!(rl, -lo);
        assert_eq!(ru, 2.0);
    }

    #[test]
    fn neumann_examples() {
        let flat = Jet {
            w: 3.0,
            ..Default::default()
        };
        assert_eq!(neumann_residuals(&flat, &flat), (0.0, 0.0));
        let x: f64 = 1.3;
        let exp = Jet {
            w: x.exp(),
            w_x: x.exp(),
            w_xx: x.exp(),
            w_tau: 0.0,
        };
        assert_eq!(neumann_residuals(&exp, &exp), (0.0, 0.0));
        // w = x² at x = 2
        let sq = Jet {
            w: 4.0,
            w_x: 4.0,
            w_xx: 2.0,
            w_tau: 0.0,
        };
        assert_eq!(neumann_residuals(&sq, &sq).0, -2.0);
    }

    #[test]
    fn bms_examples() {
        let s = Sample {
            x: 1.0,
            tau: 1.0,
            params: VgParams { q: 0.0, ..P },
        };
        let c = Jet {
            w: 4.0,
            ..Default::default()
        };
        assert_relative_eq!(bms_residual(&s, &c), -P.r * 4.0);
        let e = s.x.exp();
        let fwd = Jet {
            w: e,
            w_x: e,
            w_xx: e,
            w_tau: 0.0,
        };
        assert!(bms_residual(&s, &fwd).abs() < 1e-14);
    }

    #[test]
    fn zero_network_loss_decomposition() {
        let cfg = MlpConfig {
            input: InputLayout::Full,
            hidden_layers: 1,
            hidden_size: 3,
            ..Default::default()
        };
        let mut net = Mlp::init(&cfg).unwrap();
        for l in net.layers_mut() {
            l.w.fill(0.0);
        }
        let problem = Problem::default();
        let k: f64 = 200.0;
        let ps = PreparedSample::new(sample((2.0 * k).ln(), 1.0), problem.eps()).unwrap();
        let (loss, b) = total_loss(&net, &[ps], &problem, None).unwrap();
        let lo = k * (-P.r).exp() - (-P.q).exp();
        assert_eq!(b[0].pide_sq, 0.0);
        assert_eq!(b[0].init_sq, 0.0);
        assert_eq!(b[0].upper_sq, 0.0);
        assert_relative_eq!(b[0].lower_sq, lo * lo, max_relative = 1e-13);
        assert_relative_eq!(loss, lo * lo, max_relative = 1e-13);

        let (dup, _) = total_loss(&net, &[ps, ps], &problem, None).unwrap();
        assert_eq!(dup, loss);
    }

    #[test]
    fn prepare_reuses_split_for_equal_params() {
        let s = [sample(4.0, 1.0), sample(5.0, 2.0)];
        let p = prepare(&s, 0.01).unwrap();
        assert_eq!(p[0].split, p[1].split);
        assert_eq!(p[1].sample.x, 5.0);
    }
}
