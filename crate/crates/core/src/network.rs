//! Multilayer perceptron approximating the option value `w(x, τ; ξ)`.
//!
//! ```text
//! x⁽⁰⁾ = input
//! x⁽ⁱ⁾ = g(W⁽ⁱ⁻¹⁾ x⁽ⁱ⁻¹⁾ + b⁽ⁱ⁻¹⁾)   1 ≤ i ≤ L
//! y    = W⁽ᴸ⁾ x⁽ᴸ⁾ + b⁽ᴸ⁾
//! ```
//!
//! All hidden layers share one width `N`. Activations are smooth (SiLU or
//! softplus) because the pricing equation needs second derivatives of the
//! network with respect to its inputs.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::vg_model::VgParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Softplus,
}

/// Value and first three derivatives of an activation at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationDerivs {
    pub g: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z * sigmoid(z),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    /// `(g, g', g'')`.
    pub fn value_d1_d2(self, z: f64) -> (f64, f64, f64) {
        let d = self.derivs(z);
        (d.g, d.d1, d.d2)
    }

    #[inline]
    pub fn derivs(self, z: f64) -> ActivationDerivs {
        let s = sigmoid(z);
        let ds = s * (1.0 - s);
        let t = 1.0 - 2.0 * s;
        match self {
            Activation::Silu => ActivationDerivs {
                g: z * s,
                d1: s + z * ds,
                d2: ds * (2.0 + z * t),
                d3: ds * (t * (3.0 + z * t) - 2.0 * z * ds),
            },
            Activation::Softplus => ActivationDerivs {
                g: z.max(0.0) + (-z.abs()).exp().ln_1p(),
                d1: s,
                d2: ds,
                d3: ds * t,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    HeNormal,
    HeUniform,
    LecunNormal,
    LecunUniform,
    GlorotNormal,
    GlorotUniform,
}

/// Standard deviation of a standard normal truncated to ±2.
const TRUNCATED_STD: f64 = 0.879_625_661_034_239_8;

impl InitScheme {
    /// Target weight variance for a layer with the given fan-in/out.
    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::HeNormal | InitScheme::HeUniform => 2.0 / fan_in as f64,
            InitScheme::LecunNormal | InitScheme::LecunUniform => 1.0 / fan_in as f64,
            InitScheme::GlorotNormal | InitScheme::GlorotUniform => {
                2.0 / (fan_in + fan_out) as f64
            }
        }
    }

    fn is_normal(self) -> bool {
        matches!(
            self,
            InitScheme::HeNormal | InitScheme::LecunNormal | InitScheme::GlorotNormal
        )
    }

    fn sample<R: Rng>(self, var: f64, rng: &mut R) -> f64 {
        if self.is_normal() {
            // truncate at two standard deviations, rescaled so the
            // truncated draw has the target variance
            let std = var.sqrt() / TRUNCATED_STD;
            loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    return z * std;
                }
            }
        } else {
            let limit = (3.0 * var).sqrt();
            rng.random_range(-limit..=limit)
        }
    }
}

/// Which features the network sees, in order. `x` and `τ` are always the
/// first two coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLayout {
    /// `(x, τ, σ, ν, θ, r, q)`.
    #[default]
    Full,
    /// `(x, τ)` with the model parameters held fixed.
    XTau,
    /// `(x, τ, σ, r, q)` for the Black–Scholes equation.
    Bms,
}

impl InputLayout {
    pub fn dim(self) -> usize {
        match self {
            InputLayout::Full => 7,
            InputLayout::XTau => 2,
            InputLayout::Bms => 5,
        }
    }

    #[inline]
    pub fn write(self, x: f64, tau: f64, p: &VgParams, out: &mut [f64]) {
        out[0] = x;
        out[1] = tau;
        match self {
            InputLayout::Full => {
                out[2] = p.sigma;
                out[3] = p.nu;
                out[4] = p.theta;
                out[5] = p.r;
                out[6] = p.q;
            }
            InputLayout::XTau => {}
            InputLayout::Bms => {
                out[2] = p.sigma;
                out[3] = p.r;
                out[4] = p.q;
            }
        }
    }

    pub fn features(self, x: f64, tau: f64, p: &VgParams) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.write(x, tau, p, &mut v);
        v
    }
}

/// Fixed affine maps around the trainable layers: `x` and `τ` enter as
/// `(x − x_center)/x_scale` and `(τ − tau_center)/tau_scale`, and the last
/// layer's output is multiplied by `output`. Not trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub x_center: f64,
    pub x_scale: f64,
    pub tau_center: f64,
    pub tau_scale: f64,
    pub output: f64,
}

impl Scaling {
    /// Maps `[x_lo, x_hi]` and `[0, tau_max]` onto `[-1, 1]`.
    pub fn from_ranges(x: (f64, f64), tau_max: f64, output: f64) -> Self {
        Self {
            x_center: 0.5 * (x.0 + x.1),
            x_scale: 0.5 * (x.1 - x.0),
            tau_center: 0.5 * tau_max,
            tau_scale: 0.5 * tau_max,
            output,
        }
    }

    #[inline]
    pub fn apply(&self, features: &mut [f64]) {
        features[0] = (features[0] - self.x_center) / self.x_scale;
        features[1] = (features[1] - self.tau_center) / self.tau_scale;
    }

    fn validate(&self) -> Result<()> {
        let all = [self.x_center, self.x_scale, self.tau_center, self.tau_scale, self.output];
        if all.iter().any(|v| !v.is_finite()) || self.x_scale <= 0.0 || self.tau_scale <= 0.0 || self.output <= 0.0 {
            return Err(Error::Config(format!("invalid scaling {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub input: InputLayout,
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub activation: Activation,
    pub init: InitScheme,
    pub dropout_rate: f64,
    pub seed: u64,
    pub scaling: Option<Scaling>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            input: InputLayout::Full,
            hidden_layers: 3,
            hidden_size: 200,
            activation: Activation::Silu,
            init: InitScheme::HeNormal,
            dropout_rate: 0.0,
            seed: 0,
            scaling: None,
        }
    }
}

impl MlpConfig {
    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sc) = &self.scaling {
            sc.validate()?;
        }
        if self.hidden_layers < 1 || self.hidden_size < 1 {
            return Err(Error::Config(format!(
                "need at least one hidden layer of width >= 1 (L={}, N={})",
                self.hidden_layers, self.hidden_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(rows, cols)` of every weight matrix, input layer first.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let n = self.hidden_size;
        let mut s = vec![(n, self.input_dim())];
        s.extend(std::iter::repeat_n((n, n), self.hidden_layers - 1));
        s.push((1, n));
        s
    }
}

/// One affine map `W·h + b`; `w` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Dense>,
}

impl Mlp {
    /// Draws a network from `cfg.init`; biases start at zero. Deterministic
    /// in `cfg.seed`.
    pub fn init(cfg: &MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, Stream::Init, 0);
        let layers = cfg
            .shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let var = cfg.init.variance(cols, rows);
                let w = Array2::from_shape_simple_fn((rows, cols), || cfg.init.sample(var, &mut rng));
                Dense {
                    w,
                    b: Array1::zeros(rows),
                }
            })
            .collect();
        Ok(Self {
            config: *cfg,
            layers,
        })
    }

    /// Assembles a network from explicit layers, checking the shape chain.
    pub fn from_layers(config: MlpConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if shapes.len() != layers.len() {
            return Err(Error::DimensionMismatch {
                expected: shapes.len(),
                got: layers.len(),
            });
        }
        for (&(rows, cols), layer) in shapes.iter().zip(&layers) {
            if layer.w.dim() != (rows, cols) || layer.b.len() != rows {
                return Err(Error::Checkpoint(format!(
                    "layer shape {:?}/{} does not match expected ({rows}, {cols})",
                    layer.w.dim(),
                    layer.b.len()
                )));
            }
            if layer.w.iter().chain(layer.b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint("non-finite parameter".into()));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn activation(&self) -> Activation {
        self.config.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn hidden_layers(&self) -> usize {
        self.config.hidden_layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameter tensors in a fixed order: `W⁽⁰⁾, b⁽⁰⁾, W⁽¹⁾, b⁽¹⁾, …`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Dense { w, b } = l;
                [w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()]
            })
            .collect()
    }

    /// Evaluates the network at one input. With `masks`, hidden activations
    /// are multiplied by the (already rescaled) mask of their layer.
    pub fn forward(&self, input: &[f64], masks: Option<&[Array1<f64>]>) -> Result<f64> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        if let Some(m) = masks {
            check_masks(self, m)?;
        }
        let act = self.activation();
        let mut h = Array1::from(input.to_vec());
        if let Some(sc) = &self.config.scaling {
            sc.apply(h.as_slice_mut().expect("contiguous"));
        }
        let out_scale = self.config.scaling.map_or(1.0, |sc| sc.output);
        let hidden = self.hidden_layers();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&h) + &layer.b;
            if i == hidden {
                return Ok(out_scale * z[0]);
            }
            z.mapv_inplace(|v| act.value(v));
            if let Some(m) = masks {
                z *= &m[i];
            }
            h = z;
        }
        unreachable!("output layer always returns")
    }
}

fn check_masks(net: &Mlp, masks: &[Array1<f64>]) -> Result<()> {
    if masks.len() != net.hidden_layers() {
        return Err(Error::DimensionMismatch {
            expected: net.hidden_layers(),
            got: masks.len(),
        });
    }
    for m in masks {
        if m.len() != net.hidden_size() {
            return Err(Error::DimensionMismatch {
                expected: net.hidden_size(),
                got: m.len(),
            });
        }
    }
    Ok(())
}

/// Inverted-dropout masks for a group of samples: one `(samples × N)` matrix
/// per hidden layer with entries `0` or `1/(1 − rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub layers: Vec<Array2<f64>>,
}

impl DropoutMasks {
    pub fn sample<R: Rng>(net: &Mlp, samples: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let layers = (0..net.hidden_layers())
            .map(|_| {
                Array2::from_shape_simple_fn((samples, net.hidden_size()), || {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
            })
            .collect();
        Self { layers }
    }

    /// Masks of one sample, in the per-layer form [`Mlp::forward`] takes.
    pub fn for_sample(&self, s: usize) -> Vec<Array1<f64>> {
        self.layers.iter().map(|m| m.row(s).to_owned()).collect()
    }

    pub fn samples(&self) -> usize {
        self.layers.first().map_or(0, |m| m.nrows())
    }
}
