//! Input derivatives of the network and parameter gradients of losses built
//! from them.
//!
//! The pricing equation needs `w`, `∂w/∂x`, `∂²w/∂x²` and `∂w/∂τ` at each
//! sample. These are carried forward through the layers as a second-order
//! Taylor jet in `(x, τ)`: besides the value channel every jet point owns an
//! x-tangent, a τ-tangent and an xx-tangent row. For a hidden layer with
//! pre-activation `z = W h + b`:
//!
//! ```text
//! z_x  = W h_x      h'_x  = g'(z) z_x
//! z_t  = W h_t      h'_t  = g'(z) z_t
//! z_xx = W h_xx     h'_xx = g''(z) z_x² + g'(z) z_xx
//! ```
//!
//! Every channel goes through the same linear map, so value rows and
//! tangent rows are stacked into one matrix and each layer costs a single
//! matrix product. Parameter gradients come from a reverse sweep over this
//! augmented forward pass, which needs `g'''` for the xx channel.
//!
//! Nothing here keeps global state; a [`Tape`] is per-evaluation scratch.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{DropoutMasks, Mlp};
use crate::residuals::{self, LossBreakdown, PreparedSample, Problem};

/// A function value with the input derivatives the pricing equation uses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub w: f64,
    pub w_x: f64,
    pub w_xx: f64,
    pub w_tau: f64,
}

impl Jet {
    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.w_x.is_finite() && self.w_xx.is_finite() && self.w_tau.is_finite()
    }
}

/// Gradient of a scalar with respect to every network parameter, shaped
/// like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl ParamGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net.layers().iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers().iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    /// Same ordering as [`Mlp::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.w
            .iter()
            .zip(&self.b)
            .flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
            .collect()
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.w {
            *a *= c;
        }
        for a in &mut self.b {
            *a *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A set of evaluation points. Rows of `inputs` are value points; the rows
/// listed in `jet_rows` additionally carry derivatives in `x` (input 0) and
/// `τ` (input 1). `groups[row]` selects the dropout-mask row of each point.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    pub inputs: Array2<f64>,
    pub jet_rows: Vec<usize>,
    pub groups: Vec<usize>,
}

impl EvalBatch {
    pub fn values(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn jets(&self) -> usize {
        self.jet_rows.len()
    }
}

/// Forward outputs of a batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub values: Vec<f64>,
    /// One jet per entry of `jet_rows`; `w` repeats the value row.
    pub jets: Vec<Jet>,
}

/// Adjoints of a scalar with respect to the batch outputs.
#[derive(Debug, Clone)]
pub struct Adjoints {
    pub values: Vec<f64>,
    /// Per jet point: `(∂/∂w_x, ∂/∂w_tau, ∂/∂w_xx)`. The `w` adjoint of a jet
    /// point lives in `values`.
    pub jets: Vec<[f64; 3]>,
}

impl Adjoints {
    pub fn zeros(batch: &EvalBatch) -> Self {
        Self {
            values: vec![0.0; batch.values()],
            jets: vec![[0.0; 3]; batch.jets()],
        }
    }
}

struct LayerTape {
    /// Input to the layer, all channels stacked: `P + 3C` rows.
    input: Array2<f64>,
    /// Pre-activations, same stacking.
    z: Array2<f64>,
    /// `g'(z)` on value rows.
    d1: Array2<f64>,
    /// `g''(z)` and `g'''(z)` on jet rows.
    d2: Array2<f64>,
    d3: Array2<f64>,
}

/// Intermediate state of a forward pass, consumed by [`backward`].
pub struct Tape {
    layers: Vec<LayerTape>,
    /// Input to the output layer.
    last: Array2<f64>,
}

/// Stacks value rows and the three tangent channels of the input layer.
fn input_channels(net: &Mlp, batch: &EvalBatch) -> Array2<f64> {
    let p = batch.values();
    let c = batch.jets();
    let d = batch.inputs.ncols();
    let mut h = Array2::zeros((p + 3 * c, d));
    h.slice_mut(s![..p, ..]).assign(&batch.inputs);
    let (mut dx, mut dt) = (1.0, 1.0);
    if let Some(sc) = &net.config().scaling {
        for mut row in h.slice_mut(s![..p, ..]).outer_iter_mut() {
            sc.apply(row.as_slice_mut().expect("standard layout"));
        }
        dx = 1.0 / sc.x_scale;
        dt = 1.0 / sc.tau_scale;
    }
    for k in 0..c {
        h[[p + k, 0]] = dx;
        h[[p + c + k, 1]] = dt;
    }
    h
}

fn check_batch(net: &Mlp, batch: &EvalBatch, masks: Option<&DropoutMasks>) -> Result<()> {
    if batch.inputs.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: batch.inputs.ncols(),
        });
    }
    if batch.groups.len() != batch.values() {
        return Err(Error::DimensionMismatch {
            expected: batch.values(),
            got: batch.groups.len(),
        });
    }
    if let Some(&r) = batch.jet_rows.iter().find(|&&r| r >= batch.values()) {
        return Err(Error::DimensionMismatch {
            expected: batch.values(),
            got: r,
        });
    }
    if let Some(m) = masks {
        if m.layers.len() != net.hidden_layers() {
            return Err(Error::DimensionMismatch {
                expected: net.hidden_layers(),
                got: m.layers.len(),
            });
        }
        let groups = batch.groups.iter().copied().max().map_or(0, |g| g + 1);
        if m.samples() < groups {
            return Err(Error::DimensionMismatch {
                expected: groups,
                got: m.samples(),
            });
        }
    }
    Ok(())
}

#[inline]
fn mask_row<'a>(masks: Option<&'a DropoutMasks>, layer: usize, group: usize) -> Option<ArrayView1<'a, f64>> {
    masks.map(|m| m.layers[layer].row(group))
}

/// Runs the batch forward, keeping what the reverse sweep needs.
pub fn forward_tape(net: &Mlp, batch: &EvalBatch, masks: Option<&DropoutMasks>) -> Result<(BatchOutput, Tape)> {
    check_batch(net, batch, masks)?;
    let p = batch.values();
    let c = batch.jets();
    let act = net.activation();
    let hidden = net.hidden_layers();
    let n = net.hidden_size();

    let mut h = input_channels(net, batch);
    let mut tapes = Vec::with_capacity(hidden);
    for (li, layer) in net.layers()[..hidden].iter().enumerate() {
        let mut z = h.dot(&layer.w.t());
        z.slice_mut(s![..p, ..]).outer_iter_mut().for_each(|mut row| row += &layer.b);

        let mut out = Array2::zeros((p + 3 * c, n));
        let mut d1 = Array2::zeros((p, n));
        let mut d2 = Array2::zeros((c, n));
        let mut d3 = Array2::zeros((c, n));
        for r in 0..p {
            let zr = z.row(r);
            let mut or = out.row_mut(r);
            let mut dr = d1.row_mut(r);
            for j in 0..n {
                let zz = zr[j];
                let s = crate::network::sigmoid(zz);
                let (g, g1) = match act {
                    crate::network::Activation::Silu => (zz * s, s + zz * s * (1.0 - s)),
                    crate::network::Activation::Softplus => (act.value(zz), s),
                };
                or[j] = g;
                dr[j] = g1;
            }
            if let Some(m) = mask_row(masks, li, batch.groups[r]) {
                or *= &m;
            }
        }
        for (k, &r) in batch.jet_rows.iter().enumerate() {
            for j in 0..n {
                let d = act.derivs(z[[r, j]]);
                d2[[k, j]] = d.d2;
                d3[[k, j]] = d.d3;
                let g1 = d1[[r, j]];
                let zx = z[[p + k, j]];
                out[[p + k, j]] = g1 * zx;
                out[[p + c + k, j]] = g1 * z[[p + c + k, j]];
                out[[p + 2 * c + k, j]] = d.d2 * zx * zx + g1 * z[[p + 2 * c + k, j]];
            }
            if let Some(m) = mask_row(masks, li, batch.groups[r]) {
                for ch in 1..=3 {
                    let mut row = out.row_mut(p + (ch - 1) * c + k);
                    row *= &m;
                }
            }
        }
        tapes.push(LayerTape {
            input: h,
            z,
            d1,
            d2,
            d3,
        });
        h = out;
    }

    let last_layer = &net.layers()[hidden];
    let out_scale = net.config().scaling.map_or(1.0, |sc| sc.output);
    let y = h.dot(&last_layer.w.row(0)) * out_scale;
    let b = out_scale * last_layer.b[0];
    let values: Vec<f64> = y.slice(s![..p]).iter().map(|v| v + b).collect();
    let jets = batch
        .jet_rows
        .iter()
        .enumerate()
        .map(|(k, &r)| Jet {
            w: values[r],
            w_x: y[p + k],
            w_tau: y[p + c + k],
            w_xx: y[p + 2 * c + k],
        })
        .collect();
    Ok((BatchOutput { values, jets }, Tape { layers: tapes, last: h }))
}

/// Forward pass without keeping intermediates.
pub fn evaluate_batch(net: &Mlp, batch: &EvalBatch, masks: Option<&DropoutMasks>) -> Result<BatchOutput> {
    forward_tape(net, batch, masks).map(|(out, _)| out)
}

/// Reverse sweep: accumulates into `grads` the gradient of
/// `Σ adj·output` with respect to every parameter.
pub fn backward(
    net: &Mlp,
    batch: &EvalBatch,
    masks: Option<&DropoutMasks>,
    tape: &Tape,
    adj: &Adjoints,
    grads: &mut ParamGrad,
) -> Result<()> {
    let p = batch.values();
    let c = batch.jets();
    if adj.values.len() != p || adj.jets.len() != c {
        return Err(Error::DimensionMismatch {
            expected: p + c,
            got: adj.values.len() + adj.jets.len(),
        });
    }
    let hidden = net.hidden_layers();
    let n = net.hidden_size();

    // output layer
    let mut ybar = Array1::zeros(p + 3 * c);
    ybar.slice_mut(s![..p]).assign(&ArrayView1::from(&adj.values));
    for (k, a) in adj.jets.iter().enumerate() {
        ybar[p + k] = a[0];
        ybar[p + c + k] = a[1];
        ybar[p + 2 * c + k] = a[2];
    }
    let out_scale = net.config().scaling.map_or(1.0, |sc| sc.output);
    if out_scale != 1.0 {
        ybar *= out_scale;
    }
    {
        let gw = ybar.dot(&tape.last);
        let mut row = grads.w[hidden].row_mut(0);
        row += &gw;
        grads.b[hidden][0] += ybar.slice(s![..p]).sum();
    }
    let w_out = net.layers()[hidden].w.row(0);
    let mut hbar = Array2::zeros((p + 3 * c, n));
    for (mut row, &yb) in hbar.outer_iter_mut().zip(ybar.iter()) {
        if yb != 0.0 {
            row.scaled_add(yb, &w_out);
        }
    }

    for li in (0..hidden).rev() {
        let t = &tape.layers[li];
        if let Some(m) = masks {
            for r in 0..p {
                let mut row = hbar.row_mut(r);
                row *= &m.layers[li].row(batch.groups[r]);
            }
            for (k, &r) in batch.jet_rows.iter().enumerate() {
                let mr = m.layers[li].row(batch.groups[r]);
                for ch in 0..3 {
                    let mut row = hbar.row_mut(p + ch * c + k);
                    row *= &mr;
                }
            }
        }
        // hbar (w.r.t. layer output) -> zbar (w.r.t. pre-activation)
        let mut zbar = Array2::zeros((p + 3 * c, n));
        {
            let zb = zbar.as_slice_mut().unwrap();
            let hb = hbar.as_slice().unwrap();
            let d1 = t.d1.as_slice().unwrap();
            for i in 0..p * n {
                zb[i] = hb[i] * d1[i];
            }
        }
        for (k, &r) in batch.jet_rows.iter().enumerate() {
            for j in 0..n {
                let g1 = t.d1[[r, j]];
                let g2 = t.d2[[k, j]];
                let g3 = t.d3[[k, j]];
                let zx = t.z[[p + k, j]];
                let zt = t.z[[p + c + k, j]];
                let zxx = t.z[[p + 2 * c + k, j]];
                let hx = hbar[[p + k, j]];
                let ht = hbar[[p + c + k, j]];
                let hxx = hbar[[p + 2 * c + k, j]];
                zbar[[p + k, j]] = hx * g1 + hxx * g2 * 2.0 * zx;
                zbar[[p + c + k, j]] = ht * g1;
                zbar[[p + 2 * c + k, j]] = hxx * g1;
                zbar[[r, j]] += hx * g2 * zx + ht * g2 * zt + hxx * (g3 * zx * zx + g2 * zxx);
            }
        }
        grads.w[li] += &zbar.t().dot(&t.input);
        grads.b[li] += &zbar.slice(s![..p, ..]).sum_axis(Axis(0));
        if li > 0 {
            hbar = zbar.dot(&net.layers()[li].w);
        }
    }
    Ok(())
}

/// Value and input derivatives at one point.
pub fn jet_forward(net: &Mlp, input: &[f64], masks: Option<&[Array1<f64>]>) -> Result<Jet> {
    if input.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: input.len(),
        });
    }
    let batch = EvalBatch {
        inputs: Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row shape"),
        jet_rows: vec![0],
        groups: vec![0],
    };
    let dm = masks.map(|m| DropoutMasks {
        layers: m
            .iter()
            .map(|row| row.clone().insert_axis(Axis(0)))
            .collect(),
    });
    if let Some(d) = &dm {
        if d.layers.iter().any(|l| l.ncols() != net.hidden_size()) {
            return Err(Error::DimensionMismatch {
                expected: net.hidden_size(),
                got: d.layers.iter().map(|l| l.ncols()).find(|&w| w != net.hidden_size()).unwrap(),
            });
        }
    }
    let out = evaluate_batch(net, &batch, dm.as_ref())?;
    Ok(out.jets[0])
}

/// Jets at many points, inference mode.
pub fn jets_at(net: &Mlp, inputs: &Array2<f64>) -> Result<Vec<Jet>> {
    let batch = EvalBatch {
        inputs: inputs.clone(),
        jet_rows: (0..inputs.nrows()).collect(),
        groups: vec![0; inputs.nrows()],
    };
    Ok(evaluate_batch(net, &batch, None)?.jets)
}

/// Network values at many points, inference mode.
pub fn values_at(net: &Mlp, inputs: &Array2<f64>) -> Result<Vec<f64>> {
    let batch = EvalBatch {
        inputs: inputs.clone(),
        jet_rows: Vec::new(),
        groups: vec![0; inputs.nrows()],
    };
    Ok(evaluate_batch(net, &batch, None)?.values)
}

/// Samples per evaluation chunk. Chunks are reduced in index order, so the
/// result does not depend on how many workers process them.
pub const CHUNK_SAMPLES: usize = 16;

/// Batch-mean loss and its exact gradient with respect to every network
/// parameter.
///
/// The loss of each sample involves the value and input derivatives at the
/// sample, the shifted values `w(x + y_j, τ)` of the jump integral, the
/// initial-condition point and the two boundary points; the gradient flows
/// through all of them unless the problem asks for a fixed integral.
///
/// `masks`, when present, has one row per sample of `samples`.
pub fn loss_param_gradient(
    net: &Mlp,
    samples: &[PreparedSample],
    problem: &Problem,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, Vec<LossBreakdown>, ParamGrad)> {
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let chunks: Vec<(usize, &[PreparedSample])> = samples
        .chunks(CHUNK_SAMPLES)
        .enumerate()
        .map(|(i, c)| (i * CHUNK_SAMPLES, c))
        .collect();
    let partial: Vec<Result<(Vec<LossBreakdown>, ParamGrad)>> = chunks
        .par_iter()
        .map(|&(offset, chunk)| {
            let sub_masks = masks.map(|m| slice_masks(m, offset, chunk.len()));
            let layout = residuals::assemble(chunk, problem, net.config().input);
            let (out, tape) = forward_tape(net, &layout.batch, sub_masks.as_ref())?;
            let (breakdowns, adj) = residuals::breakdown_and_adjoints(chunk, problem, &layout, &out, scale);
            let mut g = ParamGrad::zeros_like(net);
            backward(net, &layout.batch, sub_masks.as_ref(), &tape, &adj, &mut g)?;
            Ok((breakdowns, g))
        })
        .collect();

    let mut grads = ParamGrad::zeros_like(net);
    let mut all = Vec::with_capacity(samples.len());
    for r in partial {
        let (b, g) = r?;
        grads.add_assign(&g);
        all.extend(b);
    }
    let loss = all.iter().map(|b| b.total).sum::<f64>() * scale;
    Ok((loss, all, grads))
}

pub(crate) fn slice_masks(m: &DropoutMasks, offset: usize, len: usize) -> DropoutMasks {
    DropoutMasks {
        layers: m
            .layers
            .iter()
            .map(|l| l.slice(s![offset..offset + len, ..]).to_owned())
            .collect(),
    }
}
