//! Minibatch training with Adam or RMSprop, per-epoch test metrics against
//! oracle prices, best-network tracking and resumable state.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_param_gradient, values_at, ParamGrad};
use crate::checkpoint::{self, Container};
use crate::error::{Error, Result};
use crate::network::{DropoutMasks, Mlp, MlpConfig};
use crate::oracle::{fft_prices, FftConfig};
use crate::quadrature::GridKind;
use crate::residuals::{
    prepare, total_loss, Boundary, DomainBox, Equation, IntegralMode, LossWeights, OptionKind, PreparedSample, Problem,
    Sample,
};
use crate::rng::{stream_rng, Stream};
use crate::sampling::{make_samples, SampleBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr·(1 + cos(π·step/steps))/2` over the planned number of steps.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    /// RMSprop decay of the squared-gradient average.
    pub decay: f64,
    pub opt_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// When set, overrides `epochs`: training stops after this many steps.
    pub total_steps: Option<usize>,
    pub train_size: usize,
    pub test_size: usize,
    /// Root seed for shuffling and dropout.
    pub seed: u64,
    pub equation: Equation,
    pub boundary: Boundary,
    pub integral: IntegralMode,
    pub grid: GridKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            decay: 0.9,
            opt_eps: 1e-8,
            batch_size: 200,
            epochs: 30,
            total_steps: None,
            train_size: 1_000_000,
            test_size: 2_000,
            seed: 0,
            equation: Equation::Vg,
            boundary: Boundary::Dirichlet,
            integral: IntegralMode::Full,
            grid: GridKind::Standard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.train_size == 0 || self.test_size == 0 {
            return bad("train_size and test_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(0.0..1.0).contains(&self.decay) {
            return bad("beta1, beta2 and decay must lie in [0, 1)");
        }
        if !(self.opt_eps > 0.0) {
            return bad("opt_eps must be positive");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    /// Epochs to run; derived from `total_steps` when that is set.
    pub fn planned_epochs(&self, n_train: usize) -> usize {
        match self.total_steps {
            Some(t) => t.div_ceil(self.steps_per_epoch(n_train).max(1)),
            None => self.epochs,
        }
    }

    pub fn planned_steps(&self, n_train: usize) -> usize {
        self.total_steps
            .unwrap_or(self.epochs * self.steps_per_epoch(n_train))
    }

    pub fn problem(&self, domain: DomainBox, option: OptionKind, weights: LossWeights) -> Problem {
        Problem {
            domain,
            option,
            equation: self.equation,
            boundary: self.boundary,
            integral: self.integral,
            weights,
            ..Problem::default()
        }
        .with_grid(self.grid)
    }

    fn learning_rate_at(&self, step: usize, planned: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let f = (step as f64 / planned.max(1) as f64).min(1.0);
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }
}

/// First and second moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmspropState {
    pub v: Vec<f64>,
}

impl RmspropState {
    pub fn new(n: usize) -> Self {
        Self { v: vec![0.0; n] }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Adam with bias correction.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), state.m.len())?;
    check_len(params.len(), state.v.len())?;
    state.t += 1;
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
    Ok(())
}

pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut RmspropState,
    lr: f64,
    decay: f64,
    eps: f64,
) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), state.v.len())?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.v) {
        *v = decay * *v + (1.0 - decay) * g * g;
        *p -= lr * g / (v.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for all network parameters, flattened in
/// [`Mlp::param_slices`] order.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam(AdamState),
    Rmsprop(RmspropState),
}

impl OptimizerState {
    pub fn new(kind: Optimizer, n_params: usize) -> Self {
        match kind {
            Optimizer::Adam => Self::Adam(AdamState::new(n_params)),
            Optimizer::Rmsprop => Self::Rmsprop(RmspropState::new(n_params)),
        }
    }

    pub fn kind(&self) -> Optimizer {
        match self {
            Self::Adam(_) => Optimizer::Adam,
            Self::Rmsprop(_) => Optimizer::Rmsprop,
        }
    }

    fn apply(&mut self, net: &mut Mlp, grads: &ParamGrad, lr: f64, cfg: &TrainConfig) -> Result<()> {
        let mut flat_p: Vec<f64> = net.param_slices().concat();
        let flat_g: Vec<f64> = grads.slices().concat();
        match self {
            Self::Adam(s) => adam_step(&mut flat_p, &flat_g, s, lr, (cfg.beta1, cfg.beta2), cfg.opt_eps)?,
            Self::Rmsprop(s) => rmsprop_step(&mut flat_p, &flat_g, s, lr, cfg.decay, cfg.opt_eps)?,
        }
        let mut off = 0;
        for dst in net.param_slices_mut() {
            dst.copy_from_slice(&flat_p[off..off + dst.len()]);
            off += dst.len();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// Maximum absolute error.
    pub mae: f64,
}

/// Network prices against reference prices, without dropout.
pub fn evaluate(net: &Mlp, samples: &[Sample], reference: &[f64]) -> Result<Metrics> {
    check_len(samples.len(), reference.len())?;
    if samples.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let layout = net.config().input;
    let mut inputs = Array2::zeros((samples.len(), layout.dim()));
    for (row, s) in inputs.rows_mut().into_iter().zip(samples) {
        layout.write(s.x, s.tau, &s.params, row.into_slice().expect("standard layout"));
    }
    let values = values_at(net, &inputs)?;
    let (mut sq, mut max) = (0.0, 0.0f64);
    for (v, r) in values.iter().zip(reference) {
        let e = v - r;
        sq += e * e;
        max = max.max(e.abs());
    }
    Ok(Metrics {
        rmse: (sq / samples.len() as f64).sqrt(),
        mae: max,
    })
}

/// One row of the metrics log; epoch 0 describes the untrained network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    pub rmse: f64,
    pub mae: f64,
}

/// Training and test sets with reference prices for the test points.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<PreparedSample>,
    pub test: Vec<Sample>,
    pub test_prices: Vec<f64>,
}

impl TrainData {
    /// Sobol samples: training points take indices `1..=n_train`, test points
    /// the indices after them. Test prices come from the FFT oracle.
    pub fn generate(
        cfg: &TrainConfig,
        train_box: &SampleBox,
        test_box: &SampleBox,
        problem: &Problem,
        fft: &FftConfig,
    ) -> Result<Self> {
        let train = make_samples(train_box, cfg.train_size, 1)?;
        let test = make_samples(test_box, cfg.test_size, 1 + cfg.train_size as u64)?;
        let test_prices = fft_prices(&test, problem.domain.strike, problem.option, fft)?;
        Ok(Self {
            train: prepare(&train, problem.eps())?,
            test,
            test_prices,
        })
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub net: Mlp,
    pub optimizer: OptimizerState,
    pub epochs_done: usize,
    pub step: usize,
    pub history: Vec<EpochRecord>,
    pub best_net: Mlp,
    pub best_rmse: f64,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    mlp: MlpConfig,
    optimizer: Optimizer,
    adam_t: u64,
    epochs_done: usize,
    step: usize,
    history: Vec<EpochRecord>,
    best_rmse: f64,
}

const STATE_KIND: &str = "train_state";

impl TrainState {
    pub fn new(net: Mlp, optimizer: Optimizer) -> Self {
        Self {
            optimizer: OptimizerState::new(optimizer, net.num_params()),
            best_net: net.clone(),
            net,
            epochs_done: 0,
            step: 0,
            history: Vec::new(),
            best_rmse: f64::INFINITY,
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let (adam_t, moments) = match &self.optimizer {
            OptimizerState::Adam(s) => (s.t, vec![("adam_m", &s.m), ("adam_v", &s.v)]),
            OptimizerState::Rmsprop(s) => (0, vec![("rmsprop_v", &s.v)]),
        };
        let meta = StateMeta {
            mlp: *self.net.config(),
            optimizer: self.optimizer.kind(),
            adam_t,
            epochs_done: self.epochs_done,
            step: self.step,
            history: self.history.clone(),
            best_rmse: self.best_rmse,
        };
        let mut c = Container::new(STATE_KIND, serde_json::to_value(meta)?);
        checkpoint::push_network(&mut c, "", &self.net)?;
        checkpoint::push_network(&mut c, "best_", &self.best_net)?;
        for (name, data) in moments {
            c.push(name, vec![data.len()], data.clone())?;
        }
        Ok(c)
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        if c.kind != STATE_KIND {
            return Err(Error::Checkpoint(format!("expected a training state, found kind {}", c.kind)));
        }
        let meta: StateMeta = serde_json::from_value(c.meta.clone())?;
        let net = checkpoint::take_network(&mut c, "", meta.mlp)?;
        let best_net = checkpoint::take_network(&mut c, "best_", meta.mlp)?;
        let n = net.num_params();
        let mut moment = |name: &str| -> Result<Vec<f64>> {
            let (shape, data) = checkpoint::take_tensor(&mut c, name)?;
            if shape != [n] {
                return Err(Error::Checkpoint(format!("{name}: shape {shape:?}, expected [{n}]")));
            }
            Ok(data)
        };
        let optimizer = match meta.optimizer {
            Optimizer::Adam => OptimizerState::Adam(AdamState {
                m: moment("adam_m")?,
                v: moment("adam_v")?,
                t: meta.adam_t,
            }),
            Optimizer::Rmsprop => OptimizerState::Rmsprop(RmspropState { v: moment("rmsprop_v")? }),
        };
        Ok(Self {
            net,
            optimizer,
            epochs_done: meta.epochs_done,
            step: meta.step,
            history: meta.history,
            best_net,
            best_rmse: meta.best_rmse,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    fn record(&mut self, rec: EpochRecord) {
        if rec.rmse < self.best_rmse {
            self.best_rmse = rec.rmse;
            self.best_net = self.net.clone();
        }
        self.history.push(rec);
    }
}

/// Called after every completed epoch, including epoch 0.
pub type EpochHook<'a> = dyn FnMut(&TrainState, &EpochRecord) -> Result<()> + 'a;

/// Trains from a fresh state.
pub fn train(net: Mlp, cfg: &TrainConfig, data: &TrainData, problem: &Problem) -> Result<TrainState> {
    run(TrainState::new(net, cfg.optimizer), cfg, data, problem, &mut |_, _| Ok(()))
}

/// Continues `state` until the planned number of epochs or steps.
pub fn run(
    mut state: TrainState,
    cfg: &TrainConfig,
    data: &TrainData,
    problem: &Problem,
    hook: &mut EpochHook<'_>,
) -> Result<TrainState> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if state.optimizer.kind() != cfg.optimizer {
        return Err(Error::Config("optimizer differs from the one in the saved state".into()));
    }
    let n = data.train.len();
    let planned_epochs = cfg.planned_epochs(n);
    let planned_steps = cfg.planned_steps(n);
    let rate = state.net.config().dropout_rate;

    if state.history.is_empty() {
        let (loss, _) = total_loss(&state.net, &data.train, problem, None)?;
        let m = evaluate(&state.net, &data.test, &data.test_prices)?;
        let rec = EpochRecord {
            epoch: 0,
            loss,
            rmse: m.rmse,
            mae: m.mae,
        };
        state.record(rec);
        hook(&state, &rec)?;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in state.epochs_done + 1..=planned_epochs {
        if state.step >= planned_steps {
            break;
        }
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            if state.step >= planned_steps {
                break;
            }
            batch.clear();
            batch.extend(idx.iter().map(|&i| data.train[i]));
            let masks = (rate > 0.0).then(|| {
                let mut rng = stream_rng(cfg.seed, Stream::Dropout, state.step as u64);
                DropoutMasks::sample(&state.net, batch.len(), rate, &mut rng)
            });
            let (loss, parts, grads) = loss_param_gradient(&state.net, &batch, problem, masks.as_ref())?;
            if let Some((component, value)) = parts.iter().find_map(|b| b.non_finite_component()) {
                return Err(Error::NonFinite {
                    epoch,
                    step: state.step,
                    component,
                    value,
                });
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step: state.step,
                    component: "gradient",
                    value: f64::NAN,
                });
            }
            let lr = cfg.learning_rate_at(state.step, planned_steps);
            state.optimizer.apply(&mut state.net, &grads, lr, cfg)?;
            state.step += 1;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let m = evaluate(&state.net, &data.test, &data.test_prices)?;
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            rmse: m.rmse,
            mae: m.mae,
        };
        state.epochs_done = epoch;
        state.record(rec);
        hook(&state, &rec)?;
    }
    Ok(state)
}
