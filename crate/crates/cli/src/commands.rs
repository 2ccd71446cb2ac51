use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use vg_pinn::checkpoint::{load_network, save_network};
use vg_pinn::eval_greeks::{export_curves, CurveSpec, Preset};
use vg_pinn::network::Mlp;
use vg_pinn::oracle::{bms_put_price, fft_put_price, mc_put_price, FftConfig};
use vg_pinn::residuals::Problem;
use vg_pinn::sampling::make_samples;
use vg_pinn::training::{evaluate, run, EpochRecord, Metrics, TrainData, TrainState};
use vg_pinn::vg_model::VgParams;

use crate::config::{RunConfig, SweepConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO: &str = "config.toml";
pub const STATE_FILE: &str = "state.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const BEST_FILE: &str = "best.ckpt";

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Continue from `state.ckpt` in the output directory when present.
    pub resume: bool,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    pub final_epoch: EpochRecord,
    pub best_epoch: EpochRecord,
    pub num_params: usize,
    pub train_size: usize,
    pub test_size: usize,
}

fn problem(cfg: &RunConfig) -> Problem {
    cfg.train.problem(cfg.domain, cfg.option, cfg.loss)
}

fn write_metrics(path: &Path, history: &[EpochRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "rmse", "mae"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.loss.to_string(), r.rmse.to_string(), r.mae.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains per `cfg`, writing into `cfg.output_dir`: the echoed config,
/// `metrics.csv` (`epoch,loss,rmse,mae`), `summary.json`, the resumable
/// `state.ckpt`, the final `model.ckpt` and the best-RMSE `best.ckpt`.
pub fn train(cfg: &RunConfig, opts: TrainOptions) -> anyhow::Result<TrainSummary> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml()?)?;

    let problem = problem(cfg);
    let (train_box, test_box) = cfg.sampling.boxes(cfg.domain.strike);
    let data = TrainData::generate(&cfg.train, &train_box, &test_box, &problem, &cfg.fft)?;

    let state_path = dir.join(STATE_FILE);
    let state = if opts.resume && state_path.exists() {
        let s = TrainState::load(&state_path)?;
        if s.net.config() != &cfg.network {
            anyhow::bail!(vg_pinn::Error::Config(format!(
                "{} was written for a different network configuration",
                state_path.display()
            )));
        }
        s
    } else {
        TrainState::new(Mlp::init(&cfg.network)?, cfg.train.optimizer)
    };

    let metrics_path = dir.join(METRICS_FILE);
    let quiet = opts.quiet;
    let state = run(state, &cfg.train, &data, &problem, &mut |s, rec| {
        s.save(&state_path)?;
        write_metrics(&metrics_path, &s.history).map_err(|e| vg_pinn::Error::Io(std::io::Error::other(e.to_string())))?;
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.6e}  rmse {:.6}  mae {:.6}",
                rec.epoch, rec.loss, rec.rmse, rec.mae
            );
        }
        Ok(())
    })?;

    save_network(&dir.join(MODEL_FILE), &state.net)?;
    save_network(&dir.join(BEST_FILE), &state.best_net)?;
    let best_epoch = *state
        .history
        .iter()
        .find(|r| r.rmse == state.best_rmse)
        .expect("best epoch is in the history");
    let summary = TrainSummary {
        epochs: state.epochs_done,
        steps: state.step,
        final_epoch: *state.history.last().expect("history has epoch 0"),
        best_epoch,
        num_params: state.net.num_params(),
        train_size: data.train.len(),
        test_size: data.test.len(),
    };
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Test metrics of a saved network on the test set described by `cfg`.
pub fn eval(checkpoint: &Path, cfg: &RunConfig) -> anyhow::Result<Metrics> {
    let net = load_network(checkpoint)?;
    let problem = problem(cfg);
    let (_, test_box) = cfg.sampling.boxes(cfg.domain.strike);
    let test = make_samples(&test_box, cfg.train.test_size, 1 + cfg.train.train_size as u64)?;
    let prices = vg_pinn::oracle::fft_prices(&test, cfg.domain.strike, problem.option, &cfg.fft)?;
    Ok(evaluate(&net, &test, &prices)?)
}

pub const SWEEP_COLUMNS: [&str; 16] = [
    "name",
    "status",
    "activation",
    "init",
    "hidden_layers",
    "hidden_size",
    "dropout_rate",
    "optimizer",
    "learning_rate",
    "boundary",
    "integral",
    "equation",
    "epochs",
    "seed",
    "rmse",
    "mae",
];

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

/// Trains every run of the sweep in order and writes one CSV row per run
/// with the best-epoch metrics. A failing run is recorded and the sweep
/// continues. Returns the path of the table.
pub fn sweep(path: &Path, quiet: bool) -> anyhow::Result<PathBuf> {
    let sweep = SweepConfig::load(path)?;
    let out = match &sweep.output {
        Some(p) => p.clone(),
        None => {
            let base = sweep.base.get("output_dir").and_then(|v| v.as_str()).unwrap_or("sweep");
            PathBuf::from(base).join("sweep.csv")
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(SWEEP_COLUMNS)?;
    w.flush()?;
    for entry in sweep.expand() {
        if !quiet {
            eprintln!("sweep: {}", entry.name);
        }
        let result = entry.config.and_then(|cfg| {
            let s = train(&cfg, TrainOptions { resume: false, quiet })?;
            Ok((cfg, s))
        });
        let row = match result {
            Ok((c, s)) => {
                let n = c.network;
                let t = c.train;
                vec![
                    entry.name,
                    "ok".into(),
                    label(&n.activation),
                    label(&n.init),
                    n.hidden_layers.to_string(),
                    n.hidden_size.to_string(),
                    n.dropout_rate.to_string(),
                    label(&t.optimizer),
                    t.learning_rate.to_string(),
                    label(&t.boundary),
                    label(&t.integral),
                    label(&t.equation),
                    s.epochs.to_string(),
                    t.seed.to_string(),
                    s.best_epoch.rmse.to_string(),
                    s.best_epoch.mae.to_string(),
                ]
            }
            Err(e) => {
                let mut r = vec![entry.name, format!("error: {e:#}")];
                r.resize(SWEEP_COLUMNS.len() - 2, String::new());
                r.extend(["NaN".into(), "NaN".into()]);
                r
            }
        };
        w.write_record(&row)?;
        w.flush()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceLine {
    pub net: f64,
    pub fft: Option<f64>,
}

impl std::fmt::Display for PriceLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "net={:.6}", self.net)?;
        if let Some(fft) = self.fft {
            write!(f, " fft={:.6} abs_diff={:.6}", fft, (self.net - fft).abs())?;
        }
        Ok(())
    }
}

pub fn price(
    checkpoint: &Path,
    s: f64,
    tau: f64,
    p: &VgParams,
    strike: f64,
    with_oracle: Option<&FftConfig>,
) -> anyhow::Result<PriceLine> {
    let net = load_network(checkpoint)?;
    p.validate()?;
    if !(s > 0.0 && tau > 0.0) {
        anyhow::bail!(vg_pinn::Error::Domain(format!("need S > 0 and tau > 0, got S={s}, tau={tau}")));
    }
    let input = net.config().input.features(s.ln(), tau, p);
    let value = net.forward(&input, None)?;
    let fft = with_oracle
        .map(|cfg| fft_put_price(s, strike, tau, p, cfg))
        .transpose()?;
    Ok(PriceLine { net: value, fft })
}

/// Parameter overrides applied on top of a curve preset.
#[derive(Debug, Clone, Copy, Default)]
pub struct CurveOverrides {
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
    pub nu: Option<f64>,
    pub theta: Option<f64>,
    pub r: Option<f64>,
    pub q: Option<f64>,
    pub strike: Option<f64>,
}

impl CurveOverrides {
    pub fn apply(&self, mut spec: CurveSpec) -> CurveSpec {
        let p = &mut spec.params;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.sigma, self.sigma);
        set(&mut p.nu, self.nu);
        set(&mut p.theta, self.theta);
        set(&mut p.r, self.r);
        set(&mut p.q, self.q);
        set(&mut spec.tau, self.tau);
        if let Some(k) = self.strike {
            let scale = k / spec.strike;
            spec.spots.iter_mut().for_each(|s| *s *= scale);
            spec.strike = k;
        }
        spec
    }
}

pub fn export(checkpoint: &Path, preset: Preset, overrides: CurveOverrides, out: &Path, fft: &FftConfig) -> anyhow::Result<usize> {
    let net = load_network(checkpoint)?;
    let spec = overrides.apply(preset.spec());
    spec.params.validate()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(export_curves(&net, &spec, fft, out)?.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleMethod {
    Fft,
    Mc,
    Bms,
}

pub fn oracle_price(
    method: OracleMethod,
    s: f64,
    strike: f64,
    tau: f64,
    p: &VgParams,
    fft: &FftConfig,
    paths: usize,
    seed: u64,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    match method {
        OracleMethod::Fft => writeln!(out, "fft={:.10}", fft_put_price(s, strike, tau, p, fft)?)?,
        OracleMethod::Mc => {
            let (v, se) = mc_put_price(s, strike, tau, p, paths, seed)?;
            writeln!(out, "mc={v:.10} se={se:.10}")?
        }
        OracleMethod::Bms => writeln!(out, "bms={:.10}", bms_put_price(s, strike, tau, p.sigma, p.r, p.q))?,
    }
    Ok(())
}
