//! Run and sweep configuration files (TOML).
//!
//! Every table rejects unknown keys. Omitted keys take the documented
//! defaults, so an empty file is a valid run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use vg_pinn::network::MlpConfig;
use vg_pinn::oracle::FftConfig;
use vg_pinn::residuals::{DomainBox, LossWeights, OptionKind};
use vg_pinn::sampling::SampleBox;
use vg_pinn::training::TrainConfig;
use vg_pinn::vg_model::{ParamBox, VgParams};

pub const CONFIG_VERSION: u32 = 1;

/// Where training and test points are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Train on `(x, τ)` only, with these parameters held fixed.
    pub fixed_params: Option<VgParams>,
    pub params: ParamBox,
    pub tau_max: f64,
    pub tau_floor: f64,
    /// Training range of `x` as multiples of the strike: `[ln(aK), ln(bK)]`.
    pub train_moneyness: (f64, f64),
    pub test_moneyness: (f64, f64),
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            fixed_params: None,
            params: ParamBox::default(),
            tau_max: 3.0,
            tau_floor: 1e-6,
            train_moneyness: (1.0 / 40.0, 2.0),
            test_moneyness: (0.5, 2.0),
        }
    }
}

impl SamplingConfig {
    pub fn boxes(&self, strike: f64) -> (SampleBox, SampleBox) {
        let make = |(a, b): (f64, f64)| SampleBox {
            x_range: ((a * strike).ln(), (b * strike).ln()),
            tau_max: self.tau_max,
            tau_floor: self.tau_floor,
            params: self.params,
            fixed_params: self.fixed_params,
        };
        (make(self.train_moneyness), make(self.test_moneyness))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub output_dir: PathBuf,
    /// Root seed. When set it replaces `network.seed` and `train.seed`.
    pub seed: Option<u64>,
    pub option: OptionKind,
    pub domain: DomainBox,
    pub network: MlpConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub loss: LossWeights,
    pub fft: FftConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            output_dir: PathBuf::from("run"),
            seed: None,
            option: OptionKind::Put,
            domain: DomainBox::default(),
            network: MlpConfig::default(),
            train: TrainConfig::default(),
            sampling: SamplingConfig::default(),
            loss: LossWeights::default(),
            fft: FftConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Applies the root seed and the input layout implied by fixed
    /// parameters, then validates.
    pub fn resolve(&mut self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(vg_pinn::Error::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(s) = self.seed {
            self.network.seed = s;
            self.train.seed = s;
        }
        if let Some(p) = self.sampling.fixed_params {
            p.validate()?;
            if self.network.input == vg_pinn::network::InputLayout::Full {
                self.network.input = vg_pinn::network::InputLayout::XTau;
            }
        }
        self.network.validate()?;
        self.train.validate()?;
        self.domain.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// A base configuration plus a list of runs, each a partial table merged
/// over the base.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub base: toml::Table,
    #[serde(default)]
    pub runs: Vec<toml::Table>,
}

/// One resolved sweep entry.
#[derive(Debug)]
pub struct SweepRun {
    pub name: String,
    pub config: anyhow::Result<RunConfig>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading sweep {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("in sweep {}", path.display()))
    }

    /// Merges every run over the base. The reserved `name` key labels a run
    /// and defaults to `run{i}`; each run writes into `<base output>/<name>`.
    pub fn expand(&self) -> Vec<SweepRun> {
        let base_dir = self
            .base
            .get("output_dir")
            .and_then(|v| v.as_str())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("sweep"));
        self.runs
            .iter()
            .enumerate()
            .map(|(i, over)| {
                let mut over = over.clone();
                let name = match over.remove("name") {
                    Some(toml::Value::String(s)) => s,
                    _ => format!("run{i}"),
                };
                let mut merged = self.base.clone();
                merge(&mut merged, &over);
                merged.insert(
                    "output_dir".into(),
                    toml::Value::String(base_dir.join(&name).to_string_lossy().into_owned()),
                );
                let config = toml::Value::Table(merged)
                    .try_into::<RunConfig>()
                    .map_err(anyhow::Error::from)
                    .and_then(|mut c| c.resolve().map(|_| c));
                SweepRun { name, config }
            })
            .collect()
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}
