use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vg_pinn::eval_greeks::Preset;
use vg_pinn::oracle::FftConfig;
use vg_pinn::VgParams;
use vg_pinn_cli::commands::{self, CurveOverrides, OracleMethod, TrainOptions};
use vg_pinn_cli::config::RunConfig;
use vg_pinn_cli::{exit_code, init_workers};

/// Price European options under variance gamma with an unsupervised
/// neural network, and check it against FFT, Monte Carlo and BMS.
#[derive(Parser)]
#[command(name = "vg-pinn", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network from a run configuration.
    Train {
        config: PathBuf,
        /// Continue from the training state in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Test metrics of a checkpoint on the test set of a configuration.
    Eval { checkpoint: PathBuf, config: PathBuf },
    /// Train every run of a sweep file and tabulate RMSE and MAE.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Network price at one point.
    Price {
        checkpoint: PathBuf,
        #[command(flatten)]
        point: Point,
        /// Also print the FFT price and the absolute difference.
        #[arg(long)]
        oracle: bool,
    },
    /// Price and Greek curves of a checkpoint against the FFT oracle.
    ExportCurves {
        checkpoint: PathBuf,
        #[arg(long, default_value = "fig6")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        strike: Option<f64>,
    },
    /// Reference put price without a network.
    OraclePrice {
        #[command(flatten)]
        point: Point,
        #[arg(long, value_enum, default_value = "fft")]
        method: OracleMethod,
        #[arg(long, default_value_t = 1_000_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Point {
    #[arg(long = "spot", short = 's')]
    spot: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 200.0)]
    strike: f64,
    #[arg(long, default_value_t = VgParams::REFERENCE.sigma)]
    sigma: f64,
    #[arg(long, default_value_t = VgParams::REFERENCE.nu)]
    nu: f64,
    #[arg(long, default_value_t = VgParams::REFERENCE.theta, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = VgParams::REFERENCE.r)]
    r: f64,
    #[arg(long, default_value_t = VgParams::REFERENCE.q)]
    q: f64,
}

impl Point {
    fn params(&self) -> VgParams {
        VgParams {
            sigma: self.sigma,
            nu: self.nu,
            theta: self.theta,
            r: self.r,
            q: self.q,
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<()> {
    let fft = FftConfig::default();
    match cmd {
        Cmd::Train { config, resume, quiet } => {
            let cfg = RunConfig::load(&config)?;
            let s = commands::train(&cfg, TrainOptions { resume, quiet })?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Cmd::Eval { checkpoint, config } => {
            let cfg = RunConfig::load(&config)?;
            println!("{}", serde_json::to_string(&commands::eval(&checkpoint, &cfg)?)?);
        }
        Cmd::Sweep { config, quiet } => {
            println!("{}", commands::sweep(&config, quiet)?.display());
        }
        Cmd::Price { checkpoint, point, oracle } => {
            let line = commands::price(
                &checkpoint,
                point.spot,
                point.tau,
                &point.params(),
                point.strike,
                oracle.then_some(&fft),
            )?;
            println!("{line}");
        }
        Cmd::ExportCurves {
            checkpoint,
            preset,
            out,
            tau,
            sigma,
            nu,
            theta,
            r,
            q,
            strike,
        } => {
            let o = CurveOverrides {
                tau,
                sigma,
                nu,
                theta,
                r,
                q,
                strike,
            };
            let n = commands::export(&checkpoint, preset, o, &out, &fft)?;
            eprintln!("wrote {n} rows to {}", out.display());
        }
        Cmd::OraclePrice {
            point,
            method,
            paths,
            seed,
        } => {
            commands::oracle_price(
                method,
                point.spot,
                point.strike,
                point.tau,
                &point.params(),
                &fft,
                paths,
                seed,
                &mut std::io::stdout(),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers().and_then(|_| dispatch(cli.cmd));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
