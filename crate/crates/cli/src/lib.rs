//! Command-line driver: configuration files, commands and exit codes.

pub mod commands;
pub mod config;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICS: i32 = 3;
    pub const IO: i32 = 4;
}

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "VG_PINN_WORKERS";

/// Exit code for an error, by the first recognised cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<vg_pinn::Error>() {
            use vg_pinn::Error::*;
            return match e {
                NonFinite { .. } => exit::NUMERICS,
                Domain(_) | DimensionMismatch { .. } | Config(_) => exit::CONFIG,
                Checkpoint(_) | Io(_) | Csv(_) | Json(_) => exit::IO,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return exit::CONFIG;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return exit::IO;
        }
    }
    exit::OTHER
}

/// Sizes the global worker pool from [`WORKERS_ENV`] when set.
pub fn init_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| vg_pinn::Error::Config(format!("{WORKERS_ENV}={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| vg_pinn::Error::Config(e.to_string()))?;
    }
    Ok(())
}
