//! Unsupervised neural-network pricing of European options under the
//! variance-gamma model.
//!
//! A multilayer perceptron `w(x, τ; σ, ν, θ, r, q)` is trained to satisfy the
//! log-price pricing equation, its initial condition and boundary
//! conditions. No price labels enter training; FFT, Monte Carlo and
//! Black–Scholes prices serve as references only.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval_greeks;
pub mod network;
pub mod oracle;
pub mod quadrature;
pub mod residuals;
pub mod rng;
pub mod sampling;
pub mod training;
pub mod vg_model;

pub use error::{Error, Result};
pub use vg_model::VgParams;
