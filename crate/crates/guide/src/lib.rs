//! The chapters of the guide in `book/`, one module each, so that
//! `cargo test` runs every listing as a doc-test.

#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/quadrature.md")]
pub mod quadrature {}
#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/oracles.md")]
pub mod oracles {}
#[doc = include_str!("../../../book/src/greeks.md")]
pub mod greeks {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
