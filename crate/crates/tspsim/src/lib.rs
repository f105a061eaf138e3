//! Massive-MIMO time-shifted pilot (TSP) simulation with inter-group
//! interference cancellation (IC-TSP).
//!
//! The crate is split along the signal chain: [`topology`] lays out cells and
//! users, [`channel`] draws gains and fading, [`signals`] composes received
//! blocks, [`estimation`] runs the estimators, [`analytics`] evaluates the
//! closed forms and [`montecarlo`] drives experiments over many drops.

pub mod analytics;
pub mod channel;
pub mod config;
pub mod error;
pub mod estimation;
pub mod frame;
pub mod montecarlo;
pub mod rng;
pub mod signals;
pub mod topology;

pub use config::ScenarioConfig;
pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
