pub mod cli;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod optimizer;
pub mod positioning;
pub mod replication;
pub mod rng;
pub mod scenario;
pub mod sfm;
pub mod stats;

pub use error::{Error, Result};
