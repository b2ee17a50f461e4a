//! Sample designs, estimators and Monte Carlo evaluation for multimode
//! household surveys that push every sampled household to the web and
//! follow up web nonrespondents face-to-face (ftf).
//!
//! Three designs are supported:
//!
//! - **two-phase unit subsampling**: a clustered sample where a fraction of
//!   the web nonrespondents inside every PSU is followed up ftf;
//! - **two-phase PSU subsampling**: a larger clustered sample where all web
//!   nonrespondents in a subsample of the PSUs are followed up;
//! - **hybrid sampling**: an unclustered web-only sample plus an independent
//!   clustered web-then-ftf sample, combined by compositing.
//!
//! The crate is organised bottom-up: [`population`] builds the finite
//! populations, [`sampling`] and [`response`] draw samples and apply the data
//! collection protocol, [`estimators`] and [`variance`] turn a realised sample
//! into totals, variances and confidence intervals, [`designtools`] holds the
//! closed-form planning calculators and [`montecarlo`] runs whole scenarios.

pub mod config;
pub mod designtools;
pub mod estimators;
pub mod montecarlo;
pub mod population;
pub mod response;
pub mod rng;
pub mod sampling;
pub mod variance;

pub use estimators::{EstimatorId, EstimatorResult, Undefined};
pub use population::{Household, Label, Population, Pseudopopulation};
pub use sampling::{DrawnSample, SampledUnit};

/// Crate-level error, used where several subsystems meet (configuration,
/// scenario execution, the command line).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Population(#[from] population::PopulationError),
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Variance(#[from] variance::VarianceError),
    #[error(transparent)]
    Design(#[from] designtools::DesignError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Scenario(#[from] montecarlo::ScenarioError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the command line: 2 configuration, 3 data,
    /// 4 degenerate results.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Design(_) => 2,
            Error::Scenario(montecarlo::ScenarioError::AllDegenerate { .. }) => 4,
            Error::Scenario(montecarlo::ScenarioError::Config(_)) => 2,
            Error::Scenario(_) => 3,
            Error::Sampling(_) => 2,
            Error::Population(_) | Error::Variance(_) | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
