//! Food-access proximity with measurement-error correction.
//!
//! Straight-line proximity is cheap for every neighborhood; map-based
//! proximity is accurate but queried for only a subset. This crate builds
//! both, corrects the error-prone exposure by multiple imputation, fits
//! Poisson prevalence models and runs the simulation studies that compare
//! the naive, gold-standard, complete-case and imputation estimators.

pub mod analyze;
pub mod data;
pub mod error;
pub mod geodistance;
pub mod impute;
pub mod regress;
pub mod rng;
pub mod simlab;
pub mod spatial;
pub mod stats;
pub mod synth;

pub use analyze::{AnalysisReport, AnalysisSpec, Strategy};
pub use data::{Covariate, NeighborhoodRecord, StoreRecord, TwoPhaseData};
pub use error::{Error, Result};
pub use geodistance::{Coordinate, DistanceProvider, ProximityPair, Site};
pub use impute::{ImputationOptions, ImputationSpec, PooledEstimate};
pub use regress::{Design, DesignSpec, GlmFit, OlsFit};
pub use simlab::{MetricsRow, ScenarioConfig};
pub use synth::{ErrorMechanism, SimConfig, SimulatedDataset};
