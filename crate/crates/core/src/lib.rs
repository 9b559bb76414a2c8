//! Bayesian hierarchical inference for rugby score differences.
//!
//! The modelled quantity is the standardized home-minus-away score
//! difference of each game, explained by latent team abilities that evolve
//! as a per-team random walk over played weeks, the difference in effort
//! (tries over tries plus attempted scoring kicks), and a home-advantage
//! term split into a baseline, an attendance effect and a weekend effect.
//! Observation noise is Student-t. Four model variants (I-IV) switch the
//! attendance/weekend terms and the previous-season ranking source.
//!
//! Pipeline: [`ingest`] parses season files, [`features`] builds model
//! covariates, [`model`] defines the log posterior and its analytic
//! gradient, [`sampler`] draws from it with adaptive Hamiltonian Monte
//! Carlo, [`diagnostics`] summarizes the draws, [`ppc`] runs posterior
//! predictive replication and the luck/variance decomposition, and
//! [`simulate`] generates synthetic seasons for recovery experiments.

mod csvio;
pub mod diagnostics;
pub mod features;
pub mod ingest;
pub mod model;
pub mod ppc;
pub mod sampler;
pub mod simulate;
pub mod stats;

pub use features::{FeatureSet, GameObservation};
pub use ingest::{Dataset, MatchRecord, PrevSeasonTable};
pub use model::{ModelConfig, ParameterState, Variant};
pub use sampler::{DrawsMatrix, SamplerConfig};
