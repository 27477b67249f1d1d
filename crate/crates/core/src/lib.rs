//! Tests whether hypothesized covariates are treatment effect modifiers in a
//! social network.
//!
//! A hypothesized modifier is either a unit covariate, a summary of the
//! neighbors' covariates, or the presence of a local network pattern around
//! the unit. The pipeline estimates a conditional direct effect per unit,
//! projects it onto each hypothesis, and scores the between-stratum
//! heterogeneity with the normalized `iota^2` statistic.
//!
//! Modules:
//! - [`network`]: social network data model, neighborhoods and ego networks.
//! - [`pattern`]: network patterns and pattern-preserving subgraph matching.
//! - [`summary`]: neighbor covariate summaries.
//! - [`dag`]: template causal DAG, d-separation, adjustment and screening.
//! - [`estimate`]: per-unit effect estimation with bootstrap draws.
//! - [`hetero`]: projection, `delta^2` / `iota^2` and the full test.
//! - [`sim`]: synthetic vaccine-trial generator and experiment sweeps.
//! - [`io`]: delimited-text readers and writers for every file format.

pub mod dag;
pub mod error;
pub mod estimate;
pub mod hetero;
pub mod io;
pub mod network;
pub mod pattern;
pub mod seed;
pub mod sim;
pub mod summary;

pub use error::{Error, Result};
pub use network::{Column, CovariateKind, CovariateTable, EgoNetwork, SocialNetwork, UnitId};
