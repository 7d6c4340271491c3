//! Non-stationary, anisotropic Gaussian random fields for log significant wave
//! height.
//!
//! The field is a deformed Matérn SPDE: the local anisotropy `H(s)`, the
//! dampening `κ(s)` and the variance scaling `τ(s)` are smooth cosine-basis
//! regressions over the observation domain. A piecewise-linear finite element
//! discretisation turns the SPDE into a Gaussian Markov random field with a
//! sparse precision matrix, which drives
//!
//! * replicate log-likelihood evaluation and maximum-likelihood fitting
//!   ([`estimation`]),
//! * simulation and covariance columns ([`fem_gmrf`]),
//! * Rice-method exceedance bounds and fatigue damage along ship routes
//!   ([`risk_route`]),
//! * reconstruction of the deformation space ([`dspace`]).
//!
//! Gridded replicate data are read with [`data_ingest`], and the extended
//! triangulation lives in [`mesh`].

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_ingest;
pub mod deformation;
pub mod dspace;
pub mod error;
pub mod estimation;
pub mod fem_gmrf;
pub mod mesh;
pub mod risk_route;
pub mod sparse;
pub mod special;

pub use error::{Error, Result};

/// Planar point (longitude/latitude are treated as planar x/y).
pub type Point = nalgebra::Point2<f64>;
