//! Numerical toolkit for checking the Margulis-Ruelle inequality
//! h_mu(f) <= Integral of the sum of positive Lyapunov exponents,
//! on chart domains that may be noncompact and may have boundary.
//!
//! The crate is organised around the objects the inequality needs:
//!
//! * [`geometry`] — chart domains, the proximity gauge d0/d*, regular radii,
//!   covering tankage, epsilon-nets, boxes and their dyadic subdivisions.
//! * [`system`] — C1 maps with exact Jacobians, derivative cocycles,
//!   exterior-power norms, and the empirical distortion falsifier.
//! * [`measure`] — invariant measures (analytic densities and empirical
//!   samples), quadrature/Monte-Carlo integration, invariance defects,
//!   and the log-integrability report.
//! * [`lyapunov`] — QR (Benettin) spectrum estimation and the right-hand
//!   side of the inequality.
//! * [`partition`] — regularity levels, the adaptive box partitions, and
//!   their entropy bound.
//! * [`entropy`] — block/conditional entropy estimators and the
//!   decomposition diagnostics with their counting bounds.
//! * [`report`] — the verification pipeline, sweeps, and report emission.
//!
//! All randomness flows from one 64-bit seed through labelled substreams
//! ([`rng::SeedTree`]); parallel results are independent of the worker
//! count by construction (ordered maps, deterministic reductions).

pub mod config;
pub mod emit;
pub mod entropy;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod lyapunov;
pub mod measure;
pub mod par;
pub mod partition;
pub mod quad;
pub mod registry;
pub mod report;
pub mod rng;
pub mod schema;
pub mod system;

pub use error::{Error, Result};
pub use geometry::{BoxElement, ChartDomain, Point, RegularityProfile};
pub use measure::InvariantMeasure;
pub use system::SmoothSystem;
