//! Partition-function estimation and bounding for discrete pairwise models
//! through randomly perturbed MAP inference.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: pairwise models, spin-glass generators, model files.
//! - [`oracle`]: exhaustive enumeration (log Z, MAP, marginals) for small models.
//! - [`perturb`]: Gumbel noise and the exact full-dimensional identities.
//! - [`mapsolve`]: brute force, graph-cut and MPLP MAP solvers.
//! - [`bounds`]: low-dimensional upper bound, inflated-MAP approximation, lower bound.
//! - [`baselines`]: loopy BP and tree-reweighted BP.
//! - [`crf`]: perturbed CRF learning on a binary denoising task.
//! - [`harness`]: experiment sweeps, learning runs, CSV and SVG output.

pub mod baselines;
pub mod bounds;
pub mod crf;
mod error;
pub mod harness;
pub mod mapsolve;
pub mod model;
pub mod oracle;
pub mod perturb;
pub mod rng;

pub use error::{Error, Result};
pub use model::{Assignment, PairwiseModel, Score};
