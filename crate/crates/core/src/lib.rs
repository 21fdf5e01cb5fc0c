//! Sensitivity-uncertainty alignment workbench.
//!
//! Everything is built around exact finite distributions: a synthetic
//! latent-interpretation world where all oracle quantities (ambiguity,
//! true uncertainty, Bayes risk) are computable in closed form, a small
//! differentiable classifier with hand-derived gradients, perturbation
//! generators, SUA scoring with abstention, the SUA-TR trainer with
//! baselines, and the metric / bound-verification harness.

pub mod error;
pub mod eval;
pub mod model;
pub mod perturb;
pub mod prob;
pub mod rngs;
pub mod score;
pub mod task;
pub mod train;

pub use error::{Error, Result};
pub use prob::{Dist, DivergenceKind, SmoothingPolicy};
