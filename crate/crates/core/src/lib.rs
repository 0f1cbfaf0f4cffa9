//! Identifiability checking and moment-based parameter recovery for
//! latent-tree parsing models.
//!
//! The crate covers constituency models (PCFG and its factorized variants),
//! projective dependency models, and the fixed-topology HMM and latent class
//! models. It provides
//!
//! - exact moments and their Jacobian through inside/outside passes over a
//!   hypergraph that sums over sentences and parse trees ([`hypergraph`]),
//! - a randomized Jacobian-rank test for local identifiability ([`identifiability`]),
//! - mixing matrices that express observed moments as topology-weighted sums of
//!   compound parameters ([`mixing`]),
//! - spectral estimators that unmix those compound parameters and decompose
//!   them back into model parameters ([`estimators`], [`spectral`]).

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod hypergraph;
pub mod identifiability;
pub mod mixing;
pub mod model;
pub mod observations;
pub mod spectral;

pub use error::{Error, Result};
