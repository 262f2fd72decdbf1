//! Parabolic Anderson model driven by the degree-normalised Laplacian on
//! Galton-Watson trees.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: rooted graphs, Galton-Watson sampling, balls, gluing, rooted-tree isomorphism.
//! * [`potential`]: i.i.d. double-exponential potentials, scale functions, island systems.
//! * [`spectral`]: Dirichlet Hamiltonians on windows, eigenpairs, kernel, resolvent bounds.
//! * [`variational`]: the functional `I + rho*J`, its minimisation, duality and gluing.
//! * [`walker`]: continuous-time random walk, Feynman-Kac Monte Carlo, path decomposition.
//! * [`evolver`]: deterministic solution of the Cauchy problem on a window.
//! * [`harness`]: experiment drivers, run manifests and CSV output.

pub mod corpus;
pub mod error;
pub mod evolver;
pub mod graph;
pub mod harness;
pub mod potential;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod variational;
pub mod walker;

pub use error::{Error, Result};
