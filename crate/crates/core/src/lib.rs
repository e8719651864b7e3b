//! Deep, second-order and CP-factorized recurrent networks with executable
//! expressivity constructions, numerical oracles, hand-written BPTT and a
//! seeded experiment harness.
//!
//! The crate is organized bottom-up:
//!
//! * [`numkit`]: dense vectors, matrices, order-3 tensors, mode products,
//!   CP evaluation, SVD rank and a reproducible RNG.
//! * [`models`]: configurations, parameters and forward passes.
//! * [`tasks`]: copy, sinus, copy-sinus and parity datasets.
//! * [`theory`]: weight constructions (copier, flattening, diagonal power,
//!   parity) and parameter-count formulas.
//! * [`oracles`]: black-box checks for affinity, polynomial degree,
//!   Jacobian rank and hidden-state equivalence.
//! * [`autograd`]: MSE loss, backpropagation through time and Adam.
//! * [`experiments`]: seeded training runs, sweeps and the verification
//!   campaign.

pub mod autograd;
pub mod error;
pub mod experiments;
pub mod models;
pub mod numkit;
pub mod oracles;
pub mod tasks;
pub mod theory;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn hash_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
