//! Privacy-preserving driving-style classification between an insurer and a
//! fleet of drivers.
//!
//! Two protocols, both built on Paillier's additively homomorphic
//! cryptosystem and run over an in-process simulated network:
//!
//! - [`training`]: distributed ID3 decision-tree learning where per-node
//!   class counts are aggregated with ring secure sums ([`secure_sum`]), so
//!   the insurer learns count totals and the tree but never any individual
//!   driver's data.
//! - [`recognition`]: classification of a new driver by encrypted
//!   dot-product matching against the tree's aggressive paths, with the
//!   driver learning the verdict and the insurer learning the verdict plus
//!   how many permuted candidates it had to decrypt.
//!
//! [`datagen`] produces synthetic telematics datasets and runs the scaling
//! benchmarks; [`simnet`] records the transcripts that make both bandwidth
//! accounting and disclosure audits concrete.

pub mod datagen;
pub mod domain;
pub mod error;
pub mod paillier;
pub mod recognition;
pub mod rng;
pub mod samples;
pub mod secure_sum;
pub mod simnet;
pub mod training;

pub use error::{Error, Result};
