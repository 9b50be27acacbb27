//! Low-rank Ising graphical models fitted by one-shot federated
//! bi-factored gradient descent.

pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod federation;
pub mod harness;
pub mod ising;
pub mod optimize;
pub mod sampling;
pub mod seed;
pub mod spectral;

pub use data::{BinaryDataset, BinarySample};
pub use error::{Error, ProtocolError, Result, WireError};
pub use ising::{FactorPair, ParameterMatrix, PseudoLikelihood};
