//! Layer-parallel training of deep residual networks.
//!
//! A residual network `X_{l+1} = X_l + F(X_l, W_l)` is cut into `K` stages
//! that run their forward and backward passes independently. Each stage
//! boundary gets an auxiliary variable `λ_k` (and, for the augmented
//! Lagrangian variant, a multiplier `κ_k`); a cheap correction step after every
//! iteration pulls the boundaries back toward consistency.
//!
//! This crate is `no_std` and needs only `alloc`. Threads, timing, files and
//! the command line live in the `respar` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataset;
pub mod decoupled;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod penalty;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Activation, InitGains, NetDims, NetSpec, ResidualNet};
pub use penalty::{PenaltyFn, PenaltyKind, ViolationReport};
pub use rng::Rng;
pub use tensor::Tensor;
