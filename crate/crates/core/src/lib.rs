//! Rare-event probability estimation with multifidelity active learning.
//!
//! The crate estimates small failure probabilities `P(F(X) > threshold)` for
//! expensive limit-state models. It combines:
//!
//! * subset simulation with component-wise Metropolis-Hastings chains
//!   ([`subset`]),
//! * Gaussian process surrogates trained from scratch ([`gp`]),
//! * U-function active learning that calls the expensive model only where the
//!   surrogate is uncertain near the current threshold ([`learning`]),
//! * a multifidelity layer that maintains one correction surrogate per cheap
//!   model and picks, per sample, the cheap model whose corrected output is
//!   most trustworthy ([`multifid`]).
//!
//! Everything is deterministic given a master seed: random streams are derived
//! by name so results do not depend on evaluation order or worker count.
//!
//! The crate is `no_std` + `alloc`; IO, file formats, and the CLI live in the
//! companion `mfal-cli` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]
// Numeric kernels index several parallel arrays at once; indexed loops keep
// them aligned with the formulas they implement.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

/// A deterministic limit-state model: input point to scalar response.
/// Non-finite output signals model failure and is handled by callers.
pub type LimitStateFn = fn(&[f64]) -> f64;

pub mod bench;
pub mod dist;
pub mod doe;
pub mod driver;
pub mod gp;
pub mod learning;
pub mod linalg;
pub mod math;
pub mod multifid;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod subset;
