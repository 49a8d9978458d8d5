//! Sub-channelized, DFT-based massive random access.
//!
//! Users pick a sub-channel (a random set of `m` out of `n` DFT sub-carriers)
//! and a pilot (a cyclic shift of a flat-spectrum base pilot) and keep that
//! choice for `t` time-slots. Slot 0 carries the pilot alone, later slots carry
//! one unit-modulus symbol each. The receiver back-projects every sub-channel's
//! compressive measurements, detects the active pilots jointly across slots with
//! a hierarchical sparse projection, estimates channels by restricted least
//! squares and demodulates data by quotients against slot 0.
//!
//! Module map:
//!
//! - [`spectral`]: DFT operators, sub-sampled DFT, coherence, Welch bound,
//!   prime-size DFT submatrix diagnostics.
//! - [`pilots`]: base pilots and their cyclic shifts.
//! - [`traffic`]: system configuration, sub-channel plans, users, CIRs, data.
//! - [`airlink`]: end-to-end and proxy receive chains.
//! - [`hisparse`]: hierarchical sparse supports and projections.
//! - [`detector`]: the per sub-channel receiver.
//! - [`analytics`]: closed-form bounds and parameter recipes.
//! - [`harness`]: seeded Monte Carlo experiments.
//! - [`cli`]: configuration files, subcommands and CSV output.

pub mod airlink;
pub mod analytics;
pub mod cli;
pub mod detector;
pub mod error;
pub mod harness;
pub mod hisparse;
pub mod pilots;
pub mod spectral;
pub mod traffic;

pub use error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex<f64>;

/// Euclidean norm of a complex vector.
pub fn norm(v: &[C64]) -> f64 {
    norm_sqr(v).sqrt()
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
