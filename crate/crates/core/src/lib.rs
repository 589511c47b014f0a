//! Spin-j polarimetry for noncyclic SO(3) evolutions.
//!
//! The forward model ([`polarimetry`]) predicts the output intensity of a
//! two-flipper single-beam setup for any spin and analyzer channel; the
//! inverse pipeline ([`extraction`]) recovers the relative phase (modulo pi)
//! and the visibility from a scan of those intensities. [`oracle`] holds
//! brute-force dense-matrix references used to audit both.

pub mod error;
pub mod evolution;
pub mod extraction;
pub mod oracle;
pub mod paper_example;
pub mod polarimetry;
pub mod profile_io;
pub mod spin_algebra;
pub mod verify;

pub use error::{Error, PipelineError, Result, Stage};
pub use spin_algebra::{HalfInt, SpinMatrix};
