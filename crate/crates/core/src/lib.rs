//! Readout modelling for electron-shelving detection of a two-level ion qubit.
//!
//! The crate covers the full chain from photon-count statistics to process
//! tomography:
//!
//! * [`photon_statistics`]: analytic count distributions for the bright and
//!   dark states, including decay of the shelved level during detection and
//!   preparation/shelving errors.
//! * [`discrimination`]: threshold and arrival-time state inference, the
//!   mean detection error and the `(t_det, n_th)` optimisation surface.
//! * [`monte_carlo`]: seedable, order-independent simulation of detection
//!   shots producing photon arrival traces and count histograms.
//! * [`mle_fit`]: maximum-likelihood fits of count histograms.
//! * [`tomography`]: state reconstruction, fidelities, chi-matrix process
//!   tomography and Bloch-sphere error surfaces.
//! * [`error_budget`]: combination rule for multi-pulse shelving errors.
//! * [`cli`]: file-based command implementations behind the `ion-readout`
//!   binary.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod discrimination;
pub mod error;
pub mod error_budget;
pub mod mle_fit;
pub mod monte_carlo;
pub mod photon_statistics;
pub mod tomography;

pub use error::{ReadoutError, Result};
