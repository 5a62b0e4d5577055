//! Despreading correlators for GPS-like spread-spectrum channels under
//! cross-correlation interference.
//!
//! The crate simulates a single tracking channel at chip rate: a received
//! 1 ms epoch vector is a linear combination of the authentic C/A code, up to
//! three delayed spoofing replicas, optional multi-access interference from
//! other satellites, and optional noise. Three detectors recover the
//! navigation bit from that vector:
//!
//! - a conventional matched filter (the prompt replica correlator),
//! - a group-weighted MMSE correlator that splits the epoch into `M = N / g`
//!   partial correlations, tracks their autocorrelation matrix over a sliding
//!   window, and re-solves the despreading weights every epoch,
//! - a dense MMSE reference that works on the full `N x N` autocorrelation
//!   matrix, practical only for small synthetic codes.
//!
//! Supporting modules cover Gold-code generation and sidelobe analysis
//! ([`prn`]), epoch composition and raw I/Q file I/O ([`signal`]), the
//! correlator chain ([`correlator`]), the sliding-window MMSE engine
//! ([`mmse`]), FLOP and wall-time budgeting ([`budget`]), and the Monte Carlo
//! BER-vs-ISR harness ([`harness`]).

pub mod correlator;
mod error;
pub mod linalg;
pub mod mmse;
pub mod prn;
mod seed;
pub mod signal;

pub use error::{Error, Result};
