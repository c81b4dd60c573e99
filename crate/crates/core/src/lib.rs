//! Numerical laboratory for channel estimation in IRS-aided near-field
//! multi-user MIMO links.
//!
//! The crate synthesizes spherical-wavefront channels between a planar
//! base-station array, a planar reflecting surface, and single-antenna
//! users, simulates pilot transmission, and benchmarks classical (LS,
//! MMSE, CRLB reference) against learned (region-classified, federated
//! deep-residual) estimators of the cascaded channel.

pub mod channel;
pub mod classify;
pub mod dataset;
pub mod fed;
pub mod geometry;
pub mod linalg;
pub mod net;
pub mod pilot;
pub mod rng;
pub mod tensor;

pub use geometry::{ArrayResponse, SphericalCoord, UpaConfig};
