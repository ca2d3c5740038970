//! Numerical engine for a renewal-based random copolymer model.
//!
//! The model lives on a recurrent renewal process with a heavy-tailed
//! inter-arrival law `K(n) ~ C_K / n^{1+alpha}` and an i.i.d. standard
//! Gaussian disorder sequence. The crate provides:
//!
//! * [`renewal`] — inter-arrival laws (pure power law, simple random walk
//!   first-return law), renewal mass functions, tails, asymptotic ratios
//!   and homogeneous pinning sums;
//! * [`disorder`] — seeded Gaussian disorder with prefix sums, block tilts
//!   and the exact Radon–Nikodym fractional moment of the tilted measure;
//! * [`partition`] — log-domain dynamic programs for quenched, annealed
//!   and tilted-annealed partition functions, the random-walk path form,
//!   and Monte-Carlo fractional moments;
//! * [`coarsegrain`] — the exact block decomposition of the partition
//!   function over coarse-grained renewal skeletons;
//! * [`certificate`] — a numerical delocalization certificate at slope
//!   `h = rho * lambda`, and a search for the smallest certified slope;
//! * [`estimator`] — Monte-Carlo quenched free energy, critical-point
//!   bisection in `h`, and critical-slope tables.
//!
//! All randomized computations are driven by explicit 64-bit seeds and a
//! counter-based per-replica keying scheme, so results are reproducible
//! bit-for-bit independently of scheduling.

pub mod certificate;
pub mod coarsegrain;
pub mod convolve;
pub mod disorder;
pub mod error;
pub mod estimator;
pub mod logspace;
pub mod partition;
pub mod renewal;
pub mod series;

pub use error::{Error, Result};

/// Version tag carried by every serialized report and CSV header.
pub const SCHEMA_VERSION: u32 = 1;
