//! Desk-scale precipitation nowcasting on gridded half-hourly rain-rate
//! sequences.
//!
//! The crate provides, end to end:
//!
//! - [`grid`]: the NCG sequence format, synthetic advection data, windowing
//!   into `(9 input, 3 target)` samples, and the log-space rate transform;
//! - [`tensor`]: a dense f64 tensor and manually differentiated primitives
//!   (3-D convolution, transposed convolution, max pooling, concatenation,
//!   pointwise nonlinearities);
//! - [`nn`]: Xavier initialization, batch normalization, parameter and
//!   checkpoint bookkeeping, and a splittable deterministic RNG;
//! - [`models`]: five nowcasting architectures (CNC, CNC-R, CNC-D, RNC,
//!   RNC-R) built on those primitives;
//! - [`baselines`]: persistence, per-pixel linear regression, and per-pixel
//!   random forest comparison methods;
//! - [`training`]: MSE loss, Adam, and the epoch loop;
//! - [`evaluation`]: continuous and categorical skill scores, the recursive
//!   feedback-loop forecaster, and per-lead-time aggregation;
//! - [`gradcheck`]: the central-difference verification harness for every
//!   gradient path in the crate.
//!
//! Every public computation is deterministic given its seeds; parallel code
//! paths use fixed work decompositions so results do not depend on thread
//! count.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod grid;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Caps the global worker pool at `n` threads. Results are bit-identical for
/// any thread count (parallel code uses fixed work decompositions); this only
/// trades latency for cores. Call before any parallel work; later calls fail.
pub fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool already initialized: {}", e)))
}
