//! Branching-structure analysis of level-dependent quasi-birth-and-death
//! walks on the half-strip `{0, 1, 2, ...} x {1, ..., d}`.
//!
//! The crate computes exit-probability and mean-offspring matrices level by
//! level, decides (positive) recurrence from the resulting series, builds the
//! explicit stationary distribution together with its geometric decay rate,
//! and checks all of it against a truncated global solve and a Monte Carlo
//! simulator.
//!
//! ```
//! use halfstrip::model::{build_retrial, uniformize, ThetaSpec};
//! use halfstrip::stationary::decay_rate_of_tail;
//!
//! let g = build_retrial(0.2, 0.5, 1, &ThetaSpec::Constant(0.3)).unwrap();
//! let model = uniformize(&g, 1.0).unwrap();
//! let lambda = decay_rate_of_tail(&model, 1e-12).unwrap();
//! assert!((lambda - 2.0 / 3.0).abs() < 1e-10);
//! ```

pub mod branching;
pub mod classification;
pub mod cli;
pub mod error;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod stationary;

pub use error::{Error, Result};
pub use model::{BlockTriple, QbdModel};
pub use numeric::{Matrix, RowVector};
