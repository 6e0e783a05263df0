//! Relax-compensate-recover inference for discrete Markov random fields.
//!
//! A model is fully decomposed by cloning every variable occurrence, the
//! relaxed equivalence constraints are compensated with unary factors, and
//! constraints are recovered in batches until the decoded assignment agrees
//! with every remaining relaxed constraint, which certifies it as an exact MPE.
//!
//! ```
//! use rcr::{bench::{generate_grid, GridSpec}, recover::{rcr_solve, RecoveryConfig}};
//!
//! let fg = generate_grid(&GridSpec::new(3, 3, 7));
//! let (state, trace) = rcr_solve(&fg, &RecoveryConfig::default(), 1e-8, 1000).unwrap();
//! assert!(state.certified);
//! assert!(!trace.records.is_empty());
//! ```

pub mod bench;
pub mod compensate;
pub mod decompose;
pub mod error;
pub mod exact;
pub mod model;
pub mod oracle;
pub mod recover;

pub use compensate::{Scheme, Task};
pub use decompose::{fully_decompose, DecomposedModel};
pub use error::{RcrError, Result};
pub use exact::Semiring;
pub use model::{Assignment, Factor, FactorGraph, LOG_ZERO};
pub use recover::{rcr_solve, BoundState, RecoveryConfig, SolveTrace};
