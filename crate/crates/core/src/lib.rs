//! Differentially private training with importance-based gradient masking.
//!
//! The crate is organised bottom-up:
//!
//! * [`math`] holds the dense vector primitives (norms, top-k masks, seeded
//!   Gaussian sampling) every other module builds on.
//! * [`models`] provides small differentiable classifiers with exact
//!   per-sample gradients and a central-difference oracle.
//! * [`privacy`] is the accountant: Gaussian calibration, the closed-form
//!   DPSGD budget, and an RDP grid accountant built on the same per-step
//!   moment bound.
//! * [`dp_optim`] implements the training mechanisms: importance scoring and
//!   mask generation, standardize / clip / noise / restore, progressive
//!   unfreezing, and a DPSGD baseline.
//! * [`data`] parses IDX files, synthesises separable blobs and samples
//!   fixed-size mini-batches without replacement.
//! * [`harness`] wires everything into configurable experiments, sweeps and
//!   numeric checks of the convergence bounds.

pub mod data;
pub mod dp_optim;
pub mod error;
pub mod harness;
pub mod math;
pub mod models;
pub mod privacy;

pub use data::{BatchSampler, Dataset};
pub use dp_optim::{ClipState, ImportanceState, PruningMode, UnfreezeSchedule};
pub use error::{Error, Result};
pub use math::{BinaryMask, ParamVector, SeededRng};
pub use models::{Architecture, GradBatch, Model};
pub use privacy::{PrivacyLedger, RdpCurve};
