//! Pareto-guided multi-objective gradient optimization for domain adaptation.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffnet`]: dense numeric core and small MLPs with analytic backward passes.
//! * [`losses`]: source classification, domain alignment, Bayes-refined
//!   target-classification-mimicking (TCM) loss and held-out guidance.
//! * [`pareto`]: dominance, front extraction and descent-direction checks.
//! * [`dirsolve`]: Gram compression, the direction-selection linear program,
//!   min-norm (MGDA) solver and descent guarantees.
//! * [`scenarios`]: synthetic domain-shift tasks and a toy non-convex front.
//! * [`trainer`]: the per-step update loop for every method.
//! * [`cli`]: experiment drivers and the file formats they emit.

pub mod cli;
pub mod diffnet;
pub mod dirsolve;
mod error;
pub mod losses;
pub mod pareto;
pub mod rng;
pub mod scenarios;
pub mod trainer;

pub use error::{Error, Result};
