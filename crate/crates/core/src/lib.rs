//! Two-party vertical semi-federated learning.
//!
//! A split-network teacher is trained over the overlapped rows through a
//! simulated active/passive message exchange. A single-party student is then
//! distilled from the frozen teacher over every row the active party holds,
//! using feature imitation and pairwise ranking consistency, and compared
//! against a local-only model and plain privileged distillation.

pub mod autodiff;

pub use autodiff::{Graph, Tensor, Var};
pub mod data;
pub mod fedsim;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod trainer;
