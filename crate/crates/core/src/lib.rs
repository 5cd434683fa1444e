//! Adaptive low-rank gradient projection with moment subspace transformation.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`] dense kernels (QR, SVD, symmetric eigenvalues, Kronecker)
//! * [`lowrank`] randomized range finding, the projection error ratio and the
//!   adaptive rank search
//! * [`optimizer`] the adaptive-rank projected Adam state machine plus fixed
//!   rank, full Adam and SGD baselines
//! * [`network`] a small bias-free MLP with exact backpropagation
//! * [`dynamics`] a simulator for the linear gradient recursion of reversible
//!   layers and its spectral decay analysis
//! * [`metrics`] effective-rank and optimizer-state memory accounting
//! * [`adapter`] low-rank adapter extraction from a weight delta
//! * [`train`] and [`cli`] experiment orchestration

pub mod adapter;
pub mod cli;
pub mod dynamics;
pub mod exec;
pub mod linalg;
pub mod lowrank;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod train;

pub use exec::Execution;
pub use linalg::Matrix;
