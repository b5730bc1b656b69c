//! Small-gain analysis for finite networks of monotone gains.
//!
//! The crate is organized bottom-up:
//!
//! - [`kinfty`]: piecewise-linear K∞ functions and their algebra.
//! - [`cone`]: the positive cone with sup-norm, partial order and `⊕`.
//! - [`network`]: graphs, gains and aggregation functions.
//! - [`dynamics`]: the gain operator `Γ`, its variants and iterations.
//! - [`checks`]: small-gain conditions and how they are probed.
//! - [`path`]: constructing and validating paths of strict decay.
//! - [`report`]: certificates and file output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cone;
pub mod dynamics;
pub mod kinfty;
pub mod network;
pub mod path;
pub mod report;

pub use cone::{order_compare, ConeVec, Order};
pub use dynamics::{GainOperator, StopReason, StopRule};
pub use kinfty::{GainDescriptor, KFun};
pub use network::{GainNetwork, Maf, NetworkSpec};
