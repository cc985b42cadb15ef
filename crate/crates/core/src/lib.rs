//! Structural comparison of dissimilarity matrices.
//!
//! A reference matrix `Y1` is decomposed as `A_k X_k A_kᵀ` for a range of
//! complexities `k`; a target `Y2` is then predicted from the same structure
//! `A_k` with a refitted relationship, and the residuals show which subjects
//! the reference structure fails to explain.

// `!(x >= 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comparison;
pub mod dissim;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mixture_model;
pub mod significance;
pub mod simulation;
pub mod stability;
pub mod svd_model;

pub use comparison::{structural_comparison, ComparisonOptions, ComparisonResult};
pub use dissim::{DissimilarityMatrix, FeatureTable};
pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
pub use svd_model::{Method, StructureScan};
