//! Closed-form Hessian sharpness for deep matrix factorization.
//!
//! The loss is `‖M − W_L ⋯ W_1‖_F²`. At any global minimizer the largest
//! Hessian eigenvalue equals twice the top eigenvalue of the Kronecker-sum
//! operator `Σ_i B_iᵀB_i ⊗ A_iA_iᵀ`, where `A_i` and `B_i` are the products of
//! the factors above and below factor `i`. This crate computes that value
//! matrix-free, checks it against a dense Hessian and a finite-difference
//! Hessian, and runs the gradient-descent escape experiments and loss
//! landscape slices around a minimum.
//!
//! Parameters are flattened as the concatenation of the column-major
//! vectorizations of `W_1, …, W_L`. Hessian eigenvectors, trajectory snapshots
//! and projection bases all use this ordering.

pub mod cli;
pub mod directional;
pub mod dynamics;
pub mod error;
pub mod factors;
pub mod hessian_oracle;
pub mod landscape;
pub mod linalg;
pub mod sharpness;

pub use directional::Direction;
pub use error::{Error, Result};
pub use factors::{DimSignature, FactorChain, Target};
pub use sharpness::{Method, SharpnessReport};

/// Dense real matrix used for factors, partial products and operators.
pub type Mat = nalgebra::DMatrix<f64>;
