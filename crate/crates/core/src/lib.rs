#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
//! Covariance estimation for asynchronous, noisy and jump-contaminated
//! high-frequency log prices.
//!
//! Log prices follow `X(t) = X(t−1) + D + J(t) + V(t)` with
//! `V(t) ~ N(0, Γ)` and are seen through `Y(t) = Ĩ(t) X(t) + W(t)`, where
//! `Ĩ(t)` keeps the assets that traded at `t`. The estimators target `Γ`.

pub mod bench;
pub mod error;
pub mod gibbs;
pub mod kalman;
pub mod kecm;
pub mod linalg;
pub mod model;
pub mod random;
pub mod simulate;
pub mod theory;

pub use error::{Error, Result};
pub use model::{
    default_hyperparameters, validate_panel, HyperparameterConfig, Hyperparameters, ObservationPanel, StateParams,
};
