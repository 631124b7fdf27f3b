//! Reconstruction of low-dimensional ODE models from scalar chaotic time
//! series by radial function-based regression.
//!
//! The pipeline runs: simulate a reference system, standardize and
//! delay-embed the observable, estimate time derivatives by central
//! differences, regress them onto a constant + linear + Gaussian RBF basis
//! with ridge regularization, then integrate and assess the learned model.

pub mod dynamics;
pub mod observe;
pub mod deriv;
pub mod basis;
pub mod regress;
pub mod model;
pub mod evaluate;
pub mod saddle;
pub mod io;
pub mod config;
pub mod pipeline;
