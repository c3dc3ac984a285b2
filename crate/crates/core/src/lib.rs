//! Exact population-loss gradient descent for a one-hidden-layer,
//! non-overlapping convolutional network with ReLU activation and weight
//! normalization, under standard Gaussian input.
//!
//! The student is `f(Z, v, a) = Σᵢ aᵢ σ(Zᵢᵀv/‖v‖₂)` and the teacher
//! `f(Z, w*, a*) = Σᵢ a*ᵢ σ(Zᵢᵀw*)`. Because the input is Gaussian, the loss
//! and its gradients have closed forms ([`analytic`]), which
//! [`montecarlo`] checks by sampling. [`dynamics`] runs gradient descent on
//! the closed forms, and [`experiments`] reproduces the trajectory and
//! success-probability studies.

pub mod analytic;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod init;
mod linalg;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    angle, make_target_a, ExperimentConfig, InitScheme, StationaryClass, StepSizePolicy,
    StudentParams, TeacherParams, TrajectoryRecord,
};
