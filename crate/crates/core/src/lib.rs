//! Uncertainty-aware latent model-predictive control.
//!
//! An ensemble of recurrent state-space models ([`rssm`], [`ensemble`]) is
//! learned from partially observed episodes, and actions are planned in
//! latent space by a Gaussian-mixture VI-MPC optimizer ([`planner`]) that
//! averages predicted returns over ensemble members. [`agent`] runs the
//! collect / train / control loop on the toy tasks in [`envs`].

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod autodiff;
pub mod ensemble;
pub mod envs;
pub mod error;
pub mod optim;
pub mod par;
pub mod planner;
pub mod rng;
pub mod rssm;
pub mod tensor;

pub use error::{Error, Result};
pub use par::Execution;
