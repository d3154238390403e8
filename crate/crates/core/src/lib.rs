//! Desk-scale robot pouring workbench.
//!
//! The crate simulates a 7-DOF arm holding a container of water above a
//! receiving cup on a force plate. It estimates how much weight has left the
//! held container from (noisy) joint torques and synthetic fingertip tactile
//! signals, feeds that estimate to a three-state PID pouring controller, and
//! measures how accurately the target volume ends up in the receiver.
//!
//! Pipeline, bottom-up:
//!
//! - [`arm_model`]: kinematic chain, forward kinematics, geometric Jacobian,
//!   least-squares end-effector wrench from joint torques.
//! - [`pour_sim`]: outflow, free fall, force plate with its internal filter.
//! - [`sensor_sim`]: joint-torque and tactile feeds, window/baseline conditioning.
//! - [`controller`]: pour-start detection, trapezoidal reference, PID, FSM.
//! - [`dataset`]: trial sampling, closed-loop logging, ground-truth time shift,
//!   splits and persistence.
//! - [`estimator`]: the tactile, proprioceptive and multimodal regressors, the
//!   analytical Fz baseline and the training stack.
//! - [`evalkit`]: offline MSE, the 12-trial accuracy grid, generalization
//!   sweeps and reports.
//! - [`pipeline`]: the stages behind the `pourbench` binary.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod arm_model;
pub mod config;
pub mod controller;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod evalkit;
pub mod pipeline;
pub mod pour_sim;
pub mod scene;
pub mod sensor_sim;
pub mod units;

pub use error::{Error, Result};
