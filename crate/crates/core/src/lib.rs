//! Stability analysis of neural state-feedback controllers.
//!
//! [`dalgebra`] supplies truncated Taylor arithmetic, which every other
//! module runs on through the [`dalgebra::Scalar`] trait. [`odeflow`]
//! integrates the quadcopter and [`gcnet`] evaluates the controller.
//! [`pipeline`] produces training data and trains it, while [`linstab`] and
//! [`hotm`] analyse the closed loop locally and along a trajectory.

pub mod dalgebra;
pub mod gcnet;
pub mod hotm;
pub mod linalg;
pub mod linstab;
pub mod odeflow;
pub mod pipeline;
