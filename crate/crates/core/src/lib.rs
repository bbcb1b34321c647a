//! In-situ soil parameter estimation for a bladed earthmoving vehicle.
//!
//! The crate couples a closed-form wedge-failure force model ([`fee`]) with
//! a neural estimator ([`estimator`]) that predicts the unknown soil
//! parameters from a short history of kinematics and commands and is
//! trained only on measured blade forces. Training data comes from a 2-D
//! bladed-vehicle simulator ([`simulator`]), assembled by [`datakit`] and
//! scored by [`evalkit`].

pub mod datakit;
pub mod diffnet;
pub mod estimator;
pub mod evalkit;
pub mod fee;
pub mod limits;
pub mod optim;
pub mod simulator;
