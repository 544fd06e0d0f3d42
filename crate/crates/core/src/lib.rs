//! Baseline-improved economic MPC for a grid-connected microgrid with battery
//! storage under energy and demand charges.
//!
//! The crate covers tariff billing, the augmented running-peak dynamics, a
//! small dense LP/QP kernel, the reference and proposed controllers, a
//! closed-loop co-simulation harness, numerical checks of the cost
//! guarantees, and configuration/data I/O.

pub mod controllers;
pub mod convex;
pub mod dynamics;
pub mod error;
pub mod guarantees;
pub mod harness;
pub mod io;
pub mod site;
pub mod tariff;

pub use error::{Error, Result};
