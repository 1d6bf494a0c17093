//! Iterative learning control with a neural warm start for friction
//! compensation on a simulated Lorentz-force linear actuator.
//!
//! The crate is organised bottom-up: [`signals`] provides sampling, filtering
//! and discretization; [`plant`], [`feedback`], [`filters`] and
//! [`estimation`] model the loop components; [`ilc`] and [`neural`] hold the
//! learning parts; [`scenario`] wires everything into experiments driven by
//! [`config::ExperimentConfig`].

pub mod config;
pub mod error;
pub mod estimation;
pub mod feedback;
pub mod filters;
pub mod ilc;
pub mod neural;
pub mod plant;
pub mod scenario;
pub mod signals;

pub use error::{Error, Result};
