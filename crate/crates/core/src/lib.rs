//! Symbolic abstractions of nonlinear control systems with Lipschitz
//! disturbances, alternating approximate bisimulation checks, and controller
//! synthesis by fixed-point games on the abstraction.

pub mod abstraction;
pub mod altbisim;
pub mod cli;
pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod lyapunov;
pub mod par;
pub mod spline;
pub mod synthesis;
pub mod system;

pub use error::{Error, Result};
