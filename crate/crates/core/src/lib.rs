//! Numerical toolkit for clustered interior blow-up solutions of the almost
//! critical problem -Delta u + V u = u^{p-eps} with zero Dirichlet data.
//!
//! The crate splits into six layers:
//!
//! * [`analytic`] - closed-form bubble profiles, interaction quantities, and
//!   the dimension-dependent constants obtained by radial quadrature;
//! * [`cluster`] - the configuration energy, its derivatives, and certified
//!   non-degenerate critical points;
//! * [`grid`] - tensor-grid discretization of the operator, linear solves,
//!   bubble projections, and the energy functional;
//! * [`expansion`] - predicted gradient expansions compared against direct
//!   discrete pairings, plus appendix-style ratio audits;
//! * [`construct`] - predicted concentration parameters, the leading-order
//!   balancing system, and assembly of approximate solutions;
//! * [`continuation`] - the discrete nonlinear solve, peak extraction,
//!   continuation sweeps in eps, and scaling-law fits.

pub mod analytic;
pub mod cluster;
pub mod construct;
pub mod continuation;
pub mod error;
pub mod expansion;
pub mod grid;

pub use error::{Error, Result};
