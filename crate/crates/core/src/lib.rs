//! Local polynomial solutions of infinite-horizon optimal control problems.
//!
//! The crate computes power-series approximations of the optimal cost `pi`
//! and feedback `kappa` for discrete-time dynamic programming equations and
//! the continuous-time HJB PDE, checks the Hamiltonian structure behind them,
//! validates approximations on Lyapunov sublevel sets and extends 1-D
//! solutions across a domain by Taylor patching.

pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod oracle;
pub mod patch;
pub mod albrecht;
pub mod dpe;
pub mod hamiltonian;
pub mod polyalg;
pub mod problem;
pub mod riccati;
pub mod series;
pub mod stats;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use polyalg::{HomogeneousPoly, MultiIndex, Poly, PolySeries};
pub use problem::{ControlModel, ControlProblem, FnPolicy, Mode, Policy};
pub use riccati::{LqrData, RiccatiSolution};
pub use series::{SeriesResidual, SeriesSolution};
