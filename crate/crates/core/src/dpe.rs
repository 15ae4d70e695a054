//! Power-series solution of the discrete-time dynamic programming equations
//!
//! `pi(x) = pi(f(x,u)) + l(x,u)`, `0 = dpi/dx(f(x,u)) df/du(x,u) + dl/du(x,u)`
//! with `u = kappa(x)`.

use crate::error::Result;
use crate::problem::{ControlProblem, Mode};
use crate::series::{self, SeriesResidual, SeriesSolution};

/// Solves for `pi` through degree `r` and `kappa` through degree `r - 1`.
pub fn solve_dpe_series(p: &ControlProblem, r: usize) -> Result<SeriesSolution> {
    series::solve_series(p, r, Mode::Discrete)
}

/// Per-degree coefficient norms of both equations: the value equation
/// through degree `r`, the gradient equation through degree `r - 1`.
pub fn dpe_residual(sol: &SeriesSolution, p: &ControlProblem, r: usize) -> Result<SeriesResidual> {
    series::series_residual(sol, p, r)
}
