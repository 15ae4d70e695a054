//! Degree-by-degree solver shared by the discrete and continuous problems.
//!
//! At level `d` the cost correction `pi^[d+1]` solves a linear equation on
//! the homogeneous polynomials of degree `d+1`, whose right-hand side is the
//! degree-`d+1` residual of the value equation with everything known so far
//! substituted. The feedback correction `kappa^[d]` then follows from the
//! degree-`d` residual of the first-order condition in `u`.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::polyalg::{enumerate_monomials, HomogeneousPoly, Poly, PolySeries};
use crate::problem::{ControlProblem, Mode, Policy};
use crate::riccati::{solve_care, solve_dtare};

/// Truncated power-series solution `pi` (degrees 2..=r) and `kappa`
/// (degrees 1..=r-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSolution {
    pub mode: Mode,
    pub trunc: usize,
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub pi: Poly,
    pub kappa: PolySeries,
    /// Per level `d = 2..r-1`: change of the value residual when the new
    /// `kappa^[d]` is included (zero in exact arithmetic).
    pub cancellation_defect: Vec<f64>,
    /// Per level: 2-norm condition number of the assembled level operator.
    pub level_condition: Vec<f64>,
    #[serde(skip)]
    pi_grad: Vec<Poly>,
}

impl SeriesSolution {
    fn new(
        mode: Mode,
        trunc: usize,
        p: DMatrix<f64>,
        k: DMatrix<f64>,
        pi: Poly,
        kappa: PolySeries,
    ) -> Self {
        let pi_grad = pi.grad();
        SeriesSolution {
            mode,
            trunc,
            p,
            k,
            pi,
            kappa,
            cancellation_defect: Vec::new(),
            level_condition: Vec::new(),
            pi_grad,
        }
    }

    pub fn n(&self) -> usize {
        self.pi.n_vars()
    }

    pub fn m(&self) -> usize {
        self.kappa.outputs()
    }

    /// `pi^[3..=r]`
    pub fn pi_parts(&self) -> Vec<HomogeneousPoly> {
        (3..=self.trunc).map(|d| self.pi.hom_part(d)).collect()
    }

    /// `kappa^[2..=r-1]`, one entry per degree, each with `m` components.
    pub fn kappa_parts(&self) -> Vec<Vec<HomogeneousPoly>> {
        (2..self.trunc).map(|d| self.kappa.hom_part(d)).collect()
    }

    /// Scalar coefficient list `pi^[2..=r]` for `n = 1`.
    pub fn pi_coefficients_1d(&self) -> Vec<f64> {
        (2..=self.trunc).map(|d| self.pi.coeff(&[d as u32])).collect()
    }

    /// Scalar coefficient list `kappa^[1..=r-1]` for `n = m = 1`.
    pub fn kappa_coefficients_1d(&self) -> Vec<f64> {
        (1..self.trunc)
            .map(|d| self.kappa.component(0).coeff(&[d as u32]))
            .collect()
    }

    pub fn pi_gradient(&self) -> Result<PolySeries> {
        PolySeries::new(self.pi.grad())
    }

    /// Rebuilds cached data after deserialization.
    pub fn refresh(&mut self) {
        self.pi_grad = self.pi.grad();
    }
}

impl Policy for SeriesSolution {
    fn value(&self, x: &[f64]) -> f64 {
        self.pi.eval(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        if self.pi_grad.len() != self.n() {
            return self.pi.grad().iter().map(|g| g.eval(x)).collect();
        }
        self.pi_grad.iter().map(|g| g.eval(x)).collect()
    }

    fn feedback(&self, x: &[f64]) -> Vec<f64> {
        self.kappa.components().iter().map(|c| c.eval(x)).collect()
    }
}

/// `x -> (x, kappa(x))` as `n + m` polynomials in `n` variables.
pub(crate) fn closed_loop_inner(kappa: &PolySeries, trunc: usize) -> Vec<Poly> {
    let n = kappa.n_vars();
    let mut inner: Vec<Poly> = (0..n).map(|i| Poly::var(n, trunc, i)).collect();
    inner.extend(kappa.components().iter().map(|c| c.truncate(trunc)));
    inner
}

/// `f(x, kappa(x))` and `l(x, kappa(x))` truncated at `trunc`.
pub(crate) fn substitute(
    p: &ControlProblem,
    kappa: &PolySeries,
    trunc: usize,
) -> Result<(Vec<Poly>, Poly)> {
    let inner = closed_loop_inner(kappa, trunc);
    let fbar = p
        .f
        .components()
        .iter()
        .map(|c| c.compose(&inner, trunc))
        .collect::<Result<Vec<_>>>()?;
    let lbar = p.l.compose(&inner, trunc)?;
    Ok((fbar, lbar))
}

/// Value-equation residual: `pi - pi(f) - l` (discrete) or
/// `grad pi . f + l` (continuous), truncated at `trunc`.
pub(crate) fn value_residual(
    mode: Mode,
    pi: &Poly,
    fbar: &[Poly],
    lbar: &Poly,
    trunc: usize,
) -> Result<Poly> {
    match mode {
        Mode::Discrete => {
            let shifted = pi.compose(fbar, trunc)?;
            Ok(pi.truncate(trunc).sub(&shifted).sub(lbar).truncate(trunc))
        }
        Mode::Continuous => {
            let mut acc = lbar.truncate(trunc);
            for (g, f) in pi.grad().iter().zip(fbar) {
                acc = acc.add(&g.mul(f, trunc));
            }
            Ok(acc.truncate(trunc))
        }
    }
}

/// First-order condition in `u`, one polynomial per control, truncated at
/// `trunc`:
/// discrete `dpi/dx(f) df/du + dl/du`, continuous `dpi/dx df/du + dl/du`,
/// all evaluated along `u = kappa(x)`.
pub(crate) fn gradient_residual(
    p: &ControlProblem,
    pi: &Poly,
    kappa: &PolySeries,
    trunc: usize,
) -> Result<Vec<Poly>> {
    let n = p.n;
    let inner = closed_loop_inner(kappa, trunc.max(1));
    let grad = pi.grad();
    let grad_at = match p.mode {
        Mode::Discrete => {
            let fbar = p
                .f
                .components()
                .iter()
                .map(|c| c.compose(&inner, trunc))
                .collect::<Result<Vec<_>>>()?;
            grad.iter()
                .map(|g| g.compose(&fbar, trunc))
                .collect::<Result<Vec<_>>>()?
        }
        Mode::Continuous => grad.iter().map(|g| g.truncate(trunc)).collect(),
    };
    let mut out = Vec::with_capacity(p.m);
    for j in 0..p.m {
        let mut acc = p.l.partial(n + j).compose(&inner, trunc)?;
        for (i, fi) in p.f.components().iter().enumerate() {
            let fu = fi.partial(n + j).compose(&inner, trunc)?;
            acc = acc.add(&grad_at[i].mul(&fu, trunc));
        }
        out.push(acc.truncate(trunc));
    }
    Ok(out)
}

/// Matrix of the level operator on degree-`deg` monomials:
/// `q -> q(x) - q(Acl x)` (discrete) or `q -> dq/dx Acl x` (continuous).
pub fn level_operator(mode: Mode, acl: &DMatrix<f64>, deg: usize) -> DMatrix<f64> {
    let n = acl.nrows();
    let basis = enumerate_monomials(n, deg);
    let dim = basis.len();
    let mut mat = DMatrix::zeros(dim, dim);
    let lin: Vec<Poly> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|j| acl[(i, j)]).collect();
            Poly::linear(&row, deg)
        })
        .collect();
    for (col, e) in basis.iter().enumerate() {
        let mut q = Poly::zero(n, deg);
        q.add_term(&e.0, 1.0).expect("basis monomial");
        let image = match mode {
            Mode::Discrete => {
                let moved = q.compose(&lin, deg).expect("linear inner map");
                q.sub(&moved).hom_part(deg)
            }
            Mode::Continuous => {
                let mut acc = Poly::zero(n, deg);
                for (i, g) in q.grad().iter().enumerate() {
                    acc = acc.add(&g.mul(&lin[i], deg));
                }
                acc.hom_part(deg)
            }
        };
        for (row, &v) in image.coeffs().iter().enumerate() {
            mat[(row, col)] = v;
        }
    }
    mat
}

fn solve_level(
    mode: Mode,
    acl: &DMatrix<f64>,
    rho: &HomogeneousPoly,
) -> Result<(HomogeneousPoly, f64)> {
    let deg = rho.degree();
    let mat = level_operator(mode, acl, deg);
    let cond = condition_number(&mat);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular(format!(
            "degree {deg} level operator has condition number {cond:.3e}"
        )));
    }
    if cond > 1e10 {
        warn!("degree {deg} level operator is ill conditioned ({cond:.3e})");
    }
    let rhs = -DVector::from_column_slice(rho.coeffs());
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("degree {deg} level operator is singular")))?;
    Ok((
        HomogeneousPoly::from_coeffs(rho.n_vars(), deg, sol.as_slice().to_vec())?,
        cond,
    ))
}

/// Full series solve of the value and feedback equations to degree `r`.
pub(crate) fn solve_series(p: &ControlProblem, r: usize, mode: Mode) -> Result<SeriesSolution> {
    if p.mode != mode {
        return Err(Error::Precondition(format!(
            "{} problem passed to the {mode} solver",
            p.mode
        )));
    }
    if r < 3 {
        return Err(Error::Precondition(format!(
            "truncation degree {r} is below 3"
        )));
    }
    if p.f_order() + 1 < r {
        info!(
            "dynamics supplied to degree {}; degrees up to {} treated as zero",
            p.f_order(),
            r - 1
        );
    }
    if p.l_order() < r {
        info!(
            "cost supplied to degree {}; degrees up to {r} treated as zero",
            p.l_order()
        );
    }
    let (n, m) = (p.n, p.m);
    let ric = match mode {
        Mode::Discrete => solve_dtare(&p.lqr)?,
        Mode::Continuous => solve_care(&p.lqr)?,
    };
    let acl = &p.lqr.a + &p.lqr.b * &ric.k;
    let gain_mat = match mode {
        Mode::Discrete => p.lqr.b.transpose() * &ric.p * &p.lqr.b + &p.lqr.r,
        Mode::Continuous => p.lqr.r.clone(),
    };
    let gain_lu = gain_mat.lu();

    let mut pi = Poly::quadratic_form(&ric.p, r);
    let kappa_parts: Vec<Poly> = (0..m)
        .map(|j| {
            let row: Vec<f64> = (0..n).map(|i| ric.k[(j, i)]).collect();
            Poly::linear(&row, r - 1)
        })
        .collect();
    let mut kappa = PolySeries::new(kappa_parts)?;
    let mut defects = Vec::new();
    let mut conds = Vec::new();

    for d in 2..r {
        let (fbar, lbar) = substitute(p, &kappa, d + 1)?;
        let known = pi.truncate(d);
        let rho = value_residual(mode, &known, &fbar, &lbar, d + 1)?.hom_part(d + 1);
        let (next, cond) = solve_level(mode, &acl, &rho)?;
        conds.push(cond);
        pi.set_hom_part(next);

        let g = gradient_residual(p, &pi.truncate(d + 1), &kappa, d)?;
        let basis = enumerate_monomials(n, d);
        let mut parts: Vec<HomogeneousPoly> =
            (0..m).map(|_| HomogeneousPoly::zero(n, d)).collect();
        for idx in 0..basis.len() {
            let rhs = DVector::from_iterator(m, g.iter().map(|gj| gj.hom_part(d).coeffs()[idx]));
            let sol = gain_lu
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("feedback gain matrix is singular".into()))?;
            for j in 0..m {
                parts[j].coeffs_mut()[idx] = -sol[j];
            }
        }
        let mut comps = kappa.clone().into_components();
        for (j, h) in parts.into_iter().enumerate() {
            comps[j].set_hom_part(h);
        }
        kappa = PolySeries::new(comps)?;

        let (fbar2, lbar2) = substitute(p, &kappa, d + 1)?;
        let rho2 = value_residual(mode, &known, &fbar2, &lbar2, d + 1)?.hom_part(d + 1);
        let mut diff = rho2.clone();
        diff.add_scaled(&rho, -1.0);
        let defect = diff.max_abs();
        debug!("level {d}: condition {cond:.3e}, cancellation defect {defect:.3e}");
        if defect > 1e-12 * (1.0 + rho.max_abs()) {
            warn!("level {d}: value residual depends on the new feedback term ({defect:.3e})");
        }
        defects.push(defect);
    }

    let mut sol = SeriesSolution::new(mode, r, ric.p, ric.k, pi, kappa);
    sol.cancellation_defect = defects;
    sol.level_condition = conds;
    Ok(sol)
}

/// Per-degree coefficient norms of the two equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResidual {
    /// Index `d`: norm of the degree-`d` part of the value equation.
    pub value: Vec<f64>,
    /// Index `d`: norm of the degree-`d` part of the first-order condition.
    pub gradient: Vec<f64>,
}

impl SeriesResidual {
    pub fn max_value(&self, through: usize) -> f64 {
        self.value.iter().take(through + 1).fold(0.0, |a, &b| a.max(b))
    }

    pub fn max_gradient(&self, through: usize) -> f64 {
        self.gradient.iter().take(through + 1).fold(0.0, |a, &b| a.max(b))
    }
}

pub(crate) fn series_residual(
    sol: &SeriesSolution,
    p: &ControlProblem,
    r: usize,
) -> Result<SeriesResidual> {
    if sol.n() != p.n || sol.m() != p.m {
        return Err(Error::Dimension("solution built for a different problem".into()));
    }
    let (fbar, lbar) = substitute(p, &sol.kappa, r)?;
    let v = value_residual(p.mode, &sol.pi, &fbar, &lbar, r)?;
    let g = gradient_residual(p, &sol.pi, &sol.kappa, r.saturating_sub(1))?;
    let value = (0..=r).map(|d| v.hom_part(d).norm()).collect();
    let gradient = (0..r)
        .map(|d| {
            g.iter()
                .map(|gj| gj.hom_part(d).norm().powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(SeriesResidual { value, gradient })
}
