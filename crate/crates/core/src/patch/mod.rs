//! Extension of one-dimensional HJB solutions away from the origin by
//! Taylor patches.
//!
//! The problem is control affine, `f = g0(x) + g1(x) u` and
//! `l = l0(x) + l1(x) u + l2(x) u^2`. Given `pi`, `pi'` and `kappa` at a
//! point where `f != 0`, differentiating the HJB equation and the first-order
//! condition `k` times yields `pi^(k+1)` and `kappa^(k)` one at a time.

pub mod expr;
pub mod jet;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use expr::Expr;
pub use jet::Jet;

use crate::albrecht::solve_hjb_series;
use crate::error::{Error, Result};
use crate::lyapunov::ray_boundary;
use crate::polyalg::{Poly, PolySeries};
use crate::problem::{ControlModel, ControlProblem, Mode, Policy};

/// Tolerance on the first-order condition for Cauchy data.
pub const CAUCHY_TOL: f64 = 1e-8;

/// Below this `|f(x, kappa(x))|` a point is characteristic.
pub const CHARACTERISTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineProblem1D {
    pub g0: Expr,
    pub g1: Expr,
    pub l0: Expr,
    pub l1: Expr,
    pub l2: Expr,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub lo_open: bool,
    #[serde(default)]
    pub hi_open: bool,
}

/// Jets of the five coefficient functions at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineJets {
    pub g0: Jet,
    pub g1: Jet,
    pub l0: Jet,
    pub l1: Jet,
    pub l2: Jet,
}

impl AffineProblem1D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        g0: &str,
        g1: &str,
        l0: &str,
        l1: &str,
        l2: &str,
        lo: f64,
        hi: f64,
        lo_open: bool,
        hi_open: bool,
    ) -> Result<Self> {
        let p = AffineProblem1D {
            g0: Expr::parse(g0)?,
            g1: Expr::parse(g1)?,
            l0: Expr::parse(l0)?,
            l1: Expr::parse(l1)?,
            l2: Expr::parse(l2)?,
            lo,
            hi,
            lo_open,
            hi_open,
        };
        p.validate()?;
        Ok(p)
    }

    /// `f = (1+x) u`, `l = ln^2(1+x) + u^2` on `(-1, 4]`.
    pub fn prager() -> Self {
        AffineProblem1D::new("0", "x+1", "ln(1+x)^2", "0", "1", -1.0, 4.0, true, false)
            .expect("valid problem")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo <= 0.0 && 0.0 <= self.hi) || self.lo >= self.hi {
            return Err(Error::InvalidProblem(format!(
                "domain ({}, {}] must contain 0",
                self.lo, self.hi
            )));
        }
        let at0 = self.jets(0.0, 1)?;
        let tol = 1e-12;
        if at0.g0.value().abs() > tol {
            return Err(Error::InvalidProblem(format!("g0(0) = {} is not zero", at0.g0.value())));
        }
        if at0.l0.value().abs() > tol || at0.l0.coeffs()[1].abs() > tol {
            return Err(Error::InvalidProblem(
                "l0 must vanish to second order at 0".into(),
            ));
        }
        for x in self.mesh(256) {
            let v = self.l2.eval(x)?;
            if !(v > 0.0) {
                return Err(Error::InvalidProblem(format!("l2({x}) = {v} is not positive")));
            }
        }
        Ok(())
    }

    /// `k + 1` equispaced points of the domain, open ends pulled inside.
    pub fn mesh(&self, k: usize) -> Vec<f64> {
        let h = (self.hi - self.lo) / k as f64;
        (0..=k)
            .map(|i| self.lo + h * i as f64)
            .map(|x| {
                if self.lo_open && x <= self.lo {
                    self.lo + 1e-3 * h
                } else if self.hi_open && x >= self.hi {
                    self.hi - 1e-3 * h
                } else {
                    x
                }
            })
            .collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_open { x > self.lo } else { x >= self.lo };
        let below = if self.hi_open { x < self.hi } else { x <= self.hi };
        above && below
    }

    pub fn jets(&self, x: f64, order: usize) -> Result<AffineJets> {
        Ok(AffineJets {
            g0: self.g0.jet(x, order)?,
            g1: self.g1.jet(x, order)?,
            l0: self.l0.jet(x, order)?,
            l1: self.l1.jet(x, order)?,
            l2: self.l2.jet(x, order)?,
        })
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "x = {x} outside the domain ({}, {}]",
                self.lo, self.hi
            )))
        }
    }

    /// The feedback required by the first-order condition given `pi'(x)`.
    pub fn optimal_control(&self, x: f64, dpi: f64) -> Result<f64> {
        let g1 = self.g1.eval(x)?;
        let l1 = self.l1.eval(x)?;
        let l2 = self.l2.eval(x)?;
        Ok(-(dpi * g1 + l1) / (2.0 * l2))
    }

    /// Power-series form of the problem through total degree `degree`.
    pub fn to_control_problem(&self, degree: usize) -> Result<ControlProblem> {
        let j = self.jets(0.0, degree)?;
        let mut f = Poly::zero(2, degree);
        let mut l = Poly::zero(2, degree);
        for k in 0..=degree {
            if k >= 1 {
                f.add_term(&[k as u32, 0], j.g0.coeffs()[k])?;
            }
            if k < degree {
                f.add_term(&[k as u32, 1], j.g1.coeffs()[k])?;
                l.add_term(&[k as u32, 1], j.l1.coeffs()[k])?;
            }
            if k >= 2 {
                l.add_term(&[k as u32, 0], j.l0.coeffs()[k])?;
            }
            if k + 2 <= degree {
                l.add_term(&[k as u32, 2], j.l2.coeffs()[k])?;
            }
        }
        Ok(ControlProblem::new(Mode::Continuous, 1, 1, PolySeries::new(vec![f])?, l)?
            .with_note(format!(
                "series of f and l derived from the affine expressions through degree {degree}"
            )))
    }
}

impl ControlModel for AffineProblem1D {
    fn n(&self) -> usize {
        1
    }
    fn m(&self) -> usize {
        1
    }
    fn mode(&self) -> Mode {
        Mode::Continuous
    }
    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x[0])?;
        Ok(vec![self.g0.eval(x[0])? + self.g1.eval(x[0])? * u[0]])
    }
    fn cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check_domain(x[0])?;
        let u = u[0];
        Ok(self.l0.eval(x[0])? + self.l1.eval(x[0])? * u + self.l2.eval(x[0])? * u * u)
    }
    fn dynamics_u(&self, x: &[f64], _u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x[0])?;
        Ok(DMatrix::from_element(1, 1, self.g1.eval(x[0])?))
    }
    fn cost_u(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x[0])?;
        Ok(vec![self.l1.eval(x[0])? + 2.0 * self.l2.eval(x[0])? * u[0]])
    }
}

/// Local Taylor solution around `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub center: f64,
    /// `pi^(k)(center)/k!`, `k = 0..=d+1`
    pub pi_jet: Vec<f64>,
    /// `kappa^(k)(center)/k!`, `k = 0..=d`
    pub kappa_jet: Vec<f64>,
    /// Validity interval `(lo, hi)`, `lo <= hi`.
    pub interval: (f64, f64),
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * t + v)
}

impl Patch {
    pub fn degree(&self) -> usize {
        self.kappa_jet.len() - 1
    }

    pub fn value_at(&self, x: f64) -> f64 {
        horner(&self.pi_jet, x - self.center)
    }

    pub fn derivative_at(&self, x: f64) -> f64 {
        let d: Vec<f64> = self
            .pi_jet
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        horner(&d, x - self.center)
    }

    pub fn kappa_at(&self, x: f64) -> f64 {
        horner(&self.kappa_jet, x - self.center)
    }

    pub fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * (1.0 + x.abs());
        x >= self.interval.0 - tol && x <= self.interval.1 + tol
    }

    /// Largest residual of the differentiated HJB equation (orders
    /// `1..=d`) and first-order condition (orders `0..=d`) at the center.
    pub fn center_residual(&self, p: &AffineProblem1D) -> Result<(f64, f64)> {
        let d = self.degree();
        let j = p.jets(self.center, d)?;
        let q = Jet((0..=d).map(|k| (k + 1) as f64 * self.pi_jet[k + 1]).collect());
        let kap = Jet(self.kappa_jet.clone());
        let f = &j.g0 + &(&j.g1 * &kap);
        let l = &(&j.l0 + &(&j.l1 * &kap)) + &(&j.l2 * &(&kap * &kap));
        let hjb = &(&q * &f) + &l;
        let foc = &(&q * &j.g1) + &(&j.l1 + &(&j.l2 * &kap).scale(2.0));
        let r3 = hjb.coeffs()[1..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let r4 = foc.coeffs().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok((r3, r4))
    }
}

impl Policy for Patch {
    fn value(&self, x: &[f64]) -> f64 {
        self.value_at(x[0])
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![self.derivative_at(x[0])]
    }
    fn feedback(&self, x: &[f64]) -> Vec<f64> {
        vec![self.kappa_at(x[0])]
    }
}

/// Taylor coefficients of `pi` (orders `0..=d+1`) and `kappa` (orders
/// `0..=d`) at `xbar` from the Cauchy data `pi(xbar)`, `pi'(xbar)`,
/// `kappa(xbar)`.
pub fn taylor_at_point(
    p: &AffineProblem1D,
    xbar: f64,
    pi0: f64,
    pi1: f64,
    kappa0: f64,
    d: usize,
) -> Result<Patch> {
    let j = p.jets(xbar, d)?;
    let f0 = j.g0.value() + j.g1.value() * kappa0;
    if f0.abs() < CHARACTERISTIC_TOL {
        return Err(Error::Precondition(format!(
            "characteristic point, cannot march here (f = {f0:.3e} at x = {xbar})"
        )));
    }
    let l2_0 = j.l2.value();
    let foc = pi1 * j.g1.value() + j.l1.value() + 2.0 * l2_0 * kappa0;
    let scale = 1.0 + (pi1 * j.g1.value()).abs() + j.l1.value().abs() + (2.0 * l2_0 * kappa0).abs();
    if foc.abs() > CAUCHY_TOL * scale {
        return Err(Error::Precondition(format!(
            "Cauchy data violate the first-order condition by {foc:.3e} at x = {xbar}"
        )));
    }
    // q = pi', both jets filled one order at a time
    let mut q = vec![0.0; d + 1];
    let mut k = vec![0.0; d + 1];
    q[0] = pi1;
    k[0] = kappa0;
    for order in 1..=d {
        // the coefficient of kappa_order in the HJB equation is the
        // first-order condition at xbar, so it drops out
        let kj = Jet(k.clone());
        let f = &j.g0 + &(&j.g1 * &kj);
        let l = &(&j.l0 + &(&j.l1 * &kj)) + &(&j.l2 * &(&kj * &kj));
        let s: f64 = (0..order).map(|i| q[i] * f.coeffs()[order - i]).sum::<f64>() + l.coeffs()[order];
        q[order] = -s / f0;

        let s4: f64 = (0..=order).map(|i| q[i] * j.g1.coeffs()[order - i]).sum::<f64>()
            + j.l1.coeffs()[order]
            + 2.0 * (1..=order).map(|i| j.l2.coeffs()[i] * k[order - i]).sum::<f64>();
        k[order] = -s4 / (2.0 * l2_0);
    }
    let mut pi_jet = Vec::with_capacity(d + 2);
    pi_jet.push(pi0);
    pi_jet.extend(q.iter().enumerate().map(|(i, v)| v / (i + 1) as f64));
    Ok(Patch {
        center: xbar,
        pi_jet,
        kappa_jet: k,
        interval: (xbar, xbar),
    })
}

/// Jump of `pi` and `kappa` between the incumbent and a new patch at the
/// new center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seam {
    pub x: f64,
    pub pi_jump: f64,
    pub kappa_jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    DomainEdge,
    MaxPatches,
    Characteristic(String),
}

/// Patches glued by the pointwise minimum of their costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchedSolution {
    pub patches: Vec<Patch>,
    pub seams: Vec<Seam>,
    pub stops: Vec<StopReason>,
    /// Free-form record of adjustments made while marching.
    pub log: Vec<String>,
}

impl PatchedSolution {
    pub fn single(p: Patch) -> Self {
        PatchedSolution {
            patches: vec![p],
            seams: Vec::new(),
            stops: Vec::new(),
            log: Vec::new(),
        }
    }

    /// Index of the patch deciding the value at `x`: the lowest cost among
    /// the patches containing `x`, else the nearest patch.
    pub fn select(&self, x: f64) -> usize {
        let inside = self
            .patches
            .iter()
            .enumerate()
            .filter(|(_, p)| p.contains(x))
            .min_by(|a, b| a.1.value_at(x).total_cmp(&b.1.value_at(x)));
        if let Some((i, _)) = inside {
            return i;
        }
        let dist = |p: &Patch| (p.interval.0 - x).max(x - p.interval.1).max(0.0);
        self.patches
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1).total_cmp(&dist(b.1)))
            .map(|(i, _)| i)
            .expect("at least one patch")
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.patches[self.select(x)].value_at(x)
    }

    pub fn derivative_at(&self, x: f64) -> f64 {
        self.patches[self.select(x)].derivative_at(x)
    }

    pub fn kappa_at(&self, x: f64) -> f64 {
        self.patches[self.select(x)].kappa_at(x)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.patches.iter().map(|p| p.center).collect()
    }

    /// Union of two marches from the origin in opposite directions.
    pub fn merge(mut self, other: PatchedSolution) -> PatchedSolution {
        let mut rest = other.patches.into_iter();
        if let (Some(first), Some(own)) = (rest.next(), self.patches.first_mut()) {
            if first.center == own.center && first.pi_jet == own.pi_jet {
                own.interval.0 = own.interval.0.min(first.interval.0);
                own.interval.1 = own.interval.1.max(first.interval.1);
            } else {
                self.patches.push(first);
            }
        }
        self.patches.extend(rest);
        self.seams.extend(other.seams);
        self.stops.extend(other.stops);
        self.log.extend(other.log);
        self
    }
}

impl Policy for PatchedSolution {
    fn value(&self, x: &[f64]) -> f64 {
        self.value_at(x[0])
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![self.derivative_at(x[0])]
    }
    fn feedback(&self, x: &[f64]) -> Vec<f64> {
        vec![self.kappa_at(x[0])]
    }
}

/// Adds `new` to the solution; its interval must meet the frontier patch.
pub fn glue(current: &PatchedSolution, new: Patch) -> Result<PatchedSolution> {
    let last = current
        .patches
        .last()
        .ok_or_else(|| Error::Precondition("cannot glue onto an empty solution".into()))?;
    let tol = 1e-12 * (1.0 + new.center.abs());
    if new.interval.0 > last.interval.1 + tol || new.interval.1 < last.interval.0 - tol {
        return Err(Error::Precondition(format!(
            "patch interval [{}, {}] is disjoint from the frontier [{}, {}]",
            new.interval.0, new.interval.1, last.interval.0, last.interval.1
        )));
    }
    let x = new.center;
    let seam = Seam {
        x,
        pi_jump: (current.value_at(x) - new.value_at(x)).abs(),
        kappa_jump: (current.kappa_at(x) - new.kappa_at(x)).abs(),
    };
    let mut out = current.clone();
    out.patches.push(new);
    out.seams.push(seam);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarchOptions {
    pub degree: usize,
    pub eps1: f64,
    pub eps2: f64,
    /// Mesh intervals between the origin and the domain edge.
    pub mesh: usize,
    /// `+1` or `-1`.
    pub direction: i8,
    pub max_patches: usize,
}

impl Default for MarchOptions {
    fn default() -> Self {
        let eps = 2f64.powi(-6);
        MarchOptions {
            degree: 3,
            eps1: eps,
            eps2: eps,
            mesh: 256,
            direction: 1,
            max_patches: 8,
        }
    }
}

/// The degree-`d` origin series (`pi` through `d+1`) as a patch at 0.
pub fn origin_patch(p: &AffineProblem1D, d: usize) -> Result<Patch> {
    if d < 2 {
        return Err(Error::Precondition(format!("patch degree {d} must be at least 2")));
    }
    let cp = p.to_control_problem(d + 1)?;
    let s = solve_hjb_series(&cp, d + 1)?;
    let mut pi_jet = vec![0.0, 0.0];
    pi_jet.extend(s.pi_coefficients_1d());
    let mut kappa_jet = vec![0.0];
    kappa_jet.extend(s.kappa_coefficients_1d());
    Ok(Patch {
        center: 0.0,
        pi_jet,
        kappa_jet,
        interval: (0.0, 0.0),
    })
}

/// Marches from the origin to the domain edge in one direction, adding a
/// patch wherever the newest one stops passing the Lyapunov test.
pub fn march(p: &AffineProblem1D, opts: &MarchOptions) -> Result<PatchedSolution> {
    let dir = match opts.direction {
        1 => 1.0,
        -1 => -1.0,
        other => {
            return Err(Error::Precondition(format!("direction must be +1 or -1, got {other}")))
        }
    };
    if opts.mesh == 0 || opts.max_patches == 0 {
        return Err(Error::Precondition("mesh and max_patches must be positive".into()));
    }
    let edge = if dir > 0.0 { p.hi } else { p.lo };
    let h = edge.abs() / opts.mesh as f64;
    let set_end = |patch: &mut Patch, end: f64| {
        let (a, b) = (patch.center.min(end), patch.center.max(end));
        patch.interval = (a, b);
    };

    let mut sol = PatchedSolution::single(origin_patch(p, opts.degree)?);
    if h == 0.0 {
        sol.stops.push(StopReason::DomainEdge);
        return Ok(sol);
    }
    let mut center = 0.0;
    loop {
        let newest = sol.patches.last().expect("nonempty").clone();
        let scan = ray_boundary(&newest, p, opts.eps1, opts.eps2, center, edge, h)?;
        let last = sol.patches.len() - 1;
        if scan.reached_end {
            set_end(&mut sol.patches[last], scan.boundary);
            sol.stops.push(StopReason::DomainEdge);
            break;
        }
        let fail = scan.first_failure.expect("failure when the end is not reached");
        set_end(&mut sol.patches[last], fail);
        if sol.patches.len() >= opts.max_patches {
            sol.stops.push(StopReason::MaxPatches);
            break;
        }
        let mut xbar = scan.boundary;
        if (xbar - center).abs() < 0.5 * h {
            xbar = fail;
            sol.log.push(format!(
                "patch at {center} fails one step out; next center forced to {xbar}"
            ));
        }
        let pi0 = sol.value_at(xbar);
        let pi1 = sol.derivative_at(xbar);
        let mut kappa0 = sol.kappa_at(xbar);
        let required = p.optimal_control(xbar, pi1)?;
        if (kappa0 - required).abs() > CAUCHY_TOL {
            let note = format!(
                "kappa at {xbar} re-derived from the first-order condition ({kappa0:.12e} -> {required:.12e})"
            );
            warn!("{note}");
            sol.log.push(note);
            kappa0 = required;
        }
        let mut patch = match taylor_at_point(p, xbar, pi0, pi1, kappa0, opts.degree) {
            Ok(patch) => patch,
            Err(Error::Precondition(msg)) if msg.starts_with("characteristic") => {
                sol.stops.push(StopReason::Characteristic(msg));
                break;
            }
            Err(e) => return Err(e),
        };
        set_end(&mut patch, edge);
        info!("new patch at {xbar}");
        sol = glue(&sol, patch)?;
        center = xbar;
    }
    Ok(sol)
}

/// Both directions from the origin, merged.
pub fn march_both(p: &AffineProblem1D, opts: &MarchOptions) -> Result<PatchedSolution> {
    let pos = march(p, &MarchOptions { direction: 1, ..*opts })?;
    let neg = march(p, &MarchOptions { direction: -1, ..*opts })?;
    Ok(pos.merge(neg))
}
