//! Hamiltonian structure of the discrete-time problem: the forward map on
//! state / costate pairs, its symplecticity, the eigenvalue pencil and the
//! stable manifold, which is the graph of the gradient of the optimal cost.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, discrete_invariant_split, eigenvalues};
use crate::polyalg::{enumerate_monomials, HomogeneousPoly, Poly, PolySeries};
use crate::problem::{ControlProblem, Mode};
use crate::riccati::LqrData;
use crate::series::SeriesSolution;
use crate::stats::order_slope;

/// Blocks of the linear state / costate dynamics
/// `x+ = H11 x + H12 lambda+`, `lambda = H21 x + H22 lambda+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianBlocks {
    pub h11: DMatrix<f64>,
    pub h12: DMatrix<f64>,
    pub h21: DMatrix<f64>,
    pub h22: DMatrix<f64>,
}

impl HamiltonianBlocks {
    pub fn from_lqr(d: &LqrData) -> Result<Self> {
        let ri = d.r_inv()?;
        let st = d.s.transpose();
        Ok(HamiltonianBlocks {
            h11: &d.a - &d.b * &ri * &st,
            h12: -(&d.b * &ri * d.b.transpose()),
            h21: &d.q - &d.s * &ri * &st,
            h22: d.a.transpose() - &d.s * &ri * d.b.transpose(),
        })
    }

    pub fn n(&self) -> usize {
        self.h11.nrows()
    }
}

/// `J = [[0, I], [-I, 0]]`
pub fn symplectic_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// The forward matrix mapping `(x, lambda)` to `(x+, lambda+)`, obtained
/// by eliminating `lambda+` from the implicit dynamics.
pub fn forward_matrix(b: &HamiltonianBlocks) -> Result<DMatrix<f64>> {
    let n = b.n();
    let cond = condition_number(&b.h22);
    debug!("H22 condition number {cond:.3e}");
    let inv = if cond.is_finite() && cond < 1e13 {
        b.h22.clone().try_inverse()
    } else {
        None
    };
    let h22i = inv.ok_or_else(|| {
        Error::Singular(format!(
            "H22 is singular (condition {cond:.3e}): bidirectional-only system; use pencil path"
        ))
    })?;
    let mut hf = DMatrix::zeros(2 * n, 2 * n);
    let h12h = &b.h12 * &h22i;
    hf.view_mut((0, 0), (n, n))
        .copy_from(&(&b.h11 - &h12h * &b.h21));
    hf.view_mut((0, n), (n, n)).copy_from(&h12h);
    hf.view_mut((n, 0), (n, n)).copy_from(&(-(&h22i * &b.h21)));
    hf.view_mut((n, n), (n, n)).copy_from(&h22i);
    Ok(hf)
}

/// Frobenius norm of `M'JM - J`.
pub fn check_symplectic(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() || !m.nrows().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "symplectic check needs an even square matrix, got {:?}",
            m.shape()
        )));
    }
    let j = symplectic_j(m.nrows() / 2);
    Ok((m.transpose() * &j * m - j).norm())
}

/// `Omega(v, w) = v'Jw`
pub fn two_form(v: &[f64], w: &[f64]) -> f64 {
    let n = v.len() / 2;
    (0..n).map(|i| v[i] * w[n + i] - v[n + i] * w[i]).sum()
}

/// Matrix pair `(M, L)` whose generalized eigenvalues `M v = mu L v` are the
/// eigenvalues of the bidirectional dynamics, also when `A` is singular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymplecticPencil {
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl SymplecticPencil {
    pub fn from_blocks(b: &HamiltonianBlocks) -> Self {
        let n = b.n();
        let id = DMatrix::<f64>::identity(n, n);
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&b.h11);
        m.view_mut((n, 0), (n, n)).copy_from(&b.h21);
        m.view_mut((n, n), (n, n)).copy_from(&(-&id));
        let mut l = DMatrix::zeros(2 * n, 2 * n);
        l.view_mut((0, 0), (n, n)).copy_from(&id);
        l.view_mut((0, n), (n, n)).copy_from(&(-&b.h12));
        l.view_mut((n, n), (n, n)).copy_from(&(-&b.h22));
        SymplecticPencil { m, l }
    }

    /// Coefficients `c_0..c_2n` of `det(M - mu L)`, by sampling the
    /// determinant at the roots of unity and inverting the DFT.
    pub fn characteristic_coefficients(&self) -> Vec<f64> {
        let k = self.m.nrows();
        let npts = k + 1;
        let mc = self.m.map(|v| Complex64::new(v, 0.0));
        let lc = self.l.map(|v| Complex64::new(v, 0.0));
        let samples: Vec<(Complex64, Complex64)> = (0..npts)
            .map(|j| {
                let mu = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / npts as f64);
                (mu, (&mc - &lc * mu).determinant())
            })
            .collect();
        (0..npts)
            .map(|p| {
                let s: Complex64 = samples
                    .iter()
                    .map(|(mu, d)| d * mu.powi(-(p as i32)))
                    .sum();
                s.re / npts as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PencilSpectrum {
    pub finite: Vec<Complex64>,
    pub infinite: usize,
    /// Coefficients of `det(M - mu L)` in increasing powers.
    pub coefficients: Vec<f64>,
}

impl PencilSpectrum {
    /// Eigenvalues of modulus below `tol` (paired with infinite ones).
    pub fn zero_count(&self, tol: f64) -> usize {
        self.finite.iter().filter(|m| m.norm() < tol).count()
    }

    /// Worst `min_j |mu_i mu_j - 1|` over the nonzero finite eigenvalues.
    pub fn pairing_defect(&self) -> f64 {
        let nz: Vec<&Complex64> = self.finite.iter().filter(|m| m.norm() >= 1e-8).collect();
        nz.iter()
            .map(|a| {
                nz.iter()
                    .map(|b| (*a * *b - 1.0).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    /// Smallest `||mu| - 1|`.
    pub fn unit_circle_gap(&self) -> f64 {
        self.finite
            .iter()
            .map(|m| (m.norm() - 1.0).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_hyperbolic(&self, tol: f64) -> bool {
        self.unit_circle_gap() > tol
    }
}

/// Finite eigenvalues of the pencil plus the number of infinite ones.
pub fn pencil_eigenvalues(p: &SymplecticPencil) -> Result<PencilSpectrum> {
    let c = p.characteristic_coefficients();
    let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Singular("det(M - mu L) vanishes identically".into()));
    }
    let tol = 1e-11 * scale;
    let deg = c.iter().rposition(|v| v.abs() > tol).unwrap_or(0);
    let infinite = c.len() - 1 - deg;
    let finite = if deg == 0 {
        Vec::new()
    } else {
        let mut comp = DMatrix::zeros(deg, deg);
        for i in 1..deg {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..deg {
            comp[(i, deg - 1)] = -c[i] / c[deg];
        }
        eigenvalues(&comp)?
    };
    Ok(PencilSpectrum {
        finite,
        infinite,
        coefficients: c,
    })
}

/// First and second partial derivatives of `f` and `l` as polynomials.
#[derive(Debug, Clone)]
struct Derivatives {
    n: usize,
    m: usize,
    /// `f_z[i][a] = d f_i / d z_a`
    f_z: Vec<Vec<Poly>>,
    /// `f_zz[i][a][b]`
    f_zz: Vec<Vec<Vec<Poly>>>,
    l_z: Vec<Poly>,
    l_zz: Vec<Vec<Poly>>,
}

impl Derivatives {
    fn new(p: &ControlProblem) -> Self {
        let k = p.n + p.m;
        let f_z: Vec<Vec<Poly>> = p
            .f
            .components()
            .iter()
            .map(|c| (0..k).map(|a| c.partial(a)).collect())
            .collect();
        let f_zz = f_z
            .iter()
            .map(|row| row.iter().map(|g| (0..k).map(|b| g.partial(b)).collect()).collect())
            .collect();
        let l_z: Vec<Poly> = (0..k).map(|a| p.l.partial(a)).collect();
        let l_zz = l_z.iter().map(|g| (0..k).map(|b| g.partial(b)).collect()).collect();
        Derivatives {
            n: p.n,
            m: p.m,
            f_z,
            f_zz,
            l_z,
            l_zz,
        }
    }

    /// Residual `(F1, F2)` of the implicit costate equations.
    fn residual(&self, z: &[f64], lam: &[f64], lam_next: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut out = vec![0.0; n + m];
        for (a, o) in out.iter_mut().enumerate() {
            let mut v = self.l_z[a].eval(z);
            for i in 0..n {
                v += lam_next[i] * self.f_z[i][a].eval(z);
            }
            if a < n {
                v -= lam[a];
            }
            *o = v;
        }
        out
    }

    /// `d^2/dz_a dz_b` of `lambda+' f + l`.
    fn hessian(&self, z: &[f64], lam_next: &[f64]) -> DMatrix<f64> {
        let k = self.n + self.m;
        DMatrix::from_fn(k, k, |a, b| {
            let mut v = self.l_zz[a][b].eval(z);
            for i in 0..self.n {
                v += lam_next[i] * self.f_zz[i][a][b].eval(z);
            }
            v
        })
    }

    /// `df/dz`, `n x (n+m)`.
    fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n + self.m, |i, a| self.f_z[i][a].eval(z))
    }
}

/// Nonlinear forward map of a discrete problem,
/// `(x, lambda) -> (x+, lambda+)`, evaluated pointwise by Newton's method or
/// expanded as a power series.
#[derive(Debug, Clone)]
pub struct ForwardMap {
    problem: ControlProblem,
    der: Derivatives,
    blocks: HamiltonianBlocks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardStep {
    pub x_next: Vec<f64>,
    pub lambda_next: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

const NEWTON_MAX: usize = 60;

impl ForwardMap {
    pub fn new(p: &ControlProblem) -> Result<Self> {
        if p.mode != Mode::Discrete {
            return Err(Error::Precondition(
                "the forward map is defined for discrete problems".into(),
            ));
        }
        Ok(ForwardMap {
            problem: p.clone(),
            der: Derivatives::new(p),
            blocks: HamiltonianBlocks::from_lqr(&p.lqr)?,
        })
    }

    pub fn blocks(&self) -> &HamiltonianBlocks {
        &self.blocks
    }

    fn stack(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        x.iter().chain(u).copied().collect()
    }

    fn initial_guess(&self, x: &[f64], lam: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.problem.n, self.problem.m);
        let xv = DVector::from_column_slice(x);
        let lv = DVector::from_column_slice(lam);
        let Some(h22i) = self.blocks.h22.clone().try_inverse() else {
            return (vec![0.0; m], vec![0.0; n]);
        };
        let lam_next = &h22i * (lv - &self.blocks.h21 * &xv);
        let d = &self.problem.lqr;
        let u = match d.r_inv() {
            Ok(ri) => -(ri * (d.b.transpose() * &lam_next + d.s.transpose() * &xv)),
            Err(_) => DVector::zeros(m),
        };
        (u.as_slice().to_vec(), lam_next.as_slice().to_vec())
    }

    /// Solves `lambda = H_x(x, u, lambda+)`, `0 = H_u(x, u, lambda+)` for
    /// `(u, lambda+)` by damped Newton iteration and returns `x+ = f(x, u)`.
    pub fn step(&self, x: &[f64], lam: &[f64]) -> Result<ForwardStep> {
        let (n, m) = (self.problem.n, self.problem.m);
        if x.len() != n || lam.len() != n {
            return Err(Error::Dimension(format!(
                "forward step needs {n} states and {n} costates"
            )));
        }
        let (mut u, mut ln) = self.initial_guess(x, lam);
        let scale = 1.0
            + x.iter().chain(lam).fold(0.0f64, |a, v| a.max(v.abs()));
        let norm = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>().sqrt();
        let mut z = self.stack(x, &u);
        let mut res = self.der.residual(&z, lam, &ln);
        let mut rn = norm(&res);
        let mut its = 0;
        while its < NEWTON_MAX && rn > 1e-15 * scale {
            its += 1;
            // Jacobian with respect to (u, lambda+)
            let hess = self.der.hessian(&z, &ln);
            let fz = self.der.jacobian(&z);
            let mut jac = DMatrix::zeros(n + m, n + m);
            for a in 0..n + m {
                for j in 0..m {
                    jac[(a, j)] = hess[(a, n + j)];
                }
                for i in 0..n {
                    jac[(a, m + i)] = fz[(i, a)];
                }
            }
            let rhs = -DVector::from_column_slice(&res);
            let delta = jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("forward step Jacobian is singular".into()))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let u_try: Vec<f64> = (0..m).map(|j| u[j] + t * delta[j]).collect();
                let l_try: Vec<f64> = (0..n).map(|i| ln[i] + t * delta[m + i]).collect();
                let z_try = self.stack(x, &u_try);
                let r_try = self.der.residual(&z_try, lam, &l_try);
                let rn_try = norm(&r_try);
                if rn_try.is_finite() && rn_try < rn * (1.0 - 1e-4 * t) || rn_try <= 1e-15 * scale {
                    u = u_try;
                    ln = l_try;
                    z = z_try;
                    res = r_try;
                    rn = rn_try;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !(rn <= 1e-12 * scale) {
            return Err(Error::NonConvergence(format!(
                "forward step Newton residual {rn:.3e} after {its} iterations"
            )));
        }
        let x_next = self.problem.f.eval(&z)?;
        Ok(ForwardStep {
            x_next,
            lambda_next: ln,
            u,
            iterations: its,
            residual: rn,
        })
    }

    /// Jacobian of the forward map at `(x, lambda)` by implicit
    /// differentiation of the Newton system.
    pub fn tangent(&self, x: &[f64], lam: &[f64]) -> Result<DMatrix<f64>> {
        let (n, m) = (self.problem.n, self.problem.m);
        let st = self.step(x, lam)?;
        let z = self.stack(x, &st.u);
        let hess = self.der.hessian(&z, &st.lambda_next);
        let fz = self.der.jacobian(&z);
        // F(w, y) = 0 with w = (x, lambda), y = (u, lambda+)
        let mut jy = DMatrix::zeros(n + m, n + m);
        let mut jw = DMatrix::zeros(n + m, 2 * n);
        for a in 0..n + m {
            for j in 0..m {
                jy[(a, j)] = hess[(a, n + j)];
            }
            for i in 0..n {
                jy[(a, m + i)] = fz[(i, a)];
                jw[(a, i)] = hess[(a, i)];
            }
            if a < n {
                jw[(a, n + a)] = -1.0;
            }
        }
        let dy = -jy
            .lu()
            .solve(&jw)
            .ok_or_else(|| Error::Singular("forward map is not differentiable here".into()))?;
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        // dx+ = f_x dx + f_u du
        for i in 0..n {
            for c in 0..2 * n {
                let mut v = if c < n { fz[(i, c)] } else { 0.0 };
                for j in 0..m {
                    v += fz[(i, n + j)] * dy[(j, c)];
                }
                out[(i, c)] = v;
            }
        }
        for i in 0..n {
            for c in 0..2 * n {
                out[(n + i, c)] = dy[(m + i, c)];
            }
        }
        Ok(out)
    }

    /// Power series of the forward map in `w = (x, lambda)` through degree
    /// `trunc`, outputs `(x+, lambda+)`.
    pub fn series(&self, trunc: usize) -> Result<PolySeries> {
        let (n, m) = (self.problem.n, self.problem.m);
        let d = &self.problem.lqr;
        // linearization of F with respect to y = (u, lambda+): [[S, A'], [R, B']]
        let mut ly = DMatrix::zeros(n + m, n + m);
        ly.view_mut((0, 0), (n, m)).copy_from(&d.s);
        ly.view_mut((0, m), (n, n)).copy_from(&d.a.transpose());
        ly.view_mut((n, 0), (m, m)).copy_from(&d.r);
        ly.view_mut((n, m), (m, n)).copy_from(&d.b.transpose());
        let ly_lu = ly.lu();
        if ly_lu.determinant().abs() < 1e-14 {
            return Err(Error::Singular(
                "costate equations cannot be solved for lambda+ (singular [[S, A'], [R, B']])"
                    .into(),
            ));
        }
        let w = 2 * n;
        let mut y: Vec<Poly> = vec![Poly::zero(w, trunc); n + m];
        for _ in 0..=trunc {
            let inner: Vec<Poly> = (0..n)
                .map(|i| Poly::var(w, trunc, i))
                .chain(y[..m].iter().cloned())
                .collect();
            let f_z: Vec<Vec<Poly>> = self
                .der
                .f_z
                .iter()
                .map(|row| row.iter().map(|g| g.compose(&inner, trunc)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            let mut resid = Vec::with_capacity(n + m);
            for a in 0..n + m {
                let mut v = self.der.l_z[a].compose(&inner, trunc)?;
                for i in 0..n {
                    v = v.add(&y[m + i].mul(&f_z[i][a], trunc));
                }
                if a < n {
                    v = v.sub(&Poly::var(w, trunc, n + a));
                }
                resid.push(v.truncate(trunc));
            }
            // y <- y - Ly^-1 F(w, y(w)), degree by degree
            let mut next = y.clone();
            for deg in 1..=trunc {
                let basis = enumerate_monomials(w, deg);
                for idx in 0..basis.len() {
                    let rhs = DVector::from_iterator(
                        n + m,
                        resid.iter().map(|r| r.hom_part(deg).coeffs()[idx]),
                    );
                    let corr = ly_lu.solve(&rhs).expect("checked nonsingular");
                    for a in 0..n + m {
                        let mut h = next[a].hom_part(deg);
                        h.coeffs_mut()[idx] -= corr[a];
                        next[a].set_hom_part(h);
                    }
                }
            }
            y = next;
        }
        let inner: Vec<Poly> = (0..n)
            .map(|i| Poly::var(w, trunc, i))
            .chain(y[..m].iter().cloned())
            .collect();
        let mut out = Vec::with_capacity(2 * n);
        for c in self.problem.f.components() {
            out.push(c.compose(&inner, trunc)?);
        }
        out.extend(y[m..].iter().map(|p| p.truncate(trunc)));
        PolySeries::new(out)
    }
}

/// Convenience wrapper around [`ForwardMap::step`].
pub fn forward_step(p: &ControlProblem, x: &[f64], lam: &[f64]) -> Result<ForwardStep> {
    ForwardMap::new(p)?.step(x, lam)
}

/// Linear forward step `(x+, lambda+) = H^F (x, lambda)`.
pub fn forward_step_linear(b: &HamiltonianBlocks, x: &[f64], lam: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let hf = forward_matrix(b)?;
    let n = b.n();
    let w = DVector::from_iterator(2 * n, x.iter().chain(lam).copied());
    let out = hf * w;
    Ok((out.rows(0, n).iter().copied().collect(), out.rows(n, n).iter().copied().collect()))
}

/// Stable manifold `lambda = phi(x)` of the forward map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableManifoldSeries {
    /// `x -> lambda`, degrees 1..r-1.
    pub phi: PolySeries,
    /// Optional form `z_u = phi_z(z_s)` in spectral coordinates.
    pub phi_z: Option<PolySeries>,
    /// Degree of the cost series the manifold belongs to.
    pub degree: usize,
}

/// The gradient of the cost series as a stable manifold.
pub fn stable_manifold_from_series(sol: &SeriesSolution) -> Result<StableManifoldSeries> {
    Ok(StableManifoldSeries {
        phi: sol.pi_gradient()?,
        phi_z: None,
        degree: sol.trunc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// `(scale, max |lambda+ - phi(x+)|)` per sampled scale.
    pub defects: Vec<(f64, f64)>,
    /// Log-log slope of the defect against the scale (NaN when every
    /// defect is at rounding level).
    pub slope: f64,
    pub max_defect: f64,
}

fn sample_directions(n: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for k in 0..(2 * n).max(2) {
        let v: Vec<f64> = (0..n)
            .map(|i| ((k as f64 + 1.0) * (i as f64 + 1.0) * 0.7 + 0.3 * k as f64).cos())
            .collect();
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm > 1e-3 {
            dirs.push(v.iter().map(|e| e / norm).collect());
        }
        let neg: Vec<f64> = dirs.last().map(|d: &Vec<f64>| d.iter().map(|e| -e).collect()).unwrap_or_default();
        if !neg.is_empty() {
            dirs.push(neg);
        }
    }
    dirs
}

/// Measures how far the graph of `phi` is from invariance under the forward
/// map, at `|x| = 10^-1, 10^-1.5, 10^-2, 10^-2.5`.
pub fn invariance_check(phi: &StableManifoldSeries, p: &ControlProblem) -> Result<InvarianceReport> {
    let map = ForwardMap::new(p)?;
    let n = p.n;
    let dirs = sample_directions(n);
    let mut defects = Vec::new();
    for k in 0..4 {
        let mut eps = 10f64.powf(-1.0 - 0.5 * k as f64);
        let mut attempt = 0;
        let worst = loop {
            let mut worst: f64 = 0.0;
            let mut failed = None;
            for d in &dirs {
                let x: Vec<f64> = d.iter().map(|v| v * eps).collect();
                let lam = phi.phi.eval(&x)?;
                match map.step(&x, &lam) {
                    Ok(st) => {
                        let back = phi.phi.eval(&st.x_next)?;
                        let err = st
                            .lambda_next
                            .iter()
                            .zip(&back)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        worst = worst.max(err);
                    }
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            match failed {
                None => break worst,
                Some(e) if attempt < 4 => {
                    debug!("forward step failed at scale {eps:.3e} ({e}); shrinking");
                    attempt += 1;
                    eps *= 0.5;
                }
                Some(e) => return Err(e),
            }
        };
        defects.push((eps, worst));
    }
    let max_defect = defects.iter().fold(0.0f64, |a, d| a.max(d.1));
    let usable: Vec<(f64, f64)> = defects.iter().copied().filter(|d| d.1 > 1e-14).collect();
    let slope = if usable.len() >= 2 {
        order_slope(&usable)
    } else {
        f64::NAN
    };
    Ok(InvarianceReport {
        defects,
        slope,
        max_defect,
    })
}

/// Result of the Taylor construction of the stable manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTaylor {
    /// `z_u = phi_z(z_s)`, degrees 2..r-1.
    pub phi_z: PolySeries,
    /// Columns: stable then unstable invariant basis, `(x, lambda) = T^-1 z`.
    pub t_inv: DMatrix<f64>,
    pub a_s: DMatrix<f64>,
    pub a_u: DMatrix<f64>,
    /// The manifold transformed back to a graph `lambda = phi(x)`, degrees
    /// 1..r-1.
    pub phi_x: PolySeries,
}

/// Solves `A_u phi(z) - phi(A_s z) = rhs` degree by degree on the graph
/// `z_u = phi(z_s)` of the map
/// `z_s+ = A_s z_s + f_s(z_s, z_u)`, `z_u+ = A_u z_u + f_u(z_s, z_u)`.
///
/// `nonlinear` has `2n` outputs `(f_s, f_u)` in the `2n` variables
/// `(z_s, z_u)`; its terms of degree below two are ignored.
pub fn solve_phi_z(
    a_s: &DMatrix<f64>,
    a_u: &DMatrix<f64>,
    nonlinear: &PolySeries,
    r: usize,
) -> Result<PolySeries> {
    let n = a_s.nrows();
    if nonlinear.outputs() != 2 * n || nonlinear.n_vars() != 2 * n {
        return Err(Error::Dimension(format!(
            "nonlinear part has {} outputs in {} variables, expected {}",
            nonlinear.outputs(),
            nonlinear.n_vars(),
            2 * n
        )));
    }
    let top = r.saturating_sub(1).max(1);
    let nl: Vec<Poly> = nonlinear
        .components()
        .iter()
        .map(|c| {
            let mut c = c.truncate(top);
            c.set_hom_part(HomogeneousPoly::zero(2 * n, 0));
            c.set_hom_part(HomogeneousPoly::zero(2 * n, 1));
            c
        })
        .collect();
    let lin_s: Vec<Poly> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|j| a_s[(i, j)]).collect();
            Poly::linear(&row, top)
        })
        .collect();
    let mut phi: Vec<Poly> = vec![Poly::zero(n, top); n];
    for d in 2..=top {
        let inner: Vec<Poly> = (0..n)
            .map(|i| Poly::var(n, top, i))
            .chain(phi.iter().cloned())
            .collect();
        // z_s+ along the graph, then phi of it
        let mut zs_next = Vec::with_capacity(n);
        for i in 0..n {
            zs_next.push(lin_s[i].add(&nl[i].compose(&inner, d)?).truncate(d));
        }
        let mut rhs = Vec::with_capacity(n);
        for k in 0..n {
            let lhs = phi[k].compose(&zs_next, d)?.hom_part(d);
            let fu = nl[n + k].compose(&inner, d)?.hom_part(d);
            let mut v = lhs;
            v.add_scaled(&fu, -1.0);
            rhs.push(v);
        }
        let basis = enumerate_monomials(n, d);
        let nb = basis.len();
        let mut op = DMatrix::zeros(n * nb, n * nb);
        for c in 0..n {
            for (j, e) in basis.iter().enumerate() {
                let mut mono = Poly::zero(n, d);
                mono.add_term(&e.0, 1.0)?;
                let moved = mono.compose(&lin_s, d)?.hom_part(d);
                for k in 0..n {
                    op[(k * nb + j, c * nb + j)] += a_u[(k, c)];
                }
                for (row, &v) in moved.coeffs().iter().enumerate() {
                    op[(c * nb + row, c * nb + j)] -= v;
                }
            }
        }
        let b = DVector::from_iterator(n * nb, rhs.iter().flat_map(|h| h.coeffs().to_vec()));
        let sol = op
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular(format!("degree {d} manifold operator is singular")))?;
        for k in 0..n {
            let h = HomogeneousPoly::from_coeffs(n, d, sol.rows(k * nb, nb).iter().copied().collect())?;
            phi[k].set_hom_part(h);
        }
    }
    PolySeries::new(phi)
}

/// Stable manifold of the forward map of a discrete problem through degree
/// `r - 1`, built in spectral coordinates and mapped back to a graph over
/// `x`.
pub fn solve_phi_taylor(p: &ControlProblem, r: usize) -> Result<PhiTaylor> {
    let n = p.n;
    let map = ForwardMap::new(p)?;
    let hf = forward_matrix(map.blocks())?;
    for mu in eigenvalues(&hf)? {
        if (mu.norm() - 1.0).abs() < 1e-8 {
            return Err(Error::Precondition(format!(
                "forward matrix has eigenvalue {mu} on the unit circle"
            )));
        }
    }
    let (vs, vu) = discrete_invariant_split(&hf)?;
    if vs.ncols() != n || vu.ncols() != n {
        return Err(Error::Precondition(format!(
            "stable / unstable dimensions {} / {} differ from n = {n}",
            vs.ncols(),
            vu.ncols()
        )));
    }
    let mut t_inv = DMatrix::zeros(2 * n, 2 * n);
    t_inv.view_mut((0, 0), (2 * n, n)).copy_from(&vs);
    t_inv.view_mut((0, n), (2 * n, n)).copy_from(&vu);
    let sep = condition_number(&t_inv);
    debug!("spectral split condition {sep:.3e}");
    let t = t_inv
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("stable and unstable subspaces are not complementary".into()))?;
    let blockdiag = &t * &hf * &t_inv;
    let a_s = blockdiag.view((0, 0), (n, n)).into_owned();
    let a_u = blockdiag.view((n, n), (n, n)).into_owned();

    let top = r.saturating_sub(1).max(1);
    let g = map.series(top)?;
    // Z(z) = T G(T^-1 z)
    let g_z: Vec<Poly> = g.components().iter().map(|c| c.compose_linear(&t_inv)).collect();
    let z_map: Vec<Poly> = (0..2 * n)
        .map(|i| {
            let mut acc = Poly::zero(2 * n, top);
            for (j, gj) in g_z.iter().enumerate() {
                acc = acc.add_scaled(gj, t[(i, j)]);
            }
            acc
        })
        .collect();
    let phi_z = solve_phi_z(&a_s, &a_u, &PolySeries::new(z_map)?, r)?;

    // graph over x: x = X_s z + X_u phi(z), lambda = L_s z + L_u phi(z)
    let xs = t_inv.view((0, 0), (n, n)).into_owned();
    let xu = t_inv.view((0, n), (n, n)).into_owned();
    let ls = t_inv.view((n, 0), (n, n)).into_owned();
    let lu = t_inv.view((n, n), (n, n)).into_owned();
    let xs_inv = xs
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("stable subspace is not a graph over x".into()))?;
    // z = Y(x) with X(Y(x)) = x, by fixed-point iteration
    let mut y: Vec<Poly> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|j| xs_inv[(i, j)]).collect();
            Poly::linear(&row, top)
        })
        .collect();
    let combine = |m: &DMatrix<f64>, v: &[Poly], nv: usize| -> Vec<Poly> {
        (0..m.nrows())
            .map(|i| {
                let mut acc = Poly::zero(nv, top);
                for (j, p) in v.iter().enumerate() {
                    acc = acc.add_scaled(p, m[(i, j)]);
                }
                acc
            })
            .collect()
    };
    for _ in 0..top {
        let phi_y: Vec<Poly> = phi_z
            .components()
            .iter()
            .map(|c| c.compose(&y, top))
            .collect::<Result<_>>()?;
        let xu_phi = combine(&xu, &phi_y, n);
        let resid: Vec<Poly> = (0..n)
            .map(|i| Poly::var(n, top, i).sub(&xu_phi[i]))
            .collect();
        y = combine(&xs_inv, &resid, n);
    }
    let phi_y: Vec<Poly> = phi_z
        .components()
        .iter()
        .map(|c| c.compose(&y, top))
        .collect::<Result<_>>()?;
    let a = combine(&ls, &y, n);
    let b = combine(&lu, &phi_y, n);
    let phi_x: Vec<Poly> = a.iter().zip(&b).map(|(a, b)| a.add(b).truncate(top)).collect();
    Ok(PhiTaylor {
        phi_z,
        t_inv,
        a_s,
        a_u,
        phi_x: PolySeries::new(phi_x)?,
    })
}

/// `max |d phi_i / d x_j - d phi_j / d x_i|` over the samples.
pub fn closedness_check(phi: &PolySeries, samples: &[Vec<f64>]) -> Result<f64> {
    let n = phi.n_vars();
    if phi.outputs() != n {
        return Err(Error::Dimension(format!(
            "closedness needs {n} components, got {}",
            phi.outputs()
        )));
    }
    let jac: Vec<Vec<Poly>> = phi
        .components()
        .iter()
        .map(|c| (0..n).map(|j| c.partial(j)).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for x in samples {
        if x.len() != n {
            return Err(Error::Dimension("sample dimension".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((jac[i][j].eval(x) - jac[j][i].eval(x)).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpe::solve_dpe_series;
    use crate::linalg::spectral_radius;
    use crate::riccati::solve_dtare;
    use crate::testutil::{problem_from_lqr, random_lqr, random_problem, well_conditioned};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GOLDEN: f64 = 1.618_033_988_749_895;

    fn scalar_blocks(a: f64, b: f64, q: f64, r: f64) -> HamiltonianBlocks {
        HamiltonianBlocks::from_lqr(&LqrData::scalar(a, b, q, r, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn scalar_forward_matrix() {
        let hf = forward_matrix(&scalar_blocks(1.0, 1.0, 1.0, 1.0)).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]);
        assert!((&hf - want).norm() < 1e-15);
        assert!(check_symplectic(&hf).unwrap() <= 1e-15);
        let mut ev: Vec<f64> = eigenvalues(&hf).unwrap().iter().map(|e| e.re).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - (2.0 - GOLDEN)).abs() < 1e-12);
        assert!((ev[1] - (1.0 + GOLDEN)).abs() < 1e-12);
        let d = LqrData::scalar(1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let s = solve_dtare(&d).unwrap();
        assert!((ev[0] - spectral_radius(&s.closed_loop(&d)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn forward_matrix_without_state_cost() {
        let hf = forward_matrix(&scalar_blocks(0.5, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(hf[(1, 0)], 0.0);
        assert!((hf[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((hf[(1, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn forward_matrix_needs_invertible_h22() {
        let e = forward_matrix(&scalar_blocks(0.0, 1.0, 1.0, 1.0)).unwrap_err();
        assert!(matches!(e, Error::Singular(ref s) if s.contains("pencil")));
    }

    #[test]
    fn symplectic_examples() {
        let j = symplectic_j(2);
        assert_eq!(check_symplectic(&j).unwrap(), 0.0);
        assert_eq!(check_symplectic(&DMatrix::identity(4, 4)).unwrap(), 0.0);
        assert!(matches!(
            check_symplectic(&DMatrix::identity(3, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pencil_examples() {
        let s = pencil_eigenvalues(&SymplecticPencil::from_blocks(&scalar_blocks(1.0, 1.0, 1.0, 1.0))).unwrap();
        assert_eq!(s.infinite, 0);
        let mut ev: Vec<f64> = s.finite.iter().map(|e| e.re).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 0.381966).abs() < 1e-6 && (ev[1] - 2.618034).abs() < 1e-6);
        let c = &s.coefficients;
        assert!((c[0] / c[2] - 1.0).abs() < 1e-12);
        assert!((c[1] / c[2] + 3.0).abs() < 1e-12);

        let s = pencil_eigenvalues(&SymplecticPencil::from_blocks(&scalar_blocks(0.0, 1.0, 1.0, 1.0))).unwrap();
        assert_eq!(s.infinite, 1);
        assert_eq!(s.finite.len(), 1);
        assert!(s.finite[0].norm() < 1e-12);
        assert!((s.coefficients[1].abs() - 2.0).abs() < 1e-12);

        let s = pencil_eigenvalues(&SymplecticPencil::from_blocks(&scalar_blocks(0.5, 1.0, 0.0, 1.0))).unwrap();
        let mut ev: Vec<f64> = s.finite.iter().map(|e| e.re).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 0.5).abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_structure_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let n = rng.gen_range(1..=3);
            let d = random_lqr(&mut rng, n, 1, true);
            let Ok(ric) = solve_dtare(&d) else { continue };
            let b = HamiltonianBlocks::from_lqr(&d).unwrap();
            let Ok(hf) = forward_matrix(&b) else { continue };
            assert!(check_symplectic(&hf).unwrap() <= 1e-8 * (1.0 + hf.norm().powi(2)));
            let spec = pencil_eigenvalues(&SymplecticPencil::from_blocks(&b)).unwrap();
            assert!(spec.pairing_defect() <= 1e-6, "{spec:?}");
            assert!(spec.is_hyperbolic(1e-6));
            let mut stable: Vec<Complex64> =
                eigenvalues(&hf).unwrap().into_iter().filter(|e| e.norm() < 1.0).collect();
            let mut cl = eigenvalues(&ric.closed_loop(&d)).unwrap();
            let key = |a: &Complex64, b: &Complex64| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im));
            stable.sort_by(key);
            cl.sort_by(key);
            assert_eq!(stable.len(), n);
            for (a, b) in stable.iter().zip(&cl) {
                assert!((a - b).norm() <= 1e-8, "{stable:?} {cl:?}");
            }
        }
    }

    #[test]
    fn linear_forward_step_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_lqr(&mut rng, 2, 1, true);
        let p = problem_from_lqr(&mut rng, &d, Mode::Discrete, 1, 2, 0.0);
        let x = [0.3, -0.2];
        let lam = [0.1, 0.4];
        let st = forward_step(&p, &x, &lam).unwrap();
        let (xl, ll) = forward_step_linear(&HamiltonianBlocks::from_lqr(&d).unwrap(), &x, &lam).unwrap();
        for i in 0..2 {
            assert!((st.x_next[i] - xl[i]).abs() < 1e-12);
            assert!((st.lambda_next[i] - ll[i]).abs() < 1e-12);
        }
        let zero = forward_step(&p, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(zero.x_next.iter().chain(&zero.lambda_next).all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn series_forward_map_agrees_with_newton() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_problem(&mut rng, 1, 1, Mode::Discrete, 3, 4);
        let map = ForwardMap::new(&p).unwrap();
        let trunc = 2;
        let g = map.series(trunc).unwrap();
        let mut pts = Vec::new();
        for s in [1e-1, 10f64.powf(-1.5), 1e-2, 10f64.powf(-2.5)] {
            let w = [0.8 * s, -0.5 * s];
            let st = map.step(&w[..1], &w[1..]).unwrap();
            let ser = g.eval(&w).unwrap();
            let err = ((st.x_next[0] - ser[0]).powi(2) + (st.lambda_next[0] - ser[1]).powi(2)).sqrt();
            pts.push((s, err));
        }
        assert!(order_slope(&pts) >= trunc as f64 + 0.5, "{pts:?}");
    }

    #[test]
    fn tangent_map_preserves_two_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_problem(&mut rng, 2, 1, Mode::Discrete, 3, 4);
        let map = ForwardMap::new(&p).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let lam: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let Ok(t) = map.tangent(&x, &lam) else { continue };
            let v = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let w = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let before = two_form(v.as_slice(), w.as_slice());
            let after = two_form((&t * &v).as_slice(), (&t * &w).as_slice());
            assert!((before - after).abs() <= 1e-10 * (1.0 + t.norm().powi(2)), "{before} {after}");
        }
    }

    #[test]
    fn manifold_from_series_examples() {
        let f = Poly::from_terms(2, 1, &[(vec![0, 1], 1.0)]).unwrap();
        let l = Poly::from_terms(2, 3, &[(vec![2, 0], 0.5), (vec![3, 0], 1.0), (vec![0, 2], 0.5)]).unwrap();
        let p = ControlProblem::new(Mode::Discrete, 1, 1, PolySeries::new(vec![f]).unwrap(), l).unwrap();
        let s = solve_dpe_series(&p, 4).unwrap();
        let m = stable_manifold_from_series(&s).unwrap();
        assert!((m.phi.component(0).coeff(&[1]) - 1.0).abs() < 1e-12);
        assert!((m.phi.component(0).coeff(&[2]) - 3.0).abs() < 1e-12);
        let rep = invariance_check(&m, &p).unwrap();
        assert!(rep.max_defect <= 1e-10, "{rep:?}");
    }

    #[test]
    fn lq_manifold_is_linear_and_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = random_lqr(&mut rng, 2, 1, false);
        let p = problem_from_lqr(&mut rng, &d, Mode::Discrete, 1, 2, 0.0);
        let s = solve_dpe_series(&p, 4).unwrap();
        let m = stable_manifold_from_series(&s).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut e = vec![0u32; 2];
                e[j] = 1;
                assert!((m.phi.component(i).coeff(&e) - s.p[(i, j)]).abs() < 1e-12);
            }
        }
        let rep = invariance_check(&m, &p).unwrap();
        assert!(rep.max_defect <= 1e-12, "{rep:?}");
        let tay = solve_phi_taylor(&p, 4).unwrap();
        assert!(tay.phi_z.components().iter().all(|c| c.max_abs_coeff() < 1e-12));
    }

    #[test]
    fn truncated_manifold_decay_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut done = 0;
        while done < 3 {
            let p = random_problem(&mut rng, 1, 1, Mode::Discrete, 5, 6);
            let Ok(s) = solve_dpe_series(&p, 4) else { continue };
            if !well_conditioned(&s) {
                continue;
            }
            let rep = invariance_check(&stable_manifold_from_series(&s).unwrap(), &p).unwrap();
            assert!(rep.slope >= 3.5, "{rep:?}");
            done += 1;
        }
    }

    #[test]
    fn scalar_manifold_solve() {
        let a_s = DMatrix::from_element(1, 1, 0.4);
        let a_u = DMatrix::from_element(1, 1, 2.0);
        let fs = Poly::zero(2, 2);
        let fu = Poly::from_terms(2, 2, &[(vec![2, 0], 1.0)]).unwrap();
        let phi = solve_phi_z(&a_s, &a_u, &PolySeries::new(vec![fs, fu]).unwrap(), 3).unwrap();
        assert!((phi.component(0).coeff(&[2]) + 1.0 / 1.84).abs() < 1e-12);
        assert!((phi.component(0).coeff(&[2]) + 0.54348).abs() < 1e-5);
    }

    #[test]
    fn taylor_manifold_matches_cost_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut done = 0;
        while done < 5 {
            let n = rng.gen_range(1..=2);
            let p = random_problem(&mut rng, n, 1, Mode::Discrete, 3, 4);
            let Ok(s) = solve_dpe_series(&p, 4) else { continue };
            if !well_conditioned(&s) {
                continue;
            }
            let Ok(tay) = solve_phi_taylor(&p, 4) else { continue };
            let grad = s.pi_gradient().unwrap();
            let dist = tay.phi_x.max_coeff_distance(&grad.truncate(3));
            assert!(dist <= 1e-8, "distance {dist}");
            let samples: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect())
                .collect();
            assert!(closedness_check(&tay.phi_x, &samples).unwrap() <= 1e-8);
            done += 1;
        }
    }

    #[test]
    fn closedness_examples() {
        let pi = Poly::from_terms(2, 3, &[(vec![2, 1], 0.7), (vec![1, 1], -2.0), (vec![0, 3], 1.5)]).unwrap();
        let grad = PolySeries::new(pi.grad()).unwrap();
        let pts = vec![vec![0.3, -0.2], vec![1.0, 2.0]];
        assert!(closedness_check(&grad, &pts).unwrap() <= 1e-14);
        // (y, 0) is not a gradient
        let bad = PolySeries::new(vec![Poly::var(2, 1, 1), Poly::zero(2, 1)]).unwrap();
        assert!(closedness_check(&bad, &pts).unwrap() > 0.1);
    }
}
