//! Regulator problems given as truncated power series.

use log::info;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::polyalg::{Poly, PolySeries};
use crate::riccati::LqrData;
pub use crate::riccati::Mode;

/// Pointwise access to dynamics and stage cost with first derivatives.
pub trait ControlModel {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn mode(&self) -> Mode;
    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    fn cost(&self, x: &[f64], u: &[f64]) -> Result<f64>;
    /// `df/du`, `n x m`.
    fn dynamics_u(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>>;
    /// `dl/du`, length `m`.
    fn cost_u(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
}

/// A candidate optimal cost and feedback pair.
pub trait Policy {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn feedback(&self, x: &[f64]) -> Vec<f64>;
}

/// Policy assembled from plain closures (closed-form solutions, tests).
pub struct FnPolicy<V, G, K> {
    pub value: V,
    pub gradient: G,
    pub feedback: K,
}

impl<V, G, K> Policy for FnPolicy<V, G, K>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    K: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
    fn feedback(&self, x: &[f64]) -> Vec<f64> {
        (self.feedback)(x)
    }
}

/// Dynamics `f(x,u)` and cost `l(x,u)` as polynomials in the stacked
/// variables `(x_1..x_n, u_1..u_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub mode: Mode,
    pub n: usize,
    pub m: usize,
    pub f: PolySeries,
    pub l: Poly,
    pub lqr: LqrData,
    /// Normalizations and defaults applied while building the problem.
    pub notes: Vec<String>,
}

impl ControlProblem {
    pub fn new(mode: Mode, n: usize, m: usize, f: PolySeries, l: Poly) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Dimension(format!("n={n}, m={m}")));
        }
        if f.outputs() != n || f.n_vars() != n + m || l.n_vars() != n + m {
            return Err(Error::Dimension(format!(
                "f has {} outputs in {} variables, l has {} variables; expected {n} outputs in {} variables",
                f.outputs(),
                f.n_vars(),
                l.n_vars(),
                n + m
            )));
        }
        for (i, c) in f.components().iter().enumerate() {
            if c.hom_part(0).max_abs() != 0.0 {
                return Err(Error::InvalidProblem(format!(
                    "f_{i}(0,0) = {} is not zero",
                    c.hom_part(0).coeffs()[0]
                )));
            }
        }
        if l.hom_part(0).max_abs() != 0.0 || l.hom_part(1).max_abs() != 0.0 {
            return Err(Error::InvalidProblem(
                "l must vanish to second order at the origin".into(),
            ));
        }
        let (a, b) = linear_part(&f, n, m);
        let (q, s, r) = hessian_blocks(&l, n, m);
        let lqr = LqrData::new(a, b, q, r, Some(s))?;
        Ok(ControlProblem {
            mode,
            n,
            m,
            f,
            l,
            lqr,
            notes: Vec::new(),
        })
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        let note = note.into();
        info!("{note}");
        self.notes.push(note);
        self
    }

    /// Highest degree supplied for the dynamics.
    pub fn f_order(&self) -> usize {
        self.f.order()
    }

    pub fn l_order(&self) -> usize {
        self.l.order()
    }

    /// The problem with the dynamics truncated at `df` and cost at `dl`.
    pub fn truncated(&self, df: usize, dl: usize) -> Result<Self> {
        let f = self.f.truncate(df);
        let l = self.l.truncate(dl);
        let mut p = ControlProblem::new(self.mode, self.n, self.m, f, l)?;
        p.notes = self.notes.clone();
        Ok(p)
    }

    fn stack(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n || u.len() != self.m {
            return Err(Error::Dimension(format!(
                "state has {} and control {} entries, expected {} and {}",
                x.len(),
                u.len(),
                self.n,
                self.m
            )));
        }
        Ok(x.iter().chain(u).copied().collect())
    }
}

/// `(A, B)` read from the degree-one part of `f`.
fn linear_part(f: &PolySeries, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for (i, c) in f.components().iter().enumerate() {
        for j in 0..n + m {
            let mut e = vec![0u32; n + m];
            e[j] = 1;
            let v = c.coeff(&e);
            if j < n {
                a[(i, j)] = v;
            } else {
                b[(i, j - n)] = v;
            }
        }
    }
    (a, b)
}

/// Hessian of the quadratic part of `l`, split into `(Q, S, R)`.
fn hessian_blocks(l: &Poly, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let k = n + m;
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let mut e = vec![0u32; k];
            e[i] += 1;
            e[j] += 1;
            let c = l.coeff(&e);
            h[(i, j)] = if i == j { 2.0 * c } else { c };
        }
    }
    (
        h.view((0, 0), (n, n)).into_owned(),
        h.view((0, n), (n, m)).into_owned(),
        h.view((n, n), (m, m)).into_owned(),
    )
}

impl ControlModel for ControlProblem {
    fn n(&self) -> usize {
        self.n
    }

    fn m(&self) -> usize {
        self.m
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.f.eval(&self.stack(x, u)?)
    }

    fn cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(self.l.eval(&self.stack(x, u)?))
    }

    fn dynamics_u(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let z = self.stack(x, u)?;
        let mut out = DMatrix::zeros(self.n, self.m);
        for (i, c) in self.f.components().iter().enumerate() {
            for j in 0..self.m {
                out[(i, j)] = c.partial(self.n + j).eval(&z);
            }
        }
        Ok(out)
    }

    fn cost_u(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let z = self.stack(x, u)?;
        Ok((0..self.m)
            .map(|j| self.l.partial(self.n + j).eval(&z))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f = x u + u, l = x^2 - x^3 + (11/12) x^4 + u^2
    pub(crate) fn prager_series() -> ControlProblem {
        let f = Poly::from_terms(2, 2, &[(vec![1, 1], 1.0), (vec![0, 1], 1.0)]).unwrap();
        let l = Poly::from_terms(
            2,
            4,
            &[
                (vec![2, 0], 1.0),
                (vec![3, 0], -1.0),
                (vec![4, 0], 11.0 / 12.0),
                (vec![0, 2], 1.0),
            ],
        )
        .unwrap();
        ControlProblem::new(Mode::Continuous, 1, 1, PolySeries::new(vec![f]).unwrap(), l).unwrap()
    }

    #[test]
    fn extracts_quadratic_data() {
        let p = prager_series();
        assert_eq!(p.lqr.a[(0, 0)], 0.0);
        assert_eq!(p.lqr.b[(0, 0)], 1.0);
        assert_eq!(p.lqr.q[(0, 0)], 2.0);
        assert_eq!(p.lqr.r[(0, 0)], 2.0);
        assert_eq!(p.lqr.s[(0, 0)], 0.0);
    }

    #[test]
    fn pointwise_model() {
        let p = prager_series();
        assert_eq!(p.dynamics(&[0.5], &[2.0]).unwrap(), vec![3.0]);
        assert_eq!(p.dynamics_u(&[0.5], &[2.0]).unwrap()[(0, 0)], 1.5);
        assert_eq!(p.cost_u(&[0.5], &[2.0]).unwrap(), vec![4.0]);
        assert!(matches!(p.dynamics(&[0.5, 1.0], &[2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_linear_cost() {
        let f = Poly::from_terms(2, 1, &[(vec![0, 1], 1.0)]).unwrap();
        let l = Poly::from_terms(2, 2, &[(vec![1, 0], 1.0), (vec![0, 2], 1.0)]).unwrap();
        let r = ControlProblem::new(Mode::Discrete, 1, 1, PolySeries::new(vec![f]).unwrap(), l);
        assert!(matches!(r, Err(Error::InvalidProblem(_))));
    }
}
