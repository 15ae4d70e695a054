//! Graded multivariate polynomials with dense per-degree storage.
//!
//! Monomials of a fixed degree are kept in graded-lexicographic order
//! (`x1^2, x1 x2, x2^2, ...`); a homogeneous part is a coefficient vector
//! indexed by monomial rank. Truncation is always explicit.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(n_vars: usize) -> Self {
        MultiIndex(vec![0; n_vars])
    }

    pub fn unit(n_vars: usize, i: usize) -> Self {
        let mut e = vec![0; n_vars];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn n_vars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    /// `alpha! = alpha_1! ... alpha_n!`
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&e| factorial(e as usize)).product()
    }

    /// `x^alpha`
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }

    /// Componentwise `beta <= alpha`.
    pub fn dominates(&self, beta: &MultiIndex) -> bool {
        self.0.iter().zip(&beta.0).all(|(a, b)| b <= a)
    }

    /// Product of binomials `C(alpha_i, beta_i)`; zero unless `beta <= alpha`.
    pub fn binomial(&self, beta: &MultiIndex) -> f64 {
        if !self.dominates(beta) {
            return 0.0;
        }
        self.0
            .iter()
            .zip(&beta.0)
            .map(|(&a, &b)| binomial(a as usize, b as usize) as f64)
            .product()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Number of monomials of total degree `d` in `n_vars` variables.
pub fn monomial_count(n_vars: usize, d: usize) -> usize {
    if n_vars == 0 {
        return usize::from(d == 0);
    }
    binomial(d + n_vars - 1, n_vars - 1)
}

/// Rank of an exponent vector within its degree, graded-lex order.
pub fn monomial_rank(exponents: &[u32]) -> usize {
    let n = exponents.len();
    let mut rem: usize = exponents.iter().map(|&e| e as usize).sum();
    let mut rank = 0;
    for (i, &e) in exponents.iter().enumerate().take(n.saturating_sub(1)) {
        let e = e as usize;
        for v in (e + 1)..=rem {
            rank += monomial_count(n - i - 1, rem - v);
        }
        rem -= e;
    }
    rank
}

fn enumerate_into(n_vars: usize, d: usize, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() + 1 == n_vars {
        prefix.push(d as u32);
        out.push(MultiIndex(prefix.clone()));
        prefix.pop();
        return;
    }
    for v in (0..=d).rev() {
        prefix.push(v as u32);
        enumerate_into(n_vars, d - v, prefix, out);
        prefix.pop();
    }
}

/// All monomials of degree `d` in graded-lexicographic order.
pub fn enumerate_monomials(n_vars: usize, d: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(monomial_count(n_vars, d));
    if n_vars == 0 {
        if d == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return out;
    }
    enumerate_into(n_vars, d, &mut Vec::with_capacity(n_vars), &mut out);
    out
}

type BasisCache = Mutex<HashMap<(usize, usize), Arc<Vec<MultiIndex>>>>;

fn basis(n_vars: usize, d: usize) -> Arc<Vec<MultiIndex>> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("monomial cache poisoned");
    guard
        .entry((n_vars, d))
        .or_insert_with(|| Arc::new(enumerate_monomials(n_vars, d)))
        .clone()
}

/// Polynomial whose monomials all have the same total degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousPoly {
    n_vars: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl HomogeneousPoly {
    pub fn zero(n_vars: usize, degree: usize) -> Self {
        HomogeneousPoly {
            n_vars,
            degree,
            coeffs: vec![0.0; monomial_count(n_vars, degree)],
        }
    }

    pub fn from_coeffs(n_vars: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != monomial_count(n_vars, degree) {
            return Err(Error::Dimension(format!(
                "{} coefficients for degree {degree} in {n_vars} variables",
                coeffs.len()
            )));
        }
        Ok(HomogeneousPoly {
            n_vars,
            degree,
            coeffs,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn monomials(&self) -> Arc<Vec<MultiIndex>> {
        basis(self.n_vars, self.degree)
    }

    pub fn coeff(&self, exponents: &[u32]) -> f64 {
        debug_assert_eq!(exponents.len(), self.n_vars);
        if exponents.iter().map(|&e| e as usize).sum::<usize>() != self.degree {
            return 0.0;
        }
        self.coeffs[monomial_rank(exponents)]
    }

    pub fn add_term(&mut self, exponents: &[u32], value: f64) -> Result<()> {
        let d: usize = exponents.iter().map(|&e| e as usize).sum();
        if exponents.len() != self.n_vars || d != self.degree {
            return Err(Error::Dimension(format!(
                "monomial {:?} does not belong to degree {} in {} variables",
                exponents, self.degree, self.n_vars
            )));
        }
        self.coeffs[monomial_rank(exponents)] += value;
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn terms(&self) -> impl Iterator<Item = (MultiIndex, f64)> + '_ {
        let b = self.monomials();
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(move |(i, &c)| (b[i].clone(), c))
            .collect::<Vec<_>>()
            .into_iter()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let b = self.monomials();
        self.coeffs
            .iter()
            .zip(b.iter())
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, m)| c * m.monomial(x))
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        HomogeneousPoly {
            n_vars: self.n_vars,
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &HomogeneousPoly, s: f64) {
        assert_eq!(self.n_vars, other.n_vars);
        assert_eq!(self.degree, other.degree);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    pub fn mul(&self, other: &HomogeneousPoly) -> HomogeneousPoly {
        assert_eq!(self.n_vars, other.n_vars);
        let mut out = HomogeneousPoly::zero(self.n_vars, self.degree + other.degree);
        let ba = self.monomials();
        let bb = other.monomials();
        let mut e = vec![0u32; self.n_vars];
        for (i, &ca) in self.coeffs.iter().enumerate() {
            if ca == 0.0 {
                continue;
            }
            for (j, &cb) in other.coeffs.iter().enumerate() {
                if cb == 0.0 {
                    continue;
                }
                for k in 0..self.n_vars {
                    e[k] = ba[i].0[k] + bb[j].0[k];
                }
                out.coeffs[monomial_rank(&e)] += ca * cb;
            }
        }
        out
    }

    /// Partial derivative with respect to variable `var`.
    pub fn partial(&self, var: usize) -> HomogeneousPoly {
        if self.degree == 0 {
            return HomogeneousPoly::zero(self.n_vars, 0);
        }
        let mut out = HomogeneousPoly::zero(self.n_vars, self.degree - 1);
        let b = self.monomials();
        for (i, &c) in self.coeffs.iter().enumerate() {
            let p = b[i].0[var];
            if c == 0.0 || p == 0 {
                continue;
            }
            let mut e = b[i].0.clone();
            e[var] -= 1;
            out.coeffs[monomial_rank(&e)] += c * p as f64;
        }
        out
    }
}

/// Scalar polynomial truncated at `order`, stored as homogeneous parts
/// `0..=order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    n_vars: usize,
    parts: Vec<HomogeneousPoly>,
}

impl Poly {
    pub fn zero(n_vars: usize, order: usize) -> Self {
        Poly {
            n_vars,
            parts: (0..=order).map(|d| HomogeneousPoly::zero(n_vars, d)).collect(),
        }
    }

    pub fn constant(n_vars: usize, order: usize, c: f64) -> Self {
        let mut p = Poly::zero(n_vars, order);
        p.parts[0].coeffs[0] = c;
        p
    }

    /// The coordinate function `x_i`.
    pub fn var(n_vars: usize, order: usize, i: usize) -> Self {
        assert!(i < n_vars);
        let mut p = Poly::zero(n_vars, order.max(1));
        p.parts[1].coeffs[monomial_rank(&MultiIndex::unit(n_vars, i).0)] = 1.0;
        p
    }

    /// `sum_j row[j] x_j`
    pub fn linear(row: &[f64], order: usize) -> Self {
        let n = row.len();
        let mut p = Poly::zero(n, order.max(1));
        for (j, &v) in row.iter().enumerate() {
            p.parts[1].coeffs[monomial_rank(&MultiIndex::unit(n, j).0)] = v;
        }
        p
    }

    /// `1/2 x'Mx` for a symmetric matrix given row-major.
    pub fn quadratic_form(m: &nalgebra::DMatrix<f64>, order: usize) -> Self {
        let n = m.nrows();
        let mut p = Poly::zero(n, order.max(2));
        for i in 0..n {
            for j in i..n {
                let mut e = vec![0u32; n];
                e[i] += 1;
                e[j] += 1;
                let v = if i == j {
                    0.5 * m[(i, i)]
                } else {
                    0.5 * (m[(i, j)] + m[(j, i)])
                };
                p.parts[2].coeffs[monomial_rank(&e)] += v;
            }
        }
        p
    }

    pub fn from_terms(n_vars: usize, order: usize, terms: &[(Vec<u32>, f64)]) -> Result<Self> {
        let mut p = Poly::zero(n_vars, order);
        for (e, v) in terms {
            p.add_term(e, *v)?;
        }
        Ok(p)
    }

    pub fn from_parts(n_vars: usize, parts: Vec<HomogeneousPoly>) -> Result<Self> {
        for (d, h) in parts.iter().enumerate() {
            if h.degree != d || h.n_vars != n_vars {
                return Err(Error::Dimension(format!(
                    "part {d} has degree {} in {} variables",
                    h.degree, h.n_vars
                )));
            }
        }
        Ok(Poly { n_vars, parts })
    }

    pub fn add_term(&mut self, exponents: &[u32], value: f64) -> Result<()> {
        let d: usize = exponents.iter().map(|&e| e as usize).sum();
        if d > self.order() {
            return Err(Error::Dimension(format!(
                "term of degree {d} exceeds truncation order {}",
                self.order()
            )));
        }
        self.parts[d].add_term(exponents, value)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn order(&self) -> usize {
        self.parts.len() - 1
    }

    pub fn parts(&self) -> &[HomogeneousPoly] {
        &self.parts
    }

    /// Degree-`d` homogeneous part; zero when absent.
    pub fn hom_part(&self, d: usize) -> HomogeneousPoly {
        self.parts
            .get(d)
            .cloned()
            .unwrap_or_else(|| HomogeneousPoly::zero(self.n_vars, d))
    }

    pub fn set_hom_part(&mut self, h: HomogeneousPoly) {
        assert_eq!(h.n_vars, self.n_vars);
        let d = h.degree;
        if d > self.order() {
            self.extend_order(d);
        }
        self.parts[d] = h;
    }

    pub fn coeff(&self, exponents: &[u32]) -> f64 {
        let d: usize = exponents.iter().map(|&e| e as usize).sum();
        self.parts.get(d).map(|h| h.coeff(exponents)).unwrap_or(0.0)
    }

    /// Drops every term of degree above `order` (or pads with zero parts).
    pub fn truncate(&self, order: usize) -> Poly {
        let mut p = self.clone();
        if order < p.order() {
            p.parts.truncate(order + 1);
        } else {
            p.extend_order(order);
        }
        p
    }

    fn extend_order(&mut self, order: usize) {
        while self.parts.len() <= order {
            let d = self.parts.len();
            self.parts.push(HomogeneousPoly::zero(self.n_vars, d));
        }
    }

    /// Lowest degree carrying a nonzero coefficient.
    pub fn min_degree(&self) -> Option<usize> {
        self.parts.iter().position(|h| !h.is_zero())
    }

    /// Highest degree carrying a nonzero coefficient.
    pub fn max_degree(&self) -> Option<usize> {
        self.parts.iter().rposition(|h| !h.is_zero())
    }

    pub fn is_zero(&self) -> bool {
        self.parts.iter().all(HomogeneousPoly::is_zero)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.parts.iter().fold(0.0, |m, h| m.max(h.max_abs()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_vars, "point dimension");
        self.parts.iter().map(|h| h.eval(x)).sum()
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly {
            n_vars: self.n_vars,
            parts: self.parts.iter().map(|h| h.scale(s)).collect(),
        }
    }

    /// `self + s * other`, keeping the larger order.
    pub fn add_scaled(&self, other: &Poly, s: f64) -> Poly {
        assert_eq!(self.n_vars, other.n_vars);
        let mut out = self.truncate(self.order().max(other.order()));
        for (d, h) in other.parts.iter().enumerate() {
            out.parts[d].add_scaled(h, s);
        }
        out
    }

    pub fn add(&self, other: &Poly) -> Poly {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add_scaled(other, -1.0)
    }

    /// Product truncated at `trunc`.
    pub fn mul(&self, other: &Poly, trunc: usize) -> Poly {
        assert_eq!(self.n_vars, other.n_vars);
        let mut out = Poly::zero(self.n_vars, trunc);
        for (da, ha) in self.parts.iter().enumerate() {
            if ha.is_zero() || da > trunc {
                continue;
            }
            for (db, hb) in other.parts.iter().enumerate() {
                if da + db > trunc {
                    break;
                }
                if hb.is_zero() {
                    continue;
                }
                out.parts[da + db].add_scaled(&ha.mul(hb), 1.0);
            }
        }
        out
    }

    pub fn partial(&self, var: usize) -> Poly {
        assert!(var < self.n_vars);
        let order = self.order().saturating_sub(1);
        let mut parts: Vec<HomogeneousPoly> =
            self.parts.iter().skip(1).map(|h| h.partial(var)).collect();
        if parts.is_empty() {
            parts.push(HomogeneousPoly::zero(self.n_vars, 0));
        }
        debug_assert_eq!(parts.len(), order + 1);
        Poly {
            n_vars: self.n_vars,
            parts,
        }
    }

    pub fn grad(&self) -> Vec<Poly> {
        (0..self.n_vars).map(|i| self.partial(i)).collect()
    }

    /// `self(inner_1(y), ..., inner_k(y))` truncated at `trunc`.
    ///
    /// Every inner polynomial must vanish at the origin so that no term of
    /// degree above `trunc` can feed back into lower degrees.
    pub fn compose(&self, inner: &[Poly], trunc: usize) -> Result<Poly> {
        if inner.len() != self.n_vars {
            return Err(Error::Dimension(format!(
                "composition needs {} inner maps, got {}",
                self.n_vars,
                inner.len()
            )));
        }
        let m = inner.first().map(|p| p.n_vars).unwrap_or(0);
        if inner.iter().any(|p| p.n_vars != m) {
            return Err(Error::Dimension("inner maps disagree on variable count".into()));
        }
        for (i, p) in inner.iter().enumerate() {
            if p.parts[0].coeffs[0] != 0.0 {
                return Err(Error::Precondition(format!(
                    "inner map {i} has nonzero constant term {}",
                    p.parts[0].coeffs[0]
                )));
            }
        }
        let mut out = Poly::zero(m, trunc);
        out.parts[0].coeffs[0] = self.parts[0].coeffs[0];
        let top = self.order().min(trunc);
        if top == 0 {
            return Ok(out);
        }
        // powers[i][e] = inner_i^e truncated at trunc
        let powers: Vec<Vec<Poly>> = inner
            .iter()
            .map(|p| {
                let mut v = vec![Poly::constant(m, trunc, 1.0)];
                for e in 1..=top {
                    let next = v[e - 1].mul(p, trunc);
                    v.push(next);
                }
                v
            })
            .collect();
        for d in 1..=top {
            let h = &self.parts[d];
            if h.is_zero() {
                continue;
            }
            let b = h.monomials();
            for (idx, &c) in h.coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let mut term: Option<Poly> = None;
                for (i, &e) in b[idx].0.iter().enumerate() {
                    if e == 0 {
                        continue;
                    }
                    let f = &powers[i][e as usize];
                    term = Some(match term {
                        None => f.clone(),
                        Some(t) => t.mul(f, trunc),
                    });
                }
                if let Some(t) = term {
                    out = out.add_scaled(&t, c);
                }
            }
        }
        Ok(out)
    }

    /// Re-expresses the polynomial in a larger variable set; variable `i`
    /// becomes variable `map[i]`.
    pub fn embed(&self, n_vars: usize, map: &[usize]) -> Poly {
        assert_eq!(map.len(), self.n_vars);
        let mut out = Poly::zero(n_vars, self.order());
        for h in &self.parts {
            for (e, c) in h.terms() {
                let mut ne = vec![0u32; n_vars];
                for (i, &v) in e.0.iter().enumerate() {
                    ne[map[i]] += v;
                }
                out.parts[h.degree].coeffs[monomial_rank(&ne)] += c;
            }
        }
        out
    }

    /// Substitutes the linear map `x -> M x` (`M` is `n_vars x m`), giving a
    /// polynomial in `m` variables.
    pub fn compose_linear(&self, m: &nalgebra::DMatrix<f64>) -> Poly {
        assert_eq!(m.nrows(), self.n_vars);
        let inner: Vec<Poly> = (0..self.n_vars)
            .map(|i| {
                let row: Vec<f64> = (0..m.ncols()).map(|j| m[(i, j)]).collect();
                Poly::linear(&row, self.order())
            })
            .collect();
        self.compose(&inner, self.order())
            .expect("linear maps have no constant term")
    }
}

/// Vector-valued polynomial map; every component shares `n_vars` and order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySeries {
    n_vars: usize,
    components: Vec<Poly>,
}

impl PolySeries {
    pub fn new(components: Vec<Poly>) -> Result<Self> {
        let n_vars = components
            .first()
            .map(Poly::n_vars)
            .ok_or_else(|| Error::Dimension("series needs at least one component".into()))?;
        let order = components.iter().map(Poly::order).max().unwrap_or(0);
        if components.iter().any(|c| c.n_vars != n_vars) {
            return Err(Error::Dimension("components disagree on variable count".into()));
        }
        Ok(PolySeries {
            n_vars,
            components: components.into_iter().map(|c| c.truncate(order)).collect(),
        })
    }

    pub fn zero(n_vars: usize, outputs: usize, order: usize) -> Self {
        PolySeries {
            n_vars,
            components: vec![Poly::zero(n_vars, order); outputs],
        }
    }

    /// Identity map on `n` variables.
    pub fn identity(n: usize, order: usize) -> Self {
        PolySeries {
            n_vars: n,
            components: (0..n).map(|i| Poly::var(n, order, i)).collect(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn outputs(&self) -> usize {
        self.components.len()
    }

    pub fn order(&self) -> usize {
        self.components.first().map(Poly::order).unwrap_or(0)
    }

    pub fn components(&self) -> &[Poly] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Poly {
        &self.components[i]
    }

    pub fn into_components(self) -> Vec<Poly> {
        self.components
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.n_vars {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, series has {} variables",
                point.len(),
                self.n_vars
            )));
        }
        Ok(self.components.iter().map(|c| c.eval(point)).collect())
    }

    pub fn compose(&self, inner: &PolySeries, trunc: usize) -> Result<PolySeries> {
        let comps = self
            .components
            .iter()
            .map(|c| c.compose(&inner.components, trunc))
            .collect::<Result<Vec<_>>>()?;
        PolySeries::new(comps)
    }

    /// Gradient of a scalar series as an `n_vars`-output series.
    pub fn grad(&self) -> Result<PolySeries> {
        if self.components.len() != 1 {
            return Err(Error::Dimension(format!(
                "gradient of a {}-output series",
                self.components.len()
            )));
        }
        PolySeries::new(self.components[0].grad())
    }

    pub fn hom_part(&self, d: usize) -> Vec<HomogeneousPoly> {
        self.components.iter().map(|c| c.hom_part(d)).collect()
    }

    pub fn truncate(&self, order: usize) -> PolySeries {
        PolySeries {
            n_vars: self.n_vars,
            components: self.components.iter().map(|c| c.truncate(order)).collect(),
        }
    }

    /// Largest coefficient difference between two series of equal shape.
    pub fn max_coeff_distance(&self, other: &PolySeries) -> f64 {
        assert_eq!(self.outputs(), other.outputs());
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.sub(b).max_abs_coeff())
            .fold(0.0, f64::max)
    }
}
