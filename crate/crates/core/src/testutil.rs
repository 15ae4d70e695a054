//! Random problem generators shared by unit tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::polyalg::{enumerate_monomials, Poly, PolySeries};
use crate::problem::{ControlProblem, Mode};
use crate::riccati::LqrData;

pub fn random_lqr(rng: &mut ChaCha8Rng, n: usize, m: usize, cross: bool) -> LqrData {
    loop {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.2..1.2));
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let cq = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let cr = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let q = cq.transpose() * &cq + DMatrix::identity(n, n) * 0.1;
        let r = cr.transpose() * &cr + DMatrix::identity(m, m) * 0.5;
        let s = if cross {
            let w = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-0.1..0.1));
            Some(cq.transpose() * w)
        } else {
            None
        };
        if let Ok(d) = LqrData::new(a, b, q, r, s) {
            return d;
        }
    }
}

fn random_hom(rng: &mut ChaCha8Rng, poly: &mut Poly, n_vars: usize, d: usize, scale: f64) {
    for e in enumerate_monomials(n_vars, d) {
        poly.add_term(&e.0, rng.gen_range(-scale..scale)).unwrap();
    }
}

/// Random problem whose quadratic data is `lqr`, with dynamics of degree
/// `df` and cost of degree `dl`.
pub fn problem_from_lqr(
    rng: &mut ChaCha8Rng,
    lqr: &LqrData,
    mode: Mode,
    df: usize,
    dl: usize,
    scale: f64,
) -> ControlProblem {
    let (n, m) = (lqr.n(), lqr.m());
    let k = n + m;
    let mut comps = Vec::new();
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).map(|j| lqr.a[(i, j)]).collect();
        row.extend((0..m).map(|j| lqr.b[(i, j)]));
        let mut p = Poly::linear(&row, df);
        for d in 2..=df {
            random_hom(rng, &mut p, k, d, scale);
        }
        comps.push(p);
    }
    let mut l = Poly::quadratic_form(&lqr.cost_block(), dl);
    for d in 3..=dl {
        random_hom(rng, &mut l, k, d, scale);
    }
    ControlProblem::new(mode, n, m, PolySeries::new(comps).unwrap(), l).unwrap()
}

pub fn random_problem(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    mode: Mode,
    df: usize,
    dl: usize,
) -> ControlProblem {
    let lqr = random_lqr(rng, n, m, true);
    problem_from_lqr(rng, &lqr, mode, df, dl, 0.5)
}

/// Excludes nearly unstabilizable draws whose series coefficients explode.
pub fn well_conditioned(s: &crate::series::SeriesSolution) -> bool {
    s.p.norm() < 50.0
        && s.pi.max_abs_coeff() < 1e3
        && s.level_condition.iter().all(|&c| c < 1e6)
}
