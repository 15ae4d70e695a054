//! Al'brecht's power-series solution of the continuous-time HJB equations
//!
//! `0 = dpi/dx f(x,u) + l(x,u)`, `0 = dpi/dx df/du(x,u) + dl/du(x,u)`
//! with `u = kappa(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ControlModel, ControlProblem, Mode, Policy};
use crate::series::{self, SeriesResidual, SeriesSolution};

/// Solves for `pi` through degree `r` and `kappa` through degree `r - 1`.
pub fn solve_hjb_series(p: &ControlProblem, r: usize) -> Result<SeriesSolution> {
    series::solve_series(p, r, Mode::Continuous)
}

/// Per-degree coefficient norms of both HJB equations along the series.
pub fn hjb_series_residual(
    sol: &SeriesSolution,
    p: &ControlProblem,
    r: usize,
) -> Result<SeriesResidual> {
    series::series_residual(sol, p, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbResidual {
    /// max |dpi/dx f(x,kappa) + l(x,kappa)|
    pub value: f64,
    /// max over samples and controls of |dpi/dx df/du + dl/du|
    pub gradient: f64,
}

/// Pointwise residual of both equations at `x`.
pub fn hjb_residual_at(policy: &dyn Policy, model: &dyn ControlModel, x: &[f64]) -> Result<HjbResidual> {
    if x.len() != model.n() {
        return Err(Error::Dimension(format!(
            "sample has {} coordinates, model has {}",
            x.len(),
            model.n()
        )));
    }
    let u = policy.feedback(x);
    let grad = policy.gradient(x);
    let f = model.dynamics(x, &u)?;
    let l = model.cost(x, &u)?;
    let value = grad.iter().zip(&f).map(|(g, f)| g * f).sum::<f64>() + l;
    let fu = model.dynamics_u(x, &u)?;
    let lu = model.cost_u(x, &u)?;
    let mut gradient: f64 = 0.0;
    for j in 0..model.m() {
        let gj = (0..model.n()).map(|i| grad[i] * fu[(i, j)]).sum::<f64>() + lu[j];
        gradient = gradient.max(gj.abs());
    }
    Ok(HjbResidual {
        value: value.abs(),
        gradient,
    })
}

/// Maximum pointwise residual over the samples.
pub fn hjb_residual(
    policy: &dyn Policy,
    model: &dyn ControlModel,
    points: &[Vec<f64>],
) -> Result<HjbResidual> {
    let mut acc = HjbResidual {
        value: 0.0,
        gradient: 0.0,
    };
    for x in points {
        let r = hjb_residual_at(policy, model, x)?;
        acc.value = acc.value.max(r.value);
        acc.gradient = acc.gradient.max(r.gradient);
    }
    Ok(acc)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::polyalg::{Poly, PolySeries};
    use crate::problem::FnPolicy;
    use crate::stats::order_slope;
    use crate::testutil::{problem_from_lqr, random_lqr, random_problem, well_conditioned};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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

    /// Closed-form dynamics and cost `f = (1+x)u`, `l = ln^2(1+x) + u^2`.
    pub(crate) struct PragerExact;

    impl ControlModel for PragerExact {
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
            Ok(vec![(1.0 + x[0]) * u[0]])
        }
        fn cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
            Ok((1.0 + x[0]).ln().powi(2) + u[0] * u[0])
        }
        fn dynamics_u(&self, x: &[f64], _u: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, 1.0 + x[0]))
        }
        fn cost_u(&self, _x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![2.0 * u[0]])
        }
    }

    #[test]
    fn prager_golden_coefficients() {
        let s = solve_hjb_series(&prager_series(), 4).unwrap();
        let pi = s.pi_coefficients_1d();
        let ka = s.kappa_coefficients_1d();
        for (got, want) in pi.iter().zip([1.0, -1.0, 11.0 / 12.0]) {
            assert!((got - want).abs() < 1e-10, "{pi:?}");
        }
        for (got, want) in ka.iter().zip([-1.0, 0.5, -1.0 / 3.0]) {
            assert!((got - want).abs() < 1e-10, "{ka:?}");
        }
    }

    #[test]
    fn pure_lq_has_no_corrections() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lqr = random_lqr(&mut rng, 2, 1, true);
        let p = problem_from_lqr(&mut rng, &lqr, Mode::Continuous, 1, 2, 0.0);
        let s = solve_hjb_series(&p, 5).unwrap();
        for h in s.pi_parts() {
            assert!(h.max_abs() < 1e-12);
        }
    }

    #[test]
    fn random_residual_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut done = 0;
        while done < 8 {
            let p = random_problem(&mut rng, 2, 1, Mode::Continuous, 3, 4);
            let Ok(s) = solve_hjb_series(&p, 5) else { continue };
            if !well_conditioned(&s) {
                continue;
            }
            let res = hjb_series_residual(&s, &p, 5).unwrap();
            assert!(res.max_value(5) <= 1e-9, "{:?}", res);
            assert!(res.max_gradient(4) <= 1e-9, "{:?}", res);
            done += 1;
        }
    }

    #[test]
    fn permuted_variables_give_same_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 2, 1, Mode::Continuous, 3, 4);
        let s = solve_hjb_series(&p, 4).unwrap();
        // swap x1 and x2
        let swap = [1usize, 0, 2];
        let f: Vec<Poly> = [1usize, 0]
            .iter()
            .map(|&i| p.f.component(i).embed(3, &swap))
            .collect();
        let l = p.l.embed(3, &swap);
        let q = ControlProblem::new(Mode::Continuous, 2, 1, PolySeries::new(f).unwrap(), l).unwrap();
        let t = solve_hjb_series(&q, 4).unwrap();
        let back_pi = t.pi.embed(2, &[1, 0]);
        assert!(back_pi.sub(&s.pi).max_abs_coeff() < 1e-12);
        let back_k = t.kappa.component(0).embed(2, &[1, 0]);
        assert!(back_k.sub(s.kappa.component(0)).max_abs_coeff() < 1e-12);
    }

    #[test]
    fn prager_pointwise_residuals() {
        let s = solve_hjb_series(&prager_series(), 4).unwrap();
        let r = hjb_residual(&s, &PragerExact, &[vec![0.01]]).unwrap();
        // the value equation is exact through degree 4, the first-order
        // condition through degree 3 (leading error (11/3) x^4)
        assert!(r.value <= 1e-8, "{r:?}");
        assert!((r.gradient - 11.0 / 3.0 * 1e-8).abs() <= 1e-9, "{r:?}");

        let exact = FnPolicy {
            value: |x: &[f64]| (1.0 + x[0]).ln().powi(2),
            gradient: |x: &[f64]| vec![2.0 * (1.0 + x[0]).ln() / (1.0 + x[0])],
            feedback: |x: &[f64]| vec![-(1.0 + x[0]).ln()],
        };
        let pts: Vec<Vec<f64>> = (0..=490).map(|i| vec![-0.9 + 0.01 * i as f64]).collect();
        let r = hjb_residual(&exact, &PragerExact, &pts).unwrap();
        assert!(r.value <= 1e-12 && r.gradient <= 1e-12, "{r:?}");
    }

    #[test]
    fn zero_problem_zero_residual() {
        struct Zero;
        impl ControlModel for Zero {
            fn n(&self) -> usize {
                1
            }
            fn m(&self) -> usize {
                1
            }
            fn mode(&self) -> Mode {
                Mode::Continuous
            }
            fn dynamics(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
            fn cost(&self, _: &[f64], _: &[f64]) -> Result<f64> {
                Ok(0.0)
            }
            fn dynamics_u(&self, _: &[f64], _: &[f64]) -> Result<DMatrix<f64>> {
                Ok(DMatrix::zeros(1, 1))
            }
            fn cost_u(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let zero = FnPolicy {
            value: |_: &[f64]| 0.0,
            gradient: |_: &[f64]| vec![0.0],
            feedback: |_: &[f64]| vec![0.0],
        };
        let r = hjb_residual(&zero, &Zero, &[vec![0.3], vec![-2.0]]).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.gradient, 0.0);
    }

    #[test]
    fn residual_decays_with_truncation_order() {
        for r in [3usize, 4] {
            let s = solve_hjb_series(&prager_series(), r).unwrap();
            let pts: Vec<(f64, f64)> = [1e-1, 10f64.powf(-1.5), 1e-2]
                .iter()
                .map(|&x| (x, hjb_residual_at(&s, &PragerExact, &[x]).unwrap().value))
                .collect();
            assert!(order_slope(&pts) >= r as f64 + 0.5, "r={r} {pts:?}");
        }
    }
}
