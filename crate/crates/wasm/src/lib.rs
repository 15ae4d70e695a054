//! Browser bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string; errors surface as JS exceptions.

use hjb_core::albrecht::solve_hjb_series;
use hjb_core::linalg::spectral_radius;
use hjb_core::patch::{march_both, AffineProblem1D, MarchOptions, StopReason};
use hjb_core::riccati::solve_dtare;
use hjb_core::{LqrData, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Coefficient functions of `f = g0 + g1 u`, `l = l0 + l1 u + l2 u^2` and
/// the domain `lo..hi`.
#[derive(Debug, Clone)]
pub struct AffineInput<'a> {
    pub g0: &'a str,
    pub g1: &'a str,
    pub l0: &'a str,
    pub l1: &'a str,
    pub l2: &'a str,
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl AffineInput<'_> {
    fn problem(&self) -> Result<AffineProblem1D> {
        AffineProblem1D::new(
            self.g0, self.g1, self.l0, self.l1, self.l2, self.lo, self.hi, self.lo_open, self.hi_open,
        )
    }
}

#[derive(Debug, Serialize)]
struct SeriesOut {
    /// degrees 2..=degree
    pi: Vec<f64>,
    /// degrees 1..=degree-1
    kappa: Vec<f64>,
    p: f64,
}

#[derive(Debug, Serialize)]
struct DtareOut {
    p: f64,
    k: f64,
    rho: f64,
    residual: f64,
}

#[derive(Debug, Serialize)]
struct PatchOut {
    center: f64,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Serialize)]
struct MarchOut {
    patches: Vec<PatchOut>,
    seams: Vec<f64>,
    stops: Vec<String>,
    x: Vec<f64>,
    pi: Vec<f64>,
    kappa: Vec<f64>,
    patch_id: Vec<usize>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

pub fn series_json(input: &AffineInput, degree: usize) -> Result<String> {
    let p = input.problem()?;
    let s = solve_hjb_series(&p.to_control_problem(degree)?, degree)?;
    Ok(to_json(&SeriesOut {
        pi: s.pi_coefficients_1d(),
        kappa: s.kappa_coefficients_1d(),
        p: s.p[(0, 0)],
    }))
}

pub fn dtare_json(a: f64, b: f64, q: f64, r: f64, s: f64) -> Result<String> {
    let d = LqrData::scalar(a, b, q, r, s)?;
    let sol = solve_dtare(&d)?;
    Ok(to_json(&DtareOut {
        p: sol.p[(0, 0)],
        k: sol.k[(0, 0)],
        rho: spectral_radius(&sol.closed_loop(&d))?,
        residual: sol.residual_norm,
    }))
}

pub fn march_json(input: &AffineInput, degree: usize, eps: f64, mesh: usize, samples: usize) -> Result<String> {
    let p = input.problem()?;
    let opts = MarchOptions {
        degree,
        eps1: eps,
        eps2: eps,
        mesh,
        direction: 1,
        max_patches: 32,
    };
    let sol = march_both(&p, &opts)?;
    let x = p.mesh(samples.max(2));
    Ok(to_json(&MarchOut {
        patches: sol
            .patches
            .iter()
            .map(|q| PatchOut { center: q.center, lo: q.interval.0, hi: q.interval.1 })
            .collect(),
        seams: sol.seams.iter().map(|s| s.x).collect(),
        stops: sol
            .stops
            .iter()
            .map(|s| match s {
                StopReason::DomainEdge => "domain edge".to_string(),
                StopReason::MaxPatches => "patch limit".to_string(),
                StopReason::Characteristic(m) => m.clone(),
            })
            .collect(),
        pi: x.iter().map(|&v| sol.value_at(v)).collect(),
        kappa: x.iter().map(|&v| sol.kappa_at(v)).collect(),
        patch_id: x.iter().map(|&v| sol.select(v)).collect(),
        x,
    }))
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Series coefficients of `pi` and `kappa` for a 1-D control-affine problem.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn series(
    g0: &str,
    g1: &str,
    l0: &str,
    l1: &str,
    l2: &str,
    lo: f64,
    hi: f64,
    lo_open: bool,
    hi_open: bool,
    degree: usize,
) -> std::result::Result<String, JsError> {
    let input = AffineInput { g0, g1, l0, l1, l2, lo, hi, lo_open, hi_open };
    js(series_json(&input, degree))
}

/// Scalar discrete-time algebraic Riccati equation.
#[wasm_bindgen]
pub fn dtare(a: f64, b: f64, q: f64, r: f64, s: f64) -> std::result::Result<String, JsError> {
    js(dtare_json(a, b, q, r, s))
}

/// Taylor-patch march in both directions plus `samples + 1` sample points.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn patch_march(
    g0: &str,
    g1: &str,
    l0: &str,
    l1: &str,
    l2: &str,
    lo: f64,
    hi: f64,
    lo_open: bool,
    hi_open: bool,
    degree: usize,
    eps: f64,
    mesh: usize,
    samples: usize,
) -> std::result::Result<String, JsError> {
    let input = AffineInput { g0, g1, l0, l1, l2, lo, hi, lo_open, hi_open };
    js(march_json(&input, degree, eps, mesh, samples))
}
