//! Command implementations. Each returns the text for stdout, the files to
//! write into the output directory and the run-log lines.

use std::fmt::Write as _;

use hjb_core::albrecht::{hjb_residual_at, solve_hjb_series};
use hjb_core::dpe::solve_dpe_series;
use hjb_core::hamiltonian::{
    check_symplectic, forward_matrix, pencil_eigenvalues, HamiltonianBlocks, SymplecticPencil,
};
use hjb_core::lyapunov::{largest_sublevel, sample_box};
use hjb_core::oracle::{rollout_cost, value_iteration, ValueIterationOptions};
use hjb_core::patch::{march, march_both, MarchOptions, PatchedSolution};
use hjb_core::{ControlModel, Error, HomogeneousPoly, Mode, Policy, Result, SeriesSolution};
use log::info;

use crate::problem_file::LoadedProblem;

/// Pencil eigenvalues closer than this to the unit circle break hyperbolicity.
pub const HYPERBOLIC_TOL: f64 = 1e-6;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Output {
    pub stdout: String,
    /// `(file name, contents)`
    pub files: Vec<(String, String)>,
    pub log: Vec<String>,
}

impl Output {
    fn note(&mut self, line: impl Into<String>) {
        let line = line.into();
        info!("{line}");
        self.log.push(line);
    }
}

/// 17 significant digits, round-trip exact.
pub fn num(v: f64) -> String {
    // no signed zeros in the output
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

fn csv_line(cols: &[String]) -> String {
    let mut s = cols.join(",");
    s.push('\n');
    s
}

/// Axis-aligned box `[lo_k, hi_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    /// `lo,hi` for every axis or `lo1,hi1,...,lon,hin`.
    pub fn parse(spec: &str, n: usize) -> Result<Self> {
        let vals = spec
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("box entry '{t}': {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let pairs: Vec<(f64, f64)> = match vals.len() {
            2 => vec![(vals[0], vals[1]); n],
            k if k == 2 * n => vals.chunks(2).map(|c| (c[0], c[1])).collect(),
            k => {
                return Err(Error::Dimension(format!(
                    "box has {k} numbers; expected 2 or {}",
                    2 * n
                )))
            }
        };
        if pairs.iter().any(|(a, b)| !(a < b)) {
            return Err(Error::Precondition(format!("box '{spec}' has an empty axis")));
        }
        Ok(BoxBounds {
            lo: pairs.iter().map(|p| p.0).collect(),
            hi: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn symmetric(w: f64, n: usize) -> Self {
        BoxBounds {
            lo: vec![-w; n],
            hi: vec![w; n],
        }
    }
}

pub fn solve_series(lp: &LoadedProblem, degree: usize) -> Result<SeriesSolution> {
    if degree < 2 {
        return Err(Error::Precondition(format!("degree {degree} must be at least 2")));
    }
    match lp.series.mode {
        Mode::Discrete => solve_dpe_series(&lp.series, degree),
        Mode::Continuous => solve_hjb_series(&lp.series, degree),
    }
}

/// The exact nonlinearity when an affine section is present, else the
/// series problem.
fn model(lp: &LoadedProblem) -> &dyn ControlModel {
    match &lp.affine {
        Some(a) => a,
        None => &lp.series,
    }
}

fn monomial_name(exps: &[u32]) -> String {
    let parts: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 0)
        .map(|(i, e)| if *e == 1 { format!("x{}", i + 1) } else { format!("x{}^{e}", i + 1) })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

fn coefficient_table(out: &mut String, title: &str, parts: &[HomogeneousPoly]) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "  {:<6} {:<16} {:>24}", "degree", "monomial", "coefficient");
    for h in parts {
        for (mi, c) in h.terms() {
            if c != 0.0 {
                let _ = writeln!(out, "  {:<6} {:<16} {:>24}", h.degree(), monomial_name(mi.exponents()), num(c));
            }
        }
    }
}

fn exact_value(lp: &LoadedProblem, x: f64) -> Option<f64> {
    lp.exact.as_ref().and_then(|e| e.pi.eval(x).ok())
}

/// Per-degree coefficient tables and samples of `pi`, `kappa` on a box.
pub fn series(lp: &LoadedProblem, degree: usize, bounds: &BoxBounds, mesh: usize) -> Result<Output> {
    let mut o = Output::default();
    o.log.extend(lp.notes.iter().cloned());
    let sol = solve_series(lp, degree)?;
    o.note(format!(
        "{} series through degree {degree}; level condition numbers {:?}",
        sol.mode, sol.level_condition
    ));
    let n = sol.n();
    if n == 1 {
        let fmt = |v: Vec<f64>| v.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(o.stdout, "pi    (degrees 2..={degree}): [{}]", fmt(sol.pi_coefficients_1d()));
        let _ = writeln!(o.stdout, "kappa (degrees 1..={}): [{}]", degree - 1, fmt(sol.kappa_coefficients_1d()));
        let _ = writeln!(o.stdout);
    }
    coefficient_table(&mut o.stdout, "pi", &sol.pi_parts());
    for (j, parts) in sol.kappa_parts().iter().enumerate() {
        coefficient_table(&mut o.stdout, &format!("kappa_{}", j + 1), parts);
    }

    let mut csv = String::new();
    let mut header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    header.push("pi".into());
    header.extend((1..=sol.m()).map(|k| format!("kappa{k}")));
    let with_exact = n == 1 && lp.exact.is_some();
    if with_exact {
        header.push("pi_exact".into());
    }
    csv.push_str(&csv_line(&header));
    for x in sample_box(&bounds.lo, &bounds.hi, mesh)? {
        let mut row: Vec<String> = x.iter().map(|v| num(*v)).collect();
        row.push(num(sol.value(&x)));
        row.extend(sol.feedback(&x).into_iter().map(num));
        if with_exact {
            row.push(exact_value(lp, x[0]).map(num).unwrap_or_else(|| "nan".into()));
        }
        csv.push_str(&csv_line(&row));
    }
    o.files.push(("series_samples.csv".into(), csv));
    o.files.push((
        "series.json".into(),
        serde_json::to_string_pretty(&sol).expect("plain data serializes") + "\n",
    ));
    Ok(o)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Positive,
    Negative,
    Both,
}

/// Marches Taylor patches across the affine problem's domain.
pub fn patch1d(lp: &LoadedProblem, opts: &MarchOptions, dir: Direction) -> Result<(Output, PatchedSolution)> {
    let a = lp
        .affine
        .as_ref()
        .ok_or_else(|| Error::Precondition("patch1d needs an affine1d section".into()))?;
    let mut o = Output::default();
    o.log.extend(lp.notes.iter().cloned());
    o.note(format!(
        "march: degree {}, eps1 {:e}, eps2 {:e}, mesh {}, max patches {}, direction {dir:?}",
        opts.degree, opts.eps1, opts.eps2, opts.mesh, opts.max_patches
    ));
    let sol = match dir {
        Direction::Positive => march(a, &MarchOptions { direction: 1, ..*opts })?,
        Direction::Negative => march(a, &MarchOptions { direction: -1, ..*opts })?,
        Direction::Both => march_both(a, opts)?,
    };
    for line in &sol.log {
        o.note(line.clone());
    }

    let _ = writeln!(o.stdout, "{:<4} {:>24} {:>24} {:>24}", "id", "center", "from", "to");
    for (i, p) in sol.patches.iter().enumerate() {
        let _ = writeln!(
            o.stdout,
            "{i:<4} {:>24} {:>24} {:>24}",
            num(p.center),
            num(p.interval.0),
            num(p.interval.1)
        );
    }
    for s in &sol.seams {
        let _ = writeln!(
            o.stdout,
            "seam at {}: |pi jump| {:.3e}, |kappa jump| {:.3e}",
            num(s.x),
            s.pi_jump,
            s.kappa_jump
        );
    }
    for s in &sol.stops {
        let _ = writeln!(o.stdout, "stop: {s:?}");
    }

    let with_exact = lp.exact.is_some();
    let mut header = vec!["x", "pi", "kappa"];
    if with_exact {
        header.push("pi_exact");
    }
    header.extend(["residual", "patch_id"]);
    let mut csv = csv_line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let mut worst = 0.0f64;
    for x in a.mesh(opts.mesh) {
        let id = sol.select(x);
        let mut row = vec![num(x), num(sol.value_at(x)), num(sol.kappa_at(x))];
        if with_exact {
            row.push(exact_value(lp, x).map(num).unwrap_or_else(|| "nan".into()));
        }
        let res = hjb_residual_at(&sol, a, &[x]).map(|r| r.value).unwrap_or(f64::NAN);
        if res.is_finite() {
            worst = worst.max(res);
        }
        row.push(num(res));
        row.push(id.to_string());
        csv.push_str(&csv_line(&row));
    }
    let _ = writeln!(o.stdout, "max HJB residual over the mesh: {worst:.3e}");
    o.files.push(("patch1d.csv".into(), csv));
    o.files.push((
        "patches.json".into(),
        serde_json::to_string_pretty(&sol).expect("plain data serializes") + "\n",
    ));
    Ok((o, sol))
}

/// Largest validated sublevel set of the degree-`degree` series.
pub fn lyap(
    lp: &LoadedProblem,
    degree: usize,
    eps1: f64,
    eps2: f64,
    bounds: &BoxBounds,
    mesh: usize,
) -> Result<Output> {
    let mut o = Output::default();
    o.log.extend(lp.notes.iter().cloned());
    let sol = solve_series(lp, degree)?;
    let m = model(lp);
    o.note(format!(
        "lyapunov check of the degree-{degree} series against the {} model: eps1 {eps1:e}, eps2 {eps2:e}, mesh {mesh}, box {:?}..{:?}",
        if lp.affine.is_some() { "affine1d" } else { "series" },
        bounds.lo,
        bounds.hi
    ));
    let report = largest_sublevel(&sol, m, eps1, eps2, &bounds.lo, &bounds.hi, mesh)?;
    let _ = writeln!(o.stdout, "c                        {}", num(report.c));
    let _ = writeln!(o.stdout, "valid                    {}", report.valid);
    let _ = writeln!(o.stdout, "capped by box            {}", report.capped);
    let _ = writeln!(o.stdout, "worst stability margin   {}", num(report.worst_margin_stability));
    let _ = writeln!(o.stdout, "worst optimality margin  {}", num(report.worst_margin_optimality));
    if let Some(x) = &report.first_failure {
        let _ = writeln!(o.stdout, "first failure            {x:?}");
    }
    let _ = writeln!(o.stdout, "samples                  {} ({} outside the domain)", report.samples, report.skipped);
    o.files.push((
        "lyapunov.json".into(),
        serde_json::to_string_pretty(&report).expect("plain data serializes") + "\n",
    ));
    Ok(o)
}

/// Generalized eigenvalues of the symplectic pencil of the quadratic level.
pub fn pencil(lp: &LoadedProblem) -> Result<Output> {
    if lp.series.mode != Mode::Discrete {
        return Err(Error::Precondition("the symplectic pencil is defined for discrete problems".into()));
    }
    let mut o = Output::default();
    o.log.extend(lp.notes.iter().cloned());
    let blocks = HamiltonianBlocks::from_lqr(&lp.series.lqr)?;
    let spec = pencil_eigenvalues(&SymplecticPencil::from_blocks(&blocks))?;
    o.note(format!("pencil degree threshold 1e-11, hyperbolicity tolerance {HYPERBOLIC_TOL:e}"));

    let _ = writeln!(o.stdout, "{:<4} {:>24} {:>24} {:>24}", "i", "re", "im", "modulus");
    let mut csv = csv_line(&["re".into(), "im".into(), "modulus".into()]);
    for (i, mu) in spec.finite.iter().enumerate() {
        let _ = writeln!(o.stdout, "{i:<4} {:>24} {:>24} {:>24}", num(mu.re), num(mu.im), num(mu.norm()));
        csv.push_str(&csv_line(&[num(mu.re), num(mu.im), num(mu.norm())]));
    }
    for _ in 0..spec.infinite {
        csv.push_str("inf,0,inf\n");
    }
    let hyperbolic = spec.is_hyperbolic(HYPERBOLIC_TOL);
    let _ = writeln!(o.stdout, "zero eigenvalues      {}", spec.zero_count(1e-8));
    let _ = writeln!(o.stdout, "infinite eigenvalues  {}", spec.infinite);
    let _ = writeln!(o.stdout, "pairing defect        {:.3e}", spec.pairing_defect());
    let _ = writeln!(
        o.stdout,
        "hyperbolic            {} (gap to unit circle {:.3e})",
        if hyperbolic { "yes" } else { "no" },
        spec.unit_circle_gap()
    );
    match forward_matrix(&blocks) {
        Ok(hf) => {
            let _ = writeln!(o.stdout, "symplectic residual   {:.3e}", check_symplectic(&hf)?);
        }
        Err(e) => {
            let _ = writeln!(o.stdout, "symplectic residual   n/a ({e})");
        }
    }
    o.files.push(("pencil.csv".into(), csv));
    Ok(o)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub u_bounds: BoxBounds,
    pub u_mesh: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub horizon: f64,
    pub dt: f64,
}

/// Gaps between the series cost and an independent reference on a box:
/// value iteration for discrete problems, closed-loop rollouts of the series
/// feedback for continuous ones.
pub fn oracle_compare(
    lp: &LoadedProblem,
    degree: usize,
    bounds: &BoxBounds,
    mesh: usize,
    settings: &OracleSettings,
) -> Result<Output> {
    let mut o = Output::default();
    o.log.extend(lp.notes.iter().cloned());
    let sol = solve_series(lp, degree)?;
    let n = sol.n();
    let mut header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    header.extend(["pi_series".into(), "oracle".into(), "gap".into()]);
    let mut csv = csv_line(&header);
    let mut gaps = Vec::new();
    let mut row = |x: &[f64], reference: f64, csv: &mut String| {
        let s = sol.value(x);
        let gap = (s - reference).abs();
        if gap.is_finite() {
            gaps.push(gap);
        }
        let mut cols: Vec<String> = x.iter().map(|v| num(*v)).collect();
        cols.extend([num(s), num(reference), num(gap)]);
        csv.push_str(&csv_line(&cols));
    };
    match lp.series.mode {
        Mode::Discrete => {
            let opts = ValueIterationOptions {
                lo: bounds.lo.clone(),
                hi: bounds.hi.clone(),
                mesh,
                u_lo: settings.u_bounds.lo.clone(),
                u_hi: settings.u_bounds.hi.clone(),
                u_mesh: settings.u_mesh,
                tol: settings.tol,
                max_sweeps: settings.max_sweeps,
            };
            o.note(format!(
                "value iteration: mesh {mesh}, u_mesh {}, tol {:e}, max sweeps {}",
                opts.u_mesh, opts.tol, opts.max_sweeps
            ));
            let v = value_iteration(&lp.series, &opts)?;
            o.note(format!(
                "converged after {} sweeps (last change {:.3e}, {} clamped successors)",
                v.sweeps, v.tol_achieved, v.clamped
            ));
            for i in 0..v.len() {
                row(&v.node(i), v.values[i], &mut csv);
            }
            o.files.push(("value_function.csv".into(), v.to_csv()));
        }
        Mode::Continuous => {
            let m = model(lp);
            o.note(format!(
                "rollouts of the series feedback: horizon {}, dt {:e}, quadratic tail from the level-1 P",
                settings.horizon, settings.dt
            ));
            let feedback = |x: &[f64]| sol.feedback(x);
            let mut escaped = 0;
            for x in sample_box(&bounds.lo, &bounds.hi, mesh)? {
                let reference = match rollout_cost(m, &feedback, &x, settings.horizon, settings.dt, Some(&sol.p)) {
                    Ok(r) => r.cost,
                    Err(Error::NonConvergence(_)) | Err(Error::Domain(_)) => {
                        escaped += 1;
                        f64::NAN
                    }
                    Err(e) => return Err(e),
                };
                row(&x, reference, &mut csv);
            }
            if escaped > 0 {
                o.note(format!("{escaped} rollouts escaped or left the domain; excluded from the gaps"));
            }
        }
    }
    if gaps.is_empty() {
        return Err(Error::NonConvergence("no reference value could be computed on the box".into()));
    }
    let max = gaps.iter().fold(0.0f64, |a, b| a.max(*b));
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let _ = writeln!(o.stdout, "box        {:?}..{:?}", bounds.lo, bounds.hi);
    let _ = writeln!(o.stdout, "points     {}", gaps.len());
    let _ = writeln!(o.stdout, "max gap    {}", num(max));
    let _ = writeln!(o.stdout, "mean gap   {}", num(mean));
    o.files.push(("oracle_compare.csv".into(), csv));
    Ok(o)
}
