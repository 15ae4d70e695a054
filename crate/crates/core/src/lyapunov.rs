//! Sublevel-set validation of an approximate cost / feedback pair.
//!
//! A sample passes when the decrease of `pi` along the closed loop stays in
//! the band `-(1+eps2) l <= D <= -(1-eps1) l`, where `D` is `dpi/dx f` in
//! continuous time and `pi(f) - pi(x)` in discrete time.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ControlModel, Mode, Policy};

/// Relative slack allowed on both margins.
pub const MARGIN_TOL: f64 = 1e-10;

/// Smallest level accepted before the approximation is declared unusable.
pub const C_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub stability: f64,
    pub optimality: f64,
    /// `l(x, kappa(x))`
    pub cost: f64,
}

impl Margins {
    pub fn passes(&self) -> bool {
        let tol = MARGIN_TOL * self.cost.max(0.0);
        self.stability >= -tol && self.optimality >= -tol
    }
}

/// Stability and optimality margins of `(pi, kappa)` at `x`.
pub fn check_point(
    policy: &dyn Policy,
    model: &dyn ControlModel,
    eps1: f64,
    eps2: f64,
    x: &[f64],
) -> Result<Margins> {
    if x.len() != model.n() {
        return Err(Error::Dimension(format!(
            "sample has {} coordinates, model has {}",
            x.len(),
            model.n()
        )));
    }
    let u = policy.feedback(x);
    let f = model.dynamics(x, &u)?;
    let l = model.cost(x, &u)?;
    let d = match model.mode() {
        Mode::Continuous => policy.gradient(x).iter().zip(&f).map(|(g, f)| g * f).sum::<f64>(),
        Mode::Discrete => policy.value(&f) - policy.value(x),
    };
    Ok(Margins {
        stability: -d - (1.0 - eps1) * l,
        optimality: (1.0 + eps2) * l + d,
        cost: l,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub c: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub mesh: usize,
    /// Worst margins over the samples inside `{pi <= c}`.
    pub worst_margin_stability: f64,
    pub worst_margin_optimality: f64,
    /// Samples on the edge of the accepted sublevel set, tightest first.
    pub boundary_points: Vec<Vec<f64>>,
    /// Failing sample of smallest `pi`, if any.
    pub first_failure: Option<Vec<f64>>,
    /// True when no sample failed and `c` is limited by the box.
    pub capped: bool,
    /// Every sample in `{pi <= c}` passes within the relative slack.
    pub valid: bool,
    pub samples: usize,
    /// Samples outside the model's domain, ignored.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
struct Sample {
    x: Vec<f64>,
    pi: f64,
    margins: Margins,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Grid points (n <= 2) or a Halton sequence (n <= 4) in the box.
pub fn sample_box(lo: &[f64], hi: &[f64], mesh: usize) -> Result<Vec<Vec<f64>>> {
    let n = lo.len();
    if hi.len() != n || n == 0 {
        return Err(Error::Dimension("box bounds".into()));
    }
    match n {
        1 | 2 => {
            let axis = |k: usize| -> Vec<f64> {
                (0..=mesh)
                    .map(|i| lo[k] + (hi[k] - lo[k]) * i as f64 / mesh as f64)
                    .collect()
            };
            let a0 = axis(0);
            if n == 1 {
                return Ok(a0.into_iter().map(|v| vec![v]).collect());
            }
            let a1 = axis(1);
            Ok(a0
                .iter()
                .flat_map(|&u| a1.iter().map(move |&v| vec![u, v]))
                .collect())
        }
        3 | 4 => {
            const PRIMES: [u64; 4] = [2, 3, 5, 7];
            let count = mesh * mesh;
            let mut pts: Vec<Vec<f64>> = (1..=count as u64)
                .map(|i| {
                    (0..n)
                        .map(|k| lo[k] + (hi[k] - lo[k]) * radical_inverse(i, PRIMES[k]))
                        .collect()
                })
                .collect();
            pts.push(vec![0.0; n]);
            Ok(pts)
        }
        _ => Err(Error::Dimension(format!(
            "sublevel sampling supports n <= 4, got {n}"
        ))),
    }
}

fn evaluate(
    policy: &dyn Policy,
    model: &dyn ControlModel,
    eps1: f64,
    eps2: f64,
    pts: Vec<Vec<f64>>,
    skipped: &mut usize,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(pts.len());
    for x in pts {
        match check_point(policy, model, eps1, eps2, &x) {
            Ok(margins) => {
                let pi = policy.value(&x);
                out.push(Sample { x, pi, margins });
            }
            Err(Error::Domain(msg)) => {
                debug!("skipping sample {x:?}: {msg}");
                *skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Every sample with `pi <= c` passes.
fn passes(samples: &[Sample], c: f64) -> bool {
    samples.iter().all(|s| s.pi > c || s.margins.passes())
}

/// Largest sampled sublevel set `{pi <= c}` of the box on which both
/// margins hold.
#[allow(clippy::too_many_arguments)]
pub fn largest_sublevel(
    policy: &dyn Policy,
    model: &dyn ControlModel,
    eps1: f64,
    eps2: f64,
    lo: &[f64],
    hi: &[f64],
    mesh: usize,
) -> Result<LyapunovReport> {
    let n = model.n();
    if lo.len() != n || hi.len() != n {
        return Err(Error::Dimension(format!("box has {} coordinates, model {n}", lo.len())));
    }
    if n <= 2 && mesh < 64 {
        return Err(Error::Precondition(format!("mesh {mesh} below 64 per axis")));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(*a <= 0.0 && 0.0 <= *b)) {
        return Err(Error::Precondition("box must contain the origin".into()));
    }
    let mut skipped = 0;
    let mut samples = evaluate(policy, model, eps1, eps2, sample_box(lo, hi, mesh)?, &mut skipped)?;
    if samples.is_empty() {
        return Err(Error::Domain("no sample of the box lies in the model's domain".into()));
    }

    let tightest_failure = |s: &[Sample]| -> Option<usize> {
        s.iter()
            .enumerate()
            .filter(|(_, s)| !s.margins.passes())
            .min_by(|a, b| a.1.pi.total_cmp(&b.1.pi))
            .map(|(i, _)| i)
    };

    // refine x4 around the tight failure
    if let Some(i) = tightest_failure(&samples) {
        let centre = samples[i].x.clone();
        let h: Vec<f64> = (0..n).map(|k| (hi[k] - lo[k]) / mesh as f64).collect();
        let flo: Vec<f64> = (0..n).map(|k| (centre[k] - h[k]).max(lo[k])).collect();
        let fhi: Vec<f64> = (0..n).map(|k| (centre[k] + h[k]).min(hi[k])).collect();
        let sub = if n <= 2 { 8 } else { 16 };
        let fine: Vec<Vec<f64>> = sample_box(&flo, &fhi, sub)?;
        let extra = evaluate(policy, model, eps1, eps2, fine, &mut skipped)?;
        debug!("refined {} samples near {centre:?}", extra.len());
        samples.extend(extra);
    }

    let pi_max = samples.iter().map(|s| s.pi).fold(f64::NEG_INFINITY, f64::max);
    let first = tightest_failure(&samples);
    let (c, capped) = match first {
        None => (pi_max, true),
        Some(i) => {
            let c_fail = samples[i].pi;
            // bisection over the sampled levels; the sampled pass/fail
            // predicate is monotone in c
            let mut levels: Vec<f64> = samples.iter().map(|s| s.pi).filter(|&p| p < c_fail).collect();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let (mut a, mut b) = (0usize, levels.len());
            while a < b {
                let mid = (a + b) / 2;
                if passes(&samples, levels[mid]) {
                    a = mid + 1;
                } else {
                    b = mid;
                }
            }
            let c = if a == 0 { 0.0 } else { levels[a - 1] };
            (c, false)
        }
    };
    if !capped && c < C_MIN {
        return Err(Error::Precondition(format!(
            "series invalid near origin: no passing level above {C_MIN:e} (first failure at {:?})",
            first.map(|i| samples[i].x.clone()).unwrap_or_default()
        )));
    }
    let inside: Vec<&Sample> = samples.iter().filter(|s| s.pi <= c).collect();
    let worst_s = inside.iter().map(|s| s.margins.stability).fold(f64::INFINITY, f64::min);
    let worst_o = inside.iter().map(|s| s.margins.optimality).fold(f64::INFINITY, f64::min);
    let band = c * (1.0 - 1e-3);
    let mut edge: Vec<&Sample> = inside.iter().copied().filter(|s| s.pi >= band).collect();
    edge.sort_by(|a, b| a.margins.stability.total_cmp(&b.margins.stability));
    if skipped > 0 {
        warn!("{skipped} samples outside the model's domain were ignored");
    }
    Ok(LyapunovReport {
        c,
        eps1,
        eps2,
        mesh,
        worst_margin_stability: worst_s,
        worst_margin_optimality: worst_o,
        boundary_points: edge.iter().take(8).map(|s| s.x.clone()).collect(),
        first_failure: first.map(|i| samples[i].x.clone()),
        capped,
        valid: inside.iter().all(|s| s.margins.passes()),
        samples: samples.len(),
        skipped,
    })
}

/// Scan of the mesh points `start + k h` (k >= 1) towards `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayScan {
    /// Last mesh point before the first failure (or the last point scanned).
    pub boundary: f64,
    pub first_failure: Option<f64>,
    pub reached_end: bool,
}

/// One-dimensional validation along a ray: the first mesh point beyond
/// `start` at which a margin fails.
pub fn ray_boundary(
    policy: &dyn Policy,
    model: &dyn ControlModel,
    eps1: f64,
    eps2: f64,
    start: f64,
    end: f64,
    h: f64,
) -> Result<RayScan> {
    if model.n() != 1 {
        return Err(Error::Dimension("ray scans are one-dimensional".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Precondition("mesh spacing must be positive".into()));
    }
    let dir = if end >= start { 1.0 } else { -1.0 };
    let steps = ((end - start).abs() / h + 1e-9).floor() as usize;
    let mut last = start;
    for k in 1..=steps {
        let x = start + dir * h * k as f64;
        let ok = match check_point(policy, model, eps1, eps2, &[x]) {
            Ok(m) => m.passes(),
            Err(Error::Domain(_)) => {
                return Ok(RayScan {
                    boundary: last,
                    first_failure: None,
                    reached_end: true,
                })
            }
            Err(e) => return Err(e),
        };
        if !ok {
            return Ok(RayScan {
                boundary: last,
                first_failure: Some(x),
                reached_end: false,
            });
        }
        last = x;
    }
    Ok(RayScan {
        boundary: last,
        first_failure: None,
        reached_end: true,
    })
}
