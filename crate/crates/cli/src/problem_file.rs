//! JSON problem files.
//!
//! ```json
//! {
//!   "header": { "name": "scalar", "mode": "discrete", "n": 1, "m": 1,
//!               "degrees": { "dynamics": 4, "cost": 4 } },
//!   "dynamics": [ { "component": 0, "alpha": [1], "beta": [0], "value": 1.0 },
//!                 { "component": 0, "alpha": [0], "beta": [1], "value": 1.0 } ],
//!   "cost": [ { "component": 0, "alpha": [2], "beta": [0], "value": 0.5 },
//!             { "component": 0, "alpha": [0], "beta": [2], "value": 0.5 } ]
//! }
//! ```
//!
//! Cost entries are raw monomial coefficients of `l`; the quadratic blocks
//! are read off as the Hessian at the origin, so `0.5 x^2` means `Q = 1`.

use std::path::Path;

use hjb_core::patch::{AffineProblem1D, Expr};
use hjb_core::{ControlProblem, Error, Mode, Poly, PolySeries, Result};
use log::info;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Jets of the series and the affine expressions must agree this well.
pub const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degrees {
    pub dynamics: usize,
    pub cost: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub name: String,
    pub mode: Mode,
    pub n: usize,
    pub m: usize,
    pub degrees: Degrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    #[serde(default)]
    pub component: usize,
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub value: f64,
}

impl Entry {
    fn degree(&self) -> usize {
        self.alpha.iter().chain(&self.beta).map(|e| *e as usize).sum()
    }

    fn exponents(&self) -> Vec<u32> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub lo_open: bool,
    #[serde(default)]
    pub hi_open: bool,
}

/// `f = g0(x) + g1(x) u`, `l = l0(x) + l1(x) u + l2(x) u^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine1dSection {
    pub g0: String,
    pub g1: String,
    pub l0: String,
    pub l1: String,
    pub l2: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactSection {
    pub pi: String,
    pub kappa: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub header: Header,
    #[serde(default)]
    pub dynamics: Vec<Entry>,
    #[serde(default)]
    pub cost: Vec<Entry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine1d: Option<Affine1dSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactSection>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

/// Closed-form 1-D solution used for validation.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub pi: Expr,
    pub kappa: Expr,
}

/// A validated problem file.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub file: ProblemFile,
    pub series: ControlProblem,
    pub affine: Option<AffineProblem1D>,
    pub exact: Option<ExactSolution>,
    /// Normalizations and checks applied while loading.
    pub notes: Vec<String>,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    /// Canonical pretty-printed form; `from_json(to_json(f)) == f`.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    /// The Prager example, `f = (1+x) u`, `l = ln^2(1+x) + u^2` on `(-1, 4]`.
    pub fn prager() -> Self {
        ProblemFile {
            version: FORMAT_VERSION,
            header: Header {
                name: "prager".into(),
                mode: Mode::Continuous,
                n: 1,
                m: 1,
                degrees: Degrees { dynamics: 4, cost: 4 },
            },
            dynamics: Vec::new(),
            cost: Vec::new(),
            affine1d: Some(Affine1dSection {
                g0: "0".into(),
                g1: "x+1".into(),
                l0: "ln(1+x)^2".into(),
                l1: "0".into(),
                l2: "1".into(),
                domain: Domain {
                    lo: -1.0,
                    hi: 4.0,
                    lo_open: true,
                    hi_open: false,
                },
            }),
            exact: Some(ExactSection {
                pi: "ln(1+x)^2".into(),
                kappa: "-ln(1+x)".into(),
            }),
        }
    }

    fn check_entries(&self) -> Result<()> {
        let h = &self.header;
        for (kind, entries, min_degree, outputs) in
            [("dynamics", &self.dynamics, 1, h.n), ("cost", &self.cost, 2, 1)]
        {
            for (i, e) in entries.iter().enumerate() {
                let at = || format!("{kind}[{i}]");
                if e.alpha.len() != h.n || e.beta.len() != h.m {
                    return Err(Error::InvalidProblem(format!(
                        "{}: alpha has {} and beta {} exponents, expected {} and {}",
                        at(),
                        e.alpha.len(),
                        e.beta.len(),
                        h.n,
                        h.m
                    )));
                }
                if e.component >= outputs {
                    return Err(Error::InvalidProblem(format!(
                        "{}: component {} out of range",
                        at(),
                        e.component
                    )));
                }
                if e.degree() < min_degree {
                    return Err(Error::InvalidProblem(format!(
                        "{}: total degree {} below {min_degree}",
                        at(),
                        e.degree()
                    )));
                }
                if !e.value.is_finite() {
                    return Err(Error::InvalidProblem(format!("{}: value is not finite", at())));
                }
            }
        }
        Ok(())
    }

    fn series_from_entries(&self) -> Result<ControlProblem> {
        let h = &self.header;
        let k = h.n + h.m;
        let df = h.degrees.dynamics.max(self.dynamics.iter().map(Entry::degree).max().unwrap_or(1));
        let dl = h.degrees.cost.max(self.cost.iter().map(Entry::degree).max().unwrap_or(2));
        let mut f = vec![Poly::zero(k, df); h.n];
        let mut l = Poly::zero(k, dl);
        for e in &self.dynamics {
            f[e.component].add_term(&e.exponents(), e.value)?;
        }
        for e in &self.cost {
            l.add_term(&e.exponents(), e.value)?;
        }
        let p = ControlProblem::new(h.mode, h.n, h.m, PolySeries::new(f)?, l)?;
        p.truncated(h.degrees.dynamics, h.degrees.cost)
    }

    /// Parses expressions, builds the series problem (deriving it from the
    /// affine section when no entries are given) and runs the consistency
    /// and convexity checks.
    pub fn into_problem(self) -> Result<LoadedProblem> {
        let h = &self.header;
        if self.version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "format version {} not supported (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if h.n == 0 || h.m == 0 {
            return Err(Error::InvalidProblem(format!("header: n={}, m={}", h.n, h.m)));
        }
        if h.degrees.dynamics < 1 || h.degrees.cost < 2 {
            return Err(Error::InvalidProblem(
                "header: degrees must be at least 1 (dynamics) and 2 (cost)".into(),
            ));
        }
        self.check_entries()?;
        let mut notes = Vec::new();

        let affine = match &self.affine1d {
            None => None,
            Some(a) => {
                if h.n != 1 || h.m != 1 || h.mode != Mode::Continuous {
                    return Err(Error::InvalidProblem(
                        "affine1d: needs a continuous problem with n = m = 1".into(),
                    ));
                }
                let d = &a.domain;
                Some(
                    AffineProblem1D::new(&a.g0, &a.g1, &a.l0, &a.l1, &a.l2, d.lo, d.hi, d.lo_open, d.hi_open)
                        .map_err(|e| prefix("affine1d", e))?,
                )
            }
        };
        let exact = match &self.exact {
            None => None,
            Some(e) => Some(ExactSolution {
                pi: Expr::parse(&e.pi).map_err(|err| prefix("exact.pi", err))?,
                kappa: Expr::parse(&e.kappa).map_err(|err| prefix("exact.kappa", err))?,
            }),
        };

        let series = if self.dynamics.is_empty() {
            let Some(a) = &affine else {
                return Err(Error::InvalidProblem("A,B missing: no dynamics entries".into()));
            };
            let degree = h.degrees.dynamics.max(h.degrees.cost);
            let p = a.to_control_problem(degree)?.truncated(h.degrees.dynamics, h.degrees.cost)?;
            notes.push(format!("series derived from affine1d through degree {degree}"));
            p
        } else {
            let p = self.series_from_entries()?;
            if let Some(a) = &affine {
                check_consistency(&p, a)?;
                notes.push(format!(
                    "series entries agree with affine1d jets at 0 within {CONSISTENCY_TOL:e}"
                ));
            }
            p
        };
        notes.push(format!(
            "cost convention 1/2 x'Qx + x'Su + 1/2 u'Ru: Q = {:?}, S = {:?}, R = {:?}",
            series.lqr.q.as_slice(),
            series.lqr.s.as_slice(),
            series.lqr.r.as_slice()
        ));
        for note in &notes {
            info!("{note}");
        }
        Ok(LoadedProblem {
            file: self,
            series,
            affine,
            exact,
            notes,
        })
    }
}

fn prefix(field: &str, e: Error) -> Error {
    match e {
        Error::Parse(m) => Error::Parse(format!("{field}: {m}")),
        Error::InvalidProblem(m) => Error::InvalidProblem(format!("{field}: {m}")),
        other => other,
    }
}

/// Compares every coefficient of the series problem with the jets of the
/// affine expressions at 0.
fn check_consistency(p: &ControlProblem, a: &AffineProblem1D) -> Result<()> {
    let df = p.f_order();
    let dl = p.l_order();
    let derived = a.to_control_problem(df.max(dl))?;
    let pairs = [
        ("dynamics", p.f.component(0), derived.f.component(0), df),
        ("cost", &p.l, &derived.l, dl),
    ];
    for (kind, given, jet, order) in pairs {
        for d in 0..=order {
            for (mi, c) in given.hom_part(d).terms() {
                let want = jet.coeff(mi.exponents());
                if (c - want).abs() > CONSISTENCY_TOL {
                    return Err(Error::InvalidProblem(format!(
                        "{kind} coefficient of x^{} u^{} is {c} but affine1d gives {want}",
                        mi.exponents()[0],
                        mi.exponents()[1]
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    ProblemFile::load(path)?.into_problem()
}
