//! Dense primal-dual interior-point solver for linear objectives over linear
//! constraints and second-order cones.
//!
//! Problems are stated in maximization form. Internally they are converted to
//! `min c'x  s.t.  Ax = b, Gx + s = h, s in K` with `K` a product of the
//! nonnegative orthant and Lorentz cones, and solved through a homogeneous
//! self-dual embedding with Nesterov-Todd scaling and Mehrotra
//! predictor-corrector steps.

mod cone;
mod ipm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ipm::{solve, solve_with, IterInfo, Settings};

#[derive(Debug, Error, PartialEq)]
pub enum SocpError {
    #[error("problem has no variables")]
    Empty,
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite data in {0}")]
    NonFinite(String),
}

/// `coef . x <= rhs` (or `=` in the equality list).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub coef: Vec<f64>,
    pub rhs: f64,
    #[serde(default)]
    pub label: String,
}

impl LinearRow {
    pub fn new(coef: Vec<f64>, rhs: f64, label: impl Into<String>) -> Self {
        LinearRow {
            coef,
            rhs,
            label: label.into(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coef.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// `||F x + g||_2 <= d . x + h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocBlock {
    pub f: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub d: Vec<f64>,
    pub h: f64,
    #[serde(default)]
    pub label: String,
}

impl SocBlock {
    /// `d . x + h - ||F x + g||`, nonnegative when satisfied.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let norm = self
            .f
            .iter()
            .zip(&self.g)
            .map(|(r, g)| (dot(r) + g).powi(2))
            .sum::<f64>()
            .sqrt();
        dot(&self.d) + self.h - norm
    }
}

/// `maximize c . x` subject to equalities, inequalities, cones and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub c: Vec<f64>,
    #[serde(default)]
    pub eq: Vec<LinearRow>,
    #[serde(default)]
    pub ineq: Vec<LinearRow>,
    #[serde(default)]
    pub soc: Vec<SocBlock>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl ConicProblem {
    pub fn new(c: Vec<f64>) -> Self {
        let n = c.len();
        ConicProblem {
            c,
            eq: Vec::new(),
            ineq: Vec::new(),
            soc: Vec::new(),
            lower: vec![None; n],
            upper: vec![None; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), SocpError> {
        let n = self.c.len();
        if n == 0 {
            return Err(SocpError::Empty);
        }
        let dim = |what: String, got: usize| {
            if got == n {
                Ok(())
            } else {
                Err(SocpError::Dimension { what, expected: n, got })
            }
        };
        let finite = |what: &str, v: &[f64]| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(SocpError::NonFinite(what.to_string()))
            }
        };
        finite("objective", &self.c)?;
        dim("lower bounds".into(), self.lower.len())?;
        dim("upper bounds".into(), self.upper.len())?;
        for (kind, rows) in [("equality", &self.eq), ("inequality", &self.ineq)] {
            for (i, r) in rows.iter().enumerate() {
                dim(format!("{kind} row {i}"), r.coef.len())?;
                finite(kind, &r.coef)?;
                finite(kind, &[r.rhs])?;
            }
        }
        for (i, b) in self.soc.iter().enumerate() {
            dim(format!("cone {i} d"), b.d.len())?;
            if b.g.len() != b.f.len() {
                return Err(SocpError::Dimension {
                    what: format!("cone {i} g"),
                    expected: b.f.len(),
                    got: b.g.len(),
                });
            }
            for r in &b.f {
                dim(format!("cone {i} F row"), r.len())?;
                finite("cone", r)?;
            }
            finite("cone", &b.g)?;
            finite("cone", &b.d)?;
            finite("cone", &[b.h])?;
        }
        for v in self.lower.iter().chain(&self.upper).flatten() {
            if v.is_nan() {
                return Err(SocpError::NonFinite("bounds".into()));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for r in &self.eq {
            v = v.max((r.eval(x) - r.rhs).abs());
        }
        for r in &self.ineq {
            v = v.max(r.eval(x) - r.rhs);
        }
        for b in &self.soc {
            v = v.max(-b.margin(x));
        }
        for (j, &xj) in x.iter().enumerate() {
            if let Some(l) = self.lower[j] {
                v = v.max(l - xj);
            }
            if let Some(u) = self.upper[j] {
                v = v.max(xj - u);
            }
        }
        v
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Multipliers of the user equality rows.
    pub dual_eq: Vec<f64>,
    /// Multipliers of the user inequality rows (nonnegative).
    pub dual_ineq: Vec<f64>,
    /// Leading multiplier of each cone block (nonnegative).
    pub dual_soc: Vec<f64>,
    #[serde(skip)]
    pub history: Vec<IterInfo>,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
