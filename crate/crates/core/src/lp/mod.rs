//! Small dense linear programs.
//!
//! The stage subproblems solved inside SDDP have a handful of structural
//! variables and potentially hundreds of cut rows. [`solve`] runs a
//! bounded-variable primal simplex on a condensed dictionary (one row per
//! basic variable, one column per nonbasic variable) so the per-pivot cost
//! is `rows × structural variables` rather than quadratic in the row count.

mod simplex;
mod stage;

pub use simplex::{solve, solve_with};
pub use stage::{stage_lp, Cut, Dynamics, StageBlock, StageLp, StageLpInput};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LpError {
    #[error("invalid linear program: {0}")]
    Invalid(String),
    #[error("stage problem has an empty cut pool for successor {0}")]
    EmptyCutPool(usize),
}

/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn fixed(value: f64) -> Self {
        Self {
            lo: value,
            hi: value,
        }
    }

    pub fn non_negative() -> Self {
        Self {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// One row `coeffs · x (sense) rhs`, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `minimize objective · x` subject to the constraints and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub bounds: Vec<Bound>,
    pub constraints: Vec<Constraint>,
    pub names: Vec<String>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds a variable and returns its index. Existing rows get a zero
    /// coefficient for it.
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, bound: Bound) -> usize {
        self.objective.push(cost);
        self.bounds.push(bound);
        self.names.push(name.into());
        for c in &mut self.constraints {
            c.coeffs.push(0.0);
        }
        self.objective.len() - 1
    }

    /// Adds a row from sparse `(variable, coefficient)` terms and returns its
    /// index. Repeated variables are summed.
    pub fn add_constraint(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) -> usize {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if n == 0 {
            return Err(LpError::Invalid("no variables".into()));
        }
        if self.bounds.len() != n {
            return Err(LpError::Invalid(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(LpError::Invalid(format!("objective coefficient {j} is not finite")));
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if b.lo.is_nan() || b.hi.is_nan() || b.lo > b.hi || b.lo == f64::INFINITY || b.hi == f64::NEG_INFINITY {
                return Err(LpError::Invalid(format!("variable {j} has bounds [{}, {}]", b.lo, b.hi)));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::Invalid(format!(
                    "row {i} has {} coefficients for {} variables",
                    c.coeffs.len(),
                    n
                )));
            }
            if c.coeffs.iter().any(|a| !a.is_finite()) || !c.rhs.is_finite() {
                return Err(LpError::Invalid(format!("row {i} has a non-finite entry")));
            }
        }
        Ok(())
    }

    /// Renders the program in CPLEX LP text layout.
    pub fn to_lp_string(&self) -> String {
        let name = |j: usize| -> String {
            match self.names.get(j) {
                Some(s) if !s.is_empty() => s.clone(),
                _ => format!("x{j}"),
            }
        };
        let expr = |coeffs: &[f64]| -> String {
            let mut s = String::new();
            for (j, &a) in coeffs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                if s.is_empty() {
                    let _ = write!(s, "{} {}", a, name(j));
                } else if a < 0.0 {
                    let _ = write!(s, " - {} {}", -a, name(j));
                } else {
                    let _ = write!(s, " + {} {}", a, name(j));
                }
            }
            if s.is_empty() {
                s.push('0');
            }
            s
        };
        let mut out = String::from("Minimize\n obj: ");
        out.push_str(&expr(&self.objective));
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " c{i}: {} {op} {}", expr(&c.coeffs), c.rhs);
        }
        out.push_str("Bounds\n");
        for (j, b) in self.bounds.iter().enumerate() {
            match (b.lo.is_finite(), b.hi.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " {} free", name(j));
                }
                (true, true) if b.lo == b.hi => {
                    let _ = writeln!(out, " {} = {}", name(j), b.lo);
                }
                (true, true) => {
                    let _ = writeln!(out, " {} <= {} <= {}", b.lo, name(j), b.hi);
                }
                (true, false) => {
                    let _ = writeln!(out, " {} >= {}", name(j), b.lo);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {} <= {}", name(j), b.hi);
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The pivot budget ran out before optimality was certified.
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub primal: Vec<f64>,
    /// Per-row multipliers, `∂ value / ∂ rhs`. Empty unless optimal.
    pub duals: Vec<f64>,
    /// Per-variable reduced costs at the final basis. Empty unless optimal.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Numerical constants shared by every solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Bound violation still counted as feasible.
    pub primal: f64,
    /// Reduced-cost magnitude below which a column is not attractive.
    pub dual: f64,
    /// Smallest tableau entry accepted as a pivot.
    pub pivot: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            primal: 1e-9,
            dual: 1e-9,
            pivot: 1e-10,
            bland_after: 25,
        }
    }
}
