//! Markov-chain stochastic dual dynamic programming.
//!
//! Cost-to-go functions are approximated from below by pools of affine
//! cuts, one pool per stage and Markov node. The pool at the horizon
//! approximates the smooth terminal cost by tangent cuts and is shared by
//! every node, since the terminal cost does not depend on the node.

mod passes;
mod policy;
mod pool;

pub use passes::{
    backward_pass, forward_pass, lower_bound, train, IterationRecord, StopReason, TrainOptions, TrainReport,
    Trajectory,
};
pub use policy::{Decision, Policy};
pub use pool::{CutPool, CutRecord};

use std::sync::Arc;

use thiserror::Error;

use crate::lp::{Bound, Cut, Dynamics, LpError, LpStatus};
use crate::markov::MarkovChain;

#[derive(Error, Debug)]
pub enum SddpError {
    #[error("invalid stage problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("stage {t}, node {node}: stage LP is {status:?} at state {state:?}")]
    Solve {
        t: usize,
        node: usize,
        state: Vec<f64>,
        status: LpStatus,
    },
    #[error("no decision is taken at the horizon (stage {0})")]
    Horizon(usize),
    #[error("stage {t} has no node {node}")]
    Node { t: usize, node: usize },
    #[error("cut pool does not match the problem: {0}")]
    PoolMismatch(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Smooth convex terminal cost of the state.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalCost {
    /// `(exp(−ρ x_c) − 1) / ρ`, the negated exponential utility of coordinate `c`.
    ExponentialDisutility { coordinate: usize, rho: f64 },
    /// `c · x`.
    Linear { coefficients: Vec<f64> },
}

impl TerminalCost {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::ExponentialDisutility { coordinate, rho } => (-rho * x[*coordinate]).exp_m1() / rho,
            Self::Linear { coefficients } => coefficients.iter().zip(x).map(|(c, v)| c * v).sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::ExponentialDisutility { coordinate, rho } => {
                let mut g = vec![0.0; x.len()];
                g[*coordinate] = -(-rho * x[*coordinate]).exp();
                g
            }
            Self::Linear { coefficients } => coefficients.clone(),
        }
    }

    /// Tangent cut at `x`.
    pub fn tangent(&self, x: &[f64]) -> Cut {
        let slope = self.gradient(x);
        let intercept = self.value(x) - slope.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
        Cut { intercept, slope }
    }

    fn validate(&self, dim: usize) -> Result<(), SddpError> {
        match self {
            Self::ExponentialDisutility { coordinate, rho } => {
                if *coordinate >= dim {
                    return Err(SddpError::Invalid(format!(
                        "terminal coordinate {coordinate} outside state dimension {dim}"
                    )));
                }
                if !(*rho > 0.0) || !rho.is_finite() {
                    return Err(SddpError::Invalid(format!("risk aversion {rho} must be positive")));
                }
                // derivative must be nondecreasing along the coordinate
                let slope_at = |v: f64| {
                    let mut x = vec![0.0; dim];
                    x[*coordinate] = v;
                    self.gradient(&x)[*coordinate]
                };
                let grid: Vec<f64> = (-20..=20).map(|k| k as f64 / (10.0 * rho)).collect();
                if grid.windows(2).any(|w| slope_at(w[0]) > slope_at(w[1])) {
                    return Err(SddpError::Invalid("terminal cost is not convex".into()));
                }
            }
            Self::Linear { coefficients } => {
                if coefficients.len() != dim {
                    return Err(SddpError::Invalid(format!(
                        "{} terminal coefficients for state dimension {dim}",
                        coefficients.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dynamics of the transition `from → to` entering stage `t + 1`.
pub type DynamicsFn = Arc<dyn Fn(usize, usize, usize) -> Dynamics + Send + Sync>;

/// Generic multistage problem driven by a Markov chain.
///
/// At stage `t` in node `j` with state `x`, the decision maker picks
/// here-and-now controls `ub` before the successor is known and wait
/// controls `ua` after; the state moves to
/// `A x + B^b ub + B^a ua + W` with the matrices of the realized transition.
#[derive(Clone)]
pub struct StageProblemSpec {
    pub state_dim: usize,
    pub horizon: usize,
    pub initial_state: Vec<f64>,
    /// Box on the state, enforced at every stage.
    pub state_bounds: Vec<Bound>,
    pub here_bounds: Vec<Bound>,
    pub here_cost: Vec<f64>,
    pub wait_bounds: Vec<Bound>,
    pub wait_cost: Vec<f64>,
    pub dynamics: DynamicsFn,
    pub terminal: TerminalCost,
    /// Valid lower bound of every cost-to-go, seeded into the pools.
    pub cost_lower_bound: f64,
}

impl std::fmt::Debug for StageProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StageProblemSpec")
            .field("state_dim", &self.state_dim)
            .field("horizon", &self.horizon)
            .field("initial_state", &self.initial_state)
            .field("state_bounds", &self.state_bounds)
            .field("here_bounds", &self.here_bounds)
            .field("wait_bounds", &self.wait_bounds)
            .field("terminal", &self.terminal)
            .field("cost_lower_bound", &self.cost_lower_bound)
            .finish_non_exhaustive()
    }
}

impl StageProblemSpec {
    pub fn here_dim(&self) -> usize {
        self.here_bounds.len()
    }

    pub fn wait_dim(&self) -> usize {
        self.wait_bounds.len()
    }

    /// Checks dimensions against `chain` and spot-checks every transition.
    pub fn validate(&self, chain: &MarkovChain) -> Result<(), SddpError> {
        let n = self.state_dim;
        if n == 0 {
            return Err(SddpError::Invalid("state dimension is zero".into()));
        }
        if self.horizon < 1 {
            return Err(SddpError::Invalid("horizon must be at least 1".into()));
        }
        if chain.horizon() != self.horizon {
            return Err(SddpError::Invalid(format!(
                "chain has {} transitions, problem horizon is {}",
                chain.horizon(),
                self.horizon
            )));
        }
        if self.initial_state.len() != n || self.state_bounds.len() != n {
            return Err(SddpError::Invalid("initial state or state bounds do not match the state dimension".into()));
        }
        if self.here_cost.len() != self.here_dim() || self.wait_cost.len() != self.wait_dim() {
            return Err(SddpError::Invalid("control costs and bounds differ in length".into()));
        }
        for (k, b) in self.state_bounds.iter().chain(&self.here_bounds).chain(&self.wait_bounds).enumerate() {
            if !(b.lo <= b.hi) {
                return Err(SddpError::Invalid(format!("box {k} is empty: [{}, {}]", b.lo, b.hi)));
            }
        }
        for (k, (x, b)) in self.initial_state.iter().zip(&self.state_bounds).enumerate() {
            if !b.contains(*x, 1e-9) {
                return Err(SddpError::Invalid(format!("initial state coordinate {k} = {x} violates its box")));
            }
        }
        if !self.cost_lower_bound.is_finite() {
            return Err(SddpError::Invalid("cost lower bound must be finite".into()));
        }
        self.terminal.validate(n)?;
        for t in 0..self.horizon {
            for j in 0..chain.node_count(t) {
                for i in 0..chain.node_count(t + 1) {
                    let d = (self.dynamics)(t, j, i);
                    let bad = d.w.len() != n
                        || d.a.len() != n
                        || d.a.iter().any(|r| r.len() != n)
                        || d.b_here.len() > n
                        || d.b_here.iter().any(|r| r.len() != self.here_dim())
                        || d.b_wait.len() > n
                        || d.b_wait.iter().any(|r| r.len() != self.wait_dim());
                    if bad {
                        return Err(SddpError::Invalid(format!("transition ({t}, {j} -> {i}): matrix dimensions")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
