use super::passes::solve_successors;
use super::{CutPool, SddpError, StageProblemSpec};
use crate::markov::MarkovChain;

/// Minimizer of a stage LP for one realized successor.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub here: Vec<f64>,
    pub wait: Vec<f64>,
    pub next_state: Vec<f64>,
    /// Optimal value of the LP that produced the decision.
    pub value: f64,
}

/// Feedback policy read off trained cut pools.
#[derive(Debug, Clone, Copy)]
pub struct Policy<'a> {
    spec: &'a StageProblemSpec,
    chain: &'a MarkovChain,
    pools: &'a CutPool,
}

impl<'a> Policy<'a> {
    pub fn new(spec: &'a StageProblemSpec, chain: &'a MarkovChain, pools: &'a CutPool) -> Self {
        Self { spec, chain, pools }
    }

    /// Decision at stage `t` in `node` with `state` once `successor` is revealed.
    pub fn decide(&self, t: usize, node: usize, successor: usize, state: &[f64]) -> Result<Decision, SddpError> {
        self.decide_all(t, node, state, &[successor]).map(|mut v| v.remove(0))
    }

    /// Decisions for several successors of the same stage problem.
    pub fn decide_all(
        &self,
        t: usize,
        node: usize,
        state: &[f64],
        successors: &[usize],
    ) -> Result<Vec<Decision>, SddpError> {
        if t >= self.spec.horizon {
            return Err(SddpError::Horizon(t));
        }
        let sols = solve_successors(self.spec, self.chain, self.pools, t, node, state, successors, false, None)?;
        Ok(sols
            .into_iter()
            .map(|s| Decision {
                here: s.here,
                wait: s.wait,
                next_state: s.next,
                value: s.value,
            })
            .collect())
    }
}
