use serde::{Deserialize, Serialize};

use super::SddpError;
use crate::lp::Cut;
use crate::markov::MarkovChain;

/// Cuts per `(stage, node)` for stages `0..T`, plus the shared terminal pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CutPool {
    dim: usize,
    stages: Vec<Vec<Vec<Cut>>>,
    terminal: Vec<Cut>,
    prune_parallel: bool,
}

/// One serialized cut. Terminal cuts carry `t = T` and `node = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub t: usize,
    pub node: usize,
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl CutPool {
    /// Every pool starts with the single constant cut `bound`.
    pub fn init(chain: &MarkovChain, dim: usize, bound: f64) -> Self {
        let seed = Cut::constant(bound, dim);
        let stages = (0..chain.horizon())
            .map(|t| vec![vec![seed.clone()]; chain.node_count(t)])
            .collect();
        Self {
            dim,
            stages,
            terminal: vec![seed],
            prune_parallel: false,
        }
    }

    /// Drop a new cut when a parallel cut already dominates it, and replace
    /// parallel cuts the new one dominates.
    pub fn set_parallel_pruning(&mut self, on: bool) {
        self.prune_parallel = on;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn node_count(&self, t: usize) -> usize {
        if t == self.horizon() {
            1
        } else {
            self.stages[t].len()
        }
    }

    /// Cuts of `(t, node)`; every node shares the terminal pool at `t = T`.
    pub fn cuts(&self, t: usize, node: usize) -> &[Cut] {
        if t == self.horizon() {
            &self.terminal
        } else {
            &self.stages[t][node]
        }
    }

    pub fn evaluate(&self, t: usize, node: usize, x: &[f64]) -> f64 {
        self.cuts(t, node)
            .iter()
            .map(|c| c.eval(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn add(&mut self, t: usize, node: usize, cut: Cut) {
        let prune = self.prune_parallel;
        let pool = if t == self.horizon() {
            &mut self.terminal
        } else {
            &mut self.stages[t][node]
        };
        if prune {
            let parallel = pool.iter().position(|c| {
                c.slope
                    .iter()
                    .zip(&cut.slope)
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
            });
            if let Some(k) = parallel {
                if cut.intercept > pool[k].intercept {
                    pool[k] = cut;
                }
                return;
            }
        }
        pool.push(cut);
    }

    /// Total number of cuts over all pools.
    pub fn len(&self) -> usize {
        self.stages.iter().flatten().map(Vec::len).sum::<usize>() + self.terminal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_records(&self) -> Vec<CutRecord> {
        let mut out = Vec::with_capacity(self.len());
        for (t, nodes) in self.stages.iter().enumerate() {
            for (node, cuts) in nodes.iter().enumerate() {
                out.extend(cuts.iter().map(|c| CutRecord {
                    t,
                    node,
                    intercept: c.intercept,
                    slope: c.slope.clone(),
                }));
            }
        }
        let t = self.horizon();
        out.extend(self.terminal.iter().map(|c| CutRecord {
            t,
            node: 0,
            intercept: c.intercept,
            slope: c.slope.clone(),
        }));
        out
    }

    /// Rebuilds pools for `chain`; every `(t, node)` must receive at least one cut.
    pub fn from_records(chain: &MarkovChain, dim: usize, records: &[CutRecord]) -> Result<Self, SddpError> {
        let horizon = chain.horizon();
        let mut stages: Vec<Vec<Vec<Cut>>> = (0..horizon).map(|t| vec![Vec::new(); chain.node_count(t)]).collect();
        let mut terminal = Vec::new();
        for (k, r) in records.iter().enumerate() {
            if r.slope.len() != dim {
                return Err(SddpError::PoolMismatch(format!("cut {k}: slope has {} entries, expected {dim}", r.slope.len())));
            }
            if !r.intercept.is_finite() || r.slope.iter().any(|v| !v.is_finite()) {
                return Err(SddpError::PoolMismatch(format!("cut {k}: non-finite coefficient")));
            }
            let cut = Cut {
                intercept: r.intercept,
                slope: r.slope.clone(),
            };
            if r.t == horizon {
                terminal.push(cut);
            } else if r.t < horizon && r.node < chain.node_count(r.t) {
                stages[r.t][r.node].push(cut);
            } else {
                return Err(SddpError::PoolMismatch(format!("cut {k}: no pool ({}, {})", r.t, r.node)));
            }
        }
        for (t, nodes) in stages.iter().enumerate() {
            if let Some(node) = nodes.iter().position(Vec::is_empty) {
                return Err(SddpError::PoolMismatch(format!("pool ({t}, {node}) is empty")));
            }
        }
        if terminal.is_empty() {
            return Err(SddpError::PoolMismatch("terminal pool is empty".into()));
        }
        Ok(Self {
            dim,
            stages,
            terminal,
            prune_parallel: false,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_records()).expect("cut records serialize")
    }

    pub fn from_json(chain: &MarkovChain, dim: usize, json: &str) -> Result<Self, SddpError> {
        let records: Vec<CutRecord> =
            serde_json::from_str(json).map_err(|e| SddpError::PoolMismatch(format!("malformed cut file: {e}")))?;
        Self::from_records(chain, dim, &records)
    }
}
