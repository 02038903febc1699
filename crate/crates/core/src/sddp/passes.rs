use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CutPool, SddpError, StageProblemSpec};
use crate::lp::{solve, stage_lp, Cut, LpStatus, StageBlock, StageLpInput};
use crate::markov::MarkovChain;

/// Solution of the stage problem restricted to one successor.
#[derive(Debug, Clone)]
pub(crate) struct SuccessorSolution {
    pub value: f64,
    pub subgradient: Vec<f64>,
    pub here: Vec<f64>,
    pub wait: Vec<f64>,
    pub next: Vec<f64>,
}

/// Where to write the LPs of one iteration, if anywhere.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dump<'a> {
    pub dir: &'a Path,
    pub iteration: usize,
}

fn write_dump(dump: Option<Dump<'_>>, name: &str, text: impl FnOnce() -> String) -> Result<(), SddpError> {
    if let Some(d) = dump {
        let text = text();
        let path = d.dir.join(format!("it{:04}_{name}.lp", d.iteration));
        std::fs::write(&path, text).map_err(|source| SddpError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

fn check_node(chain: &MarkovChain, t: usize, node: usize) -> Result<(), SddpError> {
    if t >= chain.horizon() {
        return Err(SddpError::Horizon(t));
    }
    if node >= chain.node_count(t) {
        return Err(SddpError::Node { t, node });
    }
    Ok(())
}

/// Solves the stage LP of `(t, node)` at `state` for the given successors.
/// With here-and-now controls all successors share one LP; otherwise each
/// successor gets its own, which is the same problem split into blocks.
pub(crate) fn solve_successors(
    spec: &StageProblemSpec,
    chain: &MarkovChain,
    pools: &CutPool,
    t: usize,
    node: usize,
    state: &[f64],
    successors: &[usize],
    parallel: bool,
    dump: Option<Dump<'_>>,
) -> Result<Vec<SuccessorSolution>, SddpError> {
    check_node(chain, t, node)?;
    if let Some(&i) = successors.iter().find(|&&i| i >= chain.node_count(t + 1)) {
        return Err(SddpError::Node { t: t + 1, node: i });
    }
    let input = StageLpInput {
        state,
        here_bounds: &spec.here_bounds,
        here_cost: &spec.here_cost,
        wait_bounds: &spec.wait_bounds,
        wait_cost: &spec.wait_cost,
        next_state_bounds: &spec.state_bounds,
    };
    let fail = |status| SddpError::Solve {
        t,
        node,
        state: state.to_vec(),
        status,
    };

    if spec.here_dim() > 0 {
        let row = chain.row(t, node);
        let dynamics: Vec<_> = (0..row.len()).map(|i| (spec.dynamics)(t, node, i)).collect();
        let blocks: Vec<StageBlock<'_>> = dynamics
            .iter()
            .enumerate()
            .map(|(i, d)| StageBlock {
                probability: row[i],
                dynamics: d,
                cuts: pools.cuts(t + 1, i),
            })
            .collect();
        let stage = stage_lp(&input, &blocks)?;
        write_dump(dump, &format!("t{t:02}_n{node}"), || stage.lp.to_lp_string())?;
        let sol = solve(&stage.lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(fail(sol.status));
        }
        let here = stage.here_controls(&sol);
        let subgradient = stage.subgradient(&sol);
        return Ok(successors
            .iter()
            .map(|&i| SuccessorSolution {
                value: sol.value,
                subgradient: subgradient.clone(),
                here: here.clone(),
                wait: stage.wait_controls(&sol, i),
                next: stage.next_state(&sol, i),
            })
            .collect());
    }

    let one = |i: usize| -> Result<SuccessorSolution, SddpError> {
        let dynamics = (spec.dynamics)(t, node, i);
        let block = StageBlock {
            probability: 1.0,
            dynamics: &dynamics,
            cuts: pools.cuts(t + 1, i),
        };
        let stage = stage_lp(&input, &[block])?;
        write_dump(dump, &format!("t{t:02}_n{node}_s{i}"), || stage.lp.to_lp_string())?;
        let sol = solve(&stage.lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(fail(sol.status));
        }
        Ok(SuccessorSolution {
            value: sol.value,
            subgradient: stage.subgradient(&sol),
            here: Vec::new(),
            wait: stage.wait_controls(&sol, 0),
            next: stage.next_state(&sol, 0),
        })
    };
    if parallel && successors.len() > 1 {
        successors.par_iter().map(|&i| one(i)).collect()
    } else {
        successors.iter().map(|&i| one(i)).collect()
    }
}

/// Value and subgradient of the stage problem of `(t, node)` at `state`.
pub(crate) fn stage_cut(
    spec: &StageProblemSpec,
    chain: &MarkovChain,
    pools: &CutPool,
    t: usize,
    node: usize,
    state: &[f64],
    parallel: bool,
    dump: Option<Dump<'_>>,
) -> Result<Cut, SddpError> {
    check_node(chain, t, node)?;
    let row = chain.row(t, node);
    let (value, slope) = if spec.here_dim() > 0 {
        let s = solve_successors(spec, chain, pools, t, node, state, &[0], parallel, dump)?;
        (s[0].value, s[0].subgradient.clone())
    } else {
        let live: Vec<usize> = (0..row.len()).filter(|&i| row[i] > 0.0).collect();
        let sols = solve_successors(spec, chain, pools, t, node, state, &live, parallel, dump)?;
        let mut value = 0.0;
        let mut slope = vec![0.0; spec.state_dim];
        for (&i, s) in live.iter().zip(&sols) {
            value += row[i] * s.value;
            for (g, v) in slope.iter_mut().zip(&s.subgradient) {
                *g += row[i] * v;
            }
        }
        (value, slope)
    };
    let intercept = value - slope.iter().zip(state).map(|(g, x)| g * x).sum::<f64>();
    Ok(Cut { intercept, slope })
}

/// One sampled path: Markov nodes, states and the controls that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Node per stage `0..=T`.
    pub nodes: Vec<usize>,
    /// State per stage `0..=T`.
    pub states: Vec<Vec<f64>>,
    /// Here-and-now controls chosen at stages `0..T`.
    pub here: Vec<Vec<f64>>,
    /// Wait controls applied on entering stages `1..=T`.
    pub wait: Vec<Vec<f64>>,
    /// Running costs plus terminal cost along the path.
    pub cost: f64,
}

/// Samples a node path by inverse CDF and follows the current policy.
pub fn forward_pass<R: Rng>(
    spec: &StageProblemSpec,
    chain: &MarkovChain,
    pools: &CutPool,
    rng: &mut R,
) -> Result<Trajectory, SddpError> {
    let horizon = spec.horizon;
    let mut nodes = vec![0usize];
    let mut states = vec![spec.initial_state.clone()];
    let mut here = Vec::with_capacity(horizon);
    let mut wait = Vec::with_capacity(horizon);
    let mut cost = 0.0;
    for t in 0..horizon {
        let j = nodes[t];
        let u: f64 = rng.random();
        let i = chain.sample_next(t, j, u);
        let x = &states[t];
        let s = solve_successors(spec, chain, pools, t, j, x, &[i], false, None)?.remove(0);
        let dynamics = (spec.dynamics)(t, j, i);
        let next = dynamics.apply(x, &s.here, &s.wait);
        cost += dot(&spec.here_cost, &s.here) + dot(&spec.wait_cost, &s.wait);
        nodes.push(i);
        states.push(next);
        here.push(s.here);
        wait.push(s.wait);
    }
    cost += spec.terminal.value(&states[horizon]);
    Ok(Trajectory {
        nodes,
        states,
        here,
        wait,
        cost,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds the terminal tangent cuts at the visited final states, then one cut
/// per visited `(t, node)` from `T − 1` down to 0.
pub fn backward_pass(
    spec: &StageProblemSpec,
    chain: &MarkovChain,
    pools: &mut CutPool,
    trajectories: &[Trajectory],
    parallel: bool,
) -> Result<(), SddpError> {
    backward_with_dump(spec, chain, pools, trajectories, parallel, None)
}

fn backward_with_dump(
    spec: &StageProblemSpec,
    chain: &MarkovChain,
    pools: &mut CutPool,
    trajectories: &[Trajectory],
    parallel: bool,
    dump: Option<Dump<'_>>,
) -> Result<(), SddpError> {
    let horizon = spec.horizon;
    for tr in trajectories {
        if tr.nodes.len() != horizon + 1 || tr.states.len() != horizon + 1 {
            return Err(SddpError::Invalid("trajectory length does not match the horizon".into()));
        }
        pools.add(horizon, 0, spec.terminal.tangent(&tr.states[horizon]));
    }
    for t in (0..horizon).rev() {
        let frozen: &CutPool = pools;
        let cut_for = |tr: &Trajectory| stage_cut(spec, chain, frozen, t, tr.nodes[t], &tr.states[t], parallel, dump);
        let cuts: Vec<Cut> = if parallel && trajectories.len() > 1 {
            trajectories.par_iter().map(cut_for).collect::<Result<_, _>>()?
        } else {
            trajectories.iter().map(cut_for).collect::<Result<_, _>>()?
        };
        for (tr, cut) in trajectories.iter().zip(cuts) {
            pools.add(t, tr.nodes[t], cut);
        }
    }
    Ok(())
}

/// Stage-0 pool evaluated at `x0`.
pub fn lower_bound(pools: &CutPool, x0: &[f64]) -> f64 {
    pools.evaluate(0, 0, x0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub iterations: usize,
    pub seed: u64,
    /// Sampled paths per iteration.
    pub forward_paths: usize,
    /// Stop once the bound gains less than this over `stall_window` iterations.
    pub stall_tolerance: Option<f64>,
    pub stall_window: usize,
    /// Skip dominated parallel cuts.
    pub prune_parallel: bool,
    /// Solve independent LPs on the rayon pool.
    pub parallel: bool,
    /// Write every backward-pass LP here in LP format.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            seed: 0,
            forward_paths: 1,
            stall_tolerance: None,
            stall_window: 50,
            prune_parallel: false,
            parallel: true,
            dump_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lower_bound: f64,
    pub forward_cost: f64,
    pub cuts: usize,
    pub ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn final_lower_bound(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.lower_bound)
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lower_bound).collect()
    }

    /// CSV with header `iteration,lower_bound,forward_cost,cuts,ms`.
    pub fn to_csv(&self) -> String {
        self.csv(true)
    }

    /// Same table without the wall-time column, stable across reruns.
    pub fn to_csv_without_timing(&self) -> String {
        self.csv(false)
    }

    fn csv(&self, timing: bool) -> String {
        let mut s = String::from(if timing {
            "iteration,lower_bound,forward_cost,cuts,ms\n"
        } else {
            "iteration,lower_bound,forward_cost,cuts\n"
        });
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e},{}", r.iteration, r.lower_bound, r.forward_cost, r.cuts));
            if timing {
                s.push_str(&format!(",{:.3}", r.ms));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs `options.iterations` forward/backward iterations on `pools`.
pub fn train(
    spec: &StageProblemSpec,
    chain: &MarkovChain,
    pools: &mut CutPool,
    options: &TrainOptions,
) -> Result<TrainReport, SddpError> {
    if options.iterations == 0 {
        return Err(SddpError::Invalid("iteration budget must be at least 1".into()));
    }
    if options.forward_paths == 0 {
        return Err(SddpError::Invalid("at least one forward path per iteration is required".into()));
    }
    spec.validate(chain)?;
    if pools.dim() != spec.state_dim || pools.horizon() != spec.horizon {
        return Err(SddpError::PoolMismatch("pool dimensions differ from the problem".into()));
    }
    if let Some(dir) = &options.dump_dir {
        std::fs::create_dir_all(dir).map_err(|source| SddpError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    pools.set_parallel_pruning(options.prune_parallel);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut records: Vec<IterationRecord> = Vec::with_capacity(options.iterations);
    let mut stop = StopReason::Budget;
    for k in 1..=options.iterations {
        let start = Instant::now();
        let paths = (0..options.forward_paths)
            .map(|_| forward_pass(spec, chain, pools, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let dump = options.dump_dir.as_deref().map(|dir| Dump { dir, iteration: k });
        backward_with_dump(spec, chain, pools, &paths, options.parallel, dump)?;
        records.push(IterationRecord {
            iteration: k,
            lower_bound: lower_bound(pools, &spec.initial_state),
            forward_cost: paths.iter().map(|p| p.cost).sum::<f64>() / paths.len() as f64,
            cuts: pools.len(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(tol) = options.stall_tolerance {
            let w = options.stall_window.max(1);
            if records.len() > w && records[k - 1].lower_bound - records[k - 1 - w].lower_bound < tol {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    Ok(TrainReport { records, stop })
}
