use std::sync::Arc;

use approx::assert_abs_diff_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::lp::{Bound, Cut, Dynamics};
use crate::markov::MarkovChain;

fn deterministic_chain(horizon: usize) -> MarkovChain {
    MarkovChain {
        nodes: vec![vec![0.0]; horizon + 1],
        transitions: vec![vec![vec![1.0]]; horizon],
    }
}

/// Wealth/energy storage with price `prices[t][i]` on entering stage `t + 1` in node `i`.
fn storage(prices: Vec<Vec<f64>>, cap: f64, speed: f64, terminal: TerminalCost, bound: f64) -> StageProblemSpec {
    let horizon = prices.len();
    StageProblemSpec {
        state_dim: 2,
        horizon,
        initial_state: vec![0.0, 0.0],
        state_bounds: vec![Bound::FREE, Bound::new(0.0, cap)],
        here_bounds: vec![],
        here_cost: vec![],
        wait_bounds: vec![Bound::new(-speed, speed)],
        wait_cost: vec![0.0],
        dynamics: Arc::new(move |t, _from, to| Dynamics {
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            b_here: vec![],
            b_wait: vec![vec![-prices[t][to]], vec![1.0]],
            w: vec![0.0, 0.0],
        }),
        terminal,
        cost_lower_bound: bound,
    }
}

fn toy(rho: f64) -> (StageProblemSpec, MarkovChain) {
    let spec = storage(
        vec![vec![1.0], vec![2.0]],
        1.0,
        1.0,
        TerminalCost::ExponentialDisutility { coordinate: 0, rho },
        -1.0 / rho,
    );
    (spec, deterministic_chain(2))
}

#[test]
fn initial_pools_are_constant() {
    let chain = deterministic_chain(3);
    let mut pools = CutPool::init(&chain, 2, -1.0 / 1e-4);
    assert_abs_diff_eq!(pools.evaluate(1, 0, &[5.0, -3.0]), -10_000.0);
    assert_abs_diff_eq!(lower_bound(&pools, &[123.0, 4.0]), -10_000.0);
    pools.add(2, 0, Cut { intercept: 0.0, slope: vec![1.0, 0.0] });
    assert_eq!(pools.evaluate(2, 0, &[3.0, 7.0]), 3.0);
    assert_eq!(pools.evaluate(2, 0, &[-1e6, 7.0]), -10_000.0);
    assert_eq!(pools.len(), 3 + 1 + 1);
}

#[test]
fn toy_buys_then_sells() {
    let rho = 1e-2;
    let (spec, chain) = toy(rho);
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let report = train(&spec, &chain, &mut pools, &TrainOptions { iterations: 10, ..Default::default() }).unwrap();
    let best = (-rho * 1.0f64).exp_m1() / rho;
    assert_abs_diff_eq!(report.final_lower_bound(), best, epsilon = 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let path = forward_pass(&spec, &chain, &pools, &mut rng).unwrap();
    assert_abs_diff_eq!(path.wait[0][0], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(path.wait[1][0], -1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(path.states[2][0], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(path.cost, best, epsilon = 1e-9);

    let policy = Policy::new(&spec, &chain, &pools);
    let d0 = policy.decide(0, 0, 0, &[0.0, 0.0]).unwrap();
    assert_abs_diff_eq!(d0.wait[0], 1.0, epsilon = 1e-9);
    let d1 = policy.decide(1, 0, 0, &d0.next_state).unwrap();
    assert_abs_diff_eq!(d1.wait[0], -1.0, epsilon = 1e-9);
    assert!(matches!(policy.decide(2, 0, 0, &[0.0, 0.0]), Err(SddpError::Horizon(2))));
}

#[test]
fn flat_cut_surface_sells_at_full_rate() {
    // one stage, terminal cost −wealth: selling earns the price
    let spec = storage(vec![vec![3.0]], 10.0, 2.0, TerminalCost::Linear { coefficients: vec![-1.0, 0.0] }, -1e6);
    let chain = deterministic_chain(1);
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    pools.add(1, 0, Cut { intercept: 0.0, slope: vec![-1.0, 0.0] });
    let d = Policy::new(&spec, &chain, &pools).decide(0, 0, 0, &[0.0, 5.0]).unwrap();
    assert_abs_diff_eq!(d.wait[0], -2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(d.value, -6.0, epsilon = 1e-9);
    assert_abs_diff_eq!(d.next_state[1], 3.0, epsilon = 1e-12);
    // only one unit left to sell
    let d = Policy::new(&spec, &chain, &pools).decide(0, 0, 0, &[0.0, 1.0]).unwrap();
    assert_abs_diff_eq!(d.wait[0], -1.0, epsilon = 1e-12);
}

fn two_node_chain(horizon: usize) -> MarkovChain {
    let mut transitions = vec![vec![vec![0.4, 0.6]]];
    transitions.extend(std::iter::repeat_n(vec![vec![0.7, 0.3], vec![0.2, 0.8]], horizon - 1));
    let mut nodes = vec![vec![0.0]];
    nodes.extend(std::iter::repeat_n(vec![-1.0, 1.0], horizon));
    MarkovChain { nodes, transitions }
}

fn stochastic_instance() -> (StageProblemSpec, MarkovChain) {
    let prices = vec![vec![1.0, 2.0], vec![0.5, 3.0], vec![1.5, 2.5]];
    let rho = 0.5;
    (
        storage(prices, 1.0, 1.0, TerminalCost::ExponentialDisutility { coordinate: 0, rho }, -1.0 / rho),
        two_node_chain(3),
    )
}

#[test]
fn lower_bounds_are_monotone_and_deterministic() {
    let (spec, chain) = stochastic_instance();
    let opts = TrainOptions { iterations: 60, seed: 9, ..Default::default() };
    let mut a = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let ra = train(&spec, &chain, &mut a, &opts).unwrap();
    let lb = ra.lower_bounds();
    assert!(lb.windows(2).all(|w| w[1] >= w[0]));
    assert!(lb[lb.len() - 1] > lb[0]);

    let mut b = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let rb = train(&spec, &chain, &mut b, &TrainOptions { parallel: false, ..opts.clone() }).unwrap();
    assert_eq!(ra.to_csv_without_timing(), rb.to_csv_without_timing());
    assert_eq!(a, b);
}

#[test]
fn cuts_grow_by_one_per_visit() {
    let (spec, chain) = stochastic_instance();
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let path = forward_pass(&spec, &chain, &pools, &mut rng).unwrap();
    let before: Vec<usize> = (0..=3).map(|t| pools.cuts(t, path.nodes[t]).len()).collect();
    backward_pass(&spec, &chain, &mut pools, std::slice::from_ref(&path), false).unwrap();
    for t in 0..=3 {
        assert_eq!(pools.cuts(t, path.nodes[t]).len(), before[t] + 1);
    }
    assert_eq!(pools.len(), 1 + 2 + 2 + 1 + 4);
}

/// Expected terminal disutility of the best discretized policy, by
/// enumerating the scenario tree of the stochastic instance.
fn brute_force(spec: &StageProblemSpec, chain: &MarkovChain, t: usize, node: usize, x: [f64; 2], grid: &[f64]) -> f64 {
    if t == spec.horizon {
        return spec.terminal.value(&x);
    }
    let row = chain.row(t, node);
    let mut total = 0.0;
    for (i, &p) in row.iter().enumerate() {
        let d = (spec.dynamics)(t, node, i);
        let best = grid
            .iter()
            .filter_map(|&u| {
                let y = d.apply(&x, &[], &[u]);
                spec.state_bounds[1].contains(y[1], 1e-12).then(|| brute_force(spec, chain, t + 1, i, [y[0], y[1]], grid))
            })
            .fold(f64::INFINITY, f64::min);
        total += p * best;
    }
    total
}

#[test]
fn cuts_minorize_enumerated_values() {
    let (spec, chain) = stochastic_instance();
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    train(&spec, &chain, &mut pools, &TrainOptions { iterations: 80, seed: 2, ..Default::default() }).unwrap();
    // restricting controls to a grid can only raise the optimum, so cuts stay below it
    let grid: Vec<f64> = (0..=4).map(|k| -1.0 + 0.5 * k as f64).collect();
    for t in 0..3 {
        for node in 0..chain.node_count(t) {
            for e in [0.0, 0.5, 1.0] {
                for w in [-1.0, 0.0, 2.0] {
                    let oracle = brute_force(&spec, &chain, t, node, [w, e], &grid);
                    let approx = pools.evaluate(t, node, &[w, e]);
                    assert!(approx <= oracle + 1e-7, "t={t} node={node} e={e} w={w}: {approx} > {oracle}");
                }
            }
        }
    }
    let oracle = brute_force(&spec, &chain, 0, 0, [0.0, 0.0], &grid);
    let lb = lower_bound(&pools, &[0.0, 0.0]);
    assert!((oracle - lb).abs() <= 1e-2 * oracle.abs(), "lb {lb} oracle {oracle}");
}

#[test]
fn here_and_now_controls_use_the_joint_lp() {
    // x' = x + ub + w_i, cost 0.3·ub, terminal (exp(−x) − 1)
    let rho = 1.0;
    let shocks = [-0.5, 0.5];
    let spec = StageProblemSpec {
        state_dim: 1,
        horizon: 1,
        initial_state: vec![0.0],
        state_bounds: vec![Bound::FREE],
        here_bounds: vec![Bound::new(-2.0, 2.0)],
        here_cost: vec![0.3],
        wait_bounds: vec![],
        wait_cost: vec![],
        dynamics: Arc::new(move |_, _, i| Dynamics {
            a: vec![vec![1.0]],
            b_here: vec![vec![1.0]],
            b_wait: vec![],
            w: vec![shocks[i]],
        }),
        terminal: TerminalCost::ExponentialDisutility { coordinate: 0, rho },
        cost_lower_bound: -10.0,
    };
    let chain = MarkovChain {
        nodes: vec![vec![0.0], vec![-1.0, 1.0]],
        transitions: vec![vec![vec![0.5, 0.5]]],
    };
    // 0.3 = E[exp(−(u + w))] at the optimum
    let m = 0.5 * ((0.5f64).exp() + (-0.5f64).exp());
    let u = (m / 0.3).ln();
    let exact = 0.3 * u + (0.3 - 1.0);
    let mut pools = CutPool::init(&chain, 1, spec.cost_lower_bound);
    let report = train(&spec, &chain, &mut pools, &TrainOptions { iterations: 200, seed: 5, ..Default::default() }).unwrap();
    let lb = report.final_lower_bound();
    assert!(lb <= exact + 1e-9);
    assert!(exact - lb < 1e-3, "lb {lb} exact {exact}");
    let d = Policy::new(&spec, &chain, &pools).decide_all(0, 0, &[0.0], &[0, 1]).unwrap();
    assert_eq!(d[0].here, d[1].here);
    assert!((d[0].here[0] - u).abs() < 0.1);
}

#[test]
fn stall_detector_stops_early() {
    let (spec, chain) = toy(1e-3);
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let opts = TrainOptions {
        iterations: 500,
        stall_tolerance: Some(1e-9),
        stall_window: 5,
        ..Default::default()
    };
    let report = train(&spec, &chain, &mut pools, &opts).unwrap();
    assert_eq!(report.stop, StopReason::Stalled);
    assert!(report.records.len() < 50);
}

#[test]
fn invalid_requests_rejected() {
    let (spec, chain) = toy(1e-2);
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    assert!(matches!(
        train(&spec, &chain, &mut pools, &TrainOptions { iterations: 0, ..Default::default() }),
        Err(SddpError::Invalid(_))
    ));
    let short = deterministic_chain(3);
    assert!(spec.validate(&short).is_err());
    let mut bad = spec.clone();
    bad.initial_state = vec![0.0, 2.0];
    assert!(bad.validate(&chain).is_err());
    let mut bad = spec.clone();
    bad.terminal = TerminalCost::ExponentialDisutility { coordinate: 5, rho: 1.0 };
    assert!(bad.validate(&chain).is_err());
}

#[test]
fn pool_serialization_roundtrip() {
    let (spec, chain) = stochastic_instance();
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    train(&spec, &chain, &mut pools, &TrainOptions { iterations: 5, ..Default::default() }).unwrap();
    let json = pools.to_json();
    let back = CutPool::from_json(&chain, 2, &json).unwrap();
    assert_eq!(back, pools);
    let records = pools.to_records();
    assert!(records.iter().any(|r| r.t == 3));
    let missing: Vec<CutRecord> = records.iter().filter(|r| !(r.t == 1 && r.node == 1)).cloned().collect();
    assert!(matches!(CutPool::from_records(&chain, 2, &missing), Err(SddpError::PoolMismatch(_))));
    assert!(CutPool::from_json(&chain, 3, &json).is_err());
    assert!(CutPool::from_json(&chain, 2, "{").is_err());
}

#[test]
fn parallel_pruning_keeps_bounds() {
    let (spec, chain) = stochastic_instance();
    let opts = TrainOptions { iterations: 40, seed: 1, ..Default::default() };
    let mut plain = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let a = train(&spec, &chain, &mut plain, &opts).unwrap();
    let mut pruned = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let b = train(&spec, &chain, &mut pruned, &TrainOptions { prune_parallel: true, ..opts }).unwrap();
    assert!(pruned.len() < plain.len());
    assert!(b.lower_bounds().windows(2).all(|w| w[1] >= w[0]));
    assert!((a.final_lower_bound() - b.final_lower_bound()).abs() < 1e-2);
}

#[test]
fn lp_dump_writes_files() {
    let (spec, chain) = toy(1e-2);
    let dir = tempfile::tempdir().unwrap();
    let mut pools = CutPool::init(&chain, 2, spec.cost_lower_bound);
    let opts = TrainOptions {
        iterations: 2,
        dump_dir: Some(dir.path().join("lps")),
        ..Default::default()
    };
    train(&spec, &chain, &mut pools, &opts).unwrap();
    let count = std::fs::read_dir(dir.path().join("lps")).unwrap().count();
    assert_eq!(count, 4);
    let text = std::fs::read_to_string(dir.path().join("lps/it0001_t00_n0_s0.lp")).unwrap();
    assert!(text.contains("Minimize"));
}
