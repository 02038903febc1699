//! One-LP form of a two-stage stage problem.
//!
//! Layout, for incoming state `x` (dimension N), here-and-now controls `ub`
//! and one block per successor `i`:
//!
//! ```text
//! min  here_cost·ub + Σ_i p_i (wait_cost·ua_i + θ_i)
//! s.t. z = x                                   (state copy, duals = ∂/∂x)
//!      y_i − A_i z − Bb_i ub − Ba_i ua_i = W_i  (dynamics)
//!      θ_i − β_k·y_i ≥ α_k                     (every cut k of successor i)
//!      ub, ua_i, y_i within their boxes
//! ```

use serde::{Deserialize, Serialize};

use super::{Bound, LinearProgram, LpError, LpSolution, Sense};

/// Affine minorant `intercept + slope · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl Cut {
    pub fn constant(value: f64, dim: usize) -> Self {
        Self {
            intercept: value,
            slope: vec![0.0; dim],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.slope.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// `x' = A x + Bb ub + Ba ua + W`; matrices are row-major per state row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub a: Vec<Vec<f64>>,
    pub b_here: Vec<Vec<f64>>,
    pub b_wait: Vec<Vec<f64>>,
    pub w: Vec<f64>,
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        self.w.len()
    }

    pub fn apply(&self, x: &[f64], here: &[f64], wait: &[f64]) -> Vec<f64> {
        (0..self.w.len())
            .map(|r| {
                let mut v = self.w[r];
                v += self.a[r].iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
                if let Some(row) = self.b_here.get(r) {
                    v += row.iter().zip(here).map(|(b, u)| b * u).sum::<f64>();
                }
                if let Some(row) = self.b_wait.get(r) {
                    v += row.iter().zip(wait).map(|(b, u)| b * u).sum::<f64>();
                }
                v
            })
            .collect()
    }
}

/// One successor realization of the stage.
#[derive(Debug, Clone, Copy)]
pub struct StageBlock<'a> {
    pub probability: f64,
    pub dynamics: &'a Dynamics,
    pub cuts: &'a [Cut],
}

#[derive(Debug, Clone, Copy)]
pub struct StageLpInput<'a> {
    pub state: &'a [f64],
    pub here_bounds: &'a [Bound],
    pub here_cost: &'a [f64],
    pub wait_bounds: &'a [Bound],
    pub wait_cost: &'a [f64],
    pub next_state_bounds: &'a [Bound],
}

/// A built stage LP together with the variable layout needed to read the
/// solution back.
#[derive(Debug, Clone)]
pub struct StageLp {
    pub lp: LinearProgram,
    copy_rows: Vec<usize>,
    here_vars: Vec<usize>,
    blocks: Vec<BlockVars>,
}

#[derive(Debug, Clone)]
struct BlockVars {
    wait: Vec<usize>,
    next: Vec<usize>,
    theta: usize,
}

/// Builds the stage LP for `input` with one block per entry of `blocks`.
/// Blocks are kept even at probability zero so indices line up with the
/// caller's successor list.
pub fn stage_lp(input: &StageLpInput<'_>, blocks: &[StageBlock<'_>]) -> Result<StageLp, LpError> {
    let n = input.state.len();
    if input.next_state_bounds.len() != n {
        return Err(LpError::Invalid(format!(
            "{} next-state bounds for state dimension {n}",
            input.next_state_bounds.len()
        )));
    }
    if input.here_bounds.len() != input.here_cost.len() || input.wait_bounds.len() != input.wait_cost.len() {
        return Err(LpError::Invalid("control bounds and costs differ in length".into()));
    }
    if blocks.is_empty() {
        return Err(LpError::Invalid("stage problem without successors".into()));
    }
    let total: f64 = blocks.iter().map(|b| b.probability).sum();
    if (total - 1.0).abs() > 1e-9 || blocks.iter().any(|b| b.probability < 0.0) {
        return Err(LpError::Invalid(format!("successor probabilities sum to {total}")));
    }
    for (i, b) in blocks.iter().enumerate() {
        if b.cuts.is_empty() {
            return Err(LpError::EmptyCutPool(i));
        }
        let d = b.dynamics;
        if d.w.len() != n || d.a.len() != n || d.a.iter().any(|r| r.len() != n) {
            return Err(LpError::Invalid(format!("successor {i}: dynamics do not match state dimension {n}")));
        }
        if b.cuts.iter().any(|c| c.slope.len() != n) {
            return Err(LpError::Invalid(format!("successor {i}: cut slope dimension mismatch")));
        }
    }
    let mb = input.here_bounds.len();
    let ma = input.wait_bounds.len();

    let mut lp = LinearProgram::new();
    let copy_vars: Vec<usize> = (0..n).map(|k| lp.add_var(format!("z{k}"), 0.0, Bound::FREE)).collect();
    let here_vars: Vec<usize> = (0..mb)
        .map(|k| lp.add_var(format!("ub{k}"), input.here_cost[k], input.here_bounds[k]))
        .collect();
    let mut vars = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        let p = b.probability;
        let wait: Vec<usize> = (0..ma)
            .map(|k| lp.add_var(format!("ua{i}_{k}"), p * input.wait_cost[k], input.wait_bounds[k]))
            .collect();
        let next: Vec<usize> = (0..n)
            .map(|k| lp.add_var(format!("y{i}_{k}"), 0.0, input.next_state_bounds[k]))
            .collect();
        let theta = lp.add_var(format!("theta{i}"), p, Bound::FREE);
        vars.push(BlockVars { wait, next, theta });
    }

    let copy_rows: Vec<usize> = (0..n)
        .map(|k| lp.add_constraint(&[(copy_vars[k], 1.0)], Sense::Eq, input.state[k]))
        .collect();
    for (b, v) in blocks.iter().zip(&vars) {
        let d = b.dynamics;
        for r in 0..n {
            let mut terms = vec![(v.next[r], 1.0)];
            terms.extend(copy_vars.iter().zip(&d.a[r]).map(|(&j, &a)| (j, -a)));
            if let Some(row) = d.b_here.get(r) {
                terms.extend(here_vars.iter().zip(row).map(|(&j, &a)| (j, -a)));
            }
            if let Some(row) = d.b_wait.get(r) {
                terms.extend(v.wait.iter().zip(row).map(|(&j, &a)| (j, -a)));
            }
            lp.add_constraint(&terms, Sense::Eq, d.w[r]);
        }
        for cut in b.cuts {
            let mut terms = vec![(v.theta, 1.0)];
            terms.extend(v.next.iter().zip(&cut.slope).map(|(&j, &s)| (j, -s)));
            lp.add_constraint(&terms, Sense::Ge, cut.intercept);
        }
    }

    Ok(StageLp {
        lp,
        copy_rows,
        here_vars,
        blocks: vars,
    })
}

impl StageLp {
    /// Subgradient of the stage value with respect to the incoming state.
    pub fn subgradient(&self, sol: &LpSolution) -> Vec<f64> {
        self.copy_rows.iter().map(|&r| sol.duals[r]).collect()
    }

    pub fn here_controls(&self, sol: &LpSolution) -> Vec<f64> {
        self.here_vars.iter().map(|&j| sol.primal[j]).collect()
    }

    pub fn wait_controls(&self, sol: &LpSolution, block: usize) -> Vec<f64> {
        self.blocks[block].wait.iter().map(|&j| sol.primal[j]).collect()
    }

    pub fn next_state(&self, sol: &LpSolution, block: usize) -> Vec<f64> {
        self.blocks[block].next.iter().map(|&j| sol.primal[j]).collect()
    }

    pub fn epigraph(&self, sol: &LpSolution, block: usize) -> f64 {
        sol.primal[self.blocks[block].theta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve, LpStatus};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar_dynamics(a: f64, b_wait: f64, w: f64) -> Dynamics {
        Dynamics {
            a: vec![vec![a]],
            b_here: vec![vec![]],
            b_wait: vec![vec![b_wait]],
            w: vec![w],
        }
    }

    #[test]
    fn zero_cut_zero_cost() {
        let dyn_ = scalar_dynamics(1.0, 1.0, 0.0);
        let cuts = [Cut::constant(0.0, 1)];
        for x in [-2.0, 0.0, 5.0] {
            let input = StageLpInput {
                state: &[x],
                here_bounds: &[],
                here_cost: &[],
                wait_bounds: &[Bound::new(-1.0, 1.0)],
                wait_cost: &[0.0],
                next_state_bounds: &[Bound::FREE],
            };
            let st = stage_lp(&input, &[StageBlock { probability: 1.0, dynamics: &dyn_, cuts: &cuts }]).unwrap();
            let sol = solve(&st.lp).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal);
            assert_abs_diff_eq!(sol.value, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sells_against_negative_wealth_cut() {
        // state (wealth), x' = x − 2u, cost-to-go −x' → sell u = −1
        let dyn_ = scalar_dynamics(1.0, -2.0, 0.0);
        let cuts = [Cut { intercept: 0.0, slope: vec![-1.0] }];
        let x = 3.0;
        let input = StageLpInput {
            state: &[x],
            here_bounds: &[],
            here_cost: &[],
            wait_bounds: &[Bound::new(-1.0, 1.0)],
            wait_cost: &[0.0],
            next_state_bounds: &[Bound::FREE],
        };
        let st = stage_lp(&input, &[StageBlock { probability: 1.0, dynamics: &dyn_, cuts: &cuts }]).unwrap();
        let sol = solve(&st.lp).unwrap();
        assert_abs_diff_eq!(st.wait_controls(&sol, 0)[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.value, -(x + 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(st.subgradient(&sol)[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.next_state(&sol, 0)[0], x + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn opposite_slopes_average_out() {
        let dyn_ = scalar_dynamics(1.0, 0.0, 0.0);
        let up = [Cut { intercept: 0.0, slope: vec![1.0] }];
        let down = [Cut { intercept: 0.0, slope: vec![-1.0] }];
        let input = StageLpInput {
            state: &[0.7],
            here_bounds: &[],
            here_cost: &[],
            wait_bounds: &[Bound::new(-1.0, 1.0)],
            wait_cost: &[0.0],
            next_state_bounds: &[Bound::FREE],
        };
        let blocks = [
            StageBlock { probability: 0.5, dynamics: &dyn_, cuts: &up },
            StageBlock { probability: 0.5, dynamics: &dyn_, cuts: &down },
        ];
        let st = stage_lp(&input, &blocks).unwrap();
        let sol = solve(&st.lp).unwrap();
        assert_abs_diff_eq!(sol.value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.subgradient(&sol)[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_pool_rejected() {
        let dyn_ = scalar_dynamics(1.0, 1.0, 0.0);
        let input = StageLpInput {
            state: &[0.0],
            here_bounds: &[],
            here_cost: &[],
            wait_bounds: &[Bound::new(-1.0, 1.0)],
            wait_cost: &[0.0],
            next_state_bounds: &[Bound::FREE],
        };
        let err = stage_lp(&input, &[StageBlock { probability: 1.0, dynamics: &dyn_, cuts: &[] }]).unwrap_err();
        assert_eq!(err, LpError::EmptyCutPool(0));
    }

    /// Two-dimensional random stage problem with here-and-now and
    /// wait-and-see controls and several successors.
    #[derive(Debug, Clone)]
    struct RandomStage {
        dynamics: Vec<Dynamics>,
        cuts: Vec<Vec<Cut>>,
        probs: Vec<f64>,
        here_cost: f64,
        wait_cost: f64,
    }

    fn random_stage() -> impl Strategy<Value = RandomStage> {
        let dynamics = (
            proptest::collection::vec(-1.5f64..1.5, 4),
            proptest::collection::vec(-1.0f64..1.0, 2),
            proptest::collection::vec(-1.0f64..1.0, 2),
            proptest::collection::vec(-0.5f64..0.5, 2),
        )
            .prop_map(|(a, bh, bw, w)| Dynamics {
                a: vec![vec![a[0], a[1]], vec![a[2], a[3]]],
                b_here: vec![vec![bh[0]], vec![bh[1]]],
                b_wait: vec![vec![bw[0]], vec![bw[1]]],
                w,
            });
        let cut = (-2.0f64..2.0, proptest::collection::vec(-3.0f64..3.0, 2))
            .prop_map(|(intercept, slope)| Cut { intercept, slope });
        (1usize..4).prop_flat_map(move |k| {
            (
                proptest::collection::vec(dynamics.clone(), k),
                proptest::collection::vec(proptest::collection::vec(cut.clone(), 1..6), k),
                proptest::collection::vec(0.1f64..1.0, k),
                -1.0f64..1.0,
                -1.0f64..1.0,
            )
                .prop_map(|(dynamics, cuts, w, here_cost, wait_cost)| {
                    let s: f64 = w.iter().sum();
                    RandomStage {
                        dynamics,
                        cuts,
                        probs: w.iter().map(|v| v / s).collect(),
                        here_cost,
                        wait_cost,
                    }
                })
        })
    }

    fn stage_value(st: &RandomStage, x: &[f64]) -> (f64, Vec<f64>) {
        let blocks: Vec<StageBlock> = st
            .probs
            .iter()
            .zip(&st.dynamics)
            .zip(&st.cuts)
            .map(|((&p, d), c)| StageBlock { probability: p, dynamics: d, cuts: c })
            .collect();
        let input = StageLpInput {
            state: x,
            here_bounds: &[Bound::new(-1.0, 1.0)],
            here_cost: &[st.here_cost],
            wait_bounds: &[Bound::new(-1.0, 1.0)],
            wait_cost: &[st.wait_cost],
            next_state_bounds: &[Bound::new(-10.0, 10.0), Bound::new(-10.0, 10.0)],
        };
        let lp = stage_lp(&input, &blocks).unwrap();
        let sol = solve(&lp.lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let g = lp.subgradient(&sol);
        (sol.value, g)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn dual_slope_matches_finite_differences(
            st in random_stage(),
            x in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let h = 1e-5;
            let (v, g) = stage_value(&st, &x);
            for k in 0..2 {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let (vp, _) = stage_value(&st, &xp);
                let (vm, _) = stage_value(&st, &xm);
                let fwd = (vp - v) / h;
                let bwd = (v - vm) / h;
                // only compare where the value is differentiable along k
                if (fwd - bwd).abs() < 1e-6 {
                    let fd = (vp - vm) / (2.0 * h);
                    let tol = 1e-6f64.max(1e-4 * v.abs());
                    prop_assert!((g[k] - fd).abs() <= tol, "k={} dual={} fd={}", k, g[k], fd);
                }
                // a subgradient always gives a global minorant
                let mut far = x.clone();
                far[k] += 0.3;
                let (vf, _) = stage_value(&st, &far);
                prop_assert!(v + g[k] * 0.3 <= vf + 1e-8);
            }
        }
    }
}
