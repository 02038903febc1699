use super::{LinearProgram, LpError, LpSolution, LpStatus, Sense, Tolerances};

/// Solves `lp` with the default [`Tolerances`].
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_with(lp, &Tolerances::default())
}

pub fn solve_with(lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let mut dict = Dictionary::new(lp);
    let status = dict.run(tol);
    Ok(dict.into_solution(lp, status))
}

/// Condensed dictionary. Variables `0..n` are structural, `n..n+m` are row
/// activities `s_i = a_i · x`. Every basic variable is a homogeneous linear
/// combination of the nonbasic ones: `x_basic[r] = Σ_c tab[r][c] · x_nonbasic[c]`.
struct Dictionary {
    m: usize,
    n: usize,
    tab: Vec<f64>,
    /// Original row coefficients, kept for residual checks and refactoring.
    rows: Vec<f64>,
    objective: Vec<f64>,
    /// Reduced costs of the nonbasic columns.
    reduced: Vec<f64>,
    basic: Vec<usize>,
    nonbasic: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    iterations: usize,
}

#[derive(Clone, Copy)]
struct Entering {
    col: usize,
    dir: f64,
}

enum Step {
    /// Entering variable reaches its own opposite bound.
    Flip(f64),
    /// Basic variable in `row` reaches `target` after `len`.
    Pivot { row: usize, len: f64, target: f64 },
    Unbounded,
}

impl Dictionary {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.constraints.len();
        let mut tab = Vec::with_capacity(m * n);
        for c in &lp.constraints {
            tab.extend_from_slice(&c.coeffs);
        }
        let mut lo = Vec::with_capacity(n + m);
        let mut hi = Vec::with_capacity(n + m);
        for b in &lp.bounds {
            lo.push(b.lo);
            hi.push(b.hi);
        }
        for c in &lp.constraints {
            let (l, h) = match c.sense {
                Sense::Eq => (c.rhs, c.rhs),
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
            };
            lo.push(l);
            hi.push(h);
        }
        let mut x = vec![0.0; n + m];
        for j in 0..n {
            x[j] = if lo[j].is_finite() {
                lo[j]
            } else if hi[j].is_finite() {
                hi[j]
            } else {
                0.0
            };
        }
        let mut dict = Self {
            m,
            n,
            rows: tab.clone(),
            objective: lp.objective.clone(),
            tab,
            reduced: lp.objective.clone(),
            basic: (n..n + m).collect(),
            nonbasic: (0..n).collect(),
            lo,
            hi,
            x,
            iterations: 0,
        };
        dict.recompute_basics();
        dict
    }

    fn recompute_basics(&mut self) {
        for r in 0..self.m {
            let row = &self.tab[r * self.n..(r + 1) * self.n];
            let v: f64 = row
                .iter()
                .zip(&self.nonbasic)
                .map(|(a, &j)| a * self.x[j])
                .sum();
            self.x[self.basic[r]] = v;
        }
    }

    fn residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            let a = &self.rows[i * self.n..(i + 1) * self.n];
            let act: f64 = a.iter().zip(&self.x[..self.n]).map(|(a, x)| a * x).sum();
            worst = worst.max((act - self.x[self.n + i]).abs());
        }
        worst
    }

    /// Row activities agree with the structural values and the reduced
    /// costs satisfy stationarity, both up to a scaled tolerance.
    fn accurate(&self, tol: &Tolerances) -> bool {
        let (m, n) = (self.m, self.n);
        let scale = 1.0 + self.x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if self.residual() > 1e3 * tol.primal * scale {
            return false;
        }
        let mut by_var = vec![0.0; n + m];
        for (c, &v) in self.nonbasic.iter().enumerate() {
            by_var[v] = self.reduced[c];
        }
        let cscale = 1.0 + self.objective.iter().chain(&self.reduced).fold(0.0f64, |a, v| a.max(v.abs()));
        (0..n).all(|j| {
            let aty: f64 = (0..m).map(|i| by_var[n + i] * self.rows[i * n + j]).sum();
            (self.objective[j] - aty - by_var[j]).abs() <= 1e3 * tol.dual * cscale
        })
    }

    /// Rebuilds the tableau and reduced costs of the current basis from the
    /// original rows. Returns false when the basis matrix is singular.
    fn refactor(&mut self) -> bool {
        use nalgebra::DMatrix;
        let (m, n) = (self.m, self.n);
        // column `v` of [A | -I] at row `r`
        let entry = |v: usize, r: usize| {
            if v < n {
                self.rows[r * n + v]
            } else if v - n == r {
                -1.0
            } else {
                0.0
            }
        };
        let basis = DMatrix::from_fn(m, m, |r, k| entry(self.basic[k], r));
        let rhs = DMatrix::from_fn(m, n, |r, c| -entry(self.nonbasic[c], r));
        let Some(sol) = basis.lu().solve(&rhs) else {
            return false;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for r in 0..m {
            for c in 0..n {
                self.tab[r * n + c] = sol[(r, c)];
            }
        }
        let cost = |v: usize| if v < n { self.objective[v] } else { 0.0 };
        for c in 0..n {
            let mut g = cost(self.nonbasic[c]);
            for r in 0..m {
                g += cost(self.basic[r]) * self.tab[r * n + c];
            }
            self.reduced[c] = g;
        }
        self.recompute_basics();
        true
    }

    /// −1 below the lower bound, +1 above the upper bound, 0 when feasible.
    fn infeasibility(&self, var: usize, tol: f64) -> f64 {
        let v = self.x[var];
        let (lo, hi) = (self.lo[var], self.hi[var]);
        if v < lo - tol * (1.0 + lo.abs()) {
            -1.0
        } else if v > hi + tol * (1.0 + hi.abs()) {
            1.0
        } else {
            0.0
        }
    }

    fn run(&mut self, tol: &Tolerances) -> LpStatus {
        let budget = 50 * (self.n + self.m) + 1000;
        let mut degenerate = 0usize;
        let mut phase_cost = vec![0.0; self.n];
        let mut refactors = 0;
        loop {
            if self.iterations >= budget {
                return LpStatus::NumericalFailure;
            }
            let weights: Vec<f64> = self
                .basic
                .iter()
                .map(|&v| self.infeasibility(v, tol.primal))
                .collect();
            let phase_one = weights.iter().any(|&w| w != 0.0);
            if phase_one {
                phase_cost.iter_mut().for_each(|g| *g = 0.0);
                for (r, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let row = &self.tab[r * self.n..(r + 1) * self.n];
                    for (g, a) in phase_cost.iter_mut().zip(row) {
                        *g += w * a;
                    }
                }
            }
            let costs = if phase_one { &phase_cost } else { &self.reduced };
            let bland = degenerate >= tol.bland_after;
            let Some(entering) = self.choose_entering(costs, bland, tol) else {
                if refactors < 2 && !self.accurate(tol) {
                    refactors += 1;
                    if self.refactor() {
                        degenerate = 0;
                        continue;
                    }
                    return LpStatus::NumericalFailure;
                }
                return if phase_one {
                    LpStatus::Infeasible
                } else {
                    LpStatus::Optimal
                };
            };
            self.iterations += 1;
            match self.ratio_test(entering, &weights, bland, tol) {
                Step::Unbounded => {
                    if phase_one {
                        // cannot happen with a negative infeasibility slope;
                        // treat as breakdown rather than loop
                        return LpStatus::NumericalFailure;
                    }
                    return LpStatus::Unbounded;
                }
                Step::Flip(len) => {
                    self.advance(entering, len);
                    degenerate = 0;
                }
                Step::Pivot { row, len, target } => {
                    self.advance(entering, len);
                    let leaving = self.basic[row];
                    self.pivot(row, entering.col);
                    self.x[leaving] = target;
                    self.recompute_basics();
                    if len <= 1e-12 {
                        degenerate += 1;
                    } else {
                        degenerate = 0;
                    }
                }
            }
        }
    }

    fn choose_entering(&self, costs: &[f64], bland: bool, tol: &Tolerances) -> Option<Entering> {
        let mut best: Option<(Entering, f64, usize)> = None;
        for (c, &g) in costs.iter().enumerate() {
            let var = self.nonbasic[c];
            let can_up = self.x[var] < self.hi[var] - tol.primal;
            let can_down = self.x[var] > self.lo[var] + tol.primal;
            let (dir, score) = if g < -tol.dual && can_up {
                (1.0, -g)
            } else if g > tol.dual && can_down {
                (-1.0, g)
            } else {
                continue;
            };
            let better = match best {
                None => true,
                Some((_, s, v)) => {
                    if bland {
                        var < v
                    } else {
                        score > s || (score == s && var < v)
                    }
                }
            };
            if better {
                best = Some((Entering { col: c, dir }, score, var));
            }
        }
        best.map(|(e, _, _)| e)
    }

    fn ratio_test(&self, e: Entering, weights: &[f64], bland: bool, tol: &Tolerances) -> Step {
        let var = self.nonbasic[e.col];
        let own = if e.dir > 0.0 {
            self.hi[var] - self.x[var]
        } else {
            self.x[var] - self.lo[var]
        };
        // (row, exact step, target, |alpha|, step with bounds relaxed by the primal tolerance)
        let mut candidates: Vec<(usize, f64, f64, f64, f64)> = Vec::new();
        for r in 0..self.m {
            let alpha = self.tab[r * self.n + e.col] * e.dir;
            if alpha.abs() <= tol.pivot {
                continue;
            }
            let b = self.basic[r];
            let v = self.x[b];
            let target = match (weights[r] < 0.0, weights[r] > 0.0, alpha > 0.0) {
                // below lower bound: blocks when it climbs back to it
                (true, _, true) => self.lo[b],
                (true, _, false) => continue,
                // above upper bound: blocks when it comes down to it
                (_, true, false) => self.hi[b],
                (_, true, true) => continue,
                (false, false, true) => self.hi[b],
                (false, false, false) => self.lo[b],
            };
            if !target.is_finite() {
                continue;
            }
            let len = ((target - v) / alpha).max(0.0);
            let slack = tol.primal * (1.0 + target.abs());
            let relaxed = ((target + slack * alpha.signum() - v) / alpha).max(0.0);
            candidates.push((r, len, target, alpha.abs(), relaxed));
        }
        let best = if bland {
            // strict minimum ratio, lowest basic index on ties
            candidates
                .iter()
                .copied()
                .min_by(|a, b| {
                    a.1.partial_cmp(&b.1)
                        .unwrap()
                        .then(self.basic[a.0].cmp(&self.basic[b.0]))
                })
        } else {
            // Harris: largest pivot among rows blocking within the relaxed step
            let bound = candidates.iter().map(|c| c.4).fold(f64::INFINITY, f64::min);
            candidates
                .iter()
                .copied()
                .filter(|c| c.1 <= bound)
                .max_by(|a, b| a.3.partial_cmp(&b.3).unwrap().then(b.1.partial_cmp(&a.1).unwrap()))
        };
        match best {
            Some((_, len, _, _, _)) if own.is_finite() && own <= len => Step::Flip(own),
            Some((row, len, target, _, _)) => Step::Pivot { row, len, target },
            None if own.is_finite() => Step::Flip(own),
            None => Step::Unbounded,
        }
    }

    fn advance(&mut self, e: Entering, len: f64) {
        if len == 0.0 {
            return;
        }
        let var = self.nonbasic[e.col];
        let delta = e.dir * len;
        self.x[var] += delta;
        if self.x[var] > self.hi[var] {
            self.x[var] = self.hi[var];
        }
        if self.x[var] < self.lo[var] {
            self.x[var] = self.lo[var];
        }
        for r in 0..self.m {
            let a = self.tab[r * self.n + e.col];
            if a != 0.0 {
                self.x[self.basic[r]] += a * delta;
            }
        }
    }

    /// Exchanges basic `row` with nonbasic `col`.
    fn pivot(&mut self, row: usize, col: usize) {
        let n = self.n;
        let p = self.tab[row * n + col];
        // new row for the entering variable
        let mut pivot_row: Vec<f64> = self.tab[row * n..(row + 1) * n].iter().map(|a| -a / p).collect();
        pivot_row[col] = 1.0 / p;
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let f = self.tab[r * n + col];
            if f == 0.0 {
                continue;
            }
            let dst = &mut self.tab[r * n..(r + 1) * n];
            for (c, d) in dst.iter_mut().enumerate() {
                if c == col {
                    *d = f * pivot_row[col];
                } else {
                    *d += f * pivot_row[c];
                }
            }
        }
        let f = self.reduced[col];
        if f != 0.0 {
            for (c, d) in self.reduced.iter_mut().enumerate() {
                if c == col {
                    *d = f * pivot_row[col];
                } else {
                    *d += f * pivot_row[c];
                }
            }
        }
        self.tab[row * n..(row + 1) * n].copy_from_slice(&pivot_row);
        std::mem::swap(&mut self.basic[row], &mut self.nonbasic[col]);
    }

    fn into_solution(self, lp: &LinearProgram, status: LpStatus) -> LpSolution {
        let primal = self.x[..self.n].to_vec();
        let value = lp.objective.iter().zip(&primal).map(|(c, x)| c * x).sum();
        let (duals, reduced_costs) = if status == LpStatus::Optimal {
            let mut by_var = vec![0.0; self.n + self.m];
            for (c, &v) in self.nonbasic.iter().enumerate() {
                by_var[v] = self.reduced[c];
            }
            (by_var[self.n..].to_vec(), by_var[..self.n].to_vec())
        } else {
            (Vec::new(), Vec::new())
        };
        LpSolution {
            status,
            value,
            primal,
            duals,
            reduced_costs,
            iterations: self.iterations,
        }
    }
}


#[cfg(test)]
mod near_parallel {
    use super::*;
    use crate::lp::Bound;

    /// Many tangents of a smooth convex curve give nearly parallel rows and
    /// tiny pivot candidates.
    #[test]
    fn tangent_cuts_keep_rows_satisfied() {
        let rho = 1e-2;
        let price = 3.2f64.exp();
        let (w0, e0) = (136.96, 1.504);
        let mut lp = LinearProgram::new();
        let zw = lp.add_var("zw", 0.0, Bound::fixed(w0));
        let ze = lp.add_var("ze", 0.0, Bound::fixed(e0));
        let u = lp.add_var("u", 0.0, Bound::new(-1.0, 1.0));
        let yw = lp.add_var("yw", 0.0, Bound::FREE);
        let ye = lp.add_var("ye", 0.0, Bound::new(0.0, 2.0));
        let th = lp.add_var("theta", 1.0, Bound::FREE);
        lp.add_constraint(&[(yw, 1.0), (zw, -1.0), (u, price)], Sense::Eq, 0.0);
        lp.add_constraint(&[(ye, 1.0), (ze, -1.0), (u, -1.0)], Sense::Eq, 0.0);
        let j = |w: f64| (-rho * w).exp_m1() / rho;
        let dj = |w: f64| -(-rho * w).exp();
        let mut cuts = Vec::new();
        for k in 0..300 {
            let w = 100.0 + 0.25 * k as f64 + 1e-3 * (k % 7) as f64;
            let (a, b) = (j(w) - dj(w) * w, dj(w));
            cuts.push((a, b));
            lp.add_constraint(&[(th, 1.0), (yw, -b)], Sense::Ge, a);
        }
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        // cuts decrease in wealth, so selling the full step is optimal
        let w = w0 + price;
        let expect = cuts.iter().map(|(a, b)| a + b * w).fold(f64::NEG_INFINITY, f64::max);
        assert!((sol.value - expect).abs() < 1e-9, "{} vs {}", sol.value, expect);
        let x = &sol.primal;
        assert!((x[yw] - (w0 - price * x[u])).abs() < 1e-9);
        assert!((x[ye] - (e0 + x[u])).abs() < 1e-12);
    }
}
