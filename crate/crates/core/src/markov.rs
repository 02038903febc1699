//! Finite-state Markov chain approximation of the residual process.
//!
//! Every stage `t ≥ 1` carries the same `N` Gauss-Hermite nodes of a
//! Gaussian sampling density. The probability of moving from node `j` at
//! stage `t` to node `i` at stage `t + 1` is the importance weight
//! `p(ξ^i | ξ^j) / φ(ξ^i) · w^i`, normalized over `i`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::priceseries::OuParams;

/// Largest supported number of quadrature points.
pub const MAX_POINTS: usize = 64;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MarkovError {
    #[error("quadrature needs between 1 and {MAX_POINTS} points, got {0}")]
    PointCount(usize),
    #[error("standard deviation must be positive, got {0}")]
    Sigma(f64),
    #[error("horizon must be at least 1")]
    Horizon,
    #[error("stage {stage}, node {node}: transition weights vanish (quadrature support does not cover the conditional law)")]
    EmptyRow { stage: usize, node: usize },
    #[error("stage {0} is outside the chain")]
    Stage(usize),
    #[error("malformed chain: {0}")]
    Malformed(String),
}

/// Nodes and weights integrating against a centred Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Orthonormal Hermite polynomials for N(0,1) up to degree `n`:
/// returns `(p_n(x), p_{n-1}(x), Σ_{k<n} p_k(x)²)`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sumsq)
}

/// `n`-point Gauss-Hermite rule for N(0, sigma²).
///
/// Nodes start from the eigenvalues of the symmetric Jacobi matrix of the
/// probabilists' Hermite recurrence and are polished by Newton steps on the
/// orthonormal polynomial; weights come from the Christoffel function.
pub fn gauss_hermite(n: usize, sigma: f64) -> Result<Quadrature, MarkovError> {
    if n == 0 || n > MAX_POINTS {
        return Err(MarkovError::PointCount(n));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(MarkovError::Sigma(sigma));
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    for x in &mut nodes {
        for _ in 0..4 {
            let (p, q, _) = hermite_orthonormal(n, *x);
            let dp = (n as f64).sqrt() * q;
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            *x -= step;
            if step.abs() < 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // exact symmetry about zero
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes.iter().map(|&x| 1.0 / hermite_orthonormal(n, x).2).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Quadrature {
        nodes: nodes.into_iter().map(|x| x * sigma).collect(),
        weights,
    })
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Density of `ξ_{t+1} = xi_to` given `ξ_t = xi_from`.
pub fn conditional_density(params: &OuParams, xi_from: f64, xi_to: f64) -> f64 {
    normal_pdf(xi_to, params.persistence() * xi_from, params.sigma)
}

/// Density used to place the quadrature nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingDensity {
    /// N(0, σ²) with σ the innovation standard deviation.
    #[default]
    Innovation,
    /// Stationary law N(0, σ² / (1 − (1 − a)²)).
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    /// Node values per stage `0..=T`; stage 0 holds the initial residual.
    pub nodes: Vec<Vec<f64>>,
    /// `transitions[t][j][i]`: probability of node `i` at `t + 1` from node `j` at `t`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl MarkovChain {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn node_count(&self, t: usize) -> usize {
        self.nodes[t].len()
    }

    pub fn value(&self, t: usize, node: usize) -> f64 {
        self.nodes[t][node]
    }

    pub fn row(&self, t: usize, from: usize) -> &[f64] {
        &self.transitions[t][from]
    }

    /// Successor of `from` at stage `t` for a uniform draw `u ∈ [0, 1)`.
    pub fn sample_next(&self, t: usize, from: usize, u: f64) -> usize {
        let row = self.row(t, from);
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // round-off in the cumulative sum: last node with positive mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }

    pub fn validate(&self) -> Result<(), MarkovError> {
        if self.transitions.is_empty() {
            return Err(MarkovError::Horizon);
        }
        if self.nodes.len() != self.transitions.len() + 1 {
            return Err(MarkovError::Malformed(format!(
                "{} node stages for {} transitions",
                self.nodes.len(),
                self.transitions.len()
            )));
        }
        if self.nodes[0].len() != 1 {
            return Err(MarkovError::Malformed("stage 0 must hold exactly one node".into()));
        }
        for (t, p) in self.transitions.iter().enumerate() {
            if p.len() != self.nodes[t].len() {
                return Err(MarkovError::Malformed(format!("stage {t}: {} rows", p.len())));
            }
            for (j, row) in p.iter().enumerate() {
                if row.len() != self.nodes[t + 1].len() {
                    return Err(MarkovError::Malformed(format!("stage {t}, row {j}: {} columns", row.len())));
                }
                let s: f64 = row.iter().sum();
                if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                    return Err(MarkovError::Malformed(format!("stage {t}, row {j} sums to {s}")));
                }
            }
        }
        Ok(())
    }
}

/// Builds the chain over `horizon` transitions with `points` nodes per stage.
pub fn build_chain(
    params: &OuParams,
    points: usize,
    horizon: usize,
    xi0: f64,
    density: SamplingDensity,
) -> Result<MarkovChain, MarkovError> {
    if horizon < 1 {
        return Err(MarkovError::Horizon);
    }
    let sd = match density {
        SamplingDensity::Innovation => params.sigma,
        SamplingDensity::Stationary => params.stationary_variance().sqrt(),
    };
    let quad = gauss_hermite(points, sd)?;
    let mut nodes = vec![vec![xi0]];
    nodes.extend(std::iter::repeat_n(quad.nodes.clone(), horizon));
    let mut transitions = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let rows = nodes[t]
            .iter()
            .enumerate()
            .map(|(j, &from)| {
                let raw: Vec<f64> = quad
                    .nodes
                    .iter()
                    .zip(&quad.weights)
                    .map(|(&to, &w)| conditional_density(params, from, to) / normal_pdf(to, 0.0, sd) * w)
                    .collect();
                let total: f64 = raw.iter().sum();
                if !(total > 1e-300) {
                    return Err(MarkovError::EmptyRow { stage: t, node: j });
                }
                Ok(raw.into_iter().map(|v| v / total).collect())
            })
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        transitions.push(rows);
    }
    Ok(MarkovChain { nodes, transitions })
}

/// Index of the node at stage `t` closest to `xi`; ties go to the smaller index.
pub fn nearest_node(chain: &MarkovChain, t: usize, xi: f64) -> Result<usize, MarkovError> {
    let nodes = chain.nodes.get(t).ok_or(MarkovError::Stage(t))?;
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (i, &v) in nodes.iter().enumerate() {
        let d = (v - xi).abs();
        if d < dist {
            best = i;
            dist = d;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn double_factorial(k: i64) -> f64 {
        if k <= 0 {
            1.0
        } else {
            k as f64 * double_factorial(k - 2)
        }
    }

    #[test]
    fn one_point_rule() {
        let q = gauss_hermite(1, 0.7).unwrap();
        assert_eq!(q.nodes, vec![0.0]);
        assert_eq!(q.weights, vec![1.0]);
    }

    #[test]
    fn two_and_three_point_rules() {
        // moment matching: mean 0, variance 1 (N=2); through degree 5 (N=3)
        let q = gauss_hermite(2, 1.0).unwrap();
        assert_abs_diff_eq!(q.nodes[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.nodes[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.weights[0], 0.5, epsilon = 1e-14);
        let q = gauss_hermite(3, 1.0).unwrap();
        let r3 = 3f64.sqrt();
        for (x, e) in q.nodes.iter().zip([-r3, 0.0, r3]) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-14);
        }
        for (w, e) in q.weights.iter().zip([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]) {
            assert_abs_diff_eq!(*w, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn moment_exactness() {
        for n in 1..=8 {
            for sigma in [0.1, 1.0, 2.5] {
                let q = gauss_hermite(n, sigma).unwrap();
                assert_abs_diff_eq!(q.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert!(q.nodes.windows(2).all(|w| w[0] < w[1]));
                assert!(q.weights.iter().all(|&w| w > 0.0));
                for k in 0..2 * n {
                    let got = q.integrate(|x| x.powi(k as i32));
                    let want = if k % 2 == 1 {
                        0.0
                    } else {
                        sigma.powi(k as i32) * double_factorial(k as i64 - 1)
                    };
                    let scale = sigma.powi(k as i32) * double_factorial(k as i64 - 1).max(1.0);
                    assert!((got - want).abs() <= 1e-9 * scale, "n={n} k={k} got={got} want={want}");
                }
            }
        }
    }

    #[test]
    fn large_rules_stay_accurate() {
        let q = gauss_hermite(64, 1.0).unwrap();
        assert_abs_diff_eq!(q.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.integrate(|x| x * x), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q.integrate(|x| x.powi(4)), 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q.integrate(|x| x.cos()), (-0.5f64).exp(), epsilon = 1e-12);
        assert!(matches!(gauss_hermite(65, 1.0), Err(MarkovError::PointCount(65))));
        assert!(matches!(gauss_hermite(0, 1.0), Err(MarkovError::PointCount(0))));
        assert!(matches!(gauss_hermite(3, 0.0), Err(MarkovError::Sigma(_))));
    }

    #[test]
    fn density_values() {
        let p = OuParams::new(0.5, 0.1).unwrap();
        assert_abs_diff_eq!(conditional_density(&p, 0.2, 0.1), 3.989422804014327, epsilon = 1e-12);
        let full = OuParams::new(1.0, 0.3).unwrap();
        assert_eq!(conditional_density(&full, -2.0, 0.4), conditional_density(&full, 5.0, 0.4));
        let peak = conditional_density(&p, 0.8, 0.4);
        assert_abs_diff_eq!(peak, 1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn one_point_chain() {
        let p = OuParams::new(0.4, 0.2).unwrap();
        let c = build_chain(&p, 1, 5, 0.3, SamplingDensity::Innovation).unwrap();
        c.validate().unwrap();
        assert_eq!(c.nodes[0], vec![0.3]);
        for t in 1..=5 {
            assert_eq!(c.nodes[t], vec![0.0]);
            assert_eq!(c.transitions[t - 1], vec![vec![1.0]]);
        }
    }

    #[test]
    fn full_reversion_gives_identical_rows() {
        let p = OuParams::new(1.0, 0.2).unwrap();
        let c = build_chain(&p, 6, 4, 0.0, SamplingDensity::Innovation).unwrap();
        for t in 1..4 {
            let rows = &c.transitions[t];
            for r in rows {
                for (a, b) in r.iter().zip(&rows[0]) {
                    assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn conditional_mean_fidelity() {
        let p = OuParams::new(0.5, 0.1).unwrap();
        let c = build_chain(&p, 8, 3, 0.0, SamplingDensity::Innovation).unwrap();
        c.validate().unwrap();
        let nodes = &c.nodes[1];
        for j in 1..nodes.len() - 1 {
            let mean: f64 = c.transitions[1][j].iter().zip(&c.nodes[2]).map(|(p, x)| p * x).sum();
            let want = 0.5 * nodes[j];
            assert!((mean - want).abs() <= 0.02 * want.abs(), "node {j}: {mean} vs {want}");
        }
    }

    #[test]
    fn stage_one_variance() {
        for n in [8, 16, 32] {
            let p = OuParams::new(0.3, 0.15).unwrap();
            let c = build_chain(&p, n, 2, 0.0, SamplingDensity::Innovation).unwrap();
            let var: f64 = c.transitions[0][0].iter().zip(&c.nodes[1]).map(|(p, x)| p * x * x).sum();
            assert!((var - 0.0225).abs() / 0.0225 < 0.05);
        }
    }

    #[test]
    fn stationary_density_option() {
        let p = OuParams::new(0.2, 0.1).unwrap();
        let c = build_chain(&p, 5, 2, 0.0, SamplingDensity::Stationary).unwrap();
        c.validate().unwrap();
        let sd = p.stationary_variance().sqrt();
        let q = gauss_hermite(5, sd).unwrap();
        assert_eq!(c.nodes[1], q.nodes);
    }

    #[test]
    fn vanishing_rows_rejected() {
        // initial residual far outside the node support
        let p = OuParams::new(0.01, 0.01).unwrap();
        assert!(matches!(
            build_chain(&p, 2, 1, 1e3, SamplingDensity::Innovation),
            Err(MarkovError::EmptyRow { stage: 0, node: 0 })
        ));
    }

    #[test]
    fn nearest_node_rules() {
        let p = OuParams::new(0.5, 1.0).unwrap();
        let c = build_chain(&p, 2, 1, 0.0, SamplingDensity::Innovation).unwrap();
        assert_eq!(nearest_node(&c, 1, 1.0).unwrap(), 1);
        assert_eq!(nearest_node(&c, 1, -1.0).unwrap(), 0);
        assert_eq!(nearest_node(&c, 1, 0.0).unwrap(), 0);
        assert_eq!(nearest_node(&c, 1, 40.0).unwrap(), 1);
        assert_eq!(nearest_node(&c, 0, 7.0).unwrap(), 0);
        assert!(nearest_node(&c, 2, 0.0).is_err());
    }

    #[test]
    fn inverse_cdf_sampling() {
        let c = MarkovChain {
            nodes: vec![vec![0.0], vec![-1.0, 0.0, 1.0]],
            transitions: vec![vec![vec![0.25, 0.0, 0.75]]],
        };
        c.validate().unwrap();
        assert_eq!(c.sample_next(0, 0, 0.0), 0);
        assert_eq!(c.sample_next(0, 0, 0.2499), 0);
        assert_eq!(c.sample_next(0, 0, 0.25), 2);
        assert_eq!(c.sample_next(0, 0, 0.9999999), 2);
    }
}
