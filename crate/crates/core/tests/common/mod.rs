//! Brute-force dynamic program for the storage problem without losses.
//!
//! Exponential utility separates wealth from the rest of the state: the
//! cost-to-go is `J_t(w, e, j) = (exp(−ρ (1+r)^{T−t} w) · G_t(e, j) − 1) / ρ`
//! with `G_T = 1` and
//! `G_t(e, j) = Σ_i p_ji · min_u exp(ρ (1+r)^{T−t−1} s_i u) · G_{t+1}(e + u, i)`.
//! Controls range over a grid aligned with the energy grid, so the result is
//! an upper bound on the continuous optimum.

#![allow(dead_code)]

use storval::markov::MarkovChain;
use storval::storage::StorageSpec;

pub struct GridOracle {
    /// `g[t][node][k]` for energy `k · step`.
    g: Vec<Vec<Vec<f64>>>,
    step: f64,
    rho: f64,
    growth: f64,
    horizon: usize,
}

impl GridOracle {
    /// `energy_points` levels on `[0, capacity]` and `control_points`
    /// equally spaced controls on `[discharge_min, charge_max]`.
    pub fn new(
        chain: &MarkovChain,
        mean_curve: &[f64],
        storage: &StorageSpec,
        energy_points: usize,
        control_points: usize,
    ) -> Self {
        assert_eq!(storage.loss, 0.0, "the grid oracle assumes lossless storage");
        let horizon = storage.horizon;
        let step = storage.capacity / (energy_points - 1) as f64;
        let u_step = (storage.charge_max - storage.discharge_min) / (control_points - 1) as f64;
        let ratio = (u_step / step).round();
        let offset = (storage.discharge_min / step).round();
        assert!((ratio * step - u_step).abs() < 1e-12 && (offset * step - storage.discharge_min).abs() < 1e-12);
        let (ratio, offset) = (ratio as i64, offset as i64);
        let growth = 1.0 + storage.interest;
        let mut g = vec![Vec::new(); horizon + 1];
        g[horizon] = vec![vec![1.0; energy_points]; chain.nodes[horizon].len()];
        for t in (0..horizon).rev() {
            let scale = storage.rho * growth.powi((horizon - t - 1) as i32);
            // best control per successor and energy level
            let best: Vec<Vec<f64>> = (0..chain.nodes[t + 1].len())
                .map(|i| {
                    let price = (mean_curve[t + 1] + chain.nodes[t + 1][i]).exp();
                    (0..energy_points as i64)
                        .map(|k| {
                            (0..control_points as i64)
                                .filter_map(|m| {
                                    let delta = offset + m * ratio;
                                    let next = k + delta;
                                    (0..energy_points as i64).contains(&next).then(|| {
                                        let u = delta as f64 * step;
                                        (scale * price * u).exp() * g[t + 1][i][next as usize]
                                    })
                                })
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect()
                })
                .collect();
            g[t] = (0..chain.nodes[t].len())
                .map(|j| {
                    (0..energy_points)
                        .map(|k| {
                            chain.transitions[t][j]
                                .iter()
                                .zip(&best)
                                .map(|(p, b)| p * b[k])
                                .sum()
                        })
                        .collect()
                })
                .collect();
        }
        Self {
            g,
            step,
            rho: storage.rho,
            growth,
            horizon,
        }
    }

    pub fn energy_points(&self) -> usize {
        self.g[0][0].len()
    }

    pub fn energy(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    /// Cost-to-go at stage `t`, node `node`, wealth `w` and energy index `k`.
    pub fn cost_to_go(&self, t: usize, node: usize, w: f64, k: usize) -> f64 {
        let scale = self.rho * self.growth.powi((self.horizon - t) as i32);
        ((-scale * w).exp() * self.g[t][node][k] - 1.0) / self.rho
    }
}
