use chrono::{NaiveDateTime, TimeDelta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PriceError;

/// Discrete mean-reverting residual `ξ_{t+1} = (1 − a) ξ_t + σ ε_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub a: f64,
    pub sigma: f64,
}

impl OuParams {
    pub fn new(a: f64, sigma: f64) -> Result<Self, PriceError> {
        let p = Self { a, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PriceError> {
        if !self.a.is_finite() || !self.sigma.is_finite() {
            return Err(PriceError::InvalidParams(format!("a = {}, sigma = {}", self.a, self.sigma)));
        }
        if !(self.sigma > 0.0) {
            return Err(PriceError::InvalidParams(format!("sigma = {} must be positive", self.sigma)));
        }
        if !self.is_stationary() {
            return Err(PriceError::InvalidParams(format!(
                "|1 - a| = {} is not below 1, the process is not stationary",
                (1.0 - self.a).abs()
            )));
        }
        Ok(())
    }

    pub fn is_stationary(&self) -> bool {
        (1.0 - self.a).abs() < 1.0
    }

    /// Autoregressive coefficient `1 − a`.
    pub fn persistence(&self) -> f64 {
        1.0 - self.a
    }

    pub fn stationary_variance(&self) -> f64 {
        let phi = self.persistence();
        self.sigma * self.sigma / (1.0 - phi * phi)
    }

    /// Parameters of the same process observed every `steps` periods.
    pub fn aggregate(&self, steps: u32) -> Self {
        let phi = self.persistence();
        let phi_k = phi.powi(steps as i32);
        let var = if (1.0 - phi * phi).abs() < 1e-15 {
            self.sigma * self.sigma * steps as f64
        } else {
            self.sigma * self.sigma * (1.0 - phi_k * phi_k) / (1.0 - phi * phi)
        };
        Self {
            a: 1.0 - phi_k,
            sigma: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuFit {
    pub params: OuParams,
    pub pairs: usize,
    pub warnings: Vec<String>,
}

/// Fits the residual model to a timestamped series. Only pairs at the
/// series' smallest spacing enter the regression, so gaps are skipped.
pub fn fit_ou(residuals: &[(NaiveDateTime, f64)]) -> Result<OuFit, PriceError> {
    let step = residuals
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .filter(|d| *d > TimeDelta::zero())
        .min()
        .ok_or_else(|| PriceError::Degenerate("fewer than two residual points".into()))?;
    let pairs: Vec<(f64, f64)> = residuals
        .windows(2)
        .filter(|w| w[1].0 - w[0].0 == step)
        .map(|w| (w[0].1, w[1].1))
        .collect();
    let values: Vec<f64> = residuals.iter().map(|r| r.1).collect();
    regress(&values, &pairs)
}

/// Fits the residual model to a gap-free sequence.
pub fn fit_ou_values(values: &[f64]) -> Result<OuFit, PriceError> {
    let pairs: Vec<(f64, f64)> = values.windows(2).map(|w| (w[0], w[1])).collect();
    regress(values, &pairs)
}

/// Least squares of `Δξ_{t+1}` on `ξ_t` without intercept; `a` is minus the
/// slope and `σ` the sample standard deviation (n − 1) of the fit residuals.
fn regress(values: &[f64], pairs: &[(f64, f64)]) -> Result<OuFit, PriceError> {
    if pairs.is_empty() {
        return Err(PriceError::Degenerate("fewer than two residual points".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo == 0.0 {
        return Err(PriceError::Degenerate("all residuals are equal".into()));
    }
    let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        return Err(PriceError::Degenerate("regressor is identically zero".into()));
    }
    let sxy: f64 = pairs.iter().map(|(x, y)| x * (y - x)).sum();
    let slope = sxy / sxx;
    let errors: Vec<f64> = pairs.iter().map(|(x, y)| (y - x) - slope * x).collect();
    let n = errors.len();
    let sigma = if n < 2 {
        0.0
    } else {
        let mean = errors.iter().sum::<f64>() / n as f64;
        (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let params = OuParams { a: -slope, sigma };
    if !(sigma > 0.0) {
        return Err(PriceError::InvalidParams(format!(
            "fitted sigma = {sigma} (a = {}); sigma must be positive",
            params.a
        )));
    }
    let mut warnings = Vec::new();
    if !params.is_stationary() {
        warnings.push(format!(
            "fitted |1 - a| = {:.4} >= 1: residual process is not stationary",
            (1.0 - params.a).abs()
        ));
    }
    Ok(OuFit {
        params,
        pairs: n,
        warnings,
    })
}

/// Path `ξ_0 = xi0, …, ξ_horizon` driven by a seeded generator.
pub fn simulate_ou(params: &OuParams, xi0: f64, horizon: usize, seed: u64) -> Result<Vec<f64>, PriceError> {
    if horizon < 1 {
        return Err(PriceError::InvalidParams("horizon must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate_with(params, xi0, horizon, &mut rng))
}

pub(crate) fn simulate_with<R: rand::Rng>(params: &OuParams, xi0: f64, horizon: usize, rng: &mut R) -> Vec<f64> {
    let phi = params.persistence();
    let mut path = Vec::with_capacity(horizon + 1);
    let mut xi = xi0;
    path.push(xi);
    for _ in 0..horizon {
        let eps: f64 = StandardNormal.sample(rng);
        xi = phi * xi + params.sigma * eps;
        path.push(xi);
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn invariants() {
        assert!(OuParams::new(0.5, 0.0).is_err());
        assert!(OuParams::new(2.0, 0.1).is_err());
        assert!(OuParams::new(0.0, 0.1).is_err());
        assert!(OuParams::new(1.0, 0.1).is_ok());
        assert!(OuParams::new(1.9, 0.1).is_ok());
    }

    #[test]
    fn recovers_simulated_parameters() {
        let p = OuParams::new(0.5, 0.1).unwrap();
        let path = simulate_ou(&p, 0.0, 10_000, 7).unwrap();
        let fit = fit_ou_values(&path).unwrap();
        assert!((0.45..=0.55).contains(&fit.params.a), "a = {}", fit.params.a);
        assert!((0.095..=0.105).contains(&fit.params.sigma), "sigma = {}", fit.params.sigma);
        assert!(fit.warnings.is_empty());
    }

    #[test]
    fn zero_residuals_rejected() {
        assert!(matches!(fit_ou_values(&[0.0; 50]), Err(PriceError::Degenerate(_))));
    }

    #[test]
    fn exact_two_point_fit_rejected() {
        // slope −1 fits exactly, leaving no residual variance
        match fit_ou_values(&[1.0, 0.0]) {
            Err(PriceError::InvalidParams(msg)) => assert!(msg.contains("a = 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_stationary_fit_warns() {
        // explosive alternation, persistence near −1.1
        let v: Vec<f64> = (0..40).map(|k| (-1.1f64).powi(k) + 0.01 * (k % 3) as f64).collect();
        let fit = fit_ou_values(&v).unwrap();
        assert!(!fit.params.is_stationary());
        assert_eq!(fit.warnings.len(), 1);
    }

    #[test]
    fn timestamped_fit_skips_gaps() {
        let p = OuParams::new(0.3, 0.2).unwrap();
        let path = simulate_ou(&p, 0.0, 5000, 3).unwrap();
        let t0 = chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let full: Vec<(NaiveDateTime, f64)> = path
            .iter()
            .enumerate()
            .map(|(k, &v)| (t0 + TimeDelta::hours(k as i64), v))
            .collect();
        let mut gapped = full.clone();
        gapped.remove(2500);
        let a = fit_ou(&full).unwrap();
        let b = fit_ou(&gapped).unwrap();
        assert_eq!(a.pairs, 5000);
        assert_eq!(b.pairs, 4998);
        assert_abs_diff_eq!(a.params.a, b.params.a, epsilon = 0.01);
    }

    #[test]
    fn near_deterministic_decay() {
        let p = OuParams::new(0.5, 1e-12).unwrap();
        let path = simulate_ou(&p, 3.0, 10, 1).unwrap();
        for (t, v) in path.iter().enumerate() {
            assert_abs_diff_eq!(*v, 3.0 * 0.5f64.powi(t as i32), epsilon = 1e-9);
        }
    }

    #[test]
    fn full_reversion_is_uncorrelated() {
        let p = OuParams::new(1.0, 0.3).unwrap();
        let path = simulate_ou(&p, 0.0, 10_000, 11).unwrap();
        let n = path.len() as f64;
        let mean = path.iter().sum::<f64>() / n;
        let var = path.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let cov = path.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
        assert!((cov / var).abs() < 0.05);
    }

    #[test]
    fn seeded_determinism() {
        let p = OuParams::new(0.2, 0.1).unwrap();
        assert_eq!(simulate_ou(&p, 0.1, 100, 5).unwrap(), simulate_ou(&p, 0.1, 100, 5).unwrap());
        assert_ne!(simulate_ou(&p, 0.1, 100, 5).unwrap(), simulate_ou(&p, 0.1, 100, 6).unwrap());
        assert!(simulate_ou(&p, 0.1, 0, 5).is_err());
    }

    #[test]
    fn stationary_variance_of_long_path() {
        let p = OuParams::new(0.3, 0.2).unwrap();
        let path = simulate_ou(&p, 0.0, 100_000, 21).unwrap();
        let n = path.len() as f64;
        let mean = path.iter().sum::<f64>() / n;
        let var = path.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = p.stationary_variance();
        assert!((var - target).abs() / target < 0.10, "var {var} vs {target}");
    }

    #[test]
    fn aggregation_matches_sampled_fit() {
        let p = OuParams::new(0.05, 0.03).unwrap();
        let daily = p.aggregate(24);
        let path = simulate_ou(&p, 0.0, 24 * 20_000, 4).unwrap();
        let sampled: Vec<f64> = path.iter().step_by(24).copied().collect();
        let fit = fit_ou_values(&sampled).unwrap();
        assert_abs_diff_eq!(fit.params.a, daily.a, epsilon = 0.02);
        assert_abs_diff_eq!(fit.params.sigma, daily.sigma, epsilon = 0.005);
    }
}
