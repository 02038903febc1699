//! Policy evaluation on the chain and on the continuous price process,
//! terminal-wealth densities and parameter sweeps.

use std::io::Write;

use chrono::{NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{build_chain, nearest_node, MarkovChain, MarkovError, SamplingDensity};
use crate::priceseries::ou::simulate_with;
use crate::priceseries::{
    daily_series, decompose, fit_ou, DailyPoint, DailyRule, OuFit, OuParams, PriceError, PriceSeries, SeasonalProfile,
};
use crate::sddp::{CutPool, Policy, SddpError, TrainOptions};
use crate::storage::{
    disutility, indifference_price_closed, price_table, value_storage, StorageError, StorageSpec, ENERGY, WEALTH,
};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("invalid evaluation request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sddp(#[from] SddpError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Price(#[from] PriceError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Where scenario prices come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Paths of the Markov chain the policy was trained on.
    InSample,
    /// Paths of the continuous OU process; controls come from the nearest node.
    OutOfSample,
}

/// One move from stage `t` to stage `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Residual at stage `t + 1`.
    pub xi: f64,
    /// Node whose policy supplied the control.
    pub node: usize,
    /// State at stage `t + 1`.
    pub state: [f64; 2],
    pub control: f64,
    /// Price paid for the control.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub xi0: f64,
    pub initial_state: [f64; 2],
    pub steps: Vec<Step>,
    pub terminal_wealth: f64,
}

impl PolicyTrace {
    pub fn prices(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.price).collect()
    }

    pub fn controls(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.control).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Sample mean of the terminal cost `−υ(W_T)`.
    pub mean_cost: f64,
    /// Sample standard deviation over `√n`; NaN for a single scenario.
    pub std_error: f64,
    pub count: usize,
    pub wealth: Vec<f64>,
}

impl EvalSummary {
    pub fn from_costs(costs: &[f64], wealth: Vec<f64>) -> Self {
        let n = costs.len();
        let mean = costs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self {
            mean_cost: mean,
            std_error,
            count: n,
            wealth,
        }
    }
}

/// A trained storage policy together with what it needs to run on scenarios.
#[derive(Debug, Clone, Copy)]
pub struct Simulator<'a> {
    pub storage: &'a StorageSpec,
    pub chain: &'a MarkovChain,
    /// Log-price mean `m_t`, `t = 0..=T`.
    pub mean_curve: &'a [f64],
    pub spec: &'a crate::sddp::StageProblemSpec,
    pub pools: &'a CutPool,
    /// Residual process used out of sample.
    pub params: &'a OuParams,
}

impl Simulator<'_> {
    /// Runs `n` scenarios. Scenario `k` draws from its own generator seeded by
    /// `(seed, k)`, so results do not depend on thread scheduling.
    pub fn run(&self, mode: Mode, n: usize, seed: u64) -> Result<(Vec<PolicyTrace>, EvalSummary), EvalError> {
        if n == 0 {
            return Err(EvalError::Invalid("scenario count must be at least 1".into()));
        }
        if self.mean_curve.len() != self.chain.horizon() + 1 {
            return Err(EvalError::Invalid(format!(
                "mean curve has {} values, chain needs {}",
                self.mean_curve.len(),
                self.chain.horizon() + 1
            )));
        }
        let prices = price_table(self.chain, self.mean_curve)?;
        let traces = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                self.scenario(mode, &prices, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let costs: Vec<f64> = traces.iter().map(|t| disutility(self.storage.rho, t.terminal_wealth)).collect();
        let wealth = traces.iter().map(|t| t.terminal_wealth).collect();
        Ok((traces, EvalSummary::from_costs(&costs, wealth)))
    }

    fn scenario(&self, mode: Mode, prices: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<PolicyTrace, EvalError> {
        let horizon = self.chain.horizon();
        let policy = Policy::new(self.spec, self.chain, self.pools);
        let xi0 = self.chain.value(0, 0);
        let path = match mode {
            Mode::OutOfSample => Some(simulate_with(self.params, xi0, horizon, rng)),
            Mode::InSample => None,
        };
        let growth = 1.0 + self.storage.interest;
        let keep = 1.0 - self.storage.loss;
        let initial = [self.storage.x0, 0.0];
        let mut state = initial;
        let mut node = 0;
        let mut steps = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let (next, xi, price) = match &path {
                None => {
                    let i = self.chain.sample_next(t, node, rng.random());
                    (i, self.chain.value(t + 1, i), prices[t][i])
                }
                Some(p) => {
                    let i = nearest_node(self.chain, t + 1, p[t + 1])?;
                    (i, p[t + 1], (self.mean_curve[t + 1] + p[t + 1]).exp())
                }
            };
            let decision = policy.decide(t, node, next, &state)?;
            let control = self.clip(decision.wait[0], state[ENERGY]);
            state = [growth * state[WEALTH] - price * control, keep * state[ENERGY] + control];
            steps.push(Step {
                xi,
                node: next,
                state,
                control,
                price,
            });
            node = next;
        }
        Ok(PolicyTrace {
            xi0,
            initial_state: initial,
            steps,
            terminal_wealth: state[WEALTH],
        })
    }

    /// Projects `u` onto the controls that keep the storage within bounds.
    fn clip(&self, u: f64, energy: f64) -> f64 {
        let kept = (1.0 - self.storage.loss) * energy;
        let lo = self.storage.discharge_min.max(-kept);
        let hi = self.storage.charge_max.min(self.storage.capacity - kept);
        if lo > hi {
            // the stored energy is already above capacity after losses
            lo
        } else {
            u.clamp(lo, hi)
        }
    }
}

/// Kernel bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// `1.06 · std · n^(−1/5)`.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    /// Trapezoid-rule integral of the curve.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

pub const KDE_POINTS: usize = 512;

/// Gaussian kernel density on 512 equally spaced points over
/// `[min − 3h, max + 3h]`.
pub fn kde(samples: &[f64], bandwidth: Bandwidth) -> Result<KdeCurve, EvalError> {
    let n = samples.len();
    if n < 2 {
        return Err(EvalError::Invalid(format!("density estimate needs at least 2 samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Invalid("samples must be finite".into()));
    }
    let h = match bandwidth {
        Bandwidth::Silverman => {
            let mean = samples.iter().sum::<f64>() / n as f64;
            let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            1.06 * sd * (n as f64).powf(-0.2)
        }
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(EvalError::Invalid(format!("bandwidth {h} is not positive; are all samples equal?")));
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (min - 3.0 * h, max + 3.0 * h);
    let dx = (hi - lo) / (KDE_POINTS - 1) as f64;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..KDE_POINTS).map(|k| lo + dx * k as f64).collect();
    let density = x
        .par_iter()
        .map(|&g| {
            samples
                .iter()
                .map(|&s| {
                    let z = (g - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(KdeCurve { bandwidth: h, x, density })
}

/// Empirical `q`-quantile with linear interpolation between order statistics.
pub fn quantile(samples: &[f64], q: f64) -> Result<f64, EvalError> {
    if samples.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(EvalError::Invalid(format!("quantile {q} of {} samples", samples.len())));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    Ok(match sorted.get(k + 1) {
        Some(next) => sorted[k] + frac * (next - sorted[k]),
        None => sorted[k],
    })
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Capacity,
    /// Sets `Ū = −U̲ = f · capacity`.
    ChargeRateFraction,
    Sigma,
    Rho,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Capacity => "capacity",
            SweepParam::ChargeRateFraction => "charge-rate-fraction",
            SweepParam::Sigma => "sigma",
            SweepParam::Rho => "rho",
        }
    }
}

/// Everything besides the storage needed to go from a price model to a price.
#[derive(Debug, Clone)]
pub struct Pipeline {
    /// Log-price mean `m_t`, `t = 0..=T`.
    pub mean_curve: Vec<f64>,
    pub params: OuParams,
    pub xi0: f64,
    pub points: usize,
    pub density: SamplingDensity,
    pub train: TrainOptions,
    /// In-sample scenarios used for the standard error of each price; 0 skips it.
    pub eval_scenarios: usize,
}

impl Pipeline {
    pub fn chain(&self, params: &OuParams, horizon: usize) -> Result<MarkovChain, EvalError> {
        Ok(build_chain(params, self.points, horizon, self.xi0, self.density)?)
    }
}

/// Seasonal profile and residual fits of an hourly price series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: SeasonalProfile,
    pub rule: DailyRule,
    /// Fit on the hourly residuals.
    pub hourly: OuFit,
    /// Fit on the daily residual anchors; drives the daily chain.
    pub daily: OuFit,
    pub anchors: Vec<DailyPoint>,
}

pub fn calibrate(series: &PriceSeries, rule: DailyRule) -> Result<Calibration, EvalError> {
    let decomposition = decompose(series)?;
    let hourly = fit_ou(&decomposition.residuals)?;
    let anchors = daily_series(series, &decomposition.profile, rule)?;
    let daily_points: Vec<_> = anchors
        .iter()
        .map(|p| (p.date.and_time(NaiveTime::MIN), p.residual))
        .collect();
    let daily = fit_ou(&daily_points)?;
    Ok(Calibration {
        profile: decomposition.profile,
        rule,
        hourly,
        daily,
        anchors,
    })
}

impl Calibration {
    /// Pipeline for `horizon` daily stages from `start`. The chain starts at
    /// the residual anchor of the day before `start` when the data has it,
    /// otherwise at 0.
    pub fn pipeline(
        &self,
        start: NaiveDate,
        horizon: usize,
        points: usize,
        density: SamplingDensity,
        train: TrainOptions,
    ) -> Pipeline {
        let xi0 = start
            .pred_opt()
            .and_then(|d| self.anchors.iter().find(|p| p.date == d))
            .map_or(0.0, |p| p.residual);
        Pipeline {
            mean_curve: self.profile.daily_curve(start, horizon + 1, self.rule),
            params: self.daily.params,
            xi0,
            points,
            density,
            train,
            eval_scenarios: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub rho: f64,
    pub price: f64,
    /// Standard error of the price implied by the in-sample policy cost,
    /// propagated through the closed form; 0 when not estimated.
    pub price_se: f64,
}

/// Prices the storage for every value of `param` and every risk aversion in
/// `rhos` (the base one when empty; ignored when sweeping `rho` itself).
pub fn sweep(
    base: &StorageSpec,
    param: SweepParam,
    values: &[f64],
    rhos: &[f64],
    pipeline: &Pipeline,
) -> Result<Vec<SweepRow>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Invalid("sweep needs at least one value".into()));
    }
    let rhos: Vec<f64> = if param == SweepParam::Rho || rhos.is_empty() {
        vec![base.rho]
    } else {
        rhos.to_vec()
    };
    let base_chain = pipeline.chain(&pipeline.params, base.horizon)?;
    let mut rows = Vec::with_capacity(values.len() * rhos.len());
    for &v in values {
        let mut params = pipeline.params;
        let mut storage = *base;
        match param {
            SweepParam::Capacity => storage.capacity = v,
            SweepParam::ChargeRateFraction => {
                storage.charge_max = v * storage.capacity;
                storage.discharge_min = -v * storage.capacity;
            }
            SweepParam::Sigma => params = OuParams::new(params.a, v)?,
            SweepParam::Rho => storage.rho = v,
        }
        let own_chain;
        let chain = if param == SweepParam::Sigma {
            own_chain = pipeline.chain(&params, base.horizon)?;
            &own_chain
        } else {
            &base_chain
        };
        for &rho in &rhos {
            let storage = if param == SweepParam::Rho { storage } else { StorageSpec { rho, ..storage } };
            let valuation = value_storage(&storage, chain, &pipeline.mean_curve, &pipeline.train)?;
            let price_se = if pipeline.eval_scenarios > 1 {
                let sim = Simulator {
                    storage: &storage,
                    chain,
                    mean_curve: &pipeline.mean_curve,
                    spec: &valuation.spec,
                    pools: &valuation.pools,
                    params: &params,
                };
                let (_, summary) = sim.run(Mode::InSample, pipeline.eval_scenarios, pipeline.train.seed)?;
                price_standard_error(&storage, valuation.phi, summary.std_error)
            } else {
                0.0
            };
            rows.push(SweepRow {
                param: v,
                rho: storage.rho,
                price: valuation.price,
                price_se,
            });
        }
    }
    Ok(rows)
}

/// Delta method on `π(φ)`: `|dπ/dφ| = 1 / ((1 + ρφ)(1 + r)^T)`.
pub fn price_standard_error(storage: &StorageSpec, phi: f64, cost_se: f64) -> f64 {
    cost_se / ((1.0 + storage.rho * phi) * storage.growth())
}

/// Closed-form price from an evaluated policy cost instead of a bound.
pub fn price_from_cost(storage: &StorageSpec, cost: f64, psi: f64) -> Result<f64, EvalError> {
    Ok(indifference_price_closed(cost, psi, storage.rho, storage.interest, storage.horizon)?)
}

/// `scenario,terminal_wealth_eur`
pub fn write_wealth_csv<W: Write>(out: W, wealth: &[f64]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "terminal_wealth_eur"])?;
    for (k, v) in wealth.iter().enumerate() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `x,density`
pub fn write_kde_csv<W: Write>(out: W, curve: &KdeCurve) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "density"])?;
    for (x, d) in curve.x.iter().zip(&curve.density) {
        w.write_record([x.to_string(), d.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `param,rho,price_eur,price_se`
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param", "rho", "price_eur", "price_se"])?;
    for r in rows {
        w.write_record([r.param.to_string(), r.rho.to_string(), r.price.to_string(), r.price_se.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
