//! Storage trading problem, the storage-free baseline and exponential-utility
//! indifference prices.
//!
//! The state is `[wealth, energy]`; cash is coordinate 0. The only control is
//! the energy bought on entering the next stage (negative for sales), priced
//! at the spot price of that stage.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{Bound, Dynamics};
use crate::markov::MarkovChain;
use crate::sddp::{train, CutPool, SddpError, StageProblemSpec, TerminalCost, TrainOptions, TrainReport};

pub const WEALTH: usize = 0;
pub const ENERGY: usize = 1;

#[derive(Error, Debug)]
pub enum StorageError {
    #[error("invalid storage parameter: {0}")]
    Invalid(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("value {value} is not above -1/rho = {floor}; the optimal value is corrupted")]
    BelowFloor { value: f64, floor: f64 },
    #[error("bracket [{lo}, {hi}] does not enclose the root (residuals {g_lo:.3e}, {g_hi:.3e}); widen it")]
    Bracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },
    #[error(transparent)]
    Sddp(#[from] SddpError),
}

/// Physical and financial parameters of the storage problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageSpec {
    /// Maximum stored energy, MWh.
    pub capacity: f64,
    /// Largest purchase per period, MWh.
    pub charge_max: f64,
    /// Largest sale per period as a nonpositive number, MWh.
    pub discharge_min: f64,
    /// Fraction of stored energy lost per period.
    pub loss: f64,
    /// Interest per period on cash.
    pub interest: f64,
    pub horizon: usize,
    /// Absolute risk aversion of the exponential utility.
    pub rho: f64,
    /// Initial cash, EUR.
    pub x0: f64,
}

impl Default for StorageSpec {
    fn default() -> Self {
        Self {
            capacity: 10.0,
            charge_max: 5.0,
            discharge_min: -5.0,
            loss: 0.0,
            interest: 0.0,
            horizon: 30,
            rho: 1e-4,
            x0: 0.0,
        }
    }
}

impl StorageSpec {
    pub fn validate(&self) -> Result<(), StorageError> {
        let bad = |m: String| Err(StorageError::Invalid(m));
        let finite = [self.capacity, self.charge_max, self.discharge_min, self.loss, self.interest, self.rho, self.x0];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if !(self.discharge_min <= 0.0 && 0.0 <= self.charge_max) {
            return bad(format!(
                "need discharge_min <= 0 <= charge_max, got [{}, {}]",
                self.discharge_min, self.charge_max
            ));
        }
        if !(0.0..1.0).contains(&self.loss) {
            return bad(format!("loss = {} must lie in [0, 1)", self.loss));
        }
        if !(self.interest > -1.0) {
            return bad(format!("interest = {} must exceed -1", self.interest));
        }
        if !(self.rho > 0.0) {
            return bad(format!("rho = {} must be positive", self.rho));
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.capacity >= 0.0) {
            return bad(format!("capacity = {} must be nonnegative", self.capacity));
        }
        Ok(())
    }

    /// Compounding factor `(1 + r)^T`.
    pub fn growth(&self) -> f64 {
        (1.0 + self.interest).powi(self.horizon as i32)
    }

    /// Cost floor `−1/ρ`, below every cost-to-go.
    pub fn cost_floor(&self) -> f64 {
        -1.0 / self.rho
    }

    /// The same storage that may not be used.
    pub fn without_storage(&self) -> Self {
        Self {
            capacity: 0.0,
            charge_max: 0.0,
            discharge_min: 0.0,
            ..*self
        }
    }
}

/// Negated exponential utility `(exp(−ρ w) − 1) / ρ`.
pub fn disutility(rho: f64, wealth: f64) -> f64 {
    (-rho * wealth).exp_m1() / rho
}

/// Spot prices `s_{t+1} = exp(m_{t+1} + ξ^i_{t+1})`, indexed `[t][i]`.
pub fn price_table(chain: &MarkovChain, mean_curve: &[f64]) -> Result<Vec<Vec<f64>>, StorageError> {
    if mean_curve.len() != chain.horizon() + 1 {
        return Err(StorageError::Mismatch(format!(
            "mean curve has {} values, chain needs {} (horizon + 1)",
            mean_curve.len(),
            chain.horizon() + 1
        )));
    }
    Ok((0..chain.horizon())
        .map(|t| chain.nodes[t + 1].iter().map(|xi| (mean_curve[t + 1] + xi).exp()).collect())
        .collect())
}

/// Storage problem on `chain` with log-price mean `m_t`, `t = 0..=T`.
pub fn build_spec(storage: &StorageSpec, chain: &MarkovChain, mean_curve: &[f64]) -> Result<StageProblemSpec, StorageError> {
    let prices = price_table(chain, mean_curve)?;
    build_spec_with_prices(storage, chain, prices)
}

/// Storage problem with explicit prices `[t][i]` for the move into node `i`
/// of stage `t + 1`. Prices may be any real number.
pub fn build_spec_with_prices(
    storage: &StorageSpec,
    chain: &MarkovChain,
    prices: Vec<Vec<f64>>,
) -> Result<StageProblemSpec, StorageError> {
    storage.validate()?;
    if chain.horizon() != storage.horizon {
        return Err(StorageError::Mismatch(format!(
            "chain horizon {} differs from storage horizon {}",
            chain.horizon(),
            storage.horizon
        )));
    }
    if prices.len() != storage.horizon
        || prices.iter().enumerate().any(|(t, row)| row.len() != chain.node_count(t + 1))
    {
        return Err(StorageError::Mismatch("price table does not match the chain".into()));
    }
    if prices.iter().flatten().any(|s| !s.is_finite()) {
        return Err(StorageError::Invalid("prices must be finite".into()));
    }
    let growth = 1.0 + storage.interest;
    let keep = 1.0 - storage.loss;
    let prices = Arc::new(prices);
    Ok(StageProblemSpec {
        state_dim: 2,
        horizon: storage.horizon,
        initial_state: vec![storage.x0, 0.0],
        state_bounds: vec![Bound::FREE, Bound::new(0.0, storage.capacity)],
        here_bounds: vec![],
        here_cost: vec![],
        wait_bounds: vec![Bound::new(storage.discharge_min, storage.charge_max)],
        wait_cost: vec![0.0],
        dynamics: Arc::new(move |t, _from, to| Dynamics {
            a: vec![vec![growth, 0.0], vec![0.0, keep]],
            b_here: vec![],
            b_wait: vec![vec![-prices[t][to]], vec![1.0]],
            w: vec![0.0, 0.0],
        }),
        terminal: TerminalCost::ExponentialDisutility {
            coordinate: WEALTH,
            rho: storage.rho,
        },
        cost_lower_bound: storage.cost_floor(),
    })
}

/// Storage problem with use of the storage prohibited.
pub fn no_storage_constraint(
    storage: &StorageSpec,
    chain: &MarkovChain,
    mean_curve: &[f64],
) -> Result<StageProblemSpec, StorageError> {
    build_spec(&storage.without_storage(), chain, mean_curve)
}

/// Optimal cost `ψ(x0) = −υ((1 + r)^T x0)` of the storage-free agent.
pub fn baseline_value(storage: &StorageSpec) -> f64 {
    disutility(storage.rho, storage.growth() * storage.x0)
}

/// `π = [ln(ρψ + 1) − ln(ρφ + 1)] / (ρ (1 + r)^T)`.
pub fn indifference_price_closed(phi: f64, psi: f64, rho: f64, interest: f64, horizon: usize) -> Result<f64, StorageError> {
    for v in [phi, psi] {
        if !(rho * v + 1.0 > 0.0) || !v.is_finite() {
            return Err(StorageError::BelowFloor { value: v, floor: -1.0 / rho });
        }
    }
    Ok(((rho * psi).ln_1p() - (rho * phi).ln_1p()) / (rho * (1.0 + interest).powi(horizon as i32)))
}

/// Solves `φ(x0 − α) = ψ` for `α` by bisection on `bracket`, where
/// `phi_fn(c)` is the optimal cost with initial cash `c`.
pub fn indifference_price_root<F>(
    mut phi_fn: F,
    x0: f64,
    psi: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64, StorageError>
where
    F: FnMut(f64) -> Result<f64, StorageError>,
{
    if !(tol > 0.0) {
        return Err(StorageError::Invalid(format!("tolerance {tol} must be positive")));
    }
    let (mut lo, mut hi) = (bracket.0.min(bracket.1), bracket.0.max(bracket.1));
    let mut g_lo = phi_fn(x0 - lo)? - psi;
    let g_hi = phi_fn(x0 - hi)? - psi;
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo.signum() == g_hi.signum() || !g_lo.is_finite() || !g_hi.is_finite() {
        return Err(StorageError::Bracket { lo, hi, g_lo, g_hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let g = phi_fn(x0 - mid)? - psi;
        if g == 0.0 {
            return Ok(mid);
        }
        if g.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Terminal wealth of a control sequence, `(1+r)^T x0 − Σ_t (1+r)^{T−t} s_t U_t`
/// with `prices[t - 1] = s_t` and `controls[t - 1] = U_t`.
pub fn terminal_wealth(storage: &StorageSpec, prices: &[f64], controls: &[f64]) -> f64 {
    let g = 1.0 + storage.interest;
    let horizon = storage.horizon as i32;
    let spent: f64 = prices
        .iter()
        .zip(controls)
        .enumerate()
        .map(|(k, (s, u))| g.powi(horizon - 1 - k as i32) * s * u)
        .sum();
    storage.growth() * storage.x0 - spent
}

/// Trained storage problem and its price.
#[derive(Debug, Clone)]
pub struct Valuation {
    pub spec: StageProblemSpec,
    pub pools: CutPool,
    pub report: TrainReport,
    /// Lower bound on the optimal cost with storage.
    pub phi: f64,
    /// Optimal cost without storage.
    pub psi: f64,
    pub price: f64,
}

/// Trains the storage problem and prices it with the closed form.
pub fn value_storage(
    storage: &StorageSpec,
    chain: &MarkovChain,
    mean_curve: &[f64],
    options: &TrainOptions,
) -> Result<Valuation, StorageError> {
    let spec = build_spec(storage, chain, mean_curve)?;
    let mut pools = CutPool::init(chain, spec.state_dim, spec.cost_lower_bound);
    let report = train(&spec, chain, &mut pools, options)?;
    let phi = report.final_lower_bound();
    let psi = baseline_value(storage);
    let price = indifference_price_closed(phi, psi, storage.rho, storage.interest, storage.horizon)?;
    Ok(Valuation {
        spec,
        pools,
        report,
        phi,
        psi,
        price,
    })
}
