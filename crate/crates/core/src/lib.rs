//! Valuation of electricity storages by indifference pricing.
//!
//! The pipeline runs from hourly spot prices to a storage price:
//!
//! 1. [`priceseries`] removes week-of-year, day-of-week and hour-of-day
//!    averages from log prices and fits a discrete Ornstein-Uhlenbeck model
//!    to the residual.
//! 2. [`markov`] turns the residual process into a finite-state Markov chain
//!    with Gauss-Hermite quadrature.
//! 3. [`sddp`] solves the resulting multistage problem with Markov-chain
//!    stochastic dual dynamic programming, using the dense simplex in [`lp`]
//!    for every stage subproblem.
//! 4. [`storage`] builds the storage instance and converts optimal values
//!    into exponential-utility indifference prices.
//! 5. [`eval`] simulates trained policies, estimates terminal-wealth
//!    densities and runs parameter sweeps.

pub mod eval;
pub mod lp;
pub mod markov;
pub mod priceseries;
pub mod sddp;
pub mod storage;
