//! Seeded synthetic hourly prices with annual, weekly and daily cycles and
//! an Ornstein-Uhlenbeck residual. Used for demos and tests when exchange
//! data is not at hand.

use std::f64::consts::PI;
use std::io::Write;

use chrono::{Datelike, NaiveDateTime, TimeDelta, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ou::simulate_with;
use super::OuParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPrices {
    /// Mean log price.
    pub level: f64,
    pub annual_amplitude: f64,
    pub weekly_amplitude: f64,
    pub daily_amplitude: f64,
    /// Hourly residual dynamics.
    pub residual: OuParams,
    pub seed: u64,
}

impl Default for SyntheticPrices {
    fn default() -> Self {
        Self {
            level: 40f64.ln(),
            annual_amplitude: 0.15,
            weekly_amplitude: 0.10,
            daily_amplitude: 0.20,
            residual: OuParams { a: 0.05, sigma: 0.05 },
            seed: 2016,
        }
    }
}

impl SyntheticPrices {
    /// Deterministic seasonal log-price component at `ts`.
    pub fn seasonal(&self, ts: NaiveDateTime) -> f64 {
        let yday = ts.ordinal0() as f64;
        let wday = ts.weekday().num_days_from_monday() as f64;
        let hour = ts.hour() as f64;
        self.level
            + self.annual_amplitude * (2.0 * PI * yday / 365.0).cos()
            - self.weekly_amplitude * if wday >= 5.0 { 1.0 } else { -0.4 }
            + self.daily_amplitude * (2.0 * PI * (hour - 14.0) / 24.0).cos()
    }

    /// `hours` consecutive hourly prices starting at `start`.
    pub fn generate(&self, start: NaiveDateTime, hours: usize) -> Vec<(NaiveDateTime, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let path = simulate_with(&self.residual, 0.0, hours.saturating_sub(1).max(1), &mut rng);
        (0..hours)
            .map(|k| {
                let ts = start + TimeDelta::hours(k as i64);
                (ts, (self.seasonal(ts) + path[k]).exp())
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W, start: NaiveDateTime, hours: usize) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "timestamp,price_eur_mwh")?;
        for (ts, p) in self.generate(start, hours) {
            writeln!(w, "{},{:.6}", ts.format("%Y-%m-%dT%H:%M"), p)?;
        }
        w.flush()
    }
}
