use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::{PriceError, PriceSeries};

pub const WEEK_BUCKETS: usize = 53;

/// Week-of-year averages, then day-of-week averages of the annually
/// demeaned data, then hour-of-day averages of the weekly demeaned data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalProfile {
    pub week_of_year: Vec<f64>,
    pub day_of_week: Vec<f64>,
    pub hour_of_day: Vec<f64>,
}

/// Bucket index `0..53` for the ISO week of `date`. ISO week 53 goes to the
/// week-52 bucket when the calendar year of `date` has no week 53.
pub fn week_bucket(date: NaiveDate) -> usize {
    let week = date.iso_week().week() as usize;
    if week == 53 && !has_week_53(date.year()) {
        51
    } else {
        week - 1
    }
}

fn has_week_53(year: i32) -> bool {
    NaiveDate::from_ymd_opt(year, 12, 28)
        .map(|d| d.iso_week().week() == 53)
        .unwrap_or(false)
}

impl SeasonalProfile {
    /// Seasonal mean `m_t` of the log price at `ts`.
    pub fn mean_at(&self, ts: NaiveDateTime) -> f64 {
        let date = ts.date();
        self.week_of_year[week_bucket(date)]
            + self.day_of_week[date.weekday().num_days_from_monday() as usize]
            + self.hour_of_day[ts.hour() as usize]
    }

    /// Daily summary of the seasonal mean under `rule`.
    pub fn daily_mean(&self, date: NaiveDate, rule: DailyRule) -> f64 {
        match rule {
            DailyRule::DailyMean => {
                (0..24)
                    .map(|h| self.mean_at(date.and_hms_opt(h, 0, 0).unwrap()))
                    .sum::<f64>()
                    / 24.0
            }
            DailyRule::FixedHour { hour } => self.mean_at(date.and_hms_opt(hour, 0, 0).unwrap()),
        }
    }

    /// Seasonal means for `days` consecutive days starting at `start`.
    pub fn daily_curve(&self, start: NaiveDate, days: usize, rule: DailyRule) -> Vec<f64> {
        start.iter_days().take(days).map(|d| self.daily_mean(d, rule)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub profile: SeasonalProfile,
    /// `(timestamp, log_price − m_t)` for every observation.
    pub residuals: Vec<(NaiveDateTime, f64)>,
}

#[derive(Default, Clone, Copy)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

pub fn decompose(series: &PriceSeries) -> Result<Decomposition, PriceError> {
    let hours = series.span_hours();
    if hours < 167 {
        return Err(PriceError::TooShort { hours });
    }
    let entries = series.entries();

    let mut weeks = [Mean::default(); WEEK_BUCKETS];
    let mut overall = Mean::default();
    for p in entries {
        weeks[week_bucket(p.timestamp.date())].add(p.log_price);
        overall.add(p.log_price);
    }
    // empty buckets (partial-year data) fall back to the overall level
    let level = overall.get().unwrap_or(0.0);
    let week_of_year: Vec<f64> = weeks.iter().map(|m| m.get().unwrap_or(level)).collect();

    let step1: Vec<f64> = entries
        .iter()
        .map(|p| p.log_price - week_of_year[week_bucket(p.timestamp.date())])
        .collect();
    let mut days = [Mean::default(); 7];
    for (p, v) in entries.iter().zip(&step1) {
        days[p.timestamp.weekday().num_days_from_monday() as usize].add(*v);
    }
    let day_of_week: Vec<f64> = days.iter().map(|m| m.get().unwrap_or(0.0)).collect();

    let step2: Vec<f64> = entries
        .iter()
        .zip(&step1)
        .map(|(p, v)| v - day_of_week[p.timestamp.weekday().num_days_from_monday() as usize])
        .collect();
    let mut hours_of_day = [Mean::default(); 24];
    for (p, v) in entries.iter().zip(&step2) {
        hours_of_day[p.timestamp.hour() as usize].add(*v);
    }
    let hour_of_day: Vec<f64> = hours_of_day.iter().map(|m| m.get().unwrap_or(0.0)).collect();

    let profile = SeasonalProfile {
        week_of_year,
        day_of_week,
        hour_of_day,
    };
    let residuals = entries
        .iter()
        .map(|p| (p.timestamp, p.log_price - profile.mean_at(p.timestamp)))
        .collect();
    Ok(Decomposition { profile, residuals })
}

/// How hourly data is summarized for daily decision stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum DailyRule {
    #[default]
    DailyMean,
    FixedHour { hour: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyPoint {
    pub date: NaiveDate,
    pub mean_log_price: f64,
    pub residual: f64,
}

/// Daily seasonal means and residual anchors for every day present in
/// `series`. Under the daily-mean rule the residual anchor is the average of
/// the available hourly residuals of that day.
pub fn daily_series(
    series: &PriceSeries,
    profile: &SeasonalProfile,
    rule: DailyRule,
) -> Result<Vec<DailyPoint>, PriceError> {
    if series.is_empty() {
        return Err(PriceError::Empty);
    }
    if let DailyRule::FixedHour { hour } = rule {
        if hour > 23 {
            return Err(PriceError::InvalidParams(format!("fixed hour {hour} outside 0..=23")));
        }
    }
    let mut by_day: BTreeMap<NaiveDate, Vec<(u32, f64)>> = BTreeMap::new();
    for p in series.entries() {
        let resid = p.log_price - profile.mean_at(p.timestamp);
        by_day
            .entry(p.timestamp.date())
            .or_default()
            .push((p.timestamp.hour(), resid));
    }
    by_day
        .into_iter()
        .map(|(date, hours)| {
            let residual = match rule {
                DailyRule::DailyMean => hours.iter().map(|(_, r)| r).sum::<f64>() / hours.len() as f64,
                DailyRule::FixedHour { hour } => hours
                    .iter()
                    .find(|(h, _)| *h == hour)
                    .map(|(_, r)| *r)
                    .ok_or(PriceError::MissingHour { date, hour })?,
            };
            Ok(DailyPoint {
                date,
                mean_log_price: profile.daily_mean(date, rule),
                residual,
            })
        })
        .collect()
}
