//! Writes a synthetic hourly price CSV: `make_prices <path> [weeks]`.

use std::fs::File;
use std::io::BufWriter;

use chrono::NaiveDate;
use storval::priceseries::synthetic::SyntheticPrices;

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "prices.csv".into());
    let weeks: usize = args.next().map_or(104, |w| w.parse().expect("weeks must be a whole number"));
    let start = NaiveDate::from_ymd_opt(2014, 12, 29).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let out = BufWriter::new(File::create(&path)?);
    SyntheticPrices::default().write_csv(out, start, 24 * 7 * weeks)?;
    println!("wrote {weeks} weeks of hourly prices to {path}");
    Ok(())
}
