//! One function per subcommand.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use storval::eval::{
    calibrate, kde, quantile, sweep, write_kde_csv, write_sweep_csv, write_wealth_csv, Bandwidth, Calibration, Mode,
    Pipeline, Simulator,
};
use storval::markov::{build_chain, MarkovChain};
use storval::priceseries::{load_prices, OuParams, PriceError};
use storval::sddp::{CutPool, CutRecord, StageProblemSpec, TrainOptions};
use storval::storage::{baseline_value, build_spec, indifference_price_closed, value_storage, StorageSpec};

use crate::artifacts::{rho_tag, OutDir};
use crate::config::RunConfig;
use crate::Invalid;

const CALIBRATION: &str = "calibration.json";
const CHAIN: &str = "chain.json";
const VALUATION: &str = "valuation.json";
const SIMULATION: &str = "simulation.json";

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    /// Daily OU parameters driving the chain.
    a: f64,
    sigma: f64,
    #[serde(flatten)]
    calibration: Calibration,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainFile {
    /// Log-price mean `m_t`, `t = 0..=T`.
    mean_curve: Vec<f64>,
    params: OuParams,
    #[serde(flatten)]
    chain: MarkovChain,
}

#[derive(Debug, Serialize, Deserialize)]
struct CutsFile {
    rho: f64,
    cuts: Vec<CutRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValuationFile {
    phi: f64,
    psi: f64,
    price_eur: f64,
    rho: f64,
    #[serde(rename = "T")]
    horizon: usize,
    r: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulationEntry {
    rho: f64,
    mode: Mode,
    scenarios: usize,
    mean_cost: f64,
    std_error: f64,
    mean_wealth: f64,
    /// `(probability, terminal wealth)` pairs.
    percentiles: Vec<(f64, f64)>,
    bandwidth: f64,
    wealth_csv: String,
    kde_csv: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulationFile {
    runs: Vec<SimulationEntry>,
}

/// Price model the later stages run on.
struct Model {
    mean_curve: Vec<f64>,
    params: OuParams,
    xi0: f64,
}

fn cuts_name(config: &RunConfig, rho: f64) -> String {
    if rho == config.storage.rho {
        "cuts.json".into()
    } else {
        format!("cuts_rho{}.json", rho_tag(rho))
    }
}

fn report_suffix(config: &RunConfig, rho: f64) -> String {
    if rho == config.storage.rho {
        String::new()
    } else {
        format!("_rho{}", rho_tag(rho))
    }
}

fn model(config: &RunConfig, out: &OutDir) -> Result<Model> {
    if let Some(c) = &config.calibration {
        return Ok(Model {
            mean_curve: c.mean_curve.clone(),
            params: OuParams::new(c.a, c.sigma)?,
            xi0: c.xi0,
        });
    }
    let data = config.data.as_ref().expect("validated: data or calibration");
    let file = out.read_json::<CalibrationFile>(CALIBRATION, "storval calibrate <config>")?.body;
    let options = TrainOptions::default();
    let p = file.calibration.pipeline(
        data.start,
        config.storage.horizon,
        config.model.quadrature_points,
        config.model.density,
        options,
    );
    Ok(Model {
        mean_curve: p.mean_curve,
        params: p.params,
        xi0: p.xi0,
    })
}

fn train_options(config: &RunConfig, dump: Option<&std::path::Path>) -> TrainOptions {
    let m = &config.model;
    TrainOptions {
        iterations: m.iterations,
        seed: config.seed,
        forward_paths: m.forward_paths,
        stall_tolerance: m.stall_tolerance,
        stall_window: m.stall_window,
        prune_parallel: m.prune_parallel,
        parallel: true,
        dump_dir: dump.map(|d| d.to_path_buf()),
    }
}

fn chain_for(config: &RunConfig, model: &Model, params: &OuParams) -> Result<MarkovChain> {
    Ok(build_chain(
        params,
        config.model.quadrature_points,
        config.storage.horizon,
        model.xi0,
        config.model.density,
    )?)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<(), storval::eval::EvalError>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

pub fn cmd_calibrate(config: &RunConfig) -> Result<()> {
    let Some(data) = &config.data else {
        return Err(Invalid("calibrate needs a [data] table; this config inlines [calibration]".into()).into());
    };
    let series = load_prices(&data.path, &data.columns()).map_err(|e| match e {
        PriceError::Degenerate(_) | PriceError::InvalidParams(_) => anyhow::Error::from(e),
        other => Invalid(format!("{}: {other}", data.path.display())).into(),
    })?;
    let calibration = calibrate(&series, data.daily_rule())?;
    let out = OutDir::new(config)?;
    let file = CalibrationFile {
        a: calibration.daily.params.a,
        sigma: calibration.daily.params.sigma,
        calibration,
    };
    let path = out.write_json(CALIBRATION, &file)?;
    println!("daily OU fit: a = {:.6}, sigma = {:.6}", file.a, file.sigma);
    let h = &file.calibration.hourly.params;
    println!("hourly OU fit: a = {:.6}, sigma = {:.6}", h.a, h.sigma);
    for w in file.calibration.hourly.warnings.iter().chain(&file.calibration.daily.warnings) {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_discretize(config: &RunConfig) -> Result<()> {
    let out = OutDir::new(config)?;
    let model = model(config, &out)?;
    let chain = chain_for(config, &model, &model.params)?;
    let path = out.write_json(
        CHAIN,
        &ChainFile {
            mean_curve: model.mean_curve,
            params: model.params,
            chain,
        },
    )?;
    println!(
        "chain: {} stages, {} nodes per stage",
        config.storage.horizon + 1,
        config.model.quadrature_points
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Risk aversions to train: the storage one first, then extra simulate ones.
fn trained_rhos(config: &RunConfig) -> Vec<f64> {
    let mut rhos = vec![config.storage.rho];
    for r in config.simulate_rhos() {
        if !rhos.contains(&r) {
            rhos.push(r);
        }
    }
    rhos
}

pub fn cmd_train(config: &RunConfig, dump: Option<&std::path::Path>) -> Result<()> {
    let out = OutDir::new(config)?;
    let model = model(config, &out)?;
    let chain = chain_for(config, &model, &model.params)?;
    let options = train_options(config, dump);
    for rho in trained_rhos(config) {
        let storage = StorageSpec { rho, ..config.storage };
        let v = value_storage(&storage, &chain, &model.mean_curve, &options)?;
        let suffix = report_suffix(config, rho);
        out.write_json(
            &cuts_name(config, rho),
            &CutsFile {
                rho,
                cuts: v.pools.to_records(),
            },
        )?;
        out.write_csv(&format!("train_report{suffix}.csv"), v.report.to_csv_without_timing().as_bytes())?;
        out.write_csv(&format!("train_timing{suffix}.csv"), v.report.to_csv().as_bytes())?;
        println!(
            "rho = {rho}: {} iterations ({:?}), lower bound {:.6}, price {:.4} EUR",
            v.report.records.len(),
            v.report.stop,
            v.phi,
            v.price
        );
        if rho == config.storage.rho {
            write_valuation(&out, &storage, v.phi)?;
        }
    }
    println!("wrote artifacts to {}", out.root.display());
    Ok(())
}

fn write_valuation(out: &OutDir, storage: &StorageSpec, phi: f64) -> Result<ValuationFile> {
    let psi = baseline_value(storage);
    let price = indifference_price_closed(phi, psi, storage.rho, storage.interest, storage.horizon)?;
    let file = ValuationFile {
        phi,
        psi,
        price_eur: price,
        rho: storage.rho,
        horizon: storage.horizon,
        r: storage.interest,
    };
    out.write_json(VALUATION, &file)?;
    Ok(file)
}

struct Trained {
    storage: StorageSpec,
    spec: StageProblemSpec,
    pools: CutPool,
}

fn load_trained(config: &RunConfig, out: &OutDir, chain: &MarkovChain, model: &Model, rho: f64) -> Result<Trained> {
    let storage = StorageSpec { rho, ..config.storage };
    let file = out.read_json::<CutsFile>(&cuts_name(config, rho), "storval train <config>")?;
    if file.body.rho != rho {
        return Err(Invalid(format!(
            "{} holds cuts for rho = {}, expected {rho}; rerun `storval train`",
            cuts_name(config, rho),
            file.body.rho
        ))
        .into());
    }
    let spec = build_spec(&storage, chain, &model.mean_curve)?;
    let pools = CutPool::from_records(chain, spec.state_dim, &file.body.cuts)
        .with_context(|| format!("{} does not match the configured chain; rerun `storval train`", cuts_name(config, rho)))?;
    Ok(Trained { storage, spec, pools })
}

pub fn cmd_value(config: &RunConfig) -> Result<()> {
    let out = OutDir::new(config)?;
    let model = model(config, &out)?;
    let chain = chain_for(config, &model, &model.params)?;
    let trained = load_trained(config, &out, &chain, &model, config.storage.rho)?;
    let phi = trained.pools.evaluate(0, 0, &trained.spec.initial_state);
    let file = write_valuation(&out, &trained.storage, phi)?;
    println!("phi = {:.6}, psi = {:.6}, price = {:.6} EUR", file.phi, file.psi, file.price_eur);
    Ok(())
}

const PERCENTILES: [f64; 5] = [0.01, 0.05, 0.5, 0.95, 0.99];

pub fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let out = OutDir::new(config)?;
    let model = model(config, &out)?;
    let chain = chain_for(config, &model, &model.params)?;
    let s = &config.simulate;
    let bandwidth = s.bandwidth.map_or(Bandwidth::Silverman, Bandwidth::Fixed);
    let mut runs = Vec::new();
    for rho in config.simulate_rhos() {
        let t = load_trained(config, &out, &chain, &model, rho)?;
        let sim = Simulator {
            storage: &t.storage,
            chain: &chain,
            mean_curve: &model.mean_curve,
            spec: &t.spec,
            pools: &t.pools,
            params: &model.params,
        };
        let (_, summary) = sim.run(s.mode, s.scenarios, config.seed)?;
        let curve = kde(&summary.wealth, bandwidth)?;
        let tag = rho_tag(rho);
        let wealth_csv = format!("wealth_rho{tag}.csv");
        let kde_csv = format!("kde_rho{tag}.csv");
        out.write_csv(&wealth_csv, &csv_bytes(|b| write_wealth_csv(b, &summary.wealth))?)?;
        out.write_csv(&kde_csv, &csv_bytes(|b| write_kde_csv(b, &curve))?)?;
        let percentiles = PERCENTILES
            .iter()
            .map(|&q| Ok((q, quantile(&summary.wealth, q)?)))
            .collect::<Result<Vec<_>>>()?;
        let mean_wealth = summary.wealth.iter().sum::<f64>() / summary.wealth.len() as f64;
        println!(
            "rho = {rho}: mean cost {:.6} (SE {:.6}), mean wealth {mean_wealth:.4}, 1st percentile {:.4}",
            summary.mean_cost, summary.std_error, percentiles[0].1
        );
        runs.push(SimulationEntry {
            rho,
            mode: s.mode,
            scenarios: s.scenarios,
            mean_cost: summary.mean_cost,
            std_error: summary.std_error,
            mean_wealth,
            percentiles,
            bandwidth: curve.bandwidth,
            wealth_csv,
            kde_csv,
        });
    }
    let path = out.write_json(SIMULATION, &SimulationFile { runs })?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig) -> Result<()> {
    if config.sweeps.is_empty() {
        return Err(Invalid("config has no [[sweep]] blocks".into()).into());
    }
    let out = OutDir::new(config)?;
    let model = model(config, &out)?;
    let pipeline = Pipeline {
        mean_curve: model.mean_curve,
        params: model.params,
        xi0: model.xi0,
        points: config.model.quadrature_points,
        density: config.model.density,
        train: train_options(config, None),
        eval_scenarios: config.model.eval_scenarios,
    };
    for block in &config.sweeps {
        let rows = sweep(&config.storage, block.parameter, &block.values, &block.rhos, &pipeline)?;
        for r in &rows {
            println!(
                "{} = {}, rho = {}: price {:.4} EUR (SE {:.4})",
                block.parameter.name(),
                r.param,
                r.rho,
                r.price,
                r.price_se
            );
        }
        let name = format!("sweep_{}.csv", block.parameter.name());
        let path = out.write_csv(&name, &csv_bytes(|b| write_sweep_csv(b, &rows))?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let out = OutDir::new(config)?;
    let valuation = out.read_json::<ValuationFile>(VALUATION, "storval train <config>")?;
    let report_path = out.path("train_report.csv");
    let report_text = crate::artifacts::read_required(&report_path, "storval train <config>")?;
    let lower_bounds: Vec<f64> = report_text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter_map(|l| l.split(',').nth(1)?.parse().ok())
        .collect();
    let v = &valuation.body;
    let p = &valuation.provenance;
    let mut md = String::new();
    writeln!(md, "# Storage valuation report\n")?;
    writeln!(md, "- config hash: `{}`", p.config_hash)?;
    writeln!(md, "- seed: {}", p.seed)?;
    writeln!(md, "- version: {}\n", p.version)?;
    writeln!(md, "## Bounds\n")?;
    writeln!(md, "| quantity | value |")?;
    writeln!(md, "|---|---|")?;
    writeln!(md, "| iterations | {} |", lower_bounds.len())?;
    if let (Some(first), Some(last)) = (lower_bounds.first(), lower_bounds.last()) {
        writeln!(md, "| first lower bound | {first:.6} |")?;
        writeln!(md, "| final lower bound (phi) | {last:.6} |")?;
    }
    writeln!(md, "| cost without storage (psi) | {:.6} |", v.psi)?;
    writeln!(md, "\n## Price\n")?;
    writeln!(
        md,
        "Indifference price {:.4} EUR at rho = {}, T = {}, r = {}.",
        v.price_eur, v.rho, v.horizon, v.r
    )?;
    if out.path(SIMULATION).is_file() {
        let sim = out.read_json::<SimulationFile>(SIMULATION, "storval simulate <config>")?.body;
        writeln!(md, "\n## Simulation\n")?;
        writeln!(md, "| rho | mode | scenarios | mean cost | SE | mean wealth | 1st percentile |")?;
        writeln!(md, "|---|---|---|---|---|---|---|")?;
        for r in &sim.runs {
            let p01 = r.percentiles.iter().find(|(q, _)| *q == 0.01).map_or(f64::NAN, |(_, w)| *w);
            writeln!(
                md,
                "| {} | {:?} | {} | {:.4} | {:.4} | {:.4} | {p01:.4} |",
                r.rho, r.mode, r.scenarios, r.mean_cost, r.std_error, r.mean_wealth
            )?;
        }
    }
    writeln!(md, "\n## Files\n")?;
    let mut files: Vec<(String, u64)> = std::fs::read_dir(&out.root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| Some((e.file_name().into_string().ok()?, e.metadata().ok()?.len())))
        .filter(|(name, _)| name != "report.md")
        .collect();
    files.sort();
    for (name, size) in files {
        writeln!(md, "- `{name}` ({size} bytes)")?;
    }
    let path = out.write("report.md", md.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}
