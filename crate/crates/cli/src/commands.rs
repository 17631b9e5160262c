use std::fs::File;
use std::path::{Path, PathBuf};

use indiff_core::asymptotics::{self, eikonal_residual, transport_residual, HwAsymptoticParams};
use indiff_core::blackscholes::{bs_put, implied_vol};
use indiff_core::calibrate::{self as cal, MarketQuote};
use indiff_core::drivers::{check_strictly_quadratic, DriverSpec, Lattice};
use indiff_core::mc::{mc_adjusted_price, McEstimate};
use indiff_core::models::SvModel;
use indiff_core::pde::{self, solve_value};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, Sweep};
use crate::output::{sweep_path, with_suffix, write_atomic};
use crate::CliError;

fn output_path(cli: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cli.or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Validation("no output path: pass --out or set `output` in the config".into()))
}

/// Writes every file or none: all contents are produced before the first write.
fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<(), CliError> {
    for (path, bytes) in files {
        write_atomic(path, bytes)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn refuse_asymptotics_only(model: &SvModel, command: &str) -> Result<(), CliError> {
    if model.asymptotics_only() {
        return Err(CliError::Validation(format!(
            "model {} is asymptotics-only (unbounded coefficients); `{command}` needs a bounded-coefficient model, \
             use `asymptotic` instead",
            model.name()
        )));
    }
    Ok(())
}

pub fn skew(config: &Path, out: Option<PathBuf>, sweep: Option<&str>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let model = cfg.model()?;
    refuse_asymptotics_only(&model, "skew")?;
    let base = cfg.driver_params()?;
    cfg.driver()?;
    let contract = cfg.contract()?;
    let grid = cfg.grid()?;
    let xs = cfg.xs()?;
    let y0 = cfg.start_level(&model)?;
    let out = output_path(out, &cfg)?;

    let sweep = Sweep::resolve(sweep, &cfg)?;
    let runs: Vec<(PathBuf, DriverSpec)> = match &sweep {
        None => vec![(out.clone(), cfg.driver()?)],
        Some(s) => s
            .values
            .iter()
            .map(|&v| {
                let d = match s.param.as_str() {
                    "gamma" => DriverSpec::distorted_entropic(v, base.eta),
                    "eta" => DriverSpec::distorted_entropic(base.gamma, v),
                    other => {
                        return Err(CliError::Validation(format!(
                            "skew can sweep `gamma` or `eta`, not `{other}`"
                        )))
                    }
                }?;
                Ok((sweep_path(&out, &s.param, v), d))
            })
            .collect::<Result<_, CliError>>()?,
    };

    let files = runs
        .par_iter()
        .map(|(path, driver)| {
            let sol = solve_value(&model, driver, &contract, &grid)?;
            let curve = sol.implied_vol_curve(contract.maturity, y0, &xs)?;
            for p in curve.points.iter().filter(|p| p.vol.is_none()) {
                log::warn!("x={}: {}", p.x, p.error.as_deref().unwrap_or("no implied vol"));
            }
            let mut buf = Vec::new();
            pde::write_curve_csv(&curve, &mut buf)?;
            Ok((path.clone(), buf))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_all(&files)
}

pub fn asymptotic(config: &Path, out: Option<PathBuf>, sweep: Option<&str>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let base = cfg.asymptotics()?;
    let xs = cfg.xs()?;
    let out = output_path(out, &cfg)?;
    let sweep = Sweep::resolve(sweep, &cfg)?;
    let runs: Vec<(PathBuf, HwAsymptoticParams)> = match &sweep {
        None => vec![(out.clone(), base)],
        Some(s) => s
            .values
            .iter()
            .map(|&v| {
                let mut p = base;
                match s.param.as_str() {
                    "eta" => p.eta = v,
                    "mu" => p.mu_coeff = v,
                    "kappa" => p.kappa = v,
                    "y" => p.y = v,
                    "tau" => p.tau = v,
                    other => {
                        return Err(CliError::Validation(format!(
                            "asymptotic can sweep eta, mu, kappa, y or tau, not `{other}`"
                        )))
                    }
                }
                p.validate()?;
                Ok((sweep_path(&out, &s.param, v), p))
            })
            .collect::<Result<_, CliError>>()?,
    };
    let mut files = Vec::with_capacity(runs.len());
    for (path, p) in runs {
        let mut buf = Vec::new();
        asymptotics::write_curve_csv(&p, &xs, &mut buf)?;
        files.push((path, buf));
    }
    write_all(&files)
}

pub fn calibrate(quotes: &Path, split_x: f64, out: &Path) -> Result<(), CliError> {
    let file = File::open(quotes).map_err(|e| CliError::Data(format!("cannot open {}: {e}", quotes.display())))?;
    let quotes: Vec<MarketQuote> = cal::read_quotes_csv(file)?;
    let result = cal::calibrate(&quotes, split_x)?;
    if result.boundary_hit {
        log::warn!("stage-1 optimum lies on the parameter box boundary");
    }
    if result.degenerate {
        log::warn!("stage-1 fit is degenerate: kappa and y are not separately identified");
    }
    let json = serde_json::to_vec_pretty(&result).map_err(|e| CliError::Data(e.to_string()))?;

    let mut fit = csv_writer();
    fit.write_record(["log_moneyness", "market_vol", "fitted_vol"]).map_err(csv_err)?;
    let mut sorted = quotes.clone();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    for q in &sorted {
        fit.serialize((q.x, q.vol, result.fitted_vol(q.x))).map_err(csv_err)?;
    }
    let fit = fit.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_all(&[(out.to_path_buf(), json), (with_suffix(out, "_fit", "csv"), fit)])
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

struct CheckRow {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub fn check(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let mut rows = Vec::new();

    // Built without the constructor so that an invalid gamma shows up as a failed check.
    let params = cfg.driver_params()?;
    let raw = DriverSpec::DistortedEntropic {
        gamma: params.gamma,
        eta: params.eta,
    };
    let report = check_strictly_quadratic(&raw, &Lattice::square(5.0, 41));
    rows.push(CheckRow {
        name: "driver admissibility",
        pass: report.passes(),
        detail: format!(
            "gamma={} eta={} convex={} c1={:?} c2={:?} conjugate_invariant={}",
            params.gamma,
            params.eta,
            report.driver.strictly_convex,
            report.driver.c1,
            report.driver.c2,
            report.conjugate_invariant
        ),
    });

    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let validation = model.validate_assumptions((grid.y_lo, grid.y_hi), 400);
    rows.push(CheckRow {
        name: "model assumptions",
        pass: validation.passes(),
        detail: format!(
            "{} on [{}, {}]: sigma in [{:.4}, {:.4}], bounded away from zero={}, known violation={}",
            model.name(),
            grid.y_lo,
            grid.y_hi,
            validation.sigma_min,
            validation.sigma_max,
            validation.bounded_away_from_zero,
            validation.known_violation
        ),
    });

    rows.push(envelope_row(&cfg, &model, report.passes() && validation.passes()));

    let hw = cfg.asymptotics()?;
    let points = [(0.5, hw.y), (-0.5, hw.y)];
    let eik = points
        .iter()
        .map(|&(x, y)| eikonal_residual(hw.kappa, x, y, 1e-5).abs())
        .fold(0.0, f64::max);
    rows.push(CheckRow {
        name: "eikonal residual",
        pass: eik < 1e-8,
        detail: format!("max {eik:.2e} at x=+-0.5, y={} (h=1e-5, bound 1e-8)", hw.y),
    });
    let tr = points
        .iter()
        .map(|&(x, y)| transport_residual(hw.kappa, hw.mu_coeff, hw.eta, x, y, 1e-4).abs())
        .fold(0.0, f64::max);
    rows.push(CheckRow {
        name: "transport residual",
        pass: tr < 1e-5,
        detail: format!("max {tr:.2e} at x=+-0.5, y={} (h=1e-4, bound 1e-5)", hw.y),
    });

    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &rows {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{:width$}  {status}  {}", r.name, r.detail);
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed {
            failed,
            total: rows.len(),
        });
    }
    Ok(())
}

/// Prices and vols on the configured axis must respect the volatility bounds.
fn envelope_row(cfg: &RunConfig, model: &SvModel, inputs_ok: bool) -> CheckRow {
    let name = "price/vol envelope";
    let fail = |detail: String| CheckRow {
        name,
        pass: false,
        detail,
    };
    if !inputs_ok {
        return fail("skipped: driver or model check failed".into());
    }
    let run = || -> Result<CheckRow, CliError> {
        let driver = cfg.driver()?;
        let contract = cfg.contract()?;
        let grid = cfg.grid()?;
        let xs = cfg.xs()?;
        let y0 = cfg.start_level(model)?;
        let sol = solve_value(model, &driver, &contract, &grid)?;
        let (lo, hi) = (model.sigma_low(), model.sigma_high());
        let tau = contract.maturity;
        let mut bad = Vec::new();
        for &x in &xs {
            let p = sol.unit_price(tau, x, y0)?;
            let (pl, ph) = (bs_put(tau, x, lo) - 1e-4, bs_put(tau, x, hi) + 1e-4);
            if !(pl <= p && p <= ph) {
                bad.push(format!("x={x}: price {p:.6} outside [{pl:.6}, {ph:.6}]"));
                continue;
            }
            match implied_vol(p, tau, x, (0.5 * lo, 2.0 * hi)) {
                Ok(v) if v >= lo - 1e-6 && v <= hi + 1e-6 => {}
                Ok(v) => bad.push(format!("x={x}: vol {v:.5} outside [{lo}, {hi}]")),
                // Prices at the envelope edge may not invert; the price bound already held.
                Err(_) => {}
            }
        }
        Ok(CheckRow {
            name,
            pass: bad.is_empty(),
            detail: if bad.is_empty() {
                format!("{} points inside [{lo}, {hi}] at tau={tau}", xs.len())
            } else {
                bad.join("; ")
            },
        })
    };
    run().unwrap_or_else(|e| fail(e.to_string()))
}

#[derive(Debug, Serialize)]
struct PriceReport {
    model: String,
    gamma: f64,
    eta: f64,
    strike: f64,
    quantity: u32,
    maturity: f64,
    spot: f64,
    y0: f64,
    log_moneyness: f64,
    price: f64,
    unit_price: f64,
    implied_vol: Option<f64>,
    monte_carlo: Option<McEstimate>,
}

pub fn price(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let model = cfg.model()?;
    refuse_asymptotics_only(&model, "price")?;
    let params = cfg.driver_params()?;
    let driver = cfg.driver()?;
    let contract = cfg.contract()?;
    let grid = cfg.grid()?;
    cfg.validate_spot()?;
    let y0 = cfg.start_level(&model)?;
    let mc = cfg.mc.map(|mut m| {
        if let Some(s) = seed {
            m.seed = s;
        }
        m
    });
    if let Some(m) = &mc {
        m.validate()?;
    }

    let x = (cfg.spot / contract.strike).ln();
    let sol = solve_value(&model, &driver, &contract, &grid)?;
    let unit = sol.unit_price(contract.maturity, x, y0)?;
    let (lo, hi) = (model.sigma_low(), model.sigma_high());
    let vol = implied_vol(unit, contract.maturity, x, (0.5 * lo, 2.0 * hi)).ok();
    let monte_carlo = match &mc {
        Some(m) => Some(mc_adjusted_price(&model, params.eta, &contract, cfg.spot, y0, m)?),
        None => None,
    };
    let report = PriceReport {
        model: model.name().to_string(),
        gamma: params.gamma,
        eta: params.eta,
        strike: contract.strike,
        quantity: contract.quantity,
        maturity: contract.maturity,
        spot: cfg.spot,
        y0,
        log_moneyness: x,
        price: contract.scaled_strike() * unit,
        unit_price: unit,
        implied_vol: vol,
        monte_carlo,
    };
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    json.push(b'\n');
    match out.or_else(|| cfg.output.as_ref().map(PathBuf::from)) {
        Some(path) => write_all(&[(path, json)]),
        None => {
            print!("{}", String::from_utf8_lossy(&json));
            Ok(())
        }
    }
}
