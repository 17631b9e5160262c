use std::collections::BTreeMap;
use std::path::Path;

use indiff_core::asymptotics::HwAsymptoticParams;
use indiff_core::drivers::{DistortedParams, DriverSpec};
use indiff_core::mc::McConfig;
use indiff_core::models::{ModelSpec, SvModel};
use indiff_core::pde::{GridSpec, PutContract};
use serde::Deserialize;

use crate::CliError;

/// Parameter document shared by all subcommands; each command demands the
/// sections it needs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelSpec>,
    pub driver: Option<DistortedParams>,
    pub contract: Option<PutContract>,
    pub grid: Option<GridSpec>,
    #[serde(default = "default_spot")]
    pub spot: f64,
    /// Starting factor level.
    pub y0: Option<f64>,
    /// Alternative to `y0`: the level where `σ(y0)` equals this value.
    pub initial_vol: Option<f64>,
    pub log_moneyness: Option<Axis>,
    pub asymptotics: Option<HwAsymptoticParams>,
    pub mc: Option<McConfig>,
    /// At most one entry, `parameter -> values`.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
    pub output: Option<String>,
}

fn default_spot() -> f64 {
    100.0
}

/// Evenly spaced log-moneyness points, endpoints included.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl Axis {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if self.points < 2 || !(self.from < self.to) {
            return Err(CliError::Validation(format!(
                "log_moneyness needs from < to and at least 2 points, got [{}, {}] with {}",
                self.from, self.to, self.points
            )));
        }
        let h = (self.to - self.from) / (self.points - 1) as f64;
        // Rounded so that grid-aligned points stay exactly on the grid.
        Ok((0..self.points)
            .map(|k| ((self.from + h * k as f64) * 1e12).round() / 1e12)
            .collect())
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    fn require<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        v.as_ref()
            .ok_or_else(|| CliError::Validation(format!("config is missing the `{name}` section")))
    }

    pub fn model_spec(&self) -> Result<&ModelSpec, CliError> {
        Self::require(&self.model, "model")
    }

    pub fn model(&self) -> Result<SvModel, CliError> {
        Ok(self.model_spec()?.build()?)
    }

    pub fn driver_params(&self) -> Result<DistortedParams, CliError> {
        Self::require(&self.driver, "driver").copied()
    }

    pub fn driver(&self) -> Result<DriverSpec, CliError> {
        let p = self.driver_params()?;
        Ok(DriverSpec::distorted_entropic(p.gamma, p.eta)?)
    }

    pub fn contract(&self) -> Result<PutContract, CliError> {
        let c = *Self::require(&self.contract, "contract")?;
        c.validate()?;
        Ok(c)
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        let g = *Self::require(&self.grid, "grid")?;
        g.validate()?;
        Ok(g)
    }

    pub fn xs(&self) -> Result<Vec<f64>, CliError> {
        Self::require(&self.log_moneyness, "log_moneyness")?.values()
    }

    pub fn asymptotics(&self) -> Result<HwAsymptoticParams, CliError> {
        let p = *Self::require(&self.asymptotics, "asymptotics")?;
        p.validate()?;
        Ok(p)
    }

    pub fn start_level(&self, model: &SvModel) -> Result<f64, CliError> {
        match (self.y0, self.initial_vol) {
            (Some(y), None) => Ok(y),
            (None, Some(v)) => Ok(model.level_for_vol(v)?),
            _ => Err(CliError::Validation(
                "config needs exactly one of `y0` and `initial_vol`".into(),
            )),
        }
    }

    pub fn validate_spot(&self) -> Result<(), CliError> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(CliError::Validation(format!("spot must be positive, got {}", self.spot)));
        }
        Ok(())
    }
}

/// Parsed `--sweep name=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let (name, list) = s
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("sweep must look like param=v1,v2; got `{s}`")))?;
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Validation(format!("sweep value `{v}` is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(CliError::Validation("sweep needs at least one value".into()));
        }
        Ok(Self {
            param: name.trim().to_string(),
            values,
        })
    }

    /// Command-line sweep if given, else the one in the config, else none.
    pub fn resolve(cli: Option<&str>, cfg: &RunConfig) -> Result<Option<Self>, CliError> {
        if let Some(s) = cli {
            return Self::parse(s).map(Some);
        }
        match cfg.sweep.len() {
            0 => Ok(None),
            1 => {
                let (param, values) = cfg.sweep.iter().next().unwrap();
                if values.is_empty() {
                    return Err(CliError::Validation("sweep needs at least one value".into()));
                }
                Ok(Some(Self {
                    param: param.clone(),
                    values: values.clone(),
                }))
            }
            _ => Err(CliError::Validation("only one sweep parameter is supported".into())),
        }
    }
}
