//! Stochastic-volatility models
//!
//! ```text
//! dS = μ(Y) S dt + σ(Y) S dW¹
//! dY = m(Y) dt + a(Y) (ρ dW¹ + ρ' dW²),   ρ' = √(1 − ρ²)
//! ```
//!
//! Coefficients are plain scalar maps. Built-in families also carry a
//! serializable description so they can be named in config files.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Stock drift of the arctangent model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    Constant { mu: f64 },
    /// `μ(y) = μ₀ σ(y)²`, i.e. a Sharpe ratio `λ = μ₀ σ(y)`.
    VarianceProportional { mu0: f64 },
}

/// Built-in model families as they appear in parameter documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `σ(y) = y`, `a(y) = κ y`, `μ(y) = μ y³`, uncorrelated.
    HullWhite { mu: f64, kappa: f64 },
    ArctanOu {
        alpha: f64,
        mbar: f64,
        nu: f64,
        rho: f64,
        drift: DriftSpec,
    },
    /// Constant volatility with an OU factor that the price never sees.
    ConstantVol {
        sigma: f64,
        #[serde(default = "one")]
        vol_of_vol: f64,
        #[serde(default)]
        reversion: f64,
        #[serde(default)]
        rho: f64,
        #[serde(default)]
        mu: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self) -> Result<SvModel> {
        match *self {
            ModelSpec::HullWhite { mu, kappa } => make_hull_white(mu, kappa),
            ModelSpec::ArctanOu {
                alpha,
                mbar,
                nu,
                rho,
                drift,
            } => make_arctan_ou(alpha, mbar, nu, rho, drift),
            ModelSpec::ConstantVol {
                sigma,
                vol_of_vol,
                reversion,
                rho,
                mu,
            } => make_constant_vol(sigma, vol_of_vol, reversion, rho, mu),
        }
    }
}

#[derive(Clone)]
pub struct SvModel {
    name: String,
    mu: Coefficient,
    sigma: Coefficient,
    m: Coefficient,
    a: Coefficient,
    rho: f64,
    rho_prime: f64,
    sigma_low: f64,
    sigma_high: f64,
    working_interval: (f64, f64),
    asymptotics_only: bool,
    spec: Option<ModelSpec>,
}

impl fmt::Debug for SvModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SvModel")
            .field("name", &self.name)
            .field("rho", &self.rho)
            .field("sigma_low", &self.sigma_low)
            .field("sigma_high", &self.sigma_high)
            .field("working_interval", &self.working_interval)
            .field("asymptotics_only", &self.asymptotics_only)
            .finish_non_exhaustive()
    }
}

/// Coefficient maps for [`SvModel::custom`].
pub struct Coefficients {
    pub mu: Coefficient,
    pub sigma: Coefficient,
    pub m: Coefficient,
    pub a: Coefficient,
}

impl SvModel {
    /// A model from arbitrary coefficient maps with declared volatility bounds.
    pub fn custom(
        name: impl Into<String>,
        coefficients: Coefficients,
        rho: f64,
        sigma_bounds: (f64, f64),
        working_interval: (f64, f64),
    ) -> Result<Self> {
        let rho_prime = rho_prime(rho)?;
        let (sigma_low, sigma_high) = sigma_bounds;
        if !(sigma_low > 0.0 && sigma_high >= sigma_low) {
            return Err(Error::Validation(format!(
                "volatility bounds must satisfy 0 < low <= high, got ({sigma_low}, {sigma_high})"
            )));
        }
        if !(working_interval.0 < working_interval.1) {
            return Err(Error::Validation("working interval must be nonempty".into()));
        }
        Ok(Self {
            name: name.into(),
            mu: coefficients.mu,
            sigma: coefficients.sigma,
            m: coefficients.m,
            a: coefficients.a,
            rho,
            rho_prime,
            sigma_low,
            sigma_high,
            working_interval,
            asymptotics_only: false,
            spec: None,
        })
    }

    /// Replaces the stock drift. The result no longer matches a built-in
    /// family description.
    pub fn with_drift(mut self, mu: Coefficient) -> Self {
        self.mu = mu;
        self.spec = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn mu(&self, y: f64) -> f64 {
        (self.mu)(y)
    }

    pub fn sigma(&self, y: f64) -> f64 {
        (self.sigma)(y)
    }

    pub fn m(&self, y: f64) -> f64 {
        (self.m)(y)
    }

    pub fn a(&self, y: f64) -> f64 {
        (self.a)(y)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `√(1 − ρ²)`, derived once from `ρ`.
    pub fn rho_prime(&self) -> f64 {
        self.rho_prime
    }

    pub fn sigma_low(&self) -> f64 {
        self.sigma_low
    }

    pub fn sigma_high(&self) -> f64 {
        self.sigma_high
    }

    pub fn working_interval(&self) -> (f64, f64) {
        self.working_interval
    }

    /// True for models admitted only for closed-form short-maturity asymptotics.
    pub fn asymptotics_only(&self) -> bool {
        self.asymptotics_only
    }

    /// Sharpe ratio `λ(y) = μ(y) / σ(y)`.
    pub fn sharpe(&self, y: f64) -> Result<f64> {
        let s = self.sigma(y);
        if !(s > 0.0) {
            return Err(Error::Domain(format!("sigma({y}) = {s} is not positive")));
        }
        Ok(self.mu(y) / s)
    }

    /// Solves `σ(y) = target` on the working interval by bisection; `σ` must
    /// be monotone there.
    pub fn level_for_vol(&self, target: f64) -> Result<f64> {
        let (mut lo, mut hi) = self.working_interval;
        lo = lo.max(-1e6);
        hi = hi.min(1e6);
        let (flo, fhi) = (self.sigma(lo) - target, self.sigma(hi) - target);
        if flo * fhi > 0.0 {
            return Err(Error::Domain(format!(
                "volatility {target} not attained on [{lo}, {hi}]"
            )));
        }
        let increasing = fhi > flo;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (self.sigma(mid) < target) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Samples the coefficients on `interval` and reports violations of the
    /// boundedness and regularity assumptions.
    pub fn validate_assumptions(&self, interval: (f64, f64), resolution: usize) -> ValidationReport {
        let n = resolution.max(3);
        let (lo, hi) = interval;
        let h = (hi - lo) / (n - 1) as f64;
        let ys: Vec<f64> = (0..n).map(|k| lo + k as f64 * h).collect();
        let sig: Vec<f64> = ys.iter().map(|&y| self.sigma(y)).collect();
        let av: Vec<f64> = ys.iter().map(|&y| self.a(y)).collect();
        let muv: Vec<f64> = ys.iter().map(|&y| self.mu(y)).collect();
        let mv: Vec<f64> = ys.iter().map(|&y| self.m(y)).collect();

        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let abs_max = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let finite = [&sig, &av, &muv, &mv].iter().all(|v| v.iter().all(|x| x.is_finite()));

        let (sigma_min, sigma_max) = (min(&sig), max(&sig));
        let (a_min, a_max) = (min(&av), max(&av));
        let tol = 1e-12;
        let within_declared_bounds =
            sigma_min >= self.sigma_low - tol && sigma_max <= self.sigma_high + tol;
        let bounded_away_from_zero = self.sigma_low > 0.0 && sigma_min > 0.0 && a_min > 0.0;
        let argmin = sig
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| ys[k])
            .unwrap_or(lo);

        ValidationReport {
            model: self.name.clone(),
            interval,
            sigma_min,
            sigma_max,
            sigma_min_at: argmin,
            a_min,
            a_max,
            mu_abs_max: abs_max(&muv),
            m_abs_max: abs_max(&mv),
            finite,
            within_declared_bounds,
            bounded_away_from_zero,
            sigma_derivative_lipschitz: derivative_lipschitz(&sig, h),
            a_derivative_lipschitz: derivative_lipschitz(&av, h),
            known_violation: self.asymptotics_only,
        }
    }
}

/// Largest difference quotient of the finite-difference derivative, a
/// sampled proxy for the Hölder constant of the derivative with exponent 1.
fn derivative_lipschitz(v: &[f64], h: f64) -> f64 {
    let d: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    d.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub interval: (f64, f64),
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_min_at: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub mu_abs_max: f64,
    pub m_abs_max: f64,
    pub finite: bool,
    pub within_declared_bounds: bool,
    pub bounded_away_from_zero: bool,
    pub sigma_derivative_lipschitz: f64,
    pub a_derivative_lipschitz: f64,
    /// The model is known not to satisfy the bounded-coefficient assumptions.
    pub known_violation: bool,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.finite
            && self.within_declared_bounds
            && self.bounded_away_from_zero
            && self.sigma_derivative_lipschitz.is_finite()
            && self.a_derivative_lipschitz.is_finite()
    }
}

fn rho_prime(rho: f64) -> Result<f64> {
    if !(rho * rho < 1.0) {
        return Err(Error::Validation(format!("correlation must satisfy |rho| < 1, got {rho}")));
    }
    Ok((1.0 - rho * rho).sqrt())
}

/// Hull-White with cubic stock drift, `μ(y) = mu_coeff · y³`. The volatility
/// is unbounded, so the model is marked as usable for asymptotics only.
pub fn make_hull_white(mu_coeff: f64, kappa: f64) -> Result<SvModel> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Validation(format!("kappa must be positive, got {kappa}")));
    }
    if !mu_coeff.is_finite() {
        return Err(Error::Validation("drift coefficient must be finite".into()));
    }
    Ok(SvModel {
        name: format!("hull-white(mu={mu_coeff}, kappa={kappa})"),
        mu: Arc::new(move |y| mu_coeff * y * y * y),
        sigma: Arc::new(|y| y),
        m: Arc::new(|_| 0.0),
        a: Arc::new(move |y| kappa * y),
        rho: 0.0,
        rho_prime: 1.0,
        sigma_low: 0.0,
        sigma_high: f64::INFINITY,
        working_interval: (0.0, f64::INFINITY),
        asymptotics_only: true,
        spec: Some(ModelSpec::HullWhite { mu: mu_coeff, kappa }),
    })
}

pub const ARCTAN_VOL_FLOOR: f64 = 0.03;
pub const ARCTAN_VOL_SPAN: f64 = 0.7;

/// `σ(y) = 0.7/π · (arctan(y − 1) + π/2) + 0.03`, increasing from 0.03 to 0.73.
pub fn arctan_sigma(y: f64) -> f64 {
    ARCTAN_VOL_SPAN / PI * ((y - 1.0).atan() + 0.5 * PI) + ARCTAN_VOL_FLOOR
}

/// Ornstein-Uhlenbeck factor `dY = α(m̄ − Y)dt + ν√(2α)(ρ dW¹ + ρ' dW²)`
/// driving the arctangent volatility map.
pub fn make_arctan_ou(alpha: f64, mbar: f64, nu: f64, rho: f64, drift: DriftSpec) -> Result<SvModel> {
    if !(alpha > 0.0) || !(nu > 0.0) || !mbar.is_finite() {
        return Err(Error::Validation(format!(
            "arctan-OU needs alpha > 0, nu > 0 and finite mbar, got alpha={alpha}, nu={nu}, mbar={mbar}"
        )));
    }
    let rho_prime = rho_prime(rho)?;
    let mu: Coefficient = match drift {
        DriftSpec::Zero => Arc::new(|_| 0.0),
        DriftSpec::Constant { mu } => Arc::new(move |_| mu),
        DriftSpec::VarianceProportional { mu0 } => Arc::new(move |y| {
            let s = arctan_sigma(y);
            mu0 * s * s
        }),
    };
    let vol_of_vol = nu * (2.0 * alpha).sqrt();
    Ok(SvModel {
        name: format!("arctan-ou(alpha={alpha}, m={mbar}, nu={nu}, rho={rho})"),
        mu,
        sigma: Arc::new(arctan_sigma),
        m: Arc::new(move |y| alpha * (mbar - y)),
        a: Arc::new(move |_| vol_of_vol),
        rho,
        rho_prime,
        sigma_low: ARCTAN_VOL_FLOOR,
        sigma_high: ARCTAN_VOL_FLOOR + ARCTAN_VOL_SPAN,
        working_interval: (-1e3, 1e3),
        asymptotics_only: false,
        spec: Some(ModelSpec::ArctanOu {
            alpha,
            mbar,
            nu,
            rho,
            drift,
        }),
    })
}

/// Constant volatility; the factor `Y` is an OU process (or a Brownian motion
/// when `reversion = 0`) that does not feed into prices.
pub fn make_constant_vol(sigma: f64, vol_of_vol: f64, reversion: f64, rho: f64, mu: f64) -> Result<SvModel> {
    if !(sigma > 0.0) || !(vol_of_vol > 0.0) || !(reversion >= 0.0) || !mu.is_finite() {
        return Err(Error::Validation(format!(
            "constant-vol model needs sigma > 0, vol_of_vol > 0, reversion >= 0, got {sigma}, {vol_of_vol}, {reversion}"
        )));
    }
    let rho_prime = rho_prime(rho)?;
    Ok(SvModel {
        name: format!("constant-vol(sigma={sigma})"),
        mu: Arc::new(move |_| mu),
        sigma: Arc::new(move |_| sigma),
        m: Arc::new(move |y| -reversion * y),
        a: Arc::new(move |_| vol_of_vol),
        rho,
        rho_prime,
        sigma_low: sigma,
        sigma_high: sigma,
        working_interval: (f64::NEG_INFINITY, f64::INFINITY),
        asymptotics_only: false,
        spec: Some(ModelSpec::ConstantVol {
            sigma,
            vol_of_vol,
            reversion,
            rho,
            mu,
        }),
    })
}
