//! Monte Carlo oracle for the small-risk-aversion limit of the indifference
//! price, and the static entropic risk measure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SvModel;
use crate::pde::{MertonComponent, PutContract};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

pub const MIN_STEPS: usize = 50;

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 || self.steps < MIN_STEPS {
            return Err(Error::Validation(format!(
                "Monte Carlo needs at least 2 paths and {MIN_STEPS} steps, got {} and {}",
                self.paths, self.steps
            )));
        }
        if self.antithetic && self.paths % 2 != 0 {
            return Err(Error::Validation("antithetic sampling needs an even path count".into()));
        }
        Ok(())
    }
}

/// Volatility-factor drift used under the pricing measure.
#[derive(Debug, Clone, Copy)]
pub enum DriftAdjustment<'a> {
    /// `m − (ρ + ηρ')aλ`.
    MinimalMartingale,
    /// `m − (ρ + ηρ')aλ + a² ∂y log f(T − t, y)`, the exact `γ → 0` limit
    /// of the indifference price; `f` comes from the Merton component.
    SmallRiskAversion(&'a MertonComponent),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub price: f64,
    pub stderr: f64,
}

const BATCH: usize = 4096;

/// Put price under the minimal-martingale-type drift adjustment.
pub fn mc_adjusted_price(
    model: &SvModel,
    eta: f64,
    contract: &PutContract,
    s0: f64,
    y0: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    mc_adjusted_price_with(model, eta, contract, s0, y0, cfg, DriftAdjustment::MinimalMartingale)
}

pub fn mc_adjusted_price_with(
    model: &SvModel,
    eta: f64,
    contract: &PutContract,
    s0: f64,
    y0: f64,
    cfg: &McConfig,
    adjustment: DriftAdjustment<'_>,
) -> Result<McEstimate> {
    cfg.validate()?;
    contract.validate()?;
    if model.asymptotics_only() {
        return Err(Error::Validation(format!(
            "model {} is asymptotics-only and has unbounded coefficients",
            model.name()
        )));
    }
    if !(s0 > 0.0) || !y0.is_finite() || !eta.is_finite() {
        return Err(Error::Validation(format!("need s0 > 0 and finite y0, eta; got {s0}, {y0}, {eta}")));
    }
    if let DriftAdjustment::SmallRiskAversion(mc) = adjustment {
        if mc.grid().maturity < contract.maturity * (1.0 - 1e-12) {
            return Err(Error::Validation("Merton component does not cover the contract maturity".into()));
        }
    }

    // Samples are single paths, or antithetic pair averages.
    let samples = if cfg.antithetic { cfg.paths / 2 } else { cfg.paths };
    let batches = samples.div_ceil(BATCH);
    let sim = Simulator {
        model,
        shift: model.rho() + eta * model.rho_prime(),
        contract,
        s0,
        y0,
        steps: cfg.steps,
        adjustment,
    };
    let parts: Vec<Result<(f64, f64)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            let count = BATCH.min(samples - b * BATCH);
            let (mut sum, mut sq) = (0.0, 0.0);
            for k in 0..count {
                let path = b * BATCH + k;
                let v = if cfg.antithetic {
                    let (p, q) = sim.pair(&mut rng, path)?;
                    0.5 * (p + q)
                } else {
                    sim.single(&mut rng, path)?
                };
                sum += v;
                sq += v * v;
            }
            Ok((sum, sq))
        })
        .collect();
    let (mut sum, mut sq) = (0.0, 0.0);
    for p in parts {
        let (s, q) = p?;
        sum += s;
        sq += q;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        price: mean,
        stderr: (var / n).sqrt(),
    })
}

struct Simulator<'a> {
    model: &'a SvModel,
    shift: f64,
    contract: &'a PutContract,
    s0: f64,
    y0: f64,
    steps: usize,
    adjustment: DriftAdjustment<'a>,
}

impl Simulator<'_> {
    fn drift(&self, t: f64, y: f64) -> Result<f64> {
        let m = self.model;
        let a = m.a(y);
        let base = m.m(y) - self.shift * a * m.sharpe(y)?;
        Ok(match self.adjustment {
            DriftAdjustment::MinimalMartingale => base,
            DriftAdjustment::SmallRiskAversion(f) => base + a * a * f.log_f_y(self.contract.maturity - t, y)?,
        })
    }

    fn payoff(&self, log_s: f64) -> f64 {
        let c = self.contract;
        c.quantity as f64 * (c.strike - log_s.exp()).max(0.0)
    }

    fn single(&self, rng: &mut ChaCha8Rng, path: usize) -> Result<f64> {
        let (mut ls, mut y) = (self.s0.ln(), self.y0);
        let dt = self.contract.maturity / self.steps as f64;
        let sq = dt.sqrt();
        let (rho, rho_p) = (self.model.rho(), self.model.rho_prime());
        for k in 0..self.steps {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            self.advance(&mut ls, &mut y, k as f64 * dt, dt, sq * z1, sq * (rho * z1 + rho_p * z2));
            if !(ls.is_finite() && y.is_finite()) {
                return Err(Error::Simulation { step: k + 1, path });
            }
        }
        Ok(self.payoff(ls))
    }

    fn pair(&self, rng: &mut ChaCha8Rng, path: usize) -> Result<(f64, f64)> {
        let (mut a, mut ya) = (self.s0.ln(), self.y0);
        let (mut b, mut yb) = (a, ya);
        let dt = self.contract.maturity / self.steps as f64;
        let sq = dt.sqrt();
        let (rho, rho_p) = (self.model.rho(), self.model.rho_prime());
        for k in 0..self.steps {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let (dw1, dwy) = (sq * z1, sq * (rho * z1 + rho_p * z2));
            let t = k as f64 * dt;
            self.advance(&mut a, &mut ya, t, dt, dw1, dwy);
            self.advance(&mut b, &mut yb, t, dt, -dw1, -dwy);
            if !(a.is_finite() && ya.is_finite() && b.is_finite() && yb.is_finite()) {
                return Err(Error::Simulation { step: k + 1, path });
            }
        }
        Ok((self.payoff(a), self.payoff(b)))
    }

    /// Log-Euler in `S`, Euler in `Y`.
    #[inline]
    fn advance(&self, ls: &mut f64, y: &mut f64, t: f64, dt: f64, dw1: f64, dwy: f64) {
        let s = self.model.sigma(*y);
        let drift = self.drift(t, *y).unwrap_or(f64::NAN);
        *ls += -0.5 * s * s * dt + s * dw1;
        *y += drift * dt + self.model.a(*y) * dwy;
    }
}

/// `(1/γ) log E[exp(−γ ξ)]` over equally weighted samples.
pub fn static_entropic(samples: &[f64], gamma: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("entropic risk of an empty sample".into()));
    }
    if !(gamma > 0.0) || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("entropic risk needs gamma > 0 and finite samples".into()));
    }
    let shift = samples.iter().map(|&x| -gamma * x).fold(f64::NEG_INFINITY, f64::max);
    let mean = samples.iter().map(|&x| (-gamma * x - shift).exp()).sum::<f64>() / samples.len() as f64;
    Ok((shift + mean.ln()) / gamma)
}
