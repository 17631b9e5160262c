//! Normalized Black-Scholes put, `U(θ, x)` with `θ = σ²τ` and `x = log(S/K)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Put price per unit strike at total variance `theta`.
pub fn unit_put(theta: f64, x: f64) -> f64 {
    if theta <= 0.0 {
        return (1.0 - x.exp()).max(0.0);
    }
    let s = theta.sqrt();
    let d = -x / s;
    norm_cdf(d + 0.5 * s) - x.exp() * norm_cdf(d - 0.5 * s)
}

pub fn bs_put(tau: f64, x: f64, sigma: f64) -> f64 {
    unit_put(sigma * sigma * tau, x)
}

/// `∂ bs_put / ∂σ`.
pub fn bs_vega(tau: f64, x: f64, sigma: f64) -> f64 {
    let s = sigma * tau.sqrt();
    if s <= 0.0 {
        return 0.0;
    }
    tau.sqrt() * norm_pdf(-x / s + 0.5 * s)
}

const BISECTION_STEPS: usize = 40;
const NEWTON_TOL: f64 = 1e-10;

/// Volatility in `bracket` reproducing `price`.
pub fn implied_vol(price: f64, tau: f64, x: f64, bracket: (f64, f64)) -> Result<f64> {
    let (lo, hi) = bracket;
    if !(tau > 0.0) || !(lo >= 0.0 && hi > lo) || !price.is_finite() {
        return Err(Error::Domain(format!(
            "implied vol needs tau > 0 and 0 <= lo < hi, got tau={tau}, bracket=[{lo}, {hi}]"
        )));
    }
    let p_lo = bs_put(tau, x, lo);
    let p_hi = bs_put(tau, x, hi);
    // At lo = 0 the lower bound is the intrinsic value, which no positive vol attains.
    if price < p_lo || (lo == 0.0 && price <= p_lo) {
        return Err(Error::NoSolution {
            price,
            lo,
            hi,
            bound: "lower",
            bound_price: p_lo,
        });
    }
    if price > p_hi {
        return Err(Error::NoSolution {
            price,
            lo,
            hi,
            bound: "upper",
            bound_price: p_hi,
        });
    }

    let (mut a, mut b) = (lo, hi);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (a + b);
        if bs_put(tau, x, mid) < price {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut v = 0.5 * (a + b);
    for _ in 0..50 {
        let vega = bs_vega(tau, x, v);
        if !(vega > 0.0) {
            break;
        }
        let step = (bs_put(tau, x, v) - price) / vega;
        let next = v - step;
        if !(next > a && next < b) {
            break;
        }
        v = next;
        if step.abs() < NEWTON_TOL * 1e-2 {
            break;
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolPoint {
    pub tau: f64,
    pub x: f64,
    pub vol: f64,
}

impl VolPoint {
    pub fn new(tau: f64, x: f64, vol: f64) -> Result<Self> {
        if !(tau > 0.0) || !(vol > 0.0) {
            return Err(Error::Validation(format!(
                "vol point needs tau > 0 and vol > 0, got tau={tau}, vol={vol}"
            )));
        }
        Ok(Self { tau, x, vol })
    }
}
