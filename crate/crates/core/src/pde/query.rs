use serde::Serialize;

use super::grid::locate_uniform;
use super::PdeSolution;
use crate::blackscholes::implied_vol;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub unit_price: f64,
    pub vol: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolCurve {
    pub tau: f64,
    pub y: f64,
    pub points: Vec<CurvePoint>,
}

impl VolCurve {
    /// `(x, vol)` for the points where inversion succeeded.
    pub fn valid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().filter_map(|p| p.vol.map(|v| (p.x, v)))
    }

    pub fn vol_at(&self, x: f64) -> Option<f64> {
        self.points.iter().find(|p| (p.x - x).abs() < 1e-12).and_then(|p| p.vol)
    }
}

impl PdeSolution {
    /// Price per unit strike, `ũ − u`, linear in `τ` and bilinear in `(x, y)`.
    pub fn unit_price(&self, tau: f64, x: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        let outside = || Error::Domain(format!("query (tau={tau}, x={x}, y={y}) lies outside the grid"));
        let (n, wt) = locate_uniform(0.0, g.dt(), g.nt + 1, tau).ok_or_else(outside)?;
        let (i, wx) = locate_uniform(g.x_lo, g.dx(), g.nx, x).ok_or_else(outside)?;
        let (j, wy) = locate_uniform(g.y_lo, g.dy(), g.ny, y).ok_or_else(outside)?;
        let layer = |n: usize| {
            let p = |i, j| self.unit_price_node(n, i, j);
            (1.0 - wx) * ((1.0 - wy) * p(i, j) + wy * p(i, j + 1)) + wx * ((1.0 - wy) * p(i + 1, j) + wy * p(i + 1, j + 1))
        };
        Ok(if wt == 0.0 {
            layer(n)
        } else {
            (1.0 - wt) * layer(n) + wt * layer(n + 1)
        })
    }

    /// Indifference price of the whole position in currency, `nK (ũ − u)`.
    pub fn indifference_price(&self, tau: f64, x: f64, y: f64) -> Result<f64> {
        Ok(self.contract.scaled_strike() * self.unit_price(tau, x, y)?)
    }

    /// Black-Scholes implied volatilities of the unit-strike prices at `xs`.
    /// Points that fail to invert carry the error instead of a vol.
    pub fn implied_vol_curve(&self, tau: f64, y0: f64, xs: &[f64]) -> Result<VolCurve> {
        let (lo, hi) = self.sigma_bounds;
        let bracket = (0.5 * lo, 2.0 * hi);
        let mut points = Vec::with_capacity(xs.len());
        for &x in xs {
            let p = self.unit_price(tau, x, y0)?;
            let (vol, error) = match implied_vol(p, tau, x, bracket) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            points.push(CurvePoint {
                x,
                unit_price: p,
                vol,
                error,
            });
        }
        Ok(VolCurve { tau, y: y0, points })
    }

    /// `ũ_y − u_y` by central differences of the interpolated price.
    pub fn vega_gap(&self, tau: f64, x: f64, y: f64) -> Result<f64> {
        let h = self.grid.dy();
        let up = self.unit_price(tau, x, y + h)?;
        let down = self.unit_price(tau, x, y - h)?;
        Ok((up - down) / (2.0 * h))
    }
}
