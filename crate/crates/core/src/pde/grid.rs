use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform space-time grid on `[x_lo, x_hi] × [y_lo, y_hi] × [0, maturity]`.
///
/// `nx` and `ny` count nodes including the boundary nodes; `nt` counts steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub maturity: f64,
}

pub const MIN_NODES: usize = 8;

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_lo, self.x_hi, self.y_lo, self.y_hi, self.maturity]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("grid bounds must be finite".into()));
        }
        if !(self.x_lo < 0.0 && 0.0 < self.x_hi) {
            return Err(Error::Validation(format!(
                "grid needs x_lo < 0 < x_hi, got [{}, {}]",
                self.x_lo, self.x_hi
            )));
        }
        if !(self.y_lo < self.y_hi) {
            return Err(Error::Validation(format!(
                "grid needs y_lo < y_hi, got [{}, {}]",
                self.y_lo, self.y_hi
            )));
        }
        if self.nx < MIN_NODES || self.ny < MIN_NODES || self.nt < MIN_NODES {
            return Err(Error::Validation(format!(
                "grid needs nx, ny, nt >= {MIN_NODES}, got ({}, {}, {})",
                self.nx, self.ny, self.nt
            )));
        }
        if !(self.maturity > 0.0) {
            return Err(Error::Validation("grid maturity must be positive".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_hi - self.y_lo) / (self.ny - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.nt as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_lo + j as f64 * self.dy()
    }

    pub fn tau(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny).map(|j| self.y(j)).collect()
    }

    /// Grid with every spacing halved; node sets nest.
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * self.nx - 1,
            ny: 2 * self.ny - 1,
            nt: 2 * self.nt,
            ..*self
        }
    }
}

/// European put on `quantity` units with strike `strike` and maturity `maturity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutContract {
    pub strike: f64,
    pub maturity: f64,
    #[serde(default = "one")]
    pub quantity: u32,
}

fn one() -> u32 {
    1
}

impl PutContract {
    pub fn new(strike: f64, maturity: f64, quantity: u32) -> Result<Self> {
        let c = Self {
            strike,
            maturity,
            quantity,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) || !(self.maturity > 0.0) || self.quantity < 1 {
            return Err(Error::Validation(format!(
                "put contract needs K > 0, T > 0, n >= 1, got K={}, T={}, n={}",
                self.strike, self.maturity, self.quantity
            )));
        }
        Ok(())
    }

    /// Aggregate strike `nK`, the only way the position size enters the equation.
    pub fn scaled_strike(&self) -> f64 {
        self.quantity as f64 * self.strike
    }
}

/// Fractional index of `v` on a uniform axis; `None` outside.
pub(crate) fn locate_uniform(lo: f64, h: f64, n: usize, v: f64) -> Option<(usize, f64)> {
    let s = (v - lo) / h;
    let top = (n - 1) as f64;
    if !(s >= -1e-9 && s <= top + 1e-9) {
        return None;
    }
    let s = s.clamp(0.0, top);
    let k = (s.floor() as usize).min(n - 2);
    Some((k, s - k as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec {
            x_lo: -1.5,
            x_hi: 1.5,
            y_lo: -4.0,
            y_hi: 4.0,
            nx: 61,
            ny: 41,
            nt: 50,
            maturity: 0.25,
        }
    }

    #[test]
    fn validation() {
        assert!(grid().validate().is_ok());
        assert!(GridSpec { x_lo: 0.1, ..grid() }.validate().is_err());
        assert!(GridSpec { ny: 7, ..grid() }.validate().is_err());
        assert!(GridSpec { y_hi: -5.0, ..grid() }.validate().is_err());
        assert!(PutContract::new(100.0, 0.25, 0).is_err());
        assert_eq!(PutContract::new(100.0, 0.25, 3).unwrap().scaled_strike(), 300.0);
    }

    #[test]
    fn refinement_nests_nodes() {
        let g = grid();
        let r = g.refined();
        assert_eq!(r.x(2 * 7), g.x(7));
        assert!((r.y(2 * 5) - g.y(5)).abs() < 1e-15);
        assert_eq!(r.dt(), g.dt() / 2.0);
    }

    #[test]
    fn locate_on_axis() {
        assert_eq!(locate_uniform(0.0, 0.5, 5, 2.0), Some((3, 1.0)));
        let (k, w) = locate_uniform(0.0, 0.5, 5, 0.75).unwrap();
        assert_eq!(k, 1);
        assert!((w - 0.5).abs() < 1e-15);
        assert!(locate_uniform(0.0, 0.5, 5, 2.1).is_none());
    }

    #[test]
    fn missing_field_is_rejected() {
        let text = r#"{"x_lo":-1,"x_hi":1,"y_lo":-1,"y_hi":1,"nx":10,"ny":10,"maturity":0.25}"#;
        assert!(serde_json::from_str::<GridSpec>(text).is_err());
    }
}
