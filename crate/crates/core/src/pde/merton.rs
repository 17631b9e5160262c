//! Linear problem for the Merton component. With `f = exp(−γρ'² φ₀)`:
//!
//! ```text
//! f_τ = a²/2 f_yy + (m − (ρ + ηρ')aλ) f_y − ½ λ²ρ'² f,   f(0) = 1
//! ```

use super::banded::BandedMatrix;
use super::grid::{locate_uniform, GridSpec};
use crate::error::{Error, Result};
use crate::models::SvModel;

#[derive(Debug, Clone)]
pub struct MertonComponent {
    grid: GridSpec,
    gamma: f64,
    rho_prime: f64,
    f: Vec<f64>,
}

impl MertonComponent {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn f(&self, n: usize, j: usize) -> f64 {
        self.f[n * self.grid.ny + j]
    }

    /// `φ₀ = −log f / (γ ρ'²)`, in currency units.
    pub fn phi0(&self, n: usize, j: usize) -> f64 {
        -self.f(n, j).ln() / (self.gamma * self.rho_prime * self.rho_prime)
    }

    /// `φ₀` as `[nt + 1][ny]`.
    pub fn phi0_table(&self) -> Vec<Vec<f64>> {
        (0..=self.grid.nt)
            .map(|n| (0..self.grid.ny).map(|j| self.phi0(n, j)).collect())
            .collect()
    }

    /// `∂y log f` at `(τ, y)`; `y` is clamped to the grid, where the
    /// Neumann condition makes the derivative vanish.
    pub fn log_f_y(&self, tau: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        let (n, wt) = locate_uniform(0.0, g.dt(), g.nt + 1, tau)
            .ok_or_else(|| Error::Domain(format!("tau={tau} outside [0, {}]", g.maturity)))?;
        let (j, wy) = locate_uniform(g.y_lo, g.dy(), g.ny, y.clamp(g.y_lo, g.y_hi)).expect("clamped");
        let d = |n: usize, j: usize| -> f64 {
            if j == 0 || j == g.ny - 1 {
                0.0
            } else {
                (self.f(n, j + 1).ln() - self.f(n, j - 1).ln()) / (2.0 * g.dy())
            }
        };
        let at = |n| (1.0 - wy) * d(n, j) + wy * d(n, j + 1);
        Ok(if wt == 0.0 { at(n) } else { (1.0 - wt) * at(n) + wt * at(n + 1) })
    }
}

/// Solves for `f` with the same grid and time scheme as the value solver
/// (backward-Euler start, then second-order backward differences).
pub fn merton_component_closed(model: &SvModel, gamma: f64, eta: f64, grid: &GridSpec) -> Result<MertonComponent> {
    grid.validate()?;
    if !(gamma > 0.0) || !eta.is_finite() {
        return Err(Error::Validation(format!("need gamma > 0 and finite eta, got {gamma}, {eta}")));
    }
    let (ny, nt) = (grid.ny, grid.nt);
    let (dy, dt) = (grid.dy(), grid.dt());
    let (rho, rho_p) = (model.rho(), model.rho_prime());

    let mut stencil = Vec::with_capacity(ny);
    for j in 0..ny {
        let y = grid.y(j);
        let a = model.a(y);
        let lam = model.sharpe(y)?;
        let cyy = 0.5 * a * a / (dy * dy);
        let cy = (model.m(y) - (rho + eta * rho_p) * a * lam) / (2.0 * dy);
        let kill = 0.5 * lam * lam * rho_p * rho_p;
        let mut v = [cyy - cy, -2.0 * cyy - kill, cyy + cy];
        if j == 0 {
            v[2] += v[0];
            v[0] = 0.0;
        } else if j == ny - 1 {
            v[0] += v[2];
            v[2] = 0.0;
        }
        stencil.push(v);
    }
    let factor = |alpha: f64| {
        let mut m = BandedMatrix::zeros(ny, 1);
        for (j, v) in stencil.iter().enumerate() {
            m.add(j, j, alpha);
            for (dj, &c) in v.iter().enumerate() {
                if c != 0.0 {
                    m.add(j, j + dj - 1, -dt * c);
                }
            }
        }
        m.factor()
    };
    let be = factor(1.0)?;
    let bdf = factor(1.5)?;

    let mut f = vec![1.0; (nt + 1) * ny];
    for n in 0..nt {
        let mut rhs: Vec<f64> = if n == 0 {
            f[..ny].to_vec()
        } else {
            (0..ny).map(|j| 2.0 * f[n * ny + j] - 0.5 * f[(n - 1) * ny + j]).collect()
        };
        if n == 0 { &be } else { &bdf }.solve_in_place(&mut rhs);
        if let Some(j) = rhs.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Numeric(format!(
                "Merton transform lost positivity at step {}, y={}",
                n + 1,
                grid.y(j)
            )));
        }
        f[(n + 1) * ny..(n + 2) * ny].copy_from_slice(&rhs);
    }
    Ok(MertonComponent {
        grid: *grid,
        gamma,
        rho_prime: rho_p,
        f,
    })
}
