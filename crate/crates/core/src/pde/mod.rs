//! Finite-difference indifference pricing in `(τ, x, y)` with `x = log(S/K)`.

mod banded;
mod export;
mod grid;
mod merton;
mod query;
mod solver;

pub use banded::{BandedLu, BandedMatrix};
pub use export::{write_curve_csv, write_solution_csv};
pub use grid::{GridSpec, PutContract, MIN_NODES};
pub use merton::{merton_component_closed, MertonComponent};
pub use query::{CurvePoint, VolCurve};
pub use solver::{solve_value, solve_value_with, SolverOptions, TimeScheme};

use crate::drivers::DriverSpec;

/// Value functions on the grid, per unit of aggregate strike `nK`.
///
/// `u` is stored as `[nt + 1][nx][ny]` and `ũ` as `[nt + 1][ny]`.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    grid: GridSpec,
    contract: PutContract,
    model_name: String,
    driver: DriverSpec,
    sigma_bounds: (f64, f64),
    u: Vec<f64>,
    u_tilde: Vec<f64>,
}

impl PdeSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn contract(&self) -> &PutContract {
        &self.contract
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn driver(&self) -> &DriverSpec {
        &self.driver
    }

    /// Declared volatility bounds of the model that produced the solution.
    pub fn sigma_bounds(&self) -> (f64, f64) {
        self.sigma_bounds
    }

    pub fn u(&self, n: usize, i: usize, j: usize) -> f64 {
        self.u[(n * self.grid.nx + i) * self.grid.ny + j]
    }

    pub fn u_tilde(&self, n: usize, j: usize) -> f64 {
        self.u_tilde[n * self.grid.ny + j]
    }

    /// `ũ − u` at a node, the price per unit strike.
    pub fn unit_price_node(&self, n: usize, i: usize, j: usize) -> f64 {
        self.u_tilde(n, j) - self.u(n, i, j)
    }

    /// Raw `u` layer at step `n`, row-major in `(x, y)`.
    pub fn u_layer(&self, n: usize) -> &[f64] {
        let layer = self.grid.nx * self.grid.ny;
        &self.u[n * layer..(n + 1) * layer]
    }

    pub fn u_tilde_layer(&self, n: usize) -> &[f64] {
        &self.u_tilde[n * self.grid.ny..(n + 1) * self.grid.ny]
    }
}
