//! IMEX time marching for the option-holder value `u` and the Merton
//! component `ũ`, both per unit of the aggregate strike `K̃ = nK`:
//!
//! ```text
//! u_τ = L u − S(u_y),   L = σ²/2 (∂xx − ∂x) + ρσa ∂xy + a²/2 ∂yy + (m − ρaλ) ∂y
//! S(z) = ĝ(−λ, ρ' K̃ a z) / K̃
//! ```
//!
//! `u(0) = −(1 − eˣ)⁺`, `ũ(0) = 0`. Linear terms are implicit (one banded
//! factorization per scheme, reused every step); `S` is explicit.

use serde::{Deserialize, Serialize};

use super::banded::{BandedLu, BandedMatrix};
use super::grid::{GridSpec, PutContract};
use super::PdeSolution;
use crate::drivers::{ConjugateDriver, DriverSpec};
use crate::error::{Error, Result};
use crate::models::SvModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    BackwardEuler,
    /// Second-order backward differences, started by one backward-Euler step.
    Bdf2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub scheme: TimeScheme,
    /// Re-evaluate the source at the predicted new level and solve again.
    pub corrector: bool,
    /// Adds `μ(y) ∂x` to the generator (unhedged variant, for comparison only).
    pub stock_drift_in_generator: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scheme: TimeScheme::Bdf2,
            corrector: true,
            stock_drift_in_generator: false,
        }
    }
}

const GROWTH_LIMIT: f64 = 10.0;
const GROWTH_FLOOR: f64 = 1e-9;

pub fn solve_value(model: &SvModel, driver: &DriverSpec, contract: &PutContract, grid: &GridSpec) -> Result<PdeSolution> {
    solve_value_with(model, driver, contract, grid, SolverOptions::default())
}

pub fn solve_value_with(
    model: &SvModel,
    driver: &DriverSpec,
    contract: &PutContract,
    grid: &GridSpec,
    options: SolverOptions,
) -> Result<PdeSolution> {
    check_inputs(model, contract, grid)?;
    let ops = Operators::new(model, grid, options)?;
    let source = Source::new(model, driver, contract, grid)?;
    let (nx, ny, nt) = (grid.nx, grid.ny, grid.nt);
    let dt = grid.dt();
    let layer = nx * ny;
    let interior = (nx - 2) * ny;

    let mut u = vec![0.0; (nt + 1) * layer];
    let mut ut = vec![0.0; (nt + 1) * ny];
    let ex_lo = grid.x_lo.exp();
    for i in 0..nx {
        let v = -(1.0 - grid.x(i).exp()).max(0.0);
        u[i * ny..(i + 1) * ny].fill(v);
    }

    let be = Factors::new(&ops, 1.0, dt)?;
    let bdf = match options.scheme {
        TimeScheme::Bdf2 => Some(Factors::new(&ops, 1.5, dt)?),
        TimeScheme::BackwardEuler => None,
    };

    let mut prev_increment = f64::NAN;
    let mut rhs = vec![0.0; interior];
    let mut rhs1 = vec![0.0; ny];
    let mut pred = vec![0.0; layer];
    let mut pred1 = vec![0.0; ny];
    let mut src = vec![0.0; interior];
    let mut src1 = vec![0.0; ny];

    for n in 0..nt {
        let second_order = bdf.is_some() && n > 0;
        let f = if second_order { bdf.as_ref().unwrap() } else { &be };
        let (done, rest) = u.split_at_mut((n + 1) * layer);
        let (done_t, rest_t) = ut.split_at_mut((n + 1) * ny);
        let cur = &done[n * layer..];
        let cur_t = &done_t[n * ny..];
        let old = if second_order { Some(&done[(n - 1) * layer..n * layer]) } else { None };
        let old_t = if second_order { Some(&done_t[(n - 1) * ny..n * ny]) } else { None };
        let next = &mut rest[..layer];
        let next_t = &mut rest_t[..ny];

        // Merton component.
        extrapolate(cur_t, old_t, &mut pred1);
        for pass in 0..=usize::from(options.corrector) {
            let probe: &[f64] = if pass == 0 { &pred1 } else { &*next_t };
            source.eval_row(probe, &mut src1)?;
            for j in 0..ny {
                rhs1[j] = history(cur_t[j], old_t.map(|o| o[j])) - dt * src1[j];
            }
            f.merton.solve_in_place(&mut rhs1);
            next_t.copy_from_slice(&rhs1);
        }

        // Option holder.
        for j in 0..ny {
            next[j] = ex_lo - 1.0 + next_t[j];
            next[(nx - 1) * ny + j] = next_t[j];
        }
        extrapolate(cur, old, &mut pred);
        for pass in 0..=usize::from(options.corrector) {
            let probe: &[f64] = if pass == 0 { &pred } else { &*next };
            source.eval_layer(probe, nx, &mut src)?;
            for r in 0..interior {
                let k = ny + r;
                rhs[r] = history(cur[k], old.map(|o| o[k])) - dt * src[r];
            }
            ops.add_boundary(next, dt, &mut rhs);
            f.value.solve_in_place(&mut rhs);
            next[ny..ny + interior].copy_from_slice(&rhs);
        }

        let mut increment = 0.0f64;
        for k in ny..ny + interior {
            let d = (next[k] - cur[k]).abs();
            if !d.is_finite() {
                return Err(Error::Instability {
                    step: n + 1,
                    growth: f64::INFINITY,
                });
            }
            increment = increment.max(d);
        }
        if next_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability {
                step: n + 1,
                growth: f64::INFINITY,
            });
        }
        if n > 1 && increment > GROWTH_FLOOR && increment > GROWTH_LIMIT * prev_increment {
            return Err(Error::Instability {
                step: n + 1,
                growth: increment / prev_increment,
            });
        }
        prev_increment = increment;
    }

    Ok(PdeSolution {
        grid: *grid,
        contract: *contract,
        model_name: model.name().to_string(),
        driver: driver.clone(),
        sigma_bounds: (model.sigma_low(), model.sigma_high()),
        u,
        u_tilde: ut,
    })
}

fn check_inputs(model: &SvModel, contract: &PutContract, grid: &GridSpec) -> Result<()> {
    grid.validate()?;
    contract.validate()?;
    if (grid.maturity - contract.maturity).abs() > 1e-12 * contract.maturity {
        return Err(Error::Validation(format!(
            "grid maturity {} differs from contract maturity {}",
            grid.maturity, contract.maturity
        )));
    }
    if model.asymptotics_only() {
        return Err(Error::Validation(format!(
            "model {} is asymptotics-only and cannot be priced by the PDE solver",
            model.name()
        )));
    }
    let report = model.validate_assumptions((grid.y_lo, grid.y_hi), (4 * grid.ny).max(200));
    if !report.passes() {
        return Err(Error::Validation(format!(
            "model {} violates the coefficient assumptions on [{}, {}]: {report:?}",
            model.name(),
            grid.y_lo,
            grid.y_hi
        )));
    }
    Ok(())
}

/// Predictor for the explicit source: the current level for the first step,
/// linear extrapolation afterwards.
fn extrapolate(cur: &[f64], old: Option<&[f64]>, out: &mut [f64]) {
    match old {
        Some(o) => {
            for ((p, c), o) in out.iter_mut().zip(cur).zip(o) {
                *p = 2.0 * c - o;
            }
        }
        None => out.copy_from_slice(cur),
    }
}

#[inline]
fn history(cur: f64, old: Option<f64>) -> f64 {
    match old {
        Some(o) => 2.0 * cur - 0.5 * o,
        None => cur,
    }
}

/// Nine-point stencils of `L` per y-row, with the Neumann ghost folded in.
/// `w[di][dj]` multiplies `u[i + di − 1][j + dj − 1]`.
pub(crate) struct Operators {
    nx: usize,
    ny: usize,
    stencil: Vec<[[f64; 3]; 3]>,
    merton: Vec<[f64; 3]>,
}

impl Operators {
    pub(crate) fn new(model: &SvModel, grid: &GridSpec, options: SolverOptions) -> Result<Self> {
        let (dx, dy) = (grid.dx(), grid.dy());
        let rho = model.rho();
        let ny = grid.ny;
        let mut stencil = Vec::with_capacity(ny);
        let mut merton = Vec::with_capacity(ny);
        for j in 0..ny {
            let y = grid.y(j);
            let (s, a) = (model.sigma(y), model.a(y));
            let lam = model.sharpe(y)?;
            let drift_x = if options.stock_drift_in_generator { model.mu(y) } else { 0.0 };
            let cxx = 0.5 * s * s / (dx * dx);
            let cx = (drift_x - 0.5 * s * s) / (2.0 * dx);
            let cyy = 0.5 * a * a / (dy * dy);
            let cy = (model.m(y) - rho * a * lam) / (2.0 * dy);
            let cxy = rho * s * a / (4.0 * dx * dy);
            let mut w = [
                [cxy, cxx - cx, -cxy],
                [cyy - cy, -2.0 * (cxx + cyy), cyy + cy],
                [-cxy, cxx + cx, cxy],
            ];
            let mut v = [cyy - cy, -2.0 * cyy, cyy + cy];
            fold_ghost(j, ny, &mut w, &mut v);
            if !w.iter().flatten().all(|c| c.is_finite()) {
                return Err(Error::Numeric(format!("non-finite generator coefficient at y={y}")));
            }
            stencil.push(w);
            merton.push(v);
        }
        Ok(Self {
            nx: grid.nx,
            ny,
            stencil,
            merton,
        })
    }

    /// `α I − dt L` on the interior rows.
    fn value_matrix(&self, alpha: f64, dt: f64) -> BandedMatrix {
        let (nx, ny) = (self.nx, self.ny);
        let mut m = BandedMatrix::zeros((nx - 2) * ny, ny + 1);
        for i in 1..nx - 1 {
            for j in 0..ny {
                let r = (i - 1) * ny + j;
                m.add(r, r, alpha);
                let w = &self.stencil[j];
                for (di, row) in w.iter().enumerate() {
                    let ii = i + di - 1;
                    if ii == 0 || ii == nx - 1 {
                        continue;
                    }
                    for (dj, &c) in row.iter().enumerate() {
                        if c != 0.0 {
                            let jj = j + dj - 1;
                            m.add(r, (ii - 1) * ny + jj, -dt * c);
                        }
                    }
                }
            }
        }
        m
    }

    fn merton_matrix(&self, alpha: f64, dt: f64) -> BandedMatrix {
        let ny = self.ny;
        let mut m = BandedMatrix::zeros(ny, 1);
        for j in 0..ny {
            m.add(j, j, alpha);
            for (dj, &c) in self.merton[j].iter().enumerate() {
                if c != 0.0 {
                    m.add(j, j + dj - 1, -dt * c);
                }
            }
        }
        m
    }

    /// Adds `dt ×` the Dirichlet-row contributions of `level` to `rhs`.
    fn add_boundary(&self, level: &[f64], dt: f64, rhs: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for (i, edge_di, edge) in [(1, 0, 0), (nx - 2, 2, nx - 1)] {
            for j in 0..ny {
                let w = &self.stencil[j];
                let mut s = 0.0;
                for (dj, &c) in w[edge_di].iter().enumerate() {
                    if c != 0.0 {
                        s += c * level[edge * ny + j + dj - 1];
                    }
                }
                rhs[(i - 1) * ny + j] += dt * s;
            }
        }
    }
}

/// Reflects the ghost row `j = −1` (or `j = ny`) onto its mirror image.
fn fold_ghost(j: usize, ny: usize, w: &mut [[f64; 3]; 3], v: &mut [f64; 3]) {
    let (ghost, mirror) = if j == 0 {
        (0, 2)
    } else if j == ny - 1 {
        (2, 0)
    } else {
        return;
    };
    for row in w.iter_mut() {
        row[mirror] += row[ghost];
        row[ghost] = 0.0;
    }
    v[mirror] += v[ghost];
    v[ghost] = 0.0;
}

struct Factors {
    value: BandedLu,
    merton: BandedLu,
}

impl Factors {
    fn new(ops: &Operators, alpha: f64, dt: f64) -> Result<Self> {
        Ok(Self {
            value: ops.value_matrix(alpha, dt).factor()?,
            merton: ops.merton_matrix(alpha, dt).factor()?,
        })
    }
}

/// Explicit source `S_j(z)` evaluated at `z = u_y`.
struct Source {
    ny: usize,
    dy: f64,
    kind: SourceKind,
    lam: Vec<f64>,
    /// `ρ' K̃ a(y_j)`
    scale: Vec<f64>,
    k_tilde: f64,
}

enum SourceKind {
    Distorted { gamma: f64, eta: f64 },
    Conjugate(ConjugateDriver),
}

impl Source {
    fn new(model: &SvModel, driver: &DriverSpec, contract: &PutContract, grid: &GridSpec) -> Result<Self> {
        let k_tilde = contract.scaled_strike();
        let ys = grid.ys();
        let lam = ys.iter().map(|&y| model.sharpe(y)).collect::<Result<Vec<_>>>()?;
        let scale = ys.iter().map(|&y| model.rho_prime() * k_tilde * model.a(y)).collect();
        let kind = match driver.distorted_params() {
            Some(p) => SourceKind::Distorted {
                gamma: p.gamma,
                eta: p.eta,
            },
            None => SourceKind::Conjugate(ConjugateDriver::new(driver.clone())),
        };
        Ok(Self {
            ny: grid.ny,
            dy: grid.dy(),
            kind,
            lam,
            scale,
            k_tilde,
        })
    }

    #[inline]
    fn at(&self, j: usize, z: f64) -> Result<f64> {
        let zeta = -self.lam[j];
        let z2 = self.scale[j] * z;
        let g = match &self.kind {
            SourceKind::Distorted { gamma, eta } => zeta * zeta / (2.0 * gamma) - 0.5 * gamma * z2 * z2 - eta * zeta * z2,
            SourceKind::Conjugate(c) => c.eval(zeta, z2)?,
        };
        Ok(g / self.k_tilde)
    }

    fn eval_row(&self, row: &[f64], out: &mut [f64]) -> Result<()> {
        let ny = self.ny;
        let inv = 0.5 / self.dy;
        out[0] = self.at(0, 0.0)?;
        out[ny - 1] = self.at(ny - 1, 0.0)?;
        for j in 1..ny - 1 {
            out[j] = self.at(j, (row[j + 1] - row[j - 1]) * inv)?;
        }
        Ok(())
    }

    /// Source on the interior rows of a full level.
    fn eval_layer(&self, level: &[f64], nx: usize, out: &mut [f64]) -> Result<()> {
        let ny = self.ny;
        for i in 1..nx - 1 {
            self.eval_row(&level[i * ny..(i + 1) * ny], &mut out[(i - 1) * ny..i * ny])?;
        }
        Ok(())
    }
}
