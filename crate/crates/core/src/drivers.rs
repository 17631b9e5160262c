//! Convex drivers of dynamic risk measures and their partial conjugates.
//!
//! A driver `g(z1, z2)` weighs the risk sources of the traded asset (`z1`)
//! and of the volatility factor (`z2`). Hedging in the stock replaces `g` by
//! its Fenchel-Legendre transform in the first argument,
//!
//! ```text
//! ĝ(ζ, z2) = sup_{z1} ( ζ·z1 − g(z1, z2) )
//! ```
//!
//! which is what the pricing equations actually evaluate, always at
//! `ζ = −λ(y)` (minus the Sharpe ratio).

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A time-independent convex driver.
#[derive(Debug, Clone, PartialEq)]
pub enum DriverSpec {
    /// `γ/2 · ((z1 + η z2)² + z2²)`; `η = 0` is the entropic driver.
    DistortedEntropic { gamma: f64, eta: f64 },
    /// Samples on a rectangular grid, bilinearly interpolated.
    GenericTabulated(DriverTable),
}

/// Driver samples on a rectangular `(z1, z2)` grid, stored row-major in `z1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverTable {
    z1: Vec<f64>,
    z2: Vec<f64>,
    g: Vec<f64>,
}

/// Parameters of the distorted entropic family as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortedParams {
    pub gamma: f64,
    pub eta: f64,
}

impl DriverSpec {
    pub fn distorted_entropic(gamma: f64, eta: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Validation(format!(
                "risk aversion gamma must be positive, got {gamma}"
            )));
        }
        if !eta.is_finite() {
            return Err(Error::Validation(format!("distortion eta must be finite, got {eta}")));
        }
        Ok(DriverSpec::DistortedEntropic { gamma, eta })
    }

    pub fn entropic(gamma: f64) -> Result<Self> {
        Self::distorted_entropic(gamma, 0.0)
    }

    /// `(γ, η)` for the distorted entropic family, `None` for tables.
    pub fn distorted_params(&self) -> Option<DistortedParams> {
        match *self {
            DriverSpec::DistortedEntropic { gamma, eta } => Some(DistortedParams { gamma, eta }),
            DriverSpec::GenericTabulated(_) => None,
        }
    }

    /// Evaluates `g(z1, z2)`. Tables reject points outside their grid.
    pub fn eval(&self, z1: f64, z2: f64) -> Result<f64> {
        match self {
            DriverSpec::DistortedEntropic { gamma, eta } => {
                let s = z1 + eta * z2;
                Ok(0.5 * gamma * (s * s + z2 * z2))
            }
            DriverSpec::GenericTabulated(t) => t.eval(z1, z2),
        }
    }

    /// Range of `z1` on which the driver can be evaluated.
    fn z1_range(&self) -> (f64, f64) {
        match self {
            DriverSpec::DistortedEntropic { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DriverSpec::GenericTabulated(t) => (t.z1[0], *t.z1.last().unwrap()),
        }
    }

    /// Curvature of `g` in `z1`, used to center the conjugate search.
    fn z1_curvature(&self) -> f64 {
        match self {
            DriverSpec::DistortedEntropic { gamma, .. } => *gamma,
            DriverSpec::GenericTabulated(t) => t.mean_z1_curvature(),
        }
    }
}

impl DriverTable {
    /// Builds a table from axis nodes and samples `g[i1 * z2.len() + i2]`.
    pub fn new(z1: Vec<f64>, z2: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("z1", &z1), ("z2", &z2)] {
            if axis.len() < 2 {
                return Err(Error::Validation(format!("{name} axis needs at least two nodes")));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("{name} axis must be finite and strictly increasing")));
            }
        }
        if g.len() != z1.len() * z2.len() {
            return Err(Error::Validation(format!(
                "expected {} samples, got {}",
                z1.len() * z2.len(),
                g.len()
            )));
        }
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "driver sample at z1={}, z2={} is not finite",
                z1[k / z2.len()],
                z2[k % z2.len()]
            )));
        }
        Ok(Self { z1, z2, g })
    }

    /// Samples `f` on the tensor grid of the given axes.
    pub fn from_fn(z1: Vec<f64>, z2: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let g = z1
            .iter()
            .flat_map(|&a| z2.iter().map(move |&b| (a, b)))
            .map(|(a, b)| f(a, b))
            .collect();
        Self::new(z1, z2, g)
    }

    /// Reads a `z1,z2,g` CSV with rows in any order and infers the grid.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            z1: f64,
            z2: f64,
            g: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["z1", "z2", "g"] {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header z1,z2,g, found {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<Row>() {
            rows.push(rec?);
        }
        let axis = |pick: fn(&Row) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(pick).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            v
        };
        let z1 = axis(|r| r.z1);
        let z2 = axis(|r| r.z2);
        let mut g = vec![f64::NAN; z1.len() * z2.len()];
        let mut seen = vec![false; g.len()];
        for (k, r) in rows.iter().enumerate() {
            let i = z1.partition_point(|&v| v < r.z1);
            let j = z2.partition_point(|&v| v < r.z2);
            let idx = i * z2.len() + j;
            if seen[idx] {
                return Err(Error::Parse {
                    line: k + 2,
                    message: format!("duplicate node ({}, {})", r.z1, r.z2),
                });
            }
            seen[idx] = true;
            g[idx] = r.g;
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "grid is not rectangular: missing node ({}, {})",
                z1[idx / z2.len()],
                z2[idx % z2.len()]
            )));
        }
        Self::new(z1, z2, g)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn z1(&self) -> &[f64] {
        &self.z1
    }

    pub fn z2(&self) -> &[f64] {
        &self.z2
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.z2.len() + j]
    }

    pub fn eval(&self, z1: f64, z2: f64) -> Result<f64> {
        let (i, s) = locate(&self.z1, z1).ok_or_else(|| {
            Error::Domain(format!("z1={z1} outside table [{}, {}]", self.z1[0], self.z1.last().unwrap()))
        })?;
        let (j, t) = locate(&self.z2, z2).ok_or_else(|| {
            Error::Domain(format!("z2={z2} outside table [{}, {}]", self.z2[0], self.z2.last().unwrap()))
        })?;
        let g00 = self.at(i, j);
        let g10 = self.at(i + 1, j);
        let g01 = self.at(i, j + 1);
        let g11 = self.at(i + 1, j + 1);
        Ok((1.0 - s) * ((1.0 - t) * g00 + t * g01) + s * ((1.0 - t) * g10 + t * g11))
    }

    fn mean_z1_curvature(&self) -> f64 {
        let n1 = self.z1.len();
        if n1 < 3 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 1..n1 - 1 {
            let (h0, h1) = (self.z1[i] - self.z1[i - 1], self.z1[i + 1] - self.z1[i]);
            for j in 0..self.z2.len() {
                let d2 = 2.0
                    * ((self.at(i + 1, j) - self.at(i, j)) / h1 - (self.at(i, j) - self.at(i - 1, j)) / h0)
                    / (h0 + h1);
                sum += d2;
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// Cell index and fractional offset of `v` on a sorted axis.
pub(crate) fn locate(axis: &[f64], v: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    if !(v >= axis[0] && v <= axis[n - 1]) {
        return None;
    }
    let i = axis.partition_point(|&a| a <= v).clamp(1, n - 1) - 1;
    Some((i, (v - axis[i]) / (axis[i + 1] - axis[i])))
}

/// Settings of the numerical supremum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupSearch {
    /// Half width of the window around `ζ / ĉ`.
    pub half_width: f64,
    /// Number of nodes of the coarse scan.
    pub nodes: usize,
    /// Golden-section tolerance on `z1`.
    pub tol: f64,
}

impl Default for SupSearch {
    fn default() -> Self {
        Self {
            half_width: 10.0,
            nodes: 2001,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConjugateMode {
    ClosedForm,
    NumericSup(SupSearch),
}

/// `ĝ`, the conjugate of a driver in its first argument.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateDriver {
    source: DriverSpec,
    mode: ConjugateMode,
    curvature: f64,
}

impl ConjugateDriver {
    /// Closed form when the family has one, numerical supremum otherwise.
    pub fn new(source: DriverSpec) -> Self {
        match source {
            DriverSpec::DistortedEntropic { .. } => Self::closed_form(source).expect("distorted family"),
            DriverSpec::GenericTabulated(_) => Self::numeric(source, SupSearch::default()),
        }
    }

    pub fn closed_form(source: DriverSpec) -> Result<Self> {
        match source {
            DriverSpec::DistortedEntropic { gamma, .. } => Ok(Self {
                curvature: gamma,
                source,
                mode: ConjugateMode::ClosedForm,
            }),
            DriverSpec::GenericTabulated(_) => Err(Error::Validation(
                "closed-form conjugate exists only for the distorted entropic family".into(),
            )),
        }
    }

    pub fn numeric(source: DriverSpec, search: SupSearch) -> Self {
        Self {
            curvature: source.z1_curvature(),
            source,
            mode: ConjugateMode::NumericSup(search),
        }
    }

    pub fn source(&self) -> &DriverSpec {
        &self.source
    }

    pub fn mode(&self) -> ConjugateMode {
        self.mode
    }

    /// `ĝ(ζ, z2)`.
    pub fn eval(&self, zeta: f64, z2: f64) -> Result<f64> {
        match (self.mode, &self.source) {
            (ConjugateMode::ClosedForm, DriverSpec::DistortedEntropic { gamma, eta }) => {
                Ok(zeta * zeta / (2.0 * gamma) - 0.5 * gamma * z2 * z2 - eta * zeta * z2)
            }
            (ConjugateMode::NumericSup(search), _) => self.numeric_sup(search, zeta, z2).map(|(v, _)| v),
            (ConjugateMode::ClosedForm, DriverSpec::GenericTabulated(_)) => unreachable!(),
        }
    }

    /// Maximizer `z1*` of `ζ z1 − g(z1, z2)`.
    pub fn argmax(&self, zeta: f64, z2: f64) -> Result<f64> {
        match (self.mode, &self.source) {
            (ConjugateMode::ClosedForm, DriverSpec::DistortedEntropic { gamma, eta }) => Ok(zeta / gamma - eta * z2),
            (ConjugateMode::NumericSup(search), _) => self.numeric_sup(search, zeta, z2).map(|(_, z)| z),
            (ConjugateMode::ClosedForm, DriverSpec::GenericTabulated(_)) => unreachable!(),
        }
    }

    /// `∂ĝ/∂z2 (ζ, 0)`, the only trace of the driver in the first-order skew correction.
    pub fn slope_at_zero(&self, zeta: f64) -> Result<f64> {
        match (self.mode, &self.source) {
            (ConjugateMode::ClosedForm, DriverSpec::DistortedEntropic { eta, .. }) => Ok(-eta * zeta),
            _ => {
                let h = 1e-4;
                let d = (self.eval(zeta, h)? - self.eval(zeta, -h)?) / (2.0 * h);
                if d.is_finite() {
                    Ok(d)
                } else {
                    Err(Error::Numeric(format!("non-finite conjugate slope at zeta={zeta}")))
                }
            }
        }
    }

    fn numeric_sup(&self, search: SupSearch, zeta: f64, z2: f64) -> Result<(f64, f64)> {
        let center = if self.curvature > 1e-12 { zeta / self.curvature } else { 0.0 };
        let (tlo, thi) = self.source.z1_range();
        let lo = (center - search.half_width).max(tlo);
        let hi = (center + search.half_width).min(thi);
        if !(hi > lo) {
            return Err(Error::InconclusiveSup { zeta, z2, lo, hi });
        }
        let objective = |z1: f64| -> Result<f64> { Ok(zeta * z1 - self.source.eval(z1, z2)?) };

        let n = search.nodes.max(3);
        let h = (hi - lo) / (n - 1) as f64;
        let mut best = (0usize, f64::NEG_INFINITY);
        for k in 0..n {
            let v = objective(lo + k as f64 * h)?;
            if v > best.1 {
                best = (k, v);
            }
        }
        if best.0 == 0 || best.0 == n - 1 {
            return Err(Error::InconclusiveSup { zeta, z2, lo, hi });
        }

        // golden-section on the bracketing cells
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo + (best.0 - 1) as f64 * h, lo + (best.0 + 1) as f64 * h);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (objective(c)?, objective(d)?);
        while (b - a).abs() > search.tol {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = objective(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = objective(d)?;
            }
        }
        let z = 0.5 * (a + b);
        let v = objective(z)?;
        let node_z = lo + best.0 as f64 * h;
        Ok(if v >= best.1 { (v, z) } else { (best.1, node_z) })
    }
}

/// Rectangle and resolution on which admissibility is probed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub z1: (f64, f64),
    pub z2: (f64, f64),
    pub n1: usize,
    pub n2: usize,
}

impl Lattice {
    pub fn square(half_width: f64, n: usize) -> Self {
        Self {
            z1: (-half_width, half_width),
            z2: (-half_width, half_width),
            n1: n,
            n2: n,
        }
    }

    fn nodes(range: (f64, f64), n: usize) -> Vec<f64> {
        let n = n.max(2);
        (0..n).map(|k| range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64).collect()
    }
}

/// Outcome of the lattice tests for one function of `(z1, z2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticChecks {
    /// Every lattice value is finite (a proper function on the lattice).
    pub finite: bool,
    pub normalized: bool,
    /// Second differences in the first argument are nonnegative.
    pub convex: bool,
    /// Second differences in the first argument are bounded away from zero.
    pub strictly_convex: bool,
    pub min_curvature: f64,
    /// Smallest `c1` with `c1 (z1²/(4 c1²) − (1 + z2²)) ≤ g` on the lattice.
    pub c1: Option<f64>,
    /// Smallest `c2` with `g ≤ c2 (1 + z1² + z2²)` on the lattice.
    pub c2: Option<f64>,
    /// The lower quadratic bound holds with a constant that does not grow with the lattice.
    pub lower_bound: bool,
    pub upper_bound: bool,
}

impl QuadraticChecks {
    pub fn passes(&self) -> bool {
        self.finite && self.normalized && self.convex && self.strictly_convex && self.lower_bound && self.upper_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub driver: QuadraticChecks,
    pub conjugate: QuadraticChecks,
    /// The conjugate is again strictly quadratic.
    pub conjugate_invariant: bool,
}

impl AdmissibilityReport {
    pub fn passes(&self) -> bool {
        self.driver.passes() && self.conjugate_invariant
    }
}

/// Tests the strictly-quadratic conditions on a lattice, for the driver and
/// for its conjugate. Failures are reported, never returned as errors.
///
/// The quadratic bounds are judged by comparing the constants found on the
/// whole lattice with those on its central half, so the lattice must reach
/// well past |z| = 1 (half width 3 or more) for the comparison to mean anything.
pub fn check_strictly_quadratic(d: &DriverSpec, lattice: &Lattice) -> AdmissibilityReport {
    let z1 = Lattice::nodes(lattice.z1, lattice.n1);
    let z2 = Lattice::nodes(lattice.z2, lattice.n2);
    let eval = |a: f64, b: f64| d.eval(a, b).unwrap_or(f64::NAN);
    let driver = probe(&z1, &z2, d.eval(0.0, 0.0).unwrap_or(f64::NAN), eval);

    let conj = ConjugateDriver::new(d.clone());
    let ceval = |a: f64, b: f64| match conj.eval(a, b) {
        Ok(v) => v,
        Err(Error::InconclusiveSup { .. }) => f64::INFINITY,
        Err(_) => f64::NAN,
    };
    let conjugate = probe(&z1, &z2, ceval(0.0, 0.0), ceval);
    let conjugate_invariant = conjugate.passes();
    AdmissibilityReport {
        driver,
        conjugate,
        conjugate_invariant,
    }
}

const CURVATURE_FLOOR: f64 = 1e-8;
// Doubling the lattice extent multiplies the required bound constant by
// about 2 when the function grows only linearly in z1.
const BOUND_GROWTH_LIMIT: f64 = 1.5;

fn probe(z1: &[f64], z2: &[f64], at_origin: f64, f: impl Fn(f64, f64) -> f64) -> QuadraticChecks {
    let vals: Vec<Vec<f64>> = z1.iter().map(|&a| z2.iter().map(|&b| f(a, b)).collect()).collect();
    let finite = vals.iter().flatten().all(|v| v.is_finite());
    let normalized = at_origin.abs() <= 1e-10;

    let mut min_curv = f64::INFINITY;
    for i in 1..z1.len().saturating_sub(1) {
        let (h0, h1) = (z1[i] - z1[i - 1], z1[i + 1] - z1[i]);
        for j in 0..z2.len() {
            let (gm, g0, gp) = (vals[i - 1][j], vals[i][j], vals[i + 1][j]);
            if gm.is_finite() && g0.is_finite() && gp.is_finite() {
                let d2 = 2.0 * ((gp - g0) / h1 - (g0 - gm) / h0) / (h0 + h1);
                min_curv = min_curv.min(d2);
            }
        }
    }
    let convex = finite && min_curv >= -CURVATURE_FLOOR;
    let strictly_convex = finite && min_curv > CURVATURE_FLOOR;

    let extent = z1
        .iter()
        .map(|v| v.abs())
        .chain(z2.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let constants = |limit: f64| -> (f64, f64) {
        let mut c1 = 0.0f64;
        let mut c2 = 0.0f64;
        for (i, &a) in z1.iter().enumerate() {
            for (j, &b) in z2.iter().enumerate() {
                if a.abs() > limit || b.abs() > limit {
                    continue;
                }
                let g = vals[i][j];
                let w = 1.0 + b * b;
                // root of w c² + g c − a²/4 = 0
                c1 = c1.max((-g + (g * g + w * a * a).sqrt()) / (2.0 * w));
                c2 = c2.max(g / (1.0 + a * a + b * b));
            }
        }
        (c1, c2)
    };
    let (c1_full, c2_full) = constants(extent);
    let (c1_half, c2_half) = constants(0.5 * extent);
    let bounded = |full: f64, half: f64| {
        full.is_finite() && (full <= BOUND_GROWTH_LIMIT * half || full <= f64::EPSILON)
    };
    let lower_bound = finite && c1_full > 0.0 && bounded(c1_full, c1_half);
    let upper_bound = finite && bounded(c2_full.max(0.0), c2_half.max(0.0));

    QuadraticChecks {
        finite,
        normalized,
        convex,
        strictly_convex,
        min_curvature: min_curv,
        c1: (finite && c1_full > 0.0).then_some(c1_full),
        c2: finite.then_some(c2_full.max(f64::EPSILON)),
        lower_bound,
        upper_bound,
    }
}
