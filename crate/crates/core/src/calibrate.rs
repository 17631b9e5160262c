//! Two-stage fit of the Hull-White short-maturity smile to one maturity.
//!
//! Stage 1 fits `(κ, y)` of the undistorted expansion `I_M` on
//! `split_x <= x <= 0`; stage 2 regresses the remaining residuals on
//! `τx³ / (2ψ³)` for the coefficient `μη`.

use std::io::Read;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{i0, i1, psi};
use crate::error::{Error, Result};

pub const DEFAULT_SPLIT_X: f64 = -0.06;
pub const KAPPA_MAX: f64 = 50.0;
pub const Y_MAX: f64 = 2.0;
const KAPPA_STARTS: [f64; 3] = [1.0, 5.0, 10.0];
const MAX_ITERS: u64 = 4000;
const SD_TOLERANCE: f64 = 1e-24;
/// Relative distance to a box edge counted as hitting it.
const EDGE_TOL: f64 = 1e-6;
/// Reciprocal condition number of the Gauss-Newton matrix below which
/// `(κ, y)` is reported as not identifiable.
const IDENTIFIABILITY_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketQuote {
    pub tau: f64,
    #[serde(rename = "log_moneyness")]
    pub x: f64,
    #[serde(rename = "implied_vol")]
    pub vol: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl MarketQuote {
    pub fn new(tau: f64, x: f64, vol: f64) -> Self {
        Self { tau, x, vol, weight: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.vol > 0.0) || !(self.weight >= 0.0) || !self.x.is_finite() {
            return Err(Error::Validation(format!(
                "quote needs tau > 0, vol > 0, weight >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Reads `tau,log_moneyness,implied_vol[,weight]`.
pub fn read_quotes_csv<R: Read>(reader: R) -> Result<Vec<MarketQuote>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let q: MarketQuote = row?;
        let line = out.len() + 2;
        q.validate().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

/// `I_M(κ, y; τ, x)`, the expansion with `η = 0`.
pub fn model_vol_im(kappa: f64, y: f64, tau: f64, x: f64) -> f64 {
    let base = i0(kappa, x, y);
    if tau == 0.0 {
        return base;
    }
    base * (1.0 + tau * i1(kappa, 0.0, 0.0, x, y))
}

/// Stage-2 regressor `τx³ / (2ψ³)`.
pub fn wing_regressor(kappa: f64, y: f64, tau: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let p = psi(kappa, x, y);
    tau * x * x * x / (2.0 * p * p * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stage1Fit {
    pub kappa: f64,
    pub y: f64,
    pub rmse: f64,
    pub n_used: usize,
    /// The optimum sits on the edge of the search box.
    pub boundary_hit: bool,
    /// The quotes cannot separate `κ` from `y`.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stage2Fit {
    pub mu_eta: f64,
    pub rmse: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub kappa_hat: f64,
    pub y_hat: f64,
    pub mu_eta_hat: f64,
    pub split_x: f64,
    pub tau: f64,
    pub rmse_stage1: f64,
    pub rmse_stage2: f64,
    pub n_quotes_stage1: usize,
    pub n_quotes_stage2: usize,
    pub n_ignored_positive: usize,
    pub boundary_hit: bool,
    pub degenerate: bool,
}

impl CalibrationResult {
    pub fn fitted_vol(&self, x: f64) -> f64 {
        model_vol_im(self.kappa_hat, self.y_hat, self.tau, x)
            + self.mu_eta_hat * wing_regressor(self.kappa_hat, self.y_hat, self.tau, x)
    }
}

fn common_tau(quotes: &[MarketQuote]) -> Result<f64> {
    let tau = quotes
        .first()
        .ok_or_else(|| Error::InsufficientData("no quotes".into()))?
        .tau;
    for q in quotes {
        q.validate()?;
        if (q.tau - tau).abs() > 1e-12 * tau {
            return Err(Error::Validation(format!(
                "calibration needs a single maturity, found tau={tau} and tau={}",
                q.tau
            )));
        }
    }
    Ok(tau)
}

struct Stage1Cost<'a> {
    quotes: &'a [MarketQuote],
    total_weight: f64,
}

impl Stage1Cost<'_> {
    fn mse(&self, kappa: f64, y: f64) -> f64 {
        if !(kappa > 0.0 && kappa <= KAPPA_MAX && y > 0.0 && y <= Y_MAX) {
            return f64::INFINITY;
        }
        let s: f64 = self
            .quotes
            .iter()
            .map(|q| q.weight * (model_vol_im(kappa, y, q.tau, q.x) - q.vol).powi(2))
            .sum();
        s / self.total_weight
    }
}

impl CostFunction for Stage1Cost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.mse(p[0], p[1]))
    }
}

/// Weighted least squares for `(κ, y)` over quotes with `x_range.0 <= x <= x_range.1`.
pub fn fit_stage1(quotes: &[MarketQuote], x_range: (f64, f64)) -> Result<Stage1Fit> {
    let used: Vec<MarketQuote> = quotes
        .iter()
        .copied()
        .filter(|q| q.x >= x_range.0 && q.x <= x_range.1)
        .collect();
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "stage 1 needs at least 3 quotes with log-moneyness in [{}, {}], found {}",
            x_range.0,
            x_range.1,
            used.len()
        )));
    }
    common_tau(&used)?;
    let total_weight: f64 = used.iter().map(|q| q.weight).sum();
    if !(total_weight > 0.0) {
        return Err(Error::InsufficientData("stage-1 quotes carry no weight".into()));
    }
    let atm = used
        .iter()
        .min_by(|a, b| a.x.abs().total_cmp(&b.x.abs()))
        .expect("nonempty")
        .vol
        .min(Y_MAX);

    let legs: Vec<Result<(f64, f64, f64)>> = KAPPA_STARTS
        .par_iter()
        .map(|&k0| {
            let cost = Stage1Cost {
                quotes: &used,
                total_weight,
            };
            let simplex = vec![vec![k0, atm], vec![k0 * 1.25, atm], vec![k0, atm * 0.9]];
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(SD_TOLERANCE)
                .map_err(|e| Error::Numeric(e.to_string()))?;
            let res = Executor::new(cost, solver)
                .configure(|s| s.max_iters(MAX_ITERS))
                .run()
                .map_err(|e| Error::Numeric(format!("stage-1 optimizer: {e}")))?;
            let best = res.state().get_best_param().cloned().unwrap_or_else(|| vec![k0, atm]);
            Ok((best[0], best[1], res.state().get_best_cost()))
        })
        .collect();
    let mut winner: Option<(f64, f64, f64)> = None;
    for leg in legs {
        let leg = leg?;
        // Strict comparison keeps the earliest start on ties.
        if winner.map_or(true, |w| leg.2 < w.2) {
            winner = Some(leg);
        }
    }
    let (kappa, y, mse) = winner.expect("three starts");
    if !mse.is_finite() {
        return Err(Error::Numeric("stage-1 optimizer found no finite objective".into()));
    }
    let near = |v: f64, edge: f64| (v - edge).abs() <= EDGE_TOL * edge.max(1.0);
    let boundary_hit = near(kappa, KAPPA_MAX) || near(y, Y_MAX) || kappa <= EDGE_TOL || y <= EDGE_TOL;
    Ok(Stage1Fit {
        kappa,
        y,
        rmse: mse.sqrt(),
        n_used: used.len(),
        boundary_hit,
        degenerate: !identifiable(&used, kappa, y),
    })
}

/// Checks the conditioning of `JᵀWJ` for the residual Jacobian in `(κ, y)`.
fn identifiable(quotes: &[MarketQuote], kappa: f64, y: f64) -> bool {
    let (hk, hy) = (1e-6 * kappa.max(1e-3), 1e-6 * y.max(1e-3));
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for q in quotes {
        let dk = (model_vol_im(kappa + hk, y, q.tau, q.x) - model_vol_im(kappa - hk, y, q.tau, q.x)) / (2.0 * hk);
        let dy = (model_vol_im(kappa, y + hy, q.tau, q.x) - model_vol_im(kappa, y - hy, q.tau, q.x)) / (2.0 * hy);
        // Scale columns so the test does not depend on parameter units.
        let (dk, dy) = (dk * kappa, dy * y);
        a += q.weight * dk * dk;
        b += q.weight * dk * dy;
        c += q.weight * dy * dy;
    }
    let tr = a + c;
    let disc = ((a - c).powi(2) + 4.0 * b * b).sqrt();
    let (big, small) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    big > 0.0 && small > IDENTIFIABILITY_RCOND * big
}

/// Closed-form weighted regression of the stage-1 residuals on the wing
/// regressor over quotes with `x < x_max`.
pub fn fit_stage2(quotes: &[MarketQuote], kappa_hat: f64, y_hat: f64, x_max: f64) -> Result<Stage2Fit> {
    let used: Vec<&MarketQuote> = quotes.iter().filter(|q| q.x < x_max).collect();
    if used.is_empty() {
        return Err(Error::InsufficientData(format!("stage 2 needs a quote with log-moneyness below {x_max}")));
    }
    let (mut rg, mut gg, mut w) = (0.0, 0.0, 0.0);
    let mut pairs = Vec::with_capacity(used.len());
    for q in &used {
        q.validate()?;
        let r = q.vol - model_vol_im(kappa_hat, y_hat, q.tau, q.x);
        let g = wing_regressor(kappa_hat, y_hat, q.tau, q.x);
        rg += q.weight * r * g;
        gg += q.weight * g * g;
        w += q.weight;
        pairs.push((q.weight, r, g));
    }
    if !(gg > 0.0) {
        return Err(Error::Unidentifiable("every stage-2 regressor is zero".into()));
    }
    let mu_eta = rg / gg;
    let sse: f64 = pairs.iter().map(|(w, r, g)| w * (r - mu_eta * g).powi(2)).sum();
    Ok(Stage2Fit {
        mu_eta,
        rmse: (sse / w).sqrt(),
        n_used: used.len(),
    })
}

pub fn calibrate(quotes: &[MarketQuote], split_x: f64) -> Result<CalibrationResult> {
    if !(split_x < 0.0) {
        return Err(Error::Validation(format!("split must be negative, got {split_x}")));
    }
    let tau = common_tau(quotes)?;
    let ignored = quotes.iter().filter(|q| q.x > 0.0).count();
    if ignored > 0 {
        log::warn!("ignoring {ignored} quotes with positive log-moneyness");
    }
    let kept: Vec<MarketQuote> = quotes.iter().copied().filter(|q| q.x <= 0.0).collect();
    let s1 = fit_stage1(&kept, (split_x, 0.0))?;
    let s2 = fit_stage2(&kept, s1.kappa, s1.y, split_x)?;
    Ok(CalibrationResult {
        kappa_hat: s1.kappa,
        y_hat: s1.y,
        mu_eta_hat: s2.mu_eta,
        split_x,
        tau,
        rmse_stage1: s1.rmse,
        rmse_stage2: s2.rmse,
        n_quotes_stage1: s1.n_used,
        n_quotes_stage2: s2.n_used,
        n_ignored_positive: ignored,
        boundary_hit: s1.boundary_hit,
        degenerate: s1.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{approx_vol, HwAsymptoticParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const TAU: f64 = 9.0 / 365.0;

    fn grid_x(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }

    fn plain(kappa: f64, y: f64, xs: &[f64]) -> Vec<MarketQuote> {
        xs.iter().map(|&x| MarketQuote::new(TAU, x, model_vol_im(kappa, y, TAU, x))).collect()
    }

    fn with_wing(kappa: f64, y: f64, mu_eta: f64, xs: &[f64]) -> Vec<MarketQuote> {
        xs.iter()
            .map(|&x| MarketQuote::new(TAU, x, model_vol_im(kappa, y, TAU, x) + mu_eta * wing_regressor(kappa, y, TAU, x)))
            .collect()
    }

    #[test]
    fn im_is_the_undistorted_expansion() {
        for x in [-0.3, -0.03, 0.0, 0.2] {
            let p = HwAsymptoticParams {
                kappa: 6.6,
                mu_coeff: 12.0,
                eta: 0.0,
                y: 0.18,
                tau: TAU,
            };
            assert_abs_diff_eq!(model_vol_im(6.6, 0.18, TAU, x), approx_vol(&p, x), epsilon = 1e-15);
            assert_eq!(model_vol_im(6.6, 0.18, 0.0, x), i0(6.6, x, 0.18));
        }
        let v = model_vol_im(6.6, 0.18, TAU, -0.03);
        assert!(v.is_finite() && v > 0.1 && v < 0.4);
    }

    #[test]
    fn stage1_recovers_planted_parameters() {
        let fit = fit_stage1(&plain(6.6, 0.18, &grid_x(-0.06, 0.0, 0.01)), (-0.06, 0.0)).unwrap();
        assert!((fit.kappa / 6.6 - 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.y / 0.18 - 1.0).abs() < 1e-6);
        assert!(!fit.boundary_hit && !fit.degenerate);
    }

    #[test]
    fn stage1_needs_three_quotes() {
        let q = plain(6.6, 0.18, &[-0.05, -0.01]);
        assert!(matches!(fit_stage1(&q, (-0.06, 0.0)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn at_the_money_quotes_are_degenerate() {
        let q = plain(6.6, 0.18, &[0.0, 0.0, 0.0, 0.0]);
        let fit = fit_stage1(&q, (-0.06, 0.0)).unwrap();
        assert!(fit.degenerate);
    }

    #[test]
    fn stage2_closed_form() {
        let xs = grid_x(-0.25, -0.07, 0.01);
        let q = with_wing(6.6, 0.18, 35.0, &xs);
        let fit = fit_stage2(&q, 6.6, 0.18, -0.06).unwrap();
        assert!((fit.mu_eta / 35.0 - 1.0).abs() < 1e-9);
        let zero = fit_stage2(&plain(6.6, 0.18, &xs), 6.6, 0.18, -0.06).unwrap();
        assert!(zero.mu_eta.abs() < 1e-9);
        let steep = fit_stage2(&with_wing(6.6, 0.18, 5.0, &xs), 6.6, 0.18, -0.06).unwrap();
        assert!(steep.mu_eta > 0.0);
        assert!(matches!(fit_stage2(&q, 6.6, 0.18, -0.5), Err(Error::InsufficientData(_))));
        let atm = plain(6.6, 0.18, &[0.0]);
        assert!(matches!(fit_stage2(&atm, 6.6, 0.18, 0.1), Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn stage2_matches_brute_force_minimizer() {
        let xs = grid_x(-0.25, -0.07, 0.01);
        let mut q = with_wing(6.6, 0.18, 20.0, &xs);
        for (k, p) in q.iter_mut().enumerate() {
            p.vol += 1e-3 * ((k * 7919) % 13) as f64 / 13.0;
            p.weight = 1.0 + (k % 3) as f64;
        }
        let fit = fit_stage2(&q, 6.5, 0.19, -0.06).unwrap();
        // Slope of the weighted squared error in the coefficient.
        let slope = |b: f64| -> f64 {
            q.iter()
                .filter(|p| p.x < -0.06)
                .map(|p| {
                    let g = wing_regressor(6.5, 0.19, p.tau, p.x);
                    let r = p.vol - model_vol_im(6.5, 0.19, p.tau, p.x) - b * g;
                    -2.0 * p.weight * g * r
                })
                .sum()
        };
        // Coarse grid scan for the sign change, then bisection.
        let grid: Vec<f64> = (0..=400).map(|k| -100.0 + 0.5 * k as f64).collect();
        let k = grid.windows(2).position(|w| slope(w[0]) <= 0.0 && slope(w[1]) > 0.0).unwrap();
        let (mut a, mut b) = (grid[k], grid[k + 1]);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if slope(m) <= 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        assert!((0.5 * (a + b) - fit.mu_eta).abs() < 1e-8);
    }

    #[test]
    fn full_chain_round_trip() {
        // Liquid region follows I_M; the wing carries the distortion term.
        let q: Vec<MarketQuote> = grid_x(-0.25, 0.0, 0.01)
            .into_iter()
            .map(|x| {
                let wing = if x < DEFAULT_SPLIT_X - 1e-12 { 35.0 * wing_regressor(6.6, 0.18, TAU, x) } else { 0.0 };
                MarketQuote::new(TAU, x, model_vol_im(6.6, 0.18, TAU, x) + wing)
            })
            .collect();
        let r = calibrate(&q, DEFAULT_SPLIT_X).unwrap();
        assert!((r.kappa_hat / 6.6 - 1.0).abs() < 0.01);
        assert!((r.y_hat / 0.18 - 1.0).abs() < 0.01);
        assert!((r.mu_eta_hat / 35.0 - 1.0).abs() < 0.01);
        assert_eq!(r.split_x, -0.06);
        assert_eq!(r.n_quotes_stage1, 7);
        assert_eq!(r.n_quotes_stage2, 19);
    }

    #[test]
    fn positive_moneyness_is_ignored() {
        let mut q = plain(6.6, 0.18, &grid_x(-0.2, 0.0, 0.01));
        let base = calibrate(&q, DEFAULT_SPLIT_X).unwrap();
        q.extend(plain(6.6, 0.18, &[0.01, 0.05]).into_iter().map(|mut p| {
            p.vol = 9.0;
            p
        }));
        let r = calibrate(&q, DEFAULT_SPLIT_X).unwrap();
        assert_eq!(r.n_ignored_positive, 2);
        assert_eq!(r.kappa_hat, base.kappa_hat);
        assert_eq!(r.mu_eta_hat, base.mu_eta_hat);
    }

    #[test]
    fn mixed_maturities_are_rejected() {
        let mut q = plain(6.6, 0.18, &grid_x(-0.2, 0.0, 0.01));
        q[3].tau = 0.5;
        assert!(matches!(calibrate(&q, DEFAULT_SPLIT_X), Err(Error::Validation(_))));
    }

    #[test]
    fn weights_are_scale_free() {
        let mut q = with_wing(6.0, 0.2, 10.0, &grid_x(-0.2, 0.0, 0.01));
        for (k, p) in q.iter_mut().enumerate() {
            p.vol *= 1.0 + 0.002 * (((k * 31) % 7) as f64 - 3.0) / 3.0;
            p.weight = 0.5 + (k % 4) as f64;
        }
        let base = calibrate(&q, DEFAULT_SPLIT_X).unwrap();
        let scaled: Vec<MarketQuote> = q.iter().map(|p| MarketQuote { weight: 4.0 * p.weight, ..*p }).collect();
        assert_eq!(calibrate(&scaled, DEFAULT_SPLIT_X).unwrap(), base);
        let odd: Vec<MarketQuote> = q.iter().map(|p| MarketQuote { weight: 3.7 * p.weight, ..*p }).collect();
        let r = calibrate(&odd, DEFAULT_SPLIT_X).unwrap();
        assert!((r.kappa_hat - base.kappa_hat).abs() < 1e-6 * base.kappa_hat);
        assert!((r.mu_eta_hat - base.mu_eta_hat).abs() < 1e-5 * base.mu_eta_hat.abs().max(1.0));
    }

    #[test]
    fn quote_csv_parsing() {
        let text = "tau,log_moneyness,implied_vol\n0.1,-0.05,0.2\n0.1,0.0,0.19\n";
        let q = read_quotes_csv(text.as_bytes()).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].weight, 1.0);
        let weighted = "tau,log_moneyness,implied_vol,weight\n0.1,-0.05,0.2,2.5\n";
        assert_eq!(read_quotes_csv(weighted.as_bytes()).unwrap()[0].weight, 2.5);
        let bad = "tau,log_moneyness,implied_vol\n0.1,-0.05,0.2\n0.1,abc,0.19\n";
        match read_quotes_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let negative = "tau,log_moneyness,implied_vol\n0.1,-0.05,-0.2\n";
        assert!(matches!(read_quotes_csv(negative.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(read_quotes_csv("tau,log_moneyness,implied_vol\n".as_bytes()).unwrap().is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn random_round_trips(kappa in 2.0f64..12.0, y in 0.1f64..0.5, mu_eta in -50.0f64..50.0) {
            let q: Vec<MarketQuote> = grid_x(-0.25, 0.0, 0.01)
                .into_iter()
                .map(|x| {
                    let wing = if x < DEFAULT_SPLIT_X - 1e-12 { mu_eta * wing_regressor(kappa, y, TAU, x) } else { 0.0 };
                    MarketQuote::new(TAU, x, model_vol_im(kappa, y, TAU, x) + wing)
                })
                .collect();
            let r = calibrate(&q, DEFAULT_SPLIT_X).unwrap();
            prop_assert!((r.kappa_hat / kappa - 1.0).abs() < 0.01);
            prop_assert!((r.y_hat / y - 1.0).abs() < 0.01);
            prop_assert!((r.mu_eta_hat - mu_eta).abs() < 0.01 * mu_eta.abs().max(1.0));
        }
    }
}
