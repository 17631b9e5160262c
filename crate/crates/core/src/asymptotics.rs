//! Short-maturity implied volatility of the uncorrelated Hull-White model
//! with drift `μ(y) = μ y³`:
//!
//! ```text
//! I(τ, x, y) ≈ I⁰(x, y) (1 + τ I¹(x, y)),   I⁰ = x / ψ,   ψ = asinh(κx/y) / κ
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwAsymptoticParams {
    pub kappa: f64,
    pub mu_coeff: f64,
    pub eta: f64,
    pub y: f64,
    pub tau: f64,
}

impl HwAsymptoticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !(self.y > 0.0) || !(self.tau >= 0.0) {
            return Err(Error::Validation(format!(
                "asymptotics need kappa > 0, y > 0, tau >= 0, got kappa={}, y={}, tau={}",
                self.kappa, self.y, self.tau
            )));
        }
        if !(self.mu_coeff.is_finite() && self.eta.is_finite() && self.tau.is_finite()) {
            return Err(Error::Validation("asymptotic parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Below this `|κx/y|` the at-the-money series replaces the closed forms.
const SERIES_BAND: f64 = 0.05;

pub fn psi(kappa: f64, x: f64, y: f64) -> f64 {
    (kappa * x / y).asinh() / kappa
}

/// `u / asinh(u)`, even, 1 at the origin.
fn ratio(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 + u * u / 6.0
    } else {
        u / u.asinh()
    }
}

pub fn i0(kappa: f64, x: f64, y: f64) -> f64 {
    y * ratio(kappa * x / y)
}

/// `ln(asinh(u)/u) + ¼ ln(1 + u²)`, divided by `u²`.
fn log_term_over_u2(u: f64) -> f64 {
    if u.abs() < SERIES_BAND {
        let u2 = u * u;
        1.0 / 12.0 + u2 * (-23.0 / 360.0 + u2 * (563.0 / 11340.0 + u2 * (-9181.0 / 226800.0 + u2 * 63961.0 / 1871100.0)))
    } else {
        ((u.asinh() / u).ln() + 0.25 * (u * u).ln_1p()) / (u * u)
    }
}

pub fn i1(kappa: f64, mu_coeff: f64, eta: f64, x: f64, y: f64) -> f64 {
    let u = kappa * x / y;
    let r2 = ratio(u).powi(2);
    // 1/ψ² = κ² r² / (y² u²) and x²/ψ² = y² r².
    kappa * kappa * r2 * log_term_over_u2(u) + 0.5 * eta * mu_coeff * y * y * r2
}

pub fn approx_vol(p: &HwAsymptoticParams, x: f64) -> f64 {
    let base = i0(p.kappa, x, p.y);
    if p.tau == 0.0 {
        return base;
    }
    base * (1.0 + p.tau * i1(p.kappa, p.mu_coeff, p.eta, x, p.y))
}

/// `ψ_x² + κ²ψ_y² − 1/y²` by central differences of the closed-form `ψ`.
pub fn eikonal_residual(kappa: f64, x: f64, y: f64, h: f64) -> f64 {
    eikonal_residual_of(|x, y| psi(kappa, x, y), kappa, x, y, h)
}

pub fn eikonal_residual_of(psi: impl Fn(f64, f64) -> f64, kappa: f64, x: f64, y: f64, h: f64) -> f64 {
    let px = (psi(x + h, y) - psi(x - h, y)) / (2.0 * h);
    let py = (psi(x, y + h) - psi(x, y - h)) / (2.0 * h);
    px * px + kappa * kappa * py * py - 1.0 / (y * y)
}

/// Residual of the first-order transport equation
///
/// ```text
/// 0 = 2I¹ + y²ψψ_x I¹_x + κ²y²ψψ_y I¹_y − (ψ/x) M(x/ψ) + η μ(y) ψ_y/ψ,
/// M = ½y² ∂xx + ½κ²y² ∂yy,
/// ```
///
/// with every derivative taken by central differences of step `h`.
pub fn transport_residual(kappa: f64, mu_coeff: f64, eta: f64, x: f64, y: f64, h: f64) -> f64 {
    transport_residual_of(|x, y| i1(kappa, mu_coeff, eta, x, y), kappa, mu_coeff, eta, x, y, h)
}

pub fn transport_residual_of(
    i1: impl Fn(f64, f64) -> f64,
    kappa: f64,
    mu_coeff: f64,
    eta: f64,
    x: f64,
    y: f64,
    h: f64,
) -> f64 {
    let d = |f: &dyn Fn(f64, f64) -> f64, dx: f64, dy: f64| (f(x + dx, y + dy) - f(x - dx, y - dy)) / (2.0 * h);
    let d2 = |f: &dyn Fn(f64, f64) -> f64, dx: f64, dy: f64| (f(x + dx, y + dy) - 2.0 * f(x, y) + f(x - dx, y - dy)) / (h * h);
    let ps = |x, y| psi(kappa, x, y);
    let z = |x, y| i0(kappa, x, y);
    let p = ps(x, y);
    let (px, py) = (d(&ps, h, 0.0), d(&ps, 0.0, h));
    let (jx, jy) = (d(&i1, h, 0.0), d(&i1, 0.0, h));
    let m_i0 = 0.5 * y * y * (d2(&z, h, 0.0) + kappa * kappa * d2(&z, 0.0, h));
    let drift = mu_coeff * y * y * y;
    2.0 * i1(x, y) + y * y * p * (px * jx + kappa * kappa * py * jy) - m_i0 / z(x, y) + eta * drift * py / p
}

/// Writes `log_moneyness,i0,i1,approx_vol`, or only `log_moneyness,i0` when `τ = 0`.
pub fn write_curve_csv<W: Write>(p: &HwAsymptoticParams, xs: &[f64], out: W) -> Result<()> {
    p.validate()?;
    let mut w = csv::Writer::from_writer(out);
    if p.tau == 0.0 {
        w.write_record(["log_moneyness", "i0"])?;
        for &x in xs {
            w.serialize((x, i0(p.kappa, x, p.y)))?;
        }
    } else {
        w.write_record(["log_moneyness", "i0", "i1", "approx_vol"])?;
        for &x in xs {
            w.serialize((x, i0(p.kappa, x, p.y), i1(p.kappa, p.mu_coeff, p.eta, x, p.y), approx_vol(p, x)))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const FIG: HwAsymptoticParams = HwAsymptoticParams {
        kappa: 7.0,
        mu_coeff: 6.0,
        eta: 0.0,
        y: 0.3,
        tau: 0.1,
    };

    #[test]
    fn reference_values() {
        assert_eq!(psi(7.0, 0.0, 0.3), 0.0);
        assert_abs_diff_eq!(psi(7.0, 0.1, 0.3), 0.22621, epsilon = 5e-6);
        assert_abs_diff_eq!(psi(7.0, 0.1, 0.3), (7.0f64 * 0.1 / 0.3).asinh() / 7.0, epsilon = 1e-16);
        assert_abs_diff_eq!(i0(7.0, 0.0, 0.3), 0.3, epsilon = 1e-16);
        assert_abs_diff_eq!(i0(7.0, 1e-9, 0.3), 0.3, epsilon = 1e-12);
        assert_eq!(i0(7.0, 0.1, 0.3), 0.1 / psi(7.0, 0.1, 0.3));
        // 0.44207 is 0.1 / 0.22621 with ψ already rounded.
        assert_abs_diff_eq!(i0(7.0, 0.1, 0.3), 0.44207, epsilon = 1e-5);
        assert_abs_diff_eq!(i1(7.0, 6.0, 0.0, 0.0, 0.3), 49.0 / 12.0, epsilon = 1e-14);
        assert_abs_diff_eq!(i1(7.0, 6.0, 0.1, 0.0, 0.3), 49.0 / 12.0 + 0.05 * 6.0 * 0.09 * 6.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn i1_matches_closed_form_off_the_money() {
        let (k, m, e, y) = (7.0, 6.0, 0.2, 0.3);
        for x in [-0.8, -0.05, 0.01, 0.4] {
            let p = psi(k, x, y);
            let direct = (((y / x) * p * (1.0 + k * k * x * x / (y * y)).powf(0.25)).ln() + e * m * x * x / 2.0) / (p * p);
            assert_abs_diff_eq!(i1(k, m, e, x, y), direct, epsilon = 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn i1_is_continuous_at_the_money() {
        let (k, m, e, y) = (7.0, 6.0, 0.1, 0.3);
        assert!((i1(k, m, e, 1e-4, y) - i1(k, m, e, 0.0, y)).abs() < 1e-3);
        // Across the series switchover.
        let b = SERIES_BAND * y / k;
        assert!((i1(k, m, e, b * (1.0 - 1e-9), y) - i1(k, m, e, b * (1.0 + 1e-9), y)).abs() < 1e-10);
    }

    #[test]
    fn wings_grow_like_kappa_x_over_log() {
        let (k, y) = (7.0, 0.3);
        let ratios: Vec<f64> = [5.0, 10.0, 20.0].iter().map(|&x| i0(k, x, y) / (k * x / f64::ln(x))).collect();
        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
        for x in [5.0, 10.0, 20.0f64] {
            let exact = k * x / (2.0 * k * x / y).ln();
            assert!((i0(k, x, y) / exact - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn reference_parameter_curves() {
        let xs: Vec<f64> = (-100..=100).map(|k| k as f64 / 100.0).collect();
        let v: Vec<f64> = xs.iter().map(|&x| approx_vol(&FIG, x)).collect();
        let argmin = (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        assert_eq!(xs[argmin], 0.0);
        assert!(v[..=argmin].windows(2).all(|w| w[1] < w[0]));
        assert!(v[argmin..].windows(2).all(|w| w[1] > w[0]));
        for x in [-1.0, -0.6, 0.6, 1.0] {
            let a = approx_vol(&HwAsymptoticParams { eta: 0.0, ..FIG }, x);
            let b = approx_vol(&HwAsymptoticParams { eta: 0.1, ..FIG }, x);
            let c = approx_vol(&HwAsymptoticParams { eta: 0.2, ..FIG }, x);
            assert!(a < b && b < c);
        }
        assert_eq!(approx_vol(&HwAsymptoticParams { tau: 0.0, ..FIG }, 0.4), i0(7.0, 0.4, 0.3));
    }

    #[test]
    fn eikonal_residual_is_small_and_second_order() {
        assert!(eikonal_residual(7.0, 0.5, 0.3, 1e-5).abs() < 1e-8);
        let r1 = eikonal_residual(7.0, 0.5, 0.3, 1e-2).abs();
        let r2 = eikonal_residual(7.0, 0.5, 0.3, 5e-3).abs();
        let slope = (r1 / r2).log2();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
        let doubled = eikonal_residual_of(|x, y| 2.0 * psi(7.0, x, y), 7.0, 0.5, 0.3, 1e-5);
        assert_abs_diff_eq!(doubled, 3.0 / 0.09, epsilon = 1e-6);
    }

    #[test]
    fn transport_residual_is_small() {
        for eta in [0.0, 0.2] {
            assert!(transport_residual(7.0, 6.0, eta, 0.5, 0.3, 1e-4).abs() < 1e-5);
        }
        let shifted = transport_residual_of(|x, y| i1(7.0, 6.0, 0.0, x, y) + 0.1, 7.0, 6.0, 0.0, 0.5, 0.3, 1e-4);
        assert!(shifted.abs() >= 0.19);
    }

    #[test]
    fn curve_csv_layout() {
        let mut buf = Vec::new();
        write_curve_csv(&FIG, &[-0.1, 0.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("log_moneyness,i0,i1,approx_vol\n"));
        assert_eq!(text.lines().count(), 3);
        let mut buf = Vec::new();
        write_curve_csv(&HwAsymptoticParams { tau: 0.0, ..FIG }, &[0.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "log_moneyness,i0\n0.0,0.3\n");
        assert!(write_curve_csv(&HwAsymptoticParams { y: -0.3, ..FIG }, &[0.0], Vec::new()).is_err());
    }

    proptest! {
        #[test]
        fn symmetry(x in -3.0f64..3.0, y in 0.05f64..1.0, k in 0.5f64..12.0) {
            prop_assert_eq!(psi(k, -x, y), -psi(k, x, y));
            prop_assert!((i0(k, -x, y) - i0(k, x, y)).abs() <= 1e-15 * i0(k, x, y));
        }

        #[test]
        fn eta_shift_is_exact(x in -1.0f64..1.0, y in 0.1f64..0.6, eta in -1.0f64..1.0) {
            prop_assume!(x.abs() > 1e-3);
            let (k, m) = (7.0, 6.0);
            let p = psi(k, x, y);
            let shift = eta * m * x * x / (2.0 * p * p);
            prop_assert!((i1(k, m, eta, x, y) - i1(k, m, 0.0, x, y) - shift).abs() < 1e-10 * (1.0 + shift.abs()));
            let par = HwAsymptoticParams { kappa: k, mu_coeff: m, eta, y, tau: 0.1 };
            let diff = approx_vol(&par, x) - approx_vol(&HwAsymptoticParams { eta: 0.0, ..par }, x);
            prop_assert!((diff - 0.1 * i0(k, x, y) * shift).abs() < 1e-12);
        }
    }
}
