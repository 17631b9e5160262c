use std::io::Write;

use super::query::VolCurve;
use super::PdeSolution;
use crate::error::Result;

/// Every node as `tau,x,y,u,u_tilde,price`, with `price` in currency.
pub fn write_solution_csv<W: Write>(sol: &PdeSolution, out: W) -> Result<()> {
    let g = sol.grid();
    let k = sol.contract().scaled_strike();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "x", "y", "u", "u_tilde", "price"])?;
    for n in 0..=g.nt {
        for i in 0..g.nx {
            for j in 0..g.ny {
                let (u, ut) = (sol.u(n, i, j), sol.u_tilde(n, j));
                w.serialize((g.tau(n), g.x(i), g.y(j), u, ut, k * (ut - u)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Valid curve points as `log_moneyness,implied_vol`; failed inversions are skipped.
pub fn write_curve_csv<W: Write>(curve: &VolCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["log_moneyness", "implied_vol"])?;
    let mut skipped = 0;
    for p in &curve.points {
        match p.vol {
            Some(v) => w.serialize((p.x, v))?,
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} curve points without implied vol were not written");
    }
    w.flush()?;
    Ok(())
}
