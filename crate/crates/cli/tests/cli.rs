use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use indiff_core::calibrate::{model_vol_im, wing_regressor};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_indiffvol"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_curve(path: &Path) -> Vec<(f64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("log_moneyness,implied_vol"));
    lines
        .map(|l| {
            let (x, v) = l.split_once(',').unwrap();
            (x.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

fn vol_at(curve: &[(f64, f64)], x: f64) -> f64 {
    curve.iter().find(|p| (p.0 - x).abs() < 1e-9).unwrap().1
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_ARCTAN: &str = r#"{
  "model": { "family": "arctan_ou", "alpha": 5.0, "mbar": 0.0, "nu": 1.0, "rho": -0.2,
             "drift": { "kind": "constant", "mu": 0.1 } },
  "driver": { "gamma": 0.5, "eta": 0.2 },
  "contract": { "strike": 100.0, "maturity": 0.25 },
  "grid": { "x_lo": -1.0, "x_hi": 1.0, "y_lo": -4.0, "y_hi": 4.0, "nx": 41, "ny": 21, "nt": 20, "maturity": 0.25 },
  "initial_vol": 0.223,
  "log_moneyness": { "from": -0.2, "to": 0.2, "points": 5 },
  "mc": { "paths": 2000, "steps": 50, "seed": 1, "antithetic": true }
}"#;

#[test]
fn shipped_skew_config_orders_slopes_in_eta() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("skew.csv");
    let o = run(&["skew", "--config", shipped("skew.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let slopes: Vec<f64> = ["0", "0.2", "0.4"]
        .iter()
        .map(|eta| {
            let c = read_curve(&dir.path().join(format!("skew_eta{eta}.csv")));
            assert_eq!(c.len(), 71);
            for &(_, v) in &c {
                assert!((0.03..=0.73).contains(&v));
            }
            // Market convention: log-strike k = -x.
            vol_at(&c, 0.2) - vol_at(&c, 0.0)
        })
        .collect();
    assert!(slopes[0] < slopes[1] && slopes[1] < slopes[2], "{slopes:?}");
    assert!(!out.exists());
}

#[test]
fn constant_vol_skew_is_flat() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("flat.csv");
    let o = run(&[
        "skew",
        "--config",
        shipped("constant_vol_skew.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = read_curve(&out);
    assert_eq!(c.len(), 41);
    for (x, v) in c {
        assert!((v - 0.2).abs() < 1e-3, "x={x}: {v}");
    }
}

#[test]
fn command_line_sweep_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", SMALL_ARCTAN);
    let out = dir.path().join("s.csv");
    let o = run(&[
        "skew",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sweep",
        "gamma=0.25,1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("s_gamma0.25.csv").exists());
    assert!(dir.path().join("s_gamma1.csv").exists());
    assert!(!out.exists());
}

#[test]
fn missing_grid_field_fails_without_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &SMALL_ARCTAN.replace(r#""nx": 41, "#, ""));
    let out = dir.path().join("s.csv");
    let o = run(&["skew", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nx"), "{}", stderr(&o));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn hull_white_is_refused_by_skew() {
    let dir = TempDir::new().unwrap();
    let text = SMALL_ARCTAN.replace(
        r#""family": "arctan_ou", "alpha": 5.0, "mbar": 0.0, "nu": 1.0, "rho": -0.2,
             "drift": { "kind": "constant", "mu": 0.1 }"#,
        r#""family": "hull_white", "mu": 6.0, "kappa": 7.0"#,
    );
    let cfg = write(&dir, "c.json", &text.replace("\"y_lo\": -4.0", "\"y_lo\": 0.1"));
    let out = dir.path().join("s.csv");
    let o = run(&["skew", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("asymptotics-only"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn shipped_asymptotic_config_gives_three_ordered_curves() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a.csv");
    let o = run(&[
        "asymptotic",
        "--config",
        shipped("asymptotic.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curves: Vec<Vec<Vec<f64>>> = ["0", "0.1", "0.2"]
        .iter()
        .map(|eta| {
            let text = fs::read_to_string(dir.path().join(format!("a_eta{eta}.csv"))).unwrap();
            let mut lines = text.lines();
            assert_eq!(lines.next(), Some("log_moneyness,i0,i1,approx_vol"));
            lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
        })
        .collect();
    for row in [0, 200] {
        let v: Vec<f64> = curves.iter().map(|c| c[row][3]).collect();
        assert!(v[0] < v[1] && v[1] < v[2], "{v:?}");
    }
}

#[test]
fn asymptotic_at_zero_maturity_writes_i0_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "a.json",
        r#"{ "asymptotics": { "kappa": 7.0, "mu_coeff": 6.0, "eta": 0.2, "y": 0.3, "tau": 0.0 },
             "log_moneyness": { "from": -0.5, "to": 0.5, "points": 11 } }"#,
    );
    let out = dir.path().join("a.csv");
    let o = run(&["asymptotic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("log_moneyness,i0"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn asymptotic_rejects_negative_y() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "a.json",
        r#"{ "asymptotics": { "kappa": 7.0, "mu_coeff": 6.0, "eta": 0.2, "y": -0.3, "tau": 0.1 },
             "log_moneyness": { "from": -0.5, "to": 0.5, "points": 11 } }"#,
    );
    let out = dir.path().join("a.csv");
    let o = run(&["asymptotic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

fn synthetic_chain() -> String {
    let (k, y, me, tau) = (6.6, 0.18, 35.0, 9.0 / 365.0);
    let mut s = String::from("tau,log_moneyness,implied_vol\n");
    for i in 0..=25 {
        let x = -0.25 + 0.01 * i as f64;
        let wing = if x < -0.06 - 1e-9 { me * wing_regressor(k, y, tau, x) } else { 0.0 };
        s.push_str(&format!("{tau},{x},{}\n", model_vol_im(k, y, tau, x) + wing));
    }
    s
}

#[test]
fn calibrate_recovers_planted_parameters() {
    let dir = TempDir::new().unwrap();
    let quotes = write(&dir, "q.csv", &synthetic_chain());
    let out = dir.path().join("fit.json");
    let o = run(&["calibrate", quotes.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let get = |k: &str| r[k].as_f64().unwrap();
    assert!((get("kappa_hat") / 6.6 - 1.0).abs() < 0.01);
    assert!((get("y_hat") / 0.18 - 1.0).abs() < 0.01);
    assert!((get("mu_eta_hat") / 35.0 - 1.0).abs() < 0.01);
    assert_eq!(get("split_x"), -0.06);
    let fit = fs::read_to_string(dir.path().join("fit_fit.csv")).unwrap();
    assert_eq!(fit.lines().next(), Some("log_moneyness,market_vol,fitted_vol"));
    assert_eq!(fit.lines().count(), 27);
}

#[test]
fn calibrate_split_flag_accepts_negative_values() {
    let dir = TempDir::new().unwrap();
    let quotes = write(&dir, "q.csv", &synthetic_chain());
    let out = dir.path().join("fit.json");
    let o = run(&["calibrate", quotes.to_str().unwrap(), "--split-x", "-0.08", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["split_x"].as_f64(), Some(-0.08));
}

#[test]
fn calibrate_reports_bad_rows_and_empty_files() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.csv", "tau,log_moneyness,implied_vol\n0.1,0.0,0.2\n0.1,abc,0.2\n");
    let out = dir.path().join("fit.json");
    let o = run(&["calibrate", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let empty = write(&dir, "empty.csv", "tau,log_moneyness,implied_vol\n");
    let o = run(&["calibrate", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("insufficient data"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn shipped_check_config_passes() {
    let o = run(&["check", "--config", shipped("check.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.contains("  PASS  ")).count(), 5, "{text}");
}

#[test]
fn check_fails_for_nonpositive_gamma() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(shipped("check.json")).unwrap();
    let cfg = write(&dir, "c.json", &text.replace(r#""gamma": 0.5"#, r#""gamma": -0.5"#));
    let o = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let driver = text.lines().find(|l| l.starts_with("driver admissibility")).unwrap();
    assert!(driver.contains("FAIL"), "{driver}");
}

#[test]
fn price_output_is_deterministic_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", SMALL_ARCTAN);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = run(&["price", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (ta, tb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let r: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    assert!(r["price"].as_f64().unwrap() > 0.0);
    assert!(r["monte_carlo"]["stderr"].as_f64().unwrap() > 0.0);

    let c = dir.path().join("c.json.out");
    let o = run(&["price", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "10"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(&c).unwrap(), ta);
}
