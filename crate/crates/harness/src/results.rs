//! Result rows, the fixed-header CSV and the JSON sidecar.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use tradeoff_core::audit::Estimate;
use tradeoff_core::Regime;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const CSV_HEADER: [&str; 16] = [
    "regime",
    "d",
    "m",
    "rho",
    "lambda",
    "ensemble_seed",
    "init_seed",
    "egen_exact",
    "erob_exact",
    "egen_mc",
    "egen_mc_se",
    "erob_mc",
    "erob_mc_se",
    "egen_theory",
    "erob_theory",
    "wall_time_ms",
];

pub const NA: &str = "NA";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub regime: Regime,
    pub d: usize,
    pub m: usize,
    pub rho: f64,
    pub lambda: Option<f64>,
    pub ensemble_seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub egen_exact: Option<f64>,
    pub erob_exact: Option<f64>,
    pub egen_mc: Option<f64>,
    pub egen_mc_se: Option<f64>,
    pub erob_mc: Option<f64>,
    pub erob_mc_se: Option<f64>,
    pub egen_theory: Option<f64>,
    pub erob_theory: Option<f64>,
    pub wall_time_ms: f64,
    /// Set when the row could not be computed; kept out of the CSV.
    pub error: Option<String>,
}

impl ResultRow {
    pub fn new(regime: Regime, d: usize, m: usize) -> Self {
        Self {
            regime,
            d,
            m,
            rho: m as f64 / d as f64,
            lambda: None,
            ensemble_seed: None,
            init_seed: None,
            egen_exact: None,
            erob_exact: None,
            egen_mc: None,
            egen_mc_se: None,
            erob_mc: None,
            erob_mc_se: None,
            egen_theory: None,
            erob_theory: None,
            wall_time_ms: 0.0,
            error: None,
        }
    }

    /// Sort key: regime, width, ridge, ensemble seed, init seed.
    pub fn key(&self) -> (Regime, usize, u64, Option<u64>, Option<u64>) {
        (self.regime, self.m, self.lambda.map_or(0, f64::to_bits), self.ensemble_seed, self.init_seed)
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Monte Carlo estimate rescaled to a normalized metric.
pub fn scaled(e: &Estimate, by: f64) -> (f64, f64) {
    (e.mean / by, e.se / by)
}

/// 17 significant digits: every finite `f64` round-trips.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt_f(x: Option<f64>) -> String {
    x.map_or_else(|| NA.to_string(), fmt_f64)
}

fn opt_u(x: Option<u64>) -> String {
    x.map_or_else(|| NA.to_string(), |v| v.to_string())
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.regime.tag().to_string(),
            r.d.to_string(),
            r.m.to_string(),
            fmt_f64(r.rho),
            opt_f(r.lambda),
            opt_u(r.ensemble_seed),
            opt_u(r.init_seed),
            opt_f(r.egen_exact),
            opt_f(r.erob_exact),
            opt_f(r.egen_mc),
            opt_f(r.egen_mc_se),
            opt_f(r.erob_mc),
            opt_f(r.erob_mc_se),
            opt_f(r.egen_theory),
            opt_f(r.erob_theory),
            fmt_f64(r.wall_time_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| HarnessError::Parse(format!("{what}: {s:?}")))
}

fn parse_opt_f(s: &str, what: &str) -> Result<Option<f64>> {
    if s == NA {
        Ok(None)
    } else {
        parse_f(s, what).map(Some)
    }
}

fn parse_opt_u(s: &str, what: &str) -> Result<Option<u64>> {
    if s == NA {
        Ok(None)
    } else {
        s.parse::<u64>().map(Some).map_err(|_| HarnessError::Parse(format!("{what}: {s:?}")))
    }
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Parse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let regime = Regime::parse(f(0)).map_err(|e| HarnessError::Parse(e.to_string()))?;
        let d: usize = f(1).parse().map_err(|_| HarnessError::Parse(format!("d: {:?}", f(1))))?;
        let m: usize = f(2).parse().map_err(|_| HarnessError::Parse(format!("m: {:?}", f(2))))?;
        rows.push(ResultRow {
            regime,
            d,
            m,
            rho: parse_f(f(3), "rho")?,
            lambda: parse_opt_f(f(4), "lambda")?,
            ensemble_seed: parse_opt_u(f(5), "ensemble_seed")?,
            init_seed: parse_opt_u(f(6), "init_seed")?,
            egen_exact: parse_opt_f(f(7), "egen_exact")?,
            erob_exact: parse_opt_f(f(8), "erob_exact")?,
            egen_mc: parse_opt_f(f(9), "egen_mc")?,
            egen_mc_se: parse_opt_f(f(10), "egen_mc_se")?,
            erob_mc: parse_opt_f(f(11), "erob_mc")?,
            erob_mc_se: parse_opt_f(f(12), "erob_mc_se")?,
            egen_theory: parse_opt_f(f(13), "egen_theory")?,
            erob_theory: parse_opt_f(f(14), "erob_theory")?,
            wall_time_ms: parse_f(f(15), "wall_time_ms")?,
            error: None,
        });
    }
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<ResultRow>> {
    read_csv(std::fs::File::open(path)?)
}

/// Result of the startup check `MC E f*(x)^2` against `2||B||^2 + mean^2`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormCheck {
    pub exact: f64,
    pub mc: Estimate,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultSet {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    pub norm_check: Option<NormCheck>,
}

impl ResultSet {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }

    /// 0: every row computed; 1: some rows failed; 2: more than 10% failed.
    pub fn exit_code(&self) -> i32 {
        let failed = self.failed_rows();
        if failed == 0 {
            0
        } else if failed * 10 > self.rows.len() {
            2
        } else {
            1
        }
    }
}

/// Sidecar: the full config, the startup check and per-row errors.
pub fn write_json<W: Write>(set: &ResultSet, out: W) -> Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        config: &'a ExperimentConfig,
        config_text: String,
        norm_check: &'a Option<NormCheck>,
        rows: usize,
        failed_rows: usize,
        errors: Vec<(usize, &'a str)>,
    }
    let errors = set.rows.iter().enumerate().filter_map(|(i, r)| r.error.as_deref().map(|e| (i, e))).collect();
    let s = Sidecar {
        config: &set.config,
        config_text: set.config.to_text(),
        norm_check: &set.norm_check,
        rows: set.rows.len(),
        failed_rows: set.failed_rows(),
        errors,
    };
    serde_json::to_writer_pretty(out, &s)?;
    Ok(())
}
