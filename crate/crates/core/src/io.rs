//! Text formats for surfaces, loops and grid functions, and convergence
//! reports in csv, json and gnuplot form.
//!
//! Floats are written with 17 significant digits so that every value
//! survives a save/load cycle bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{FourierMode, FourierSurface};
use crate::grid::GridFunction;
use crate::kernels::{CurrentLoop, LoopMode, DEFAULT_LOOP_SAMPLES};

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Non-empty lines with comments stripped, numbered from 1.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(k, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((k + 1, l))
    })
}

fn field<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| parse_err(line, format!("bad {what} `{tok}`")))
}

/// Header line `key <value>`.
fn header<T: FromStr>(lines: &mut dyn Iterator<Item = (usize, &str)>, key: &str) -> Result<T> {
    let (line, l) = lines.next().ok_or_else(|| parse_err(1, format!("expected `{key} <value>`")))?;
    let mut it = l.split_whitespace();
    if it.next() != Some(key) {
        return Err(parse_err(line, format!("expected `{key} <value>`")));
    }
    let v = field(it.next(), line, key)?;
    if it.next().is_some() {
        return Err(parse_err(line, "trailing tokens"));
    }
    Ok(v)
}

/// Row of exactly `N` whitespace-separated fields.
fn row<const N: usize>(l: &str, line: usize, names: [&str; N]) -> Result<[String; N]> {
    let toks: Vec<&str> = l.split_whitespace().collect();
    if toks.len() != N {
        return Err(parse_err(line, format!("expected {N} fields ({}), got {}", names.join(" "), toks.len())));
    }
    Ok(std::array::from_fn(|k| toks[k].to_string()))
}

/// Surface file: `nfp <int>`, then one `m n rc zs rs zc` line per mode.
pub fn parse_surface(text: &str) -> Result<FourierSurface> {
    let mut lines = content_lines(text);
    let nfp: i64 = header(&mut lines, "nfp")?;
    if nfp <= 0 || nfp > u32::MAX as i64 {
        return Err(Error::Invalid(format!("nfp must be positive, got {nfp}")));
    }
    let mut modes = Vec::new();
    for (line, l) in lines {
        let t = row(l, line, ["m", "n", "rc", "zs", "rs", "zc"])?;
        let m: i64 = field(Some(&t[0]), line, "m")?;
        if m < 0 {
            return Err(Error::Invalid(format!("line {line}: poloidal mode number must be non-negative")));
        }
        modes.push(FourierMode {
            m: m as u32,
            n: field(Some(&t[1]), line, "n")?,
            rc: field(Some(&t[2]), line, "rc")?,
            zs: field(Some(&t[3]), line, "zs")?,
            rs: field(Some(&t[4]), line, "rs")?,
            zc: field(Some(&t[5]), line, "zc")?,
        });
    }
    if modes.is_empty() {
        return Err(parse_err(1, "no Fourier modes"));
    }
    FourierSurface::new(nfp as u32, modes)
}

pub fn format_surface(s: &FourierSurface) -> String {
    let mut out = format!("nfp {}\n# m n rc zs rs zc\n", s.nfp());
    for md in s.modes() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            md.m,
            md.n,
            fmt_f64(md.rc),
            fmt_f64(md.zs),
            fmt_f64(md.rs),
            fmt_f64(md.zc)
        );
    }
    out
}

pub fn load_surface(path: impl AsRef<Path>) -> Result<FourierSurface> {
    parse_surface(&fs::read_to_string(path)?)
}

pub fn save_surface(path: impl AsRef<Path>, s: &FourierSurface) -> Result<()> {
    Ok(fs::write(path, format_surface(s))?)
}

/// Loop file: `current <float>`, then `k xc xs yc ys zc zs` lines. The loop
/// is sampled at [`DEFAULT_LOOP_SAMPLES`] points.
pub fn parse_loop(text: &str) -> Result<CurrentLoop> {
    let mut lines = content_lines(text);
    let current: f64 = header(&mut lines, "current")?;
    let mut modes = Vec::new();
    for (line, l) in lines {
        let t = row(l, line, ["k", "xc", "xs", "yc", "ys", "zc", "zs"])?;
        let f = |k: usize, name: &str| field::<f64>(Some(&t[k]), line, name);
        modes.push(LoopMode {
            k: field(Some(&t[0]), line, "k")?,
            xc: f(1, "xc")?,
            xs: f(2, "xs")?,
            yc: f(3, "yc")?,
            ys: f(4, "ys")?,
            zc: f(5, "zc")?,
            zs: f(6, "zs")?,
        });
    }
    if modes.is_empty() {
        return Err(parse_err(1, "no Fourier lines"));
    }
    CurrentLoop::new(current, modes, DEFAULT_LOOP_SAMPLES)
}

pub fn format_loop(lp: &CurrentLoop) -> String {
    let mut out = format!("current {}\n# k xc xs yc ys zc zs\n", fmt_f64(lp.current()));
    for m in lp.modes() {
        let vals = [m.xc, m.xs, m.yc, m.ys, m.zc, m.zs].map(fmt_f64);
        let _ = writeln!(out, "{} {}", m.k, vals.join(" "));
    }
    out
}

pub fn load_loop(path: impl AsRef<Path>) -> Result<CurrentLoop> {
    parse_loop(&fs::read_to_string(path)?)
}

pub fn save_loop(path: impl AsRef<Path>, lp: &CurrentLoop) -> Result<()> {
    Ok(fs::write(path, format_loop(lp))?)
}

/// Grid function file: `grid <nu> <nv> <ncomp>`, then one line per node
/// `i j f_0 .. f_{ncomp-1}`.
pub fn format_grid_function(f: &GridFunction) -> String {
    let (nu, nv, nc) = (f.nu(), f.nv(), f.ncomp());
    let mut out = format!("grid {nu} {nv} {nc}\n");
    for i in 0..nu {
        for j in 0..nv {
            let _ = write!(out, "{i} {j}");
            for c in 0..nc {
                let _ = write!(out, " {}", fmt_f64(f.at(c, i * nv + j)));
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_grid_function(text: &str) -> Result<GridFunction> {
    let mut lines = content_lines(text);
    let (line, head) = lines.next().ok_or_else(|| parse_err(1, "expected `grid <nu> <nv> <ncomp>`"))?;
    let h = row(head, line, ["grid", "nu", "nv", "ncomp"])?;
    if h[0] != "grid" {
        return Err(parse_err(line, "expected `grid <nu> <nv> <ncomp>`"));
    }
    let nu: usize = field(Some(&h[1]), line, "nu")?;
    let nv: usize = field(Some(&h[2]), line, "nv")?;
    let nc: usize = field(Some(&h[3]), line, "ncomp")?;
    let n = nu * nv;
    let mut data = vec![f64::NAN; nc * n];
    let mut seen = vec![false; n];
    for (line, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 + nc {
            return Err(parse_err(line, format!("expected {} fields", 2 + nc)));
        }
        let i: usize = field(Some(toks[0]), line, "i")?;
        let j: usize = field(Some(toks[1]), line, "j")?;
        if i >= nu || j >= nv || seen[i * nv + j] {
            return Err(parse_err(line, format!("node ({i}, {j}) out of range or repeated")));
        }
        seen[i * nv + j] = true;
        for c in 0..nc {
            data[c * n + i * nv + j] = field(Some(toks[2 + c]), line, "value")?;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(parse_err(1, "missing grid nodes"));
    }
    GridFunction::from_vec(nu, nv, nc, data)
}

pub fn save_grid_function(path: impl AsRef<Path>, f: &GridFunction) -> Result<()> {
    Ok(fs::write(path, format_grid_function(f))?)
}

pub fn load_grid_function(path: impl AsRef<Path>) -> Result<GridFunction> {
    parse_grid_function(&fs::read_to_string(path)?)
}

/// One resolution of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub nu: usize,
    pub nv: usize,
    pub tol: Option<f64>,
    pub iterations: Option<usize>,
    pub error: f64,
}

impl ReportRow {
    pub fn nodes(&self) -> usize {
        self.nu * self.nv
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub experiment: String,
    /// Scheme or route of this series.
    pub series: String,
    pub surface: String,
    /// Echo of the quadrature and solver settings.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    /// `None` with fewer than two usable rows.
    pub fitted_order: Option<f64>,
    pub metadata: ReportMeta,
}

/// Rows fitted by [`fitted_order`].
pub const FIT_ROWS: usize = 4;

/// Least-squares slope of `-log(error)` against `log(√N)` over the last
/// [`FIT_ROWS`] rows with a positive error.
pub fn fitted_order(rows: &[ReportRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.error > 0.0).map(|r| ((r.nodes() as f64).sqrt().ln(), r.error.ln())).collect();
    let pts = &pts[pts.len().saturating_sub(FIT_ROWS)..];
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

impl ConvergenceReport {
    /// Sorts the rows by node count and fits the order.
    pub fn new(mut rows: Vec<ReportRow>, metadata: ReportMeta) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| !(r.error >= 0.0)) {
            return Err(Error::Invalid(format!("negative or NaN error {} at {}x{}", r.error, r.nu, r.nv)));
        }
        rows.sort_by_key(|r| r.nodes());
        let fitted_order = fitted_order(&rows);
        Ok(Self { rows, fitted_order, metadata })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Gnuplot,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Gnuplot => "dat",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "gnuplot" | "dat" => Ok(ReportFormat::Gnuplot),
            _ => Err(Error::Invalid(format!("unknown report format `{s}`"))),
        }
    }
}

fn opt<T>(x: Option<T>, f: impl Fn(T) -> String) -> String {
    x.map(f).unwrap_or_default()
}

pub fn render_report(report: &ConvergenceReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Csv => {
            let mut out = String::from("Nu,Nv,tol,iters,error\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.nu,
                    r.nv,
                    opt(r.tol, fmt_f64),
                    opt(r.iterations, |k| k.to_string()),
                    fmt_f64(r.error)
                );
            }
            out
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
        ReportFormat::Gnuplot => {
            let m = &report.metadata;
            let mut out = format!("# {} {} on {}\n", m.experiment, m.series, m.surface);
            if let Some(p) = report.fitted_order {
                let _ = writeln!(out, "# fitted order {p:.3}");
            }
            out.push_str("# N error\n");
            for r in &report.rows {
                let _ = writeln!(out, "{} {}", r.nodes(), fmt_f64(r.error));
            }
            out
        }
    })
}

pub fn write_report(path: impl AsRef<Path>, report: &ConvergenceReport, format: ReportFormat) -> Result<()> {
    Ok(fs::write(path, render_report(report, format)?)?)
}

pub fn read_json_report(path: impl AsRef<Path>) -> Result<ConvergenceReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BuiltinSurface;

    #[test]
    fn surface_round_trip() {
        for b in [BuiltinSurface::CircularTorus, BuiltinSurface::RotatingEllipse] {
            let s = FourierSurface::builtin(b);
            assert_eq!(parse_surface(&format_surface(&s)).unwrap(), s);
        }
        let odd = FourierSurface::new(3, vec![FourierMode::new(0, 0, 1.0 / 3.0, 0.0, 0.0, 0.0), FourierMode::new(1, -2, 0.1, 1e-300, 0.0, 0.2)]).unwrap();
        assert_eq!(parse_surface(&format_surface(&odd)).unwrap(), odd);
    }

    #[test]
    fn surface_errors_carry_lines() {
        assert!(matches!(parse_surface("nfp 0\n0 0 1 0 0 0\n"), Err(Error::Invalid(_))));
        match parse_surface("# c\nnfp 1\n0 0 1 0 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_surface("nfp 1\n0 0 1 x 0 0\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn loop_round_trip() {
        let lp = CurrentLoop::circle([1.0, 0.5, -0.25], [0.3, 0.0, 1.0], 0.7, 2.5).unwrap();
        assert_eq!(parse_loop(&format_loop(&lp)).unwrap(), lp);
    }

    #[test]
    fn grid_function_round_trip() {
        let f = GridFunction::from_vec(2, 3, 2, (0..12).map(|k| (k as f64).sqrt() - 1.0).collect()).unwrap();
        assert_eq!(parse_grid_function(&format_grid_function(&f)).unwrap(), f);
        assert!(parse_grid_function("grid 1 2 1\n0 0 1.0\n").is_err());
    }

    fn meta() -> ReportMeta {
        ReportMeta { experiment: "greens-test".into(), series: "pou".into(), surface: "circular_torus".into(), config: serde_json::json!({}) }
    }

    #[test]
    fn csv_layout() {
        let empty = ConvergenceReport::new(vec![], meta()).unwrap();
        assert_eq!(render_report(&empty, ReportFormat::Csv).unwrap(), "Nu,Nv,tol,iters,error\n");
        assert_eq!(empty.fitted_order, None);
        let rows = [(32, 128, 1e-4), (8, 32, 1e-2), (16, 64, 1e-3)]
            .map(|(nu, nv, e)| ReportRow { nu, nv, tol: None, iterations: Some(3), error: e })
            .to_vec();
        let r = ConvergenceReport::new(rows, meta()).unwrap();
        let csv = render_report(&r, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("8,32,,3,"));
        assert!(lines[3].starts_with("32,128,"));
        // error ∝ (√N)^(-log2 10) with √N doubling per row
        assert!((r.fitted_order.unwrap() - 10f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let rows = vec![ReportRow { nu: 14, nv: 70, tol: Some(0.1), iterations: Some(3), error: 0.12345678901234567 }];
        let r = ConvergenceReport::new(rows, meta()).unwrap();
        let back: ConvergenceReport = serde_json::from_str(&render_report(&r, ReportFormat::Json).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.fitted_order, None);
    }
}
