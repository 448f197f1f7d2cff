//! Convergence studies behind the command-line driver: the Green's-identity
//! sweep, external-field recovery with current loops, the point-source
//! vacuum solve and the oracle suite.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{FourierSurface, SurfaceGrid};
use crate::io::{ConvergenceReport, ReportMeta, ReportRow};
use crate::kernels::{default_loops, CurrentLoop};
use crate::oracle::{interior_point, manufactured_neumann, run_oracle_suite, OracleCheck, OracleSuite};
use crate::physics::{greens_identity_error, make_flux_surface, recover_external_field, CasingRoute, Scheme};
use crate::quad_pou::PouConfig;
use crate::solver::GmresConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GreensTest,
    CasingTest,
    VacuumTest,
    OracleCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::GreensTest => "greens-test",
            Experiment::CasingTest => "casing-test",
            Experiment::VacuumTest => "vacuum-test",
            Experiment::OracleCheck => "oracle-check",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One grid of a study, with the GMRES tolerance to use there if the
/// schedule fixes one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub nu: usize,
    pub nv: usize,
    pub tol: Option<f64>,
}

impl Resolution {
    pub fn new(nu: usize, nv: usize) -> Self {
        Self { nu, nv, tol: None }
    }
}

impl FromStr for Resolution {
    type Err = Error;
    /// `NUxNV` or `NUxNV@TOL`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("resolution `{s}` is not of the form NUxNV[@TOL]"));
        let (grid, tol) = match s.split_once('@') {
            Some((g, t)) => (g, Some(t.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let (a, b) = grid.split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(Self { nu: a.trim().parse().map_err(|_| bad())?, nv: b.trim().parse().map_err(|_| bad())?, tol })
    }
}

/// Parse a comma-separated resolution list.
pub fn parse_resolutions(s: &str) -> Result<Vec<Resolution>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
}

/// `(Nu, Nv, GMRES tolerance, reference iteration count)` of the
/// external-field recovery study.
pub const TABLE_SCHEDULE: [(usize, usize, f64, usize); 9] = [
    (14, 70, 1e-1, 3),
    (42, 210, 3e-3, 6),
    (84, 420, 1e-4, 8),
    (112, 560, 3e-5, 9),
    (154, 770, 1e-6, 13),
    (196, 980, 1e-7, 14),
    (252, 1260, 1e-8, 16),
    (322, 1610, 1e-9, 18),
    (392, 1960, 1e-10, 20),
];

/// Rows of [`TABLE_SCHEDULE`] run by `--quick`.
pub const QUICK_ROWS: usize = 3;

pub fn table_schedule(quick: bool) -> Vec<Resolution> {
    let n = if quick { QUICK_ROWS } else { TABLE_SCHEDULE.len() };
    TABLE_SCHEDULE[..n].iter().map(|&(nu, nv, tol, _)| Resolution { nu, nv, tol: Some(tol) }).collect()
}

/// Reference iteration count for a schedule grid.
pub fn reference_iterations(nu: usize, nv: usize) -> Option<usize> {
    TABLE_SCHEDULE.iter().find(|r| r.0 == nu && r.1 == nv).map(|r| r.3)
}

/// Default Green's-identity sweep: six refinements, `Nv = 4 Nu` on the
/// torus and `Nv = 5 Nu` on the rotating ellipse (which needs finer grids).
pub fn greens_schedule(surface: &FourierSurface, quick: bool) -> Vec<Resolution> {
    let (aspect, nus): (usize, &[usize]) = if surface.is_axisymmetric() {
        (4, &[16, 24, 32, 40, 48, 56])
    } else {
        (5, &[24, 32, 40, 48, 64, 80])
    };
    let nus = if quick { &nus[..4] } else { nus };
    nus.iter().map(|&nu| Resolution::new(nu, aspect * nu)).collect()
}

pub fn vacuum_schedule(surface: &FourierSurface, quick: bool) -> Vec<Resolution> {
    let (aspect, nus): (usize, &[usize]) = if surface.is_axisymmetric() {
        (4, &[16, 24, 32, 48, 64])
    } else {
        (5, &[32, 48, 64, 80, 96])
    };
    let nus = if quick { &nus[..3] } else { nus };
    nus.iter().map(|&nu| Resolution::new(nu, aspect * nu)).collect()
}

/// Everything one run of the driver needs.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub surface: FourierSurface,
    /// Builtin name or file path, for the report.
    pub surface_name: String,
    /// Schemes of the Green's-identity test.
    pub schemes: Vec<Scheme>,
    /// Routes of the casing test.
    pub routes: Vec<CasingRoute>,
    pub resolutions: Vec<Resolution>,
    pub pou: PouConfig,
    /// Tolerance for rows without a scheduled one, and the iteration cap.
    pub gmres: GmresConfig,
    /// `(inner, external)` loops; the default pair when `None`.
    pub loops: Option<(CurrentLoop, CurrentLoop)>,
    /// Permeability multiplying the loop fields (1 for the unit convention).
    pub mu0: f64,
}

impl ExperimentSpec {
    /// Spec with the default schedule for `experiment`.
    pub fn new(experiment: Experiment, surface: FourierSurface, surface_name: impl Into<String>, quick: bool) -> Self {
        let resolutions = match experiment {
            Experiment::GreensTest => greens_schedule(&surface, quick),
            Experiment::CasingTest => table_schedule(quick),
            Experiment::VacuumTest => vacuum_schedule(&surface, quick),
            Experiment::OracleCheck => vec![],
        };
        Self {
            experiment,
            surface,
            surface_name: surface_name.into(),
            schemes: Scheme::ALL.to_vec(),
            routes: vec![CasingRoute::BiotSavart, CasingRoute::VectorPotential],
            resolutions,
            pou: PouConfig::default(),
            gmres: GmresConfig::default(),
            loops: None,
            mu0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pou.validate()?;
        self.gmres.validate()?;
        if self.experiment != Experiment::OracleCheck && self.resolutions.is_empty() {
            return Err(Error::Invalid("resolution list is empty".into()));
        }
        for r in &self.resolutions {
            if r.nu < 4 || r.nv < 4 {
                return Err(Error::Invalid(format!("grid {}x{} is smaller than 4x4", r.nu, r.nv)));
            }
            if let Some(t) = r.tol {
                GmresConfig::new(t, self.gmres.max_iter)?;
            }
        }
        if self.experiment == Experiment::GreensTest && self.schemes.is_empty() {
            return Err(Error::Invalid("no schemes selected".into()));
        }
        if self.experiment == Experiment::CasingTest && self.routes.is_empty() {
            return Err(Error::Invalid("no casing routes selected".into()));
        }
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(Error::Invalid(format!("mu0 = {} must be positive", self.mu0)));
        }
        Ok(())
    }

    fn meta(&self, series: &str) -> ReportMeta {
        ReportMeta {
            experiment: self.experiment.name().into(),
            series: series.into(),
            surface: self.surface_name.clone(),
            config: serde_json::json!({
                "pou": self.pou,
                "gmres_tol": self.gmres.tol,
                "max_iter": self.gmres.max_iter,
                "mu0": self.mu0,
            }),
        }
    }

    fn grid(&self, r: &Resolution) -> Result<SurfaceGrid> {
        SurfaceGrid::new(&self.surface, r.nu, r.nv)
    }

    fn row_gmres(&self, r: &Resolution) -> Result<GmresConfig> {
        GmresConfig::new(r.tol.unwrap_or(self.gmres.tol), self.gmres.max_iter)
    }

    fn loops(&self) -> Result<(CurrentLoop, CurrentLoop)> {
        let (a, b) = match &self.loops {
            Some(l) => l.clone(),
            None => default_loops(self.surface.major_radius(), self.surface.minor_radius())?,
        };
        Ok((a.with_current(a.current() * self.mu0), b.with_current(b.current() * self.mu0)))
    }
}

/// Wall-clock seconds per row, kept out of the reports so those stay
/// reproducible.
pub type Timings = Vec<f64>;

/// One report per scheme.
pub fn run_greens_test(spec: &ExperimentSpec) -> Result<(Vec<ConvergenceReport>, Timings)> {
    spec.validate()?;
    let mut rows: Vec<Vec<ReportRow>> = vec![Vec::new(); spec.schemes.len()];
    let mut times = Vec::new();
    for r in &spec.resolutions {
        let t = Instant::now();
        let grid = spec.grid(r)?;
        for (k, &s) in spec.schemes.iter().enumerate() {
            let error = greens_identity_error(&grid, s, &spec.pou)?;
            log::info!("{}x{} {s}: {error:.3e}", r.nu, r.nv);
            rows[k].push(ReportRow { nu: r.nu, nv: r.nv, tol: None, iterations: None, error });
        }
        times.push(t.elapsed().as_secs_f64());
    }
    let reports = spec
        .schemes
        .iter()
        .zip(rows)
        .map(|(s, rows)| ConvergenceReport::new(rows, spec.meta(s.name())))
        .collect::<Result<_>>()?;
    Ok((reports, times))
}

/// One resolution of the external-field recovery study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CasingRow {
    pub nu: usize,
    pub nv: usize,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reference_iterations: Option<usize>,
    /// `‖n·B_tot‖∞ / ‖B_tot‖∞` of the manufactured field.
    pub flux_residual: f64,
    /// Error per route, in route order; `None` when the solve broke down.
    pub errors: Vec<Option<f64>>,
    pub failure: Option<String>,
}

/// Build the flux-surface field from the loop pair at each resolution and
/// recover the external loop's normal field by each route. Solver failures
/// are recorded in the row and the study continues.
pub fn run_casing_test(spec: &ExperimentSpec) -> Result<(Vec<ConvergenceReport>, Vec<CasingRow>, Timings)> {
    spec.validate()?;
    let (inner, outer) = spec.loops()?;
    let loops = [inner, outer.clone()];
    let mut table = Vec::new();
    let mut times = Vec::new();
    for r in &spec.resolutions {
        let t = Instant::now();
        let grid = spec.grid(r)?;
        let gcfg = spec.row_gmres(r)?;
        let mut row = CasingRow {
            nu: r.nu,
            nv: r.nv,
            tol: gcfg.tol,
            iterations: 0,
            converged: false,
            reference_iterations: reference_iterations(r.nu, r.nv),
            flux_residual: f64::NAN,
            errors: vec![None; spec.routes.len()],
            failure: None,
        };
        match make_flux_surface(&grid, &loops, &spec.pou, &gcfg) {
            Ok((field, rep)) => {
                row.iterations = rep.iterations;
                row.converged = rep.converged;
                if !rep.converged {
                    let e = Error::SolverFailure { iterations: rep.iterations, residual: rep.final_residual };
                    row.failure = Some(e.to_string());
                }
                row.flux_residual = field.flux_residual(&grid);
                for (k, &route) in spec.routes.iter().enumerate() {
                    let (err, _) = recover_external_field(&grid, &field, &outer, route, &spec.pou)?;
                    row.errors[k] = Some(err);
                }
            }
            Err(e @ Error::SolverFailure { .. }) => row.failure = Some(e.to_string()),
            Err(e) => return Err(e),
        }
        log::info!("{}x{}: {:?}", r.nu, r.nv, row);
        times.push(t.elapsed().as_secs_f64());
        table.push(row);
    }
    let reports = spec
        .routes
        .iter()
        .enumerate()
        .map(|(k, route)| {
            let rows = table
                .iter()
                .filter_map(|row| {
                    row.errors[k].map(|error| ReportRow {
                        nu: row.nu,
                        nv: row.nv,
                        tol: Some(row.tol),
                        iterations: Some(row.iterations),
                        error,
                    })
                })
                .collect();
            ConvergenceReport::new(rows, spec.meta(route.name()))
        })
        .collect::<Result<_>>()?;
    Ok((reports, table, times))
}

/// Route outputs on a coarse grid compared with each other and with their
/// own values on a grid refined by an integer factor (whose nodes contain
/// the coarse ones).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteConsistency {
    pub nu: usize,
    pub nv: usize,
    pub factor: usize,
    /// `‖bs - vp‖∞ / ‖B‖∞` on the coarse grid.
    pub agreement: f64,
    /// Coarse-versus-fine self-convergence error of each route.
    pub self_biot_savart: f64,
    pub self_vector_potential: f64,
    /// Errors against the direct loop field on the coarse grid.
    pub error_biot_savart: f64,
    pub error_vector_potential: f64,
}

pub fn run_route_consistency(spec: &ExperimentSpec, coarse: Resolution, factor: usize) -> Result<RouteConsistency> {
    spec.validate()?;
    if factor < 2 {
        return Err(Error::Invalid("refinement factor must be at least 2".into()));
    }
    let (inner, outer) = spec.loops()?;
    let loops = [inner, outer.clone()];
    let tol = spec.row_gmres(&coarse)?;
    let fine = Resolution { nu: coarse.nu * factor, nv: coarse.nv * factor, tol: coarse.tol };
    let mut recovered = Vec::new();
    for r in [coarse, fine] {
        let grid = spec.grid(&r)?;
        let (field, _) = make_flux_surface(&grid, &loops, &spec.pou, &tol)?;
        let scale = field.b.max_norm3();
        let mut per_route = Vec::new();
        for route in [CasingRoute::BiotSavart, CasingRoute::VectorPotential] {
            let (err, bn) = recover_external_field(&grid, &field, &outer, route, &spec.pou)?;
            per_route.push((err, bn));
        }
        recovered.push((grid, scale, per_route));
    }
    let (cg, cscale, c) = &recovered[0];
    let (fg, _, f) = &recovered[1];
    let self_err = |k: usize| {
        let mut worst = 0.0f64;
        for i in 0..cg.nu() {
            for j in 0..cg.nv() {
                let a = c[k].1.at(0, cg.index(i, j));
                let b = f[k].1.at(0, fg.index(i * factor, j * factor));
                worst = worst.max((a - b).abs());
            }
        }
        worst / cscale
    };
    Ok(RouteConsistency {
        nu: coarse.nu,
        nv: coarse.nv,
        factor,
        agreement: c[0].1.max_abs_diff(&c[1].1) / cscale,
        self_biot_savart: self_err(0),
        self_vector_potential: self_err(1),
        error_biot_savart: c[0].0,
        error_vector_potential: c[1].0,
    })
}

/// Point-source exterior Neumann problem across the resolutions.
pub fn run_vacuum_test(spec: &ExperimentSpec) -> Result<(ConvergenceReport, Timings)> {
    spec.validate()?;
    let r0 = interior_point(&spec.surface, 0.4);
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for r in &spec.resolutions {
        let t = Instant::now();
        let grid = spec.grid(r)?;
        let gcfg = spec.row_gmres(r)?;
        let m = manufactured_neumann(&grid, r0, &spec.pou, &gcfg)?;
        rows.push(ReportRow { nu: r.nu, nv: r.nv, tol: Some(gcfg.tol), iterations: Some(m.report.iterations), error: m.error });
        times.push(t.elapsed().as_secs_f64());
    }
    Ok((ConvergenceReport::new(rows, spec.meta("point_source"))?, times))
}

pub fn run_oracle_check(spec: &ExperimentSpec) -> Result<Vec<OracleCheck>> {
    spec.validate()?;
    let mut suite = OracleSuite { gmres_tol: spec.gmres.tol.min(1e-10), ..OracleSuite::default() };
    if let Some(r) = spec.resolutions.first() {
        suite.neumann_grid = (r.nu, r.nv);
    }
    run_oracle_suite(&spec.surface, &spec.pou, &suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BuiltinSurface;

    #[test]
    fn resolution_parsing() {
        assert_eq!("14x70".parse::<Resolution>().unwrap(), Resolution::new(14, 70));
        let r: Resolution = "84X420@1e-4".parse().unwrap();
        assert_eq!((r.nu, r.nv, r.tol), (84, 420, Some(1e-4)));
        assert!("84".parse::<Resolution>().is_err());
        assert!("axb".parse::<Resolution>().is_err());
        assert_eq!(parse_resolutions("8x32, 16x64,").unwrap().len(), 2);
    }

    #[test]
    fn schedules() {
        assert_eq!(table_schedule(true).len(), 3);
        assert_eq!(table_schedule(false).last().unwrap().nu, 392);
        assert_eq!(reference_iterations(84, 420), Some(8));
        assert_eq!(reference_iterations(80, 400), None);
        let torus = FourierSurface::builtin(BuiltinSurface::CircularTorus);
        assert_eq!(greens_schedule(&torus, false).len(), 6);
    }

    #[test]
    fn validation() {
        let torus = FourierSurface::builtin(BuiltinSurface::CircularTorus);
        let mut spec = ExperimentSpec::new(Experiment::GreensTest, torus, "circular_torus", true);
        assert!(spec.validate().is_ok());
        spec.resolutions.clear();
        assert!(spec.validate().is_err());
        spec.resolutions = vec![Resolution::new(2, 8)];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_resolution_has_no_order() {
        let torus = FourierSurface::builtin(BuiltinSurface::CircularTorus);
        let mut spec = ExperimentSpec::new(Experiment::GreensTest, torus, "circular_torus", true);
        spec.resolutions = vec![Resolution::new(12, 48)];
        let (reports, _) = run_greens_test(&spec).unwrap();
        assert_eq!(reports.len(), 3);
        assert!(reports.iter().all(|r| r.rows.len() == 1 && r.fitted_order.is_none()));
    }
}
