use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use layerpot::experiments::{self, Experiment, ExperimentSpec, Resolution};
use layerpot::io::{self, ConvergenceReport, ReportFormat};
use layerpot::kernels::MU0_SI;
use layerpot::physics::{CasingRoute, Scheme};
use layerpot::{geom, CutoffShape, EtaRule, FourierSurface};

#[derive(Parser)]
#[command(name = "layerpot", version, about = "Convergence studies for singular layer-potential quadrature")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Green's identity residual for a harmonic function, per scheme.
    GreensTest {
        #[command(flatten)]
        common: Common,
        /// Comma-separated schemes: merkel_stag, merkel_nostag, pou.
        #[arg(long, value_delimiter = ',', default_value = "merkel_stag,merkel_nostag,pou")]
        scheme: Vec<Scheme>,
    },
    /// External-field recovery with a loop-manufactured flux surface.
    CasingTest {
        #[command(flatten)]
        common: Common,
        /// Comma-separated routes: biot_savart, vector_potential.
        #[arg(long, value_delimiter = ',', default_value = "biot_savart,vector_potential")]
        route: Vec<CasingRoute>,
        /// Loop file for the loop inside the surface.
        #[arg(long)]
        inner_loop: Option<PathBuf>,
        /// Loop file for the external loop.
        #[arg(long)]
        outer_loop: Option<PathBuf>,
        /// Override the external loop current.
        #[arg(long)]
        external_current: Option<f64>,
    },
    /// Exterior Neumann solve of a point-source potential.
    VacuumTest {
        #[command(flatten)]
        common: Common,
    },
    /// Independent oracles: adaptive quadrature, manufactured solution, finite differences.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Relative error injected into the singular part (sensitivity check).
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_kernel: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Builtin surface name (circular_torus, rotating_ellipse) or surface file.
    #[arg(long)]
    surface: Option<String>,
    /// Comma-separated grids, `NUxNV` or `NUxNV@TOL`.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<Resolution>>,
    /// Short default schedule.
    #[arg(long)]
    quick: bool,
    /// Support radius for `--eta-rule fixed`.
    #[arg(long)]
    eta: Option<f64>,
    /// fixed, sqrt_h or grid_points.
    #[arg(long)]
    eta_rule: Option<EtaRule>,
    /// Support radius in grid points for the grid_points rule.
    #[arg(long)]
    patch_points: Option<f64>,
    /// Cutoff shape: super_gaussian or bump.
    #[arg(long)]
    cutoff: Option<CutoffShape>,
    /// Plateau end of the bump cutoff.
    #[arg(long)]
    x0: Option<f64>,
    /// Lagrange interpolation order.
    #[arg(long)]
    interp_order: Option<usize>,
    /// Polar angular nodes.
    #[arg(long)]
    ntheta: Option<usize>,
    /// Polar radial nodes.
    #[arg(long)]
    nrho: Option<usize>,
    /// GMRES relative tolerance for rows without a scheduled one.
    #[arg(long)]
    gmres_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output file; several series get the series name appended.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json or gnuplot.
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    threads: Option<usize>,
    /// Loop currents in amperes with SI permeability.
    #[arg(long)]
    si_mu0: bool,
}

enum Failure {
    Spec(anyhow::Error),
    Solver(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let solver = e.chain().any(|c| matches!(c.downcast_ref(), Some(layerpot::Error::SolverFailure { .. })));
        if solver {
            Failure::Solver(e)
        } else {
            Failure::Spec(e)
        }
    }
}

impl From<layerpot::Error> for Failure {
    fn from(e: layerpot::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Spec(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_surface(name: &str) -> anyhow::Result<FourierSurface> {
    let path = Path::new(name);
    if path.is_file() {
        return io::load_surface(path).with_context(|| format!("reading surface {name}"));
    }
    Ok(geom::builtin_surface(name)?)
}

fn build_spec(experiment: Experiment, c: &Common) -> anyhow::Result<ExperimentSpec> {
    if let Some(n) = c.threads {
        layerpot::set_threads(n)?;
    }
    let default = match experiment {
        Experiment::CasingTest => "rotating_ellipse",
        _ => "circular_torus",
    };
    let name = c.surface.clone().unwrap_or_else(|| default.into());
    let surface = load_surface(&name)?;
    let mut spec = ExperimentSpec::new(experiment, surface, name, c.quick);
    if let Some(r) = &c.resolutions {
        spec.resolutions = r.clone();
    }
    let pou = &mut spec.pou;
    if let Some(eta) = c.eta {
        pou.eta = eta;
        pou.eta_rule = EtaRule::Fixed;
    }
    if let Some(rule) = c.eta_rule {
        pou.eta_rule = rule;
    }
    if let Some(p) = c.patch_points {
        pou.patch_points = p;
    }
    if let Some(s) = c.cutoff {
        pou.cutoff = s;
    }
    if let Some(x0) = c.x0 {
        pou.x0 = x0;
    }
    if let Some(p) = c.interp_order {
        pou.p = p;
    }
    pou.n_theta = c.ntheta.or(pou.n_theta);
    pou.n_rho = c.nrho.or(pou.n_rho);
    if let Some(t) = c.gmres_tol {
        spec.gmres.tol = t;
    }
    if let Some(m) = c.max_iter {
        spec.gmres.max_iter = m;
    }
    if c.si_mu0 {
        spec.mu0 = MU0_SI;
    }
    spec.validate()?;
    Ok(spec)
}

/// Output path of one series among `n`.
fn series_path(out: &Path, series: &str, n: usize, format: ReportFormat) -> PathBuf {
    if n == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}_{series}.{}", format.extension()))
}

fn emit(reports: &[ConvergenceReport], c: &Common) -> anyhow::Result<()> {
    for r in reports {
        match &c.out {
            Some(out) => {
                let path = series_path(out, &r.metadata.series, reports.len(), c.format);
                io::write_report(&path, r, c.format).with_context(|| format!("writing {}", path.display()))?;
                eprintln!("wrote {}", path.display());
            }
            None => {
                if reports.len() > 1 {
                    println!("# {}", r.metadata.series);
                }
                print!("{}", io::render_report(r, c.format)?);
            }
        }
    }
    Ok(())
}

fn summary(r: &ConvergenceReport) {
    let order = r.fitted_order.map_or("n/a".into(), |p| format!("{p:.2}"));
    let last = r.rows.last().map_or(f64::NAN, |row| row.error);
    eprintln!("{:>16}: finest error {last:.3e}, fitted order {order}", r.metadata.series);
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::GreensTest { common, scheme } => {
            let mut spec = build_spec(Experiment::GreensTest, &common)?;
            spec.schemes = scheme;
            spec.validate()?;
            let (reports, _) = experiments::run_greens_test(&spec)?;
            reports.iter().for_each(summary);
            emit(&reports, &common)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::CasingTest { common, route, inner_loop, outer_loop, external_current } => {
            let mut spec = build_spec(Experiment::CasingTest, &common)?;
            spec.routes = route;
            if inner_loop.is_some() || outer_loop.is_some() || external_current.is_some() {
                let (mut a, mut b) =
                    layerpot::kernels::default_loops(spec.surface.major_radius(), spec.surface.minor_radius())?;
                if let Some(p) = inner_loop {
                    a = io::load_loop(&p).with_context(|| format!("reading loop {}", p.display()))?;
                }
                if let Some(p) = outer_loop {
                    b = io::load_loop(&p).with_context(|| format!("reading loop {}", p.display()))?;
                }
                if let Some(i) = external_current {
                    b = b.with_current(i);
                }
                spec.loops = Some((a, b));
            }
            spec.validate()?;
            let (reports, table, _) = experiments::run_casing_test(&spec)?;
            eprintln!("{:>5} {:>5} {:>8} {:>5} {:>5} {:>10}", "Nu", "Nv", "tol", "iters", "ref", "flux");
            for row in &table {
                let reference = row.reference_iterations.map_or("-".into(), |n| n.to_string());
                eprintln!(
                    "{:>5} {:>5} {:>8.1e} {:>5} {:>5} {:>10.2e}{}",
                    row.nu,
                    row.nv,
                    row.tol,
                    row.iterations,
                    reference,
                    row.flux_residual,
                    row.failure.as_deref().map_or(String::new(), |f| format!("  {f}")),
                );
            }
            reports.iter().for_each(summary);
            emit(&reports, &common)?;
            if table.iter().any(|r| r.failure.is_some()) {
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::VacuumTest { common } => {
            let spec = build_spec(Experiment::VacuumTest, &common)?;
            let (report, _) = experiments::run_vacuum_test(&spec)?;
            summary(&report);
            emit(&[report], &common)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { common, perturb_kernel } => {
            let mut spec = build_spec(Experiment::OracleCheck, &common)?;
            spec.pou.kernel_perturbation = perturb_kernel;
            let checks = experiments::run_oracle_check(&spec)?;
            let text = match common.format {
                ReportFormat::Json => serde_json::to_string_pretty(&checks).context("serializing checks")? + "\n",
                _ => {
                    let mut s = String::from("name,measured,tolerance,passed\n");
                    for c in &checks {
                        s += &format!("{},{},{},{}\n", c.name, io::fmt_f64(c.measured), io::fmt_f64(c.tolerance), c.passed);
                    }
                    s
                }
            };
            match &common.out {
                Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            for c in &checks {
                eprintln!("{} {:<28} {:.3e} (tolerance {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.measured, c.tolerance);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
    }
}

