use layerpot::experiments::{self, Experiment, ExperimentSpec, Resolution};
use layerpot::geom::{BuiltinSurface, FourierSurface, SurfaceGrid};
use layerpot::io::{self, ReportFormat};
use layerpot::kernels::{biot_savart_loop, default_loops};
use layerpot::physics::{make_flux_surface, recover_external_field, CasingRoute};
use layerpot::{GmresConfig, PouConfig};

fn ellipse() -> FourierSurface {
    FourierSurface::builtin(BuiltinSurface::RotatingEllipse)
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = ellipse();
    io::save_surface(dir.path().join("s.txt"), &s).unwrap();
    let back = io::load_surface(dir.path().join("s.txt")).unwrap();
    let a = SurfaceGrid::new(&s, 8, 20).unwrap();
    let b = SurfaceGrid::new(&back, 8, 20).unwrap();
    assert_eq!(a.pos, b.pos);

    let (_, outer) = default_loops(s.major_radius(), s.minor_radius()).unwrap();
    io::save_loop(dir.path().join("l.txt"), &outer.with_current(2.5)).unwrap();
    let lp = io::load_loop(dir.path().join("l.txt")).unwrap();
    let r = [5.0, 1.0, 0.3];
    let (b1, b2) = (biot_savart_loop(&outer, r).unwrap(), biot_savart_loop(&lp, r).unwrap());
    let scale = b1.iter().map(|x| x.abs()).fold(0.0, f64::max);
    assert!((0..3).all(|c| (b2[c] - 2.5 * b1[c]).abs() <= 1e-13 * scale));
}

#[test]
fn recovery_is_invariant_under_current_scaling() {
    let s = FourierSurface::builtin(BuiltinSurface::CircularTorus);
    let grid = SurfaceGrid::new(&s, 16, 64).unwrap();
    let (inner, outer) = default_loops(s.major_radius(), s.minor_radius()).unwrap();
    let (q, g) = (PouConfig::default(), GmresConfig::new(1e-12, 100).unwrap());
    let error = |c: f64| {
        let outer = outer.with_current(c * outer.current());
        let loops = [inner.with_current(c * inner.current()), outer.clone()];
        let (field, _) = make_flux_surface(&grid, &loops, &q, &g).unwrap();
        recover_external_field(&grid, &field, &outer, CasingRoute::BiotSavart, &q).unwrap().0
    };
    let (a, b) = (error(1.0), error(1e-3));
    assert!((a - b).abs() <= 1e-12 * a.max(1e-300) + 1e-15, "{a} {b}");
}

#[test]
fn no_loops_gives_zero_field() {
    let grid = SurfaceGrid::new(&ellipse(), 8, 40).unwrap();
    let (field, rep) = make_flux_surface(&grid, &[], &PouConfig::default(), &GmresConfig::default()).unwrap();
    assert_eq!(field.b.max_abs(), 0.0);
    assert_eq!(rep.iterations, 0);
}

#[test]
fn vacuum_sweep_converges() {
    let mut spec = ExperimentSpec::new(Experiment::VacuumTest, FourierSurface::builtin(BuiltinSurface::CircularTorus), "torus", true);
    spec.resolutions = vec![Resolution::new(12, 48), Resolution::new(24, 96)];
    spec.gmres = GmresConfig::new(1e-12, 100).unwrap();
    let (report, _) = experiments::run_vacuum_test(&spec).unwrap();
    assert!(report.rows[1].error < report.rows[0].error / 50.0, "{:?}", report.rows);
    let csv = io::render_report(&report, ReportFormat::Csv).unwrap();
    assert!(csv.starts_with("Nu,Nv,tol,iters,error\n12,48,"));
}

#[test]
fn json_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::new(Experiment::GreensTest, ellipse(), "rotating_ellipse", true);
    spec.resolutions = vec![Resolution::new(12, 60), Resolution::new(16, 80)];
    let (reports, _) = experiments::run_greens_test(&spec).unwrap();
    let path = dir.path().join("r.json");
    io::write_report(&path, &reports[0], ReportFormat::Json).unwrap();
    assert_eq!(io::read_json_report(&path).unwrap(), reports[0]);
}
