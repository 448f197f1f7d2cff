//! Independent reference computations used to validate the quadratures:
//! adaptive Gauss-Kronrod integration of the singular integrals, an
//! analytic exterior Neumann solution and finite-difference derivatives.
//!
//! Nothing here shares code with the schemes under test beyond surface
//! evaluation.

use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{FourierSurface, SurfaceGrid};
use crate::grid::GridFunction;
use crate::quad_merkel::{subtracted_term_integral, FundamentalForm};
use crate::quad_pou::{layer_potential_eval, LayerKernel, PouConfig};
use crate::solver::{solve_exterior_neumann, GmresConfig, SolveReport};
use crate::vec3::{cross, dot, norm, sub, Vec3};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
/// Gauss weights for the odd-indexed Kronrod nodes (and the centre).
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// The 15 Kronrod nodes on `[-1, 1]` with Kronrod and embedded Gauss
/// weights (zero off the Gauss nodes).
fn gk15() -> [(f64, f64, f64); 15] {
    let mut out = [(0.0, 0.0, 0.0); 15];
    for k in 0..7 {
        let wg = if k % 2 == 1 { WG[k / 2] } else { 0.0 };
        out[k] = (-XGK[k], WGK[k], wg);
        out[14 - k] = (XGK[k], WGK[k], wg);
    }
    out[7] = (0.0, WGK[7], WG[3]);
    out
}

/// Interval or cell on the work heap, ordered by error estimate.
struct Piece<T> {
    err: f64,
    val: f64,
    region: T,
}

impl<T> PartialEq for Piece<T> {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl<T> Eq for Piece<T> {}
impl<T> PartialOrd for Piece<T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Piece<T> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct Adaptive {
    pub value: f64,
    pub error: f64,
    pub pieces: usize,
}

fn gk_interval(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let (mut k, mut g) = (0.0, 0.0);
    for (x, wk, wg) in gk15() {
        let y = f(c + h * x);
        k += wk * y;
        g += wg * y;
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive G7K15 integration of `f` over `[a, b]`: the interval
/// with the largest error estimate is bisected until the total estimate
/// drops below `max(abs_tol, rel_tol·|I|)` or `max_pieces` is reached.
pub fn gk_adaptive(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64, max_pieces: usize) -> Adaptive {
    let mut heap = BinaryHeap::new();
    let (val, err) = gk_interval(&mut f, a, b);
    heap.push(Piece { err, val, region: (a, b) });
    let (mut total, mut total_err) = (val, err);
    while total_err > abs_tol.max(rel_tol * total.abs()) && heap.len() < max_pieces {
        let Some(p) = heap.pop() else { break };
        let (a, b) = p.region;
        let m = 0.5 * (a + b);
        let (v1, e1) = gk_interval(&mut f, a, m);
        let (v2, e2) = gk_interval(&mut f, m, b);
        total += v1 + v2 - p.val;
        total_err += e1 + e2 - p.err;
        heap.push(Piece { err: e1, val: v1, region: (a, m) });
        heap.push(Piece { err: e2, val: v2, region: (m, b) });
    }
    // Re-sum to shed the drift of the running updates.
    let value = heap.iter().map(|p| p.val).sum();
    let error = heap.iter().map(|p| p.err).sum();
    Adaptive { value, error, pieces: heap.len() }
}

fn gk_cell(f: &mut impl FnMut(f64, f64) -> f64, r: [f64; 4]) -> (f64, f64) {
    let [x0, x1, y0, y1] = r;
    let (cx, hx) = (0.5 * (x0 + x1), 0.5 * (x1 - x0));
    let (cy, hy) = (0.5 * (y0 + y1), 0.5 * (y1 - y0));
    let rule = gk15();
    let (mut k, mut g) = (0.0, 0.0);
    for &(x, wkx, wgx) in &rule {
        for &(y, wky, wgy) in &rule {
            let v = f(cx + hx * x, cy + hy * y);
            k += wkx * wky * v;
            g += wgx * wgy * v;
        }
    }
    let s = hx * hy;
    (k * s, ((k - g) * s).abs())
}

/// Globally adaptive tensor G7K15 cubature over the rectangle
/// `[x0, x1] × [y0, y1]` by quadtree refinement. Integrable point
/// singularities are fine as long as they sit on cell corners.
pub fn cubature_adaptive(
    mut f: impl FnMut(f64, f64) -> f64,
    rect: [f64; 4],
    abs_tol: f64,
    rel_tol: f64,
    max_pieces: usize,
) -> Adaptive {
    let mut heap = BinaryHeap::new();
    let (val, err) = gk_cell(&mut f, rect);
    heap.push(Piece { err, val, region: rect });
    let (mut total, mut total_err) = (val, err);
    while total_err > abs_tol.max(rel_tol * total.abs()) && heap.len() < max_pieces {
        let Some(p) = heap.pop() else { break };
        let [x0, x1, y0, y1] = p.region;
        let (xm, ym) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        total -= p.val;
        total_err -= p.err;
        for r in [[x0, xm, y0, ym], [xm, x1, y0, ym], [x0, xm, ym, y1], [xm, x1, ym, y1]] {
            let (v, e) = gk_cell(&mut f, r);
            total += v;
            total_err += e;
            heap.push(Piece { err: e, val: v, region: r });
        }
    }
    let value = heap.iter().map(|p| p.val).sum();
    let error = heap.iter().map(|p| p.err).sum();
    Adaptive { value, error, pieces: heap.len() }
}

/// `∫∫ ds dt / sqrt(E s² + 2F st + G t²)` over `[-π, π]²` by quadtree
/// cubature of the four quadrants, each with the singularity at a corner.
pub fn subtracted_term_oracle(form: &FundamentalForm) -> Result<f64> {
    let form = FundamentalForm::new(form.e, form.f, form.g)?;
    let f = |s: f64, t: f64| 1.0 / form.quad(s, t).sqrt();
    let mut acc = 0.0;
    for rect in [[0.0, PI, 0.0, PI], [-PI, 0.0, 0.0, PI], [0.0, PI, -PI, 0.0], [-PI, 0.0, -PI, 0.0]] {
        acc += cubature_adaptive(f, rect, 1e-14, 1e-15, 200_000).value;
    }
    Ok(acc)
}

/// `(1/4π) ∫ |r_u × r_v| / |r(u0, v0) - r(u, v)| du dv` over one period,
/// the single layer of `σ ≡ 1` at a point of the surface.
///
/// The period square is centred on the target and integrated in polar
/// coordinates `(ρ, θ)` of the parameter plane, where the Jacobian `ρ`
/// cancels the singularity; both directions are adaptive G7K15.
pub fn single_layer_constant_oracle(surface: &FourierSurface, u0: f64, v0: f64) -> f64 {
    let r0 = surface.eval(u0, v0).r;
    let integrand = |rho: f64, c: f64, s: f64| {
        let p = surface.eval(u0 + rho * c, v0 + rho * s);
        let g = norm(cross(p.r_u, p.r_v));
        rho * g / norm(sub(r0, p.r))
    };
    let mut acc = 0.0;
    for k in 0..8 {
        let a = -FRAC_PI_4 + k as f64 * FRAC_PI_4;
        acc += gk_adaptive(
            |th| {
                let (s, c) = th.sin_cos();
                let rmax = PI / c.abs().max(s.abs());
                gk_adaptive(|rho| integrand(rho, c, s), 0.0, rmax, 1e-16, 1e-14, 2000).value
            },
            a,
            a + FRAC_PI_4,
            1e-15,
            1e-14,
            2000,
        )
        .value;
    }
    acc / (4.0 * PI)
}

/// The centroid of the cross-section at toroidal angle `v`, which lies
/// inside the surface for the convex cross-sections used here.
pub fn interior_point(surface: &FourierSurface, v: f64) -> Vec3 {
    let n = 64;
    let (mut r, mut z) = (0.0, 0.0);
    for k in 0..n {
        let u = std::f64::consts::TAU * k as f64 / n as f64;
        let p = surface.eval(u, v).r;
        r += p[0].hypot(p[1]);
        z += p[2];
    }
    let (r, z) = (r / n as f64, z / n as f64);
    [r * v.cos(), r * v.sin(), z]
}

/// Outcome of the point-source Neumann test.
#[derive(Clone, Debug)]
pub struct ManufacturedSolve {
    /// `‖Φ - Φ_exact‖∞ / ‖Φ_exact‖∞` on the grid.
    pub error: f64,
    pub report: SolveReport,
}

/// Solve the exterior Neumann problem whose exact solution is the field of
/// a unit point source at `r0` inside the surface,
/// `Φ = 1 / (4π |r - r0|)`, with analytic boundary data `n·∇Φ`.
pub fn manufactured_neumann(grid: &SurfaceGrid, r0: Vec3, qcfg: &PouConfig, gcfg: &GmresConfig) -> Result<ManufacturedSolve> {
    let exact = GridFunction::from_nodes(grid, |k| 1.0 / (4.0 * PI * norm(sub(grid.pos[k], r0))));
    let bn = GridFunction::from_nodes(grid, |k| {
        let d = sub(grid.pos[k], r0);
        let r = norm(d);
        -dot(grid.normal[k], d) / (4.0 * PI * r * r * r)
    });
    let (phi, report) = solve_exterior_neumann(grid, &bn, qcfg, gcfg)?;
    Ok(ManufacturedSolve { error: phi.max_abs_diff(&exact) / exact.max_abs(), report })
}

/// Largest relative deviation of the stored tangents of `grid` from
/// central differences of the surface map with step `h`.
pub fn tangent_fd_error(grid: &SurfaceGrid, h: f64) -> f64 {
    let s = grid.surface();
    let mut worst = 0.0f64;
    for i in 0..grid.nu() {
        for j in 0..grid.nv() {
            let (u, v) = (grid.u(i), grid.v(j));
            let k = grid.index(i, j);
            let fu = sub(s.eval(u + h, v).r, s.eval(u - h, v).r);
            let fv = sub(s.eval(u, v + h).r, s.eval(u, v - h).r);
            let eu = norm(sub(crate::vec3::scale(fu, 0.5 / h), grid.r_u[k])) / norm(grid.r_u[k]);
            let ev = norm(sub(crate::vec3::scale(fv, 0.5 / h), grid.r_v[k])) / norm(grid.r_v[k]);
            worst = worst.max(eu).max(ev);
        }
    }
    worst
}

/// One line of the oracle suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &str, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, passed: measured <= tolerance }
    }
}

/// Resolutions and tolerances of the oracle suite.
#[derive(Clone, Debug)]
pub struct OracleSuite {
    /// Grid for the single-layer comparison.
    pub sl_grid: (usize, usize),
    pub sl_tol: f64,
    pub form_tol: f64,
    /// Grid for the manufactured Neumann solve; the half-resolution grid is
    /// solved too for the refinement ratio.
    pub neumann_grid: (usize, usize),
    pub neumann_tol: f64,
    pub gmres_tol: f64,
    pub fd_tol: f64,
}

impl Default for OracleSuite {
    fn default() -> Self {
        Self {
            sl_grid: (64, 256),
            sl_tol: 1e-9,
            form_tol: 1e-10,
            neumann_grid: (64, 320),
            neumann_tol: 1e-8,
            gmres_tol: 1e-10,
            fd_tol: 1e-8,
        }
    }
}

/// Fundamental forms covering round, stretched and sheared cells.
pub const SAMPLE_FORMS: [(f64, f64, f64); 4] = [(1.0, 0.0, 1.0), (0.25, 0.0, 4.0), (1.0, 0.6, 0.5), (0.0625, -0.2, 2.0)];

/// Run every oracle against `surface` with quadrature settings `cfg`.
pub fn run_oracle_suite(surface: &FourierSurface, cfg: &PouConfig, suite: &OracleSuite) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();

    let (nu, nv) = suite.sl_grid;
    let grid = SurfaceGrid::new(surface, nu, nv)?;
    let (i, j) = (nu / 5, nv / 7);
    let sl = layer_potential_eval(&grid, &GridFunction::constant(&grid, 1.0), LayerKernel::SingleLayer, cfg, 0.25 / PI)?;
    let want = single_layer_constant_oracle(surface, grid.u(i), grid.v(j));
    out.push(OracleCheck::new("single_layer_constant", (sl.at(0, grid.index(i, j)) - want).abs() / want.abs(), suite.sl_tol));

    let mut worst = 0.0f64;
    for (e, f, g) in SAMPLE_FORMS {
        let form = FundamentalForm::new(e, f, g)?;
        let want = subtracted_term_oracle(&form)?;
        worst = worst.max((subtracted_term_integral(&form)? - want).abs() / want);
    }
    out.push(OracleCheck::new("subtracted_term_integral", worst, suite.form_tol));

    let (nu, nv) = suite.neumann_grid;
    let gcfg = GmresConfig::new(suite.gmres_tol, 200)?;
    let r0 = interior_point(surface, 0.4);
    let fine = manufactured_neumann(&SurfaceGrid::new(surface, nu, nv)?, r0, cfg, &gcfg)?;
    let coarse = manufactured_neumann(&SurfaceGrid::new(surface, nu / 2, nv / 2)?, r0, cfg, &gcfg)?;
    out.push(OracleCheck::new("manufactured_neumann", fine.error, suite.neumann_tol));
    // Passing means the error fell by at least 2^6 under refinement.
    out.push(OracleCheck::new("manufactured_neumann_ratio", 64.0 * fine.error / coarse.error, 1.0));

    out.push(OracleCheck::new("tangent_finite_difference", tangent_fd_error(&grid, 1e-5), suite.fd_tol));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_rules_integrate_polynomials() {
        let r = gk_adaptive(|x| x.powi(6) - 2.0 * x, 0.0, 2.0, 1e-14, 1e-14, 1);
        assert!((r.value - (128.0 / 7.0 - 4.0)).abs() < 1e-12);
        let c = cubature_adaptive(|x, y| x * x * y, [0.0, 1.0, 0.0, 3.0], 1e-14, 1e-14, 1);
        assert!((c.value - 1.5).abs() < 1e-13);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = gk_adaptive(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-13, 1e-13, 10_000);
        assert!((r.value - 2.0).abs() < 1e-11, "{r:?}");
        let c = cubature_adaptive(|x, y| 1.0 / x.hypot(y), [0.0, 1.0, 0.0, 1.0], 1e-13, 1e-13, 100_000);
        let exact = 2.0 * (1.0 + 2f64.sqrt()).ln();
        assert!((c.value - exact).abs() < 1e-11, "{c:?}");
    }

    #[test]
    fn interior_point_is_the_axis_of_a_torus() {
        let s = FourierSurface::builtin(crate::geom::BuiltinSurface::CircularTorus);
        let p = interior_point(&s, 0.0);
        assert!((p[0] - s.major_radius()).abs() < 1e-14 && p[1].abs() < 1e-14 && p[2].abs() < 1e-14);
    }
}
