//! Low-order singularity subtraction on the first fundamental form.
//!
//! At a target `(u, v)` the distance to a nearby source is approximated by
//! `R(Δu, Δv) = sqrt(E Δu² + 2F ΔuΔv + G Δv²)`. The term `σ_t g_t / R` is
//! subtracted from the single-layer integrand, the bounded remainder is
//! summed with the trapezoidal rule, and the integral of the subtracted
//! term over the centred cell `[-π, π]²` is added back semi-analytically.
//! The double layer is treated the same way with the leading term
//! `σ_t g_t II(Δu, Δv) / (2R³)`, where `II` is the second fundamental form.
//!
//! Both schemes are second order. In the staggered variant the sources sit
//! at the half-integer nodes `(u_i + h_u/2, v_j + h_v/2)`, so no source
//! coincides with a target; in the plain variant the coincident node is
//! dropped.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use crate::error::{precondition, Error, Result};
use crate::farfield::{Engine, Kern, Near};
use crate::geom::SurfaceGrid;
use crate::grid::{fourier_shift, gauss_legendre, GridFunction, QuadRule1D};
use crate::par;
use crate::vec3::dot;

/// First fundamental form at a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalForm {
    pub e: f64,
    pub f: f64,
    pub g: f64,
}

impl FundamentalForm {
    pub fn new(e: f64, f: f64, g: f64) -> Result<Self> {
        let form = Self { e, f, g };
        if !(e > 0.0 && g > 0.0 && form.det() > 0.0) {
            return Err(precondition(format!("fundamental form ({e}, {f}, {g}) is not positive definite")));
        }
        Ok(form)
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.e * self.g - self.f * self.f
    }

    #[inline]
    pub fn quad(&self, du: f64, dv: f64) -> f64 {
        self.e * du * du + 2.0 * self.f * du * dv + self.g * dv * dv
    }

    /// `R(Δu, Δv)`.
    #[inline]
    pub fn dist(&self, du: f64, dv: f64) -> f64 {
        self.quad(du, dv).sqrt()
    }
}

/// Second fundamental form `L = n·r_uu`, `M = n·r_uv`, `N = n·r_vv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondForm {
    pub l: f64,
    pub m: f64,
    pub n: f64,
}

impl SecondForm {
    #[inline]
    pub fn quad(&self, du: f64, dv: f64) -> f64 {
        self.l * du * du + 2.0 * self.m * du * dv + self.n * dv * dv
    }
}

pub fn fundamental_form(grid: &SurfaceGrid, i: usize, j: usize) -> FundamentalForm {
    let k = grid.index(i, j);
    let (ru, rv) = (grid.r_u[k], grid.r_v[k]);
    FundamentalForm { e: dot(ru, ru), f: dot(ru, rv), g: dot(rv, rv) }
}

pub fn second_form(grid: &SurfaceGrid, i: usize, j: usize) -> SecondForm {
    let k = grid.index(i, j);
    let p = grid.surface().eval_second(grid.u(i), grid.v(j));
    let n = grid.normal[k];
    SecondForm { l: dot(n, p.r_uu), m: dot(n, p.r_uv), n: dot(n, p.r_vv) }
}

fn outer_rule() -> &'static QuadRule1D {
    use std::sync::OnceLock;
    static RULE: OnceLock<QuadRule1D> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(32).expect("valid order"))
}

/// `∫∫ ds dt / R(s, t)` over `[-π, π]²`.
///
/// The inner integral in `s` is done in closed form with `asinh`; the outer
/// integrand has a `-(2/√E) ln|t|` singularity that is subtracted and
/// integrated exactly, leaving a smooth remainder for Gauss-Legendre panels.
pub fn subtracted_term_integral(form: &FundamentalForm) -> Result<f64> {
    let form = FundamentalForm::new(form.e, form.f, form.g)?;
    let (e, f) = (form.e, form.f);
    let sd = form.det().sqrt();
    let se = e.sqrt();
    let inner = |t: f64| {
        let at = t.abs() * sd;
        (((e * PI + f * t) / at).asinh() - ((-e * PI + f * t) / at).asinh()) / se
    };
    let rule = outer_rule();
    let panels = 8;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = PI * p as f64 / panels as f64;
        let b = PI * (p + 1) as f64 / panels as f64;
        acc += rule.integrate(a, b, |t| inner(t) + 2.0 / se * t.ln());
    }
    Ok(2.0 * (acc - 2.0 / se * (PI * PI.ln() - PI)))
}

/// `∫ ρmax(θ) h(θ) dθ` over the full circle, where `ρmax` reaches the
/// boundary of `[-π, π]²`; panels split at the cell corners.
fn polar_cell_integral(h: impl Fn(f64, f64) -> f64) -> f64 {
    let rule = outer_rule();
    let mut acc = 0.0;
    for p in 0..8 {
        let a = -FRAC_PI_4 + p as f64 * FRAC_PI_4;
        acc += rule.integrate(a, a + FRAC_PI_4, |th| {
            let (s, c) = th.sin_cos();
            PI / c.abs().max(s.abs()) * h(c, s)
        });
    }
    acc
}

/// `∫∫ ds dt / R(s, t)` over `[-π, π]²` by the polar form
/// `∫ ρmax(θ) / sqrt(Q(θ)) dθ`. Independent of [`subtracted_term_integral`].
pub fn subtracted_term_integral_polar(form: &FundamentalForm) -> Result<f64> {
    let form = FundamentalForm::new(form.e, form.f, form.g)?;
    Ok(polar_cell_integral(|c, s| 1.0 / form.quad(c, s).sqrt()))
}

/// `∫∫ II(s, t) / (2 R(s, t)³) ds dt` over `[-π, π]²`, the integral of the
/// leading double-layer term.
pub fn dl_subtracted_term_integral(form: &FundamentalForm, second: &SecondForm) -> Result<f64> {
    let form = FundamentalForm::new(form.e, form.f, form.g)?;
    Ok(polar_cell_integral(|c, s| {
        let q = form.quad(c, s);
        second.quad(c, s) / (2.0 * q * q.sqrt())
    }))
}

/// Trapezoidal weights along one offset axis of the centred cell. With
/// `staggered` the offsets are half-integer and no endpoint correction is
/// needed; otherwise the `-π` node is split between `-π` and `+π`.
fn cell_offsets(n: usize, staggered: bool) -> Vec<(f64, f64)> {
    let h = TAU / n as f64;
    let half = (n / 2) as isize;
    let mut out = Vec::with_capacity(n + 1);
    for k in -half..(n as isize - half) {
        if staggered {
            out.push(((k as f64 + 0.5) * h, 1.0));
        } else if k == -half && n % 2 == 0 {
            out.push((-PI, 0.5));
            out.push((PI, 0.5));
        } else {
            out.push((k as f64 * h, 1.0));
        }
    }
    out
}

/// Trapezoidal sum of `f(Δu, Δv)` over the centred cell, excluding the
/// origin in the plain variant.
fn cell_sum(nu: usize, nv: usize, staggered: bool, f: impl Fn(f64, f64) -> f64) -> f64 {
    let ou = cell_offsets(nu, staggered);
    let ov = cell_offsets(nv, staggered);
    let mut acc = 0.0;
    for &(du, wu) in &ou {
        let mut row = 0.0;
        for &(dv, wv) in &ov {
            if !staggered && du == 0.0 && dv == 0.0 {
                continue;
            }
            row += wv * f(du, dv);
        }
        acc += wu * row;
    }
    acc * (TAU / nu as f64) * (TAU / nv as f64)
}

/// Source grid and density for the chosen variant.
fn sources(grid: &SurfaceGrid, sigma: &GridFunction, staggered: bool) -> Result<(Option<SurfaceGrid>, GridFunction)> {
    if staggered {
        let sg = SurfaceGrid::with_shift(grid.surface(), grid.nu(), grid.nv(), (grid.shift().0 + 0.5, grid.shift().1 + 0.5))?;
        Ok((Some(sg), fourier_shift(sigma, 0.5, 0.5)))
    } else {
        Ok((None, sigma.clone()))
    }
}

/// Per-node correction factors, computed on the first symmetry block and
/// broadcast along the toroidal rotations.
fn node_factors(grid: &SurfaceGrid, f: impl Fn(usize, usize) -> Result<f64> + Sync + Send) -> Result<Vec<f64>> {
    let s = grid.symmetry_shift();
    let nv = grid.nv();
    let vals = par::map(grid.nu() * s, |t0| f(t0 / s, t0 % s));
    let mut out = vec![0.0; grid.len()];
    for (t0, v) in vals.into_iter().enumerate() {
        let v = v?;
        let (i, j) = (t0 / s, t0 % s);
        for q in 0..nv / s {
            out[i * nv + j + q * s] = v;
        }
    }
    Ok(out)
}

fn check_scalar(grid: &SurfaceGrid, sigma: &GridFunction) -> Result<()> {
    sigma.check_grid(grid, 1)
}

/// Single-layer potential `(1/4π) ∫ σ' / |r - r'| da'` at every node.
pub fn merkel_sl_eval(grid: &SurfaceGrid, sigma: &GridFunction, staggered: bool) -> Result<GridFunction> {
    check_scalar(grid, sigma)?;
    let (nu, nv) = (grid.nu(), grid.nv());
    let (sg, sd) = sources(grid, sigma, staggered)?;
    let src = sg.as_ref().unwrap_or(grid);
    let far = Engine::new(grid, src, Kern::Single, !staggered).apply(&sd, Near::None);
    let fac = node_factors(grid, |i, j| {
        let form = fundamental_form(grid, i, j);
        let sub = cell_sum(nu, nv, staggered, |du, dv| 1.0 / form.dist(du, dv));
        Ok(subtracted_term_integral(&form)? - sub)
    })?;
    let s = sigma.comp(0);
    let out: Vec<f64> = (0..grid.len())
        .map(|k| (far.at(0, k) + s[k] * grid.area[k] * fac[k]) / (4.0 * PI))
        .collect();
    GridFunction::from_vec(nu, nv, 1, out)
}

/// Double-layer potential `(1/4π) ∫ n'·(r - r') / |r - r'|³ σ' da'` at every
/// node, with the second-fundamental-form subtraction.
pub fn merkel_dl_eval(grid: &SurfaceGrid, sigma: &GridFunction, staggered: bool) -> Result<GridFunction> {
    check_scalar(grid, sigma)?;
    let (nu, nv) = (grid.nu(), grid.nv());
    let (sg, sd) = sources(grid, sigma, staggered)?;
    let src = sg.as_ref().unwrap_or(grid);
    let far = Engine::new(grid, src, Kern::Double, !staggered).apply(&sd, Near::None);
    let fac = node_factors(grid, |i, j| {
        let form = fundamental_form(grid, i, j);
        let second = second_form(grid, i, j);
        let sub = cell_sum(nu, nv, staggered, |du, dv| {
            let q = form.quad(du, dv);
            second.quad(du, dv) / (2.0 * q * q.sqrt())
        });
        Ok(dl_subtracted_term_integral(&form, &second)? - sub)
    })?;
    let s = sigma.comp(0);
    let out: Vec<f64> = (0..grid.len())
        .map(|k| (far.at(0, k) + s[k] * grid.area[k] * fac[k]) / (4.0 * PI))
        .collect();
    GridFunction::from_vec(nu, nv, 1, out)
}

/// Double layer by Gauss-identity regularization,
/// `(1/4π) ∫ DL (σ' - σ_t) da' - σ_t/2`, coincident node skipped. Exact for
/// constant densities by construction.
pub fn gauss_regularized_dl_eval(grid: &SurfaceGrid, sigma: &GridFunction) -> Result<GridFunction> {
    check_scalar(grid, sigma)?;
    let eng = Engine::new(grid, grid, Kern::Double, true);
    let far = eng.apply(sigma, Near::None);
    let ones = GridFunction::constant(grid, 1.0);
    let solid = eng.apply(&ones, Near::None);
    let s = sigma.comp(0);
    let out: Vec<f64> = (0..grid.len())
        .map(|k| (far.at(0, k) - s[k] * solid.at(0, k)) / (4.0 * PI) - 0.5 * s[k])
        .collect();
    GridFunction::from_vec(grid.nu(), grid.nv(), 1, out)
}

/// `R` relative to the true chord, for limit checks.
pub fn form_distance_ratio(grid: &SurfaceGrid, i: usize, j: usize, du: f64, dv: f64) -> Result<f64> {
    let form = fundamental_form(grid, i, j);
    let (u, v) = (grid.u(i), grid.v(j));
    let a = grid.surface().eval(u, v).r;
    let b = grid.surface().eval(u + du, v + dv).r;
    let chord = crate::vec3::norm(crate::vec3::sub(a, b));
    if chord == 0.0 {
        return Err(Error::Coincident);
    }
    Ok(form.dist(du, dv) / chord)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{BuiltinSurface, FourierSurface};

    fn torus() -> FourierSurface {
        FourierSurface::builtin(BuiltinSurface::CircularTorus)
    }

    #[test]
    fn torus_forms() {
        let g = SurfaceGrid::new(&torus(), 16, 32).unwrap();
        for i in 0..16 {
            let f = fundamental_form(&g, i, 3);
            let r = 2.0 + 0.5 * g.u(i).cos();
            assert!((f.e - 0.25).abs() < 1e-14);
            assert!(f.f.abs() < 1e-14);
            assert!((f.g - r * r).abs() < 1e-13);
        }
    }

    #[test]
    fn form_distance_limit() {
        let s = FourierSurface::builtin(BuiltinSurface::RotatingEllipse);
        let g = SurfaceGrid::new(&s, 16, 40).unwrap();
        for k in 0..8 {
            let th = TAU * k as f64 / 8.0 + 0.1;
            let mut prev = f64::INFINITY;
            for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
                let ratio = form_distance_ratio(&g, 3, 7, eps * th.cos(), eps * th.sin()).unwrap();
                let err = (ratio - 1.0).abs();
                assert!(err < 5.0 * eps, "dir {k} eps {eps} err {err}");
                assert!(err <= prev * 0.5 || err < 1e-9);
                prev = err;
            }
        }
    }

    #[test]
    fn subtracted_integral_routes_agree() {
        for (e, f, g) in [(1.0, 0.0, 1.0), (4.0, 0.0, 1.0), (0.25, 0.1, 5.3), (2.0, -1.3, 1.1)] {
            let form = FundamentalForm { e, f, g };
            let a = subtracted_term_integral(&form).unwrap();
            let b = subtracted_term_integral_polar(&form).unwrap();
            assert!((a - b).abs() < 1e-12 * a, "({e},{f},{g}) {a} {b}");
        }
    }

    #[test]
    fn subtracted_integral_symmetry_and_scaling() {
        let a = subtracted_term_integral(&FundamentalForm { e: 4.0, f: 0.0, g: 1.0 }).unwrap();
        let b = subtracted_term_integral(&FundamentalForm { e: 1.0, f: 0.0, g: 4.0 }).unwrap();
        assert!((a - b).abs() < 1e-13 * a);
        let base = FundamentalForm { e: 0.7, f: 0.2, g: 1.9 };
        let c = 3.0;
        let s1 = subtracted_term_integral(&base).unwrap();
        let s2 = subtracted_term_integral(&FundamentalForm { e: c * c * 0.7, f: c * c * 0.2, g: c * c * 1.9 }).unwrap();
        assert!((s2 - s1 / c).abs() < 1e-13 * s1);
        assert!(subtracted_term_integral(&FundamentalForm { e: 1.0, f: 2.0, g: 1.0 }).is_err());
    }

    #[test]
    fn zero_density_gives_zero() {
        let g = SurfaceGrid::new(&torus(), 8, 16).unwrap();
        let z = GridFunction::zeros(8, 16, 1);
        for stag in [false, true] {
            assert_eq!(merkel_sl_eval(&g, &z, stag).unwrap().max_abs(), 0.0);
            assert_eq!(merkel_dl_eval(&g, &z, stag).unwrap().max_abs(), 0.0);
        }
        assert_eq!(gauss_regularized_dl_eval(&g, &z).unwrap().max_abs(), 0.0);
        assert!(merkel_sl_eval(&g, &GridFunction::zeros(8, 8, 1), false).is_err());
    }

    #[test]
    fn gauss_regularized_constant_is_minus_half() {
        let g = SurfaceGrid::new(&torus(), 16, 32).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let d = gauss_regularized_dl_eval(&g, &one).unwrap();
        for k in 0..g.len() {
            assert!((d.at(0, k) + 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_in_density() {
        let g = SurfaceGrid::new(&torus(), 12, 24).unwrap();
        let s1 = GridFunction::from_fn(&g, |u, v| u.cos() + v.sin());
        let s2 = GridFunction::from_fn(&g, |u, _| (2.0 * u).sin());
        let mut comb = s1.clone().scaled(2.0);
        comb.axpy(-3.0, &s2);
        for stag in [false, true] {
            let a = merkel_sl_eval(&g, &s1, stag).unwrap();
            let b = merkel_sl_eval(&g, &s2, stag).unwrap();
            let c = merkel_sl_eval(&g, &comb, stag).unwrap();
            for k in 0..g.len() {
                let want = 2.0 * a.at(0, k) - 3.0 * b.at(0, k);
                assert!((c.at(0, k) - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
        }
    }
}
