//! Doubly-periodic toroidal surfaces given as cylindrical-coordinate double
//! Fourier series, and tensor grids of precomputed geometry on them.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::vec3::{cross, dot, norm, scale, Vec3};

/// One line of the boundary series. The angle of the mode is
/// `m*u - n*nfp*v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub m: u32,
    pub n: i32,
    pub rc: f64,
    pub rs: f64,
    pub zc: f64,
    pub zs: f64,
}

impl FourierMode {
    pub fn new(m: u32, n: i32, rc: f64, rs: f64, zc: f64, zs: f64) -> Self {
        Self { m, n, rc, rs, zc, zs }
    }

    fn is_zero(&self) -> bool {
        self.rc == 0.0 && self.rs == 0.0 && self.zc == 0.0 && self.zs == 0.0
    }
}

/// Position and first derivatives at one parameter point.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub r: Vec3,
    pub r_u: Vec3,
    pub r_v: Vec3,
}

/// Position with first and second derivatives.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint2 {
    pub r: Vec3,
    pub r_u: Vec3,
    pub r_v: Vec3,
    pub r_uu: Vec3,
    pub r_uv: Vec3,
    pub r_vv: Vec3,
}

/// `R(u,v)`, `Z(u,v)` as double Fourier series with `nfp` field periods;
/// the point is `(R cos v, R sin v, Z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSurface {
    nfp: u32,
    modes: Vec<FourierMode>,
    orientation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinSurface {
    CircularTorus,
    RotatingEllipse,
}

impl BuiltinSurface {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinSurface::CircularTorus => "circular_torus",
            BuiltinSurface::RotatingEllipse => "rotating_ellipse",
        }
    }
}

impl FromStr for BuiltinSurface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular_torus" | "torus" => Ok(BuiltinSurface::CircularTorus),
            "rotating_ellipse" | "ellipse" => Ok(BuiltinSurface::RotatingEllipse),
            _ => Err(Error::UnknownSurface(s.to_string())),
        }
    }
}

/// Look up a builtin surface by name.
pub fn builtin_surface(name: &str) -> Result<FourierSurface> {
    Ok(FourierSurface::builtin(name.parse()?))
}

impl FourierSurface {
    /// Builds a surface and fixes the outward orientation from the outboard
    /// midplane point `(u, v) = (0, 0)`.
    pub fn new(nfp: u32, modes: Vec<FourierMode>) -> Result<Self> {
        if nfp == 0 {
            return Err(Error::Invalid("nfp must be positive".into()));
        }
        if modes
            .iter()
            .any(|m| !(m.rc.is_finite() && m.rs.is_finite() && m.zc.is_finite() && m.zs.is_finite()))
        {
            return Err(Error::Invalid("non-finite Fourier coefficient".into()));
        }
        let mut s = Self { nfp, modes, orientation: 1.0 };
        let p = s.eval(0.0, 0.0);
        let n = cross(p.r_u, p.r_v);
        if n[0] < 0.0 {
            s.orientation = -1.0;
        }
        Ok(s)
    }

    pub fn builtin(which: BuiltinSurface) -> Self {
        let modes = match which {
            BuiltinSurface::CircularTorus => vec![
                FourierMode::new(0, 0, 2.0, 0.0, 0.0, 0.0),
                FourierMode::new(1, 0, 0.5, 0.0, 0.0, -0.5),
            ],
            BuiltinSurface::RotatingEllipse => vec![
                FourierMode::new(0, 0, 5.5, 0.0, 0.0, 0.0),
                FourierMode::new(1, 0, 0.8, 0.0, 0.0, -0.8),
                FourierMode::new(1, 1, 0.25, 0.0, 0.0, -0.25),
                FourierMode::new(2, 1, 0.05, 0.0, 0.0, -0.05),
            ],
        };
        let nfp = match which {
            BuiltinSurface::CircularTorus => 1,
            BuiltinSurface::RotatingEllipse => 5,
        };
        Self::new(nfp, modes).expect("builtin surfaces are valid")
    }

    pub fn nfp(&self) -> u32 {
        self.nfp
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    /// `+1` when `r_u x r_v` already points outward, `-1` otherwise.
    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    /// True when no mode with `n != 0` carries a nonzero coefficient.
    pub fn is_axisymmetric(&self) -> bool {
        self.modes.iter().all(|m| m.n == 0 || m.is_zero())
    }

    /// True when the series has only `R` cosines and `Z` sines, so that
    /// `(u, v) -> (-u, -v)` maps the surface onto itself by a half-turn
    /// about the x axis.
    pub fn is_stellarator_symmetric(&self) -> bool {
        self.modes.iter().all(|m| m.rs == 0.0 && m.zc == 0.0)
    }

    /// Average of the `(m, n) = (0, 0)` radial coefficients.
    pub fn major_radius(&self) -> f64 {
        self.modes.iter().filter(|m| m.m == 0 && m.n == 0).map(|m| m.rc).sum()
    }

    /// Mean amplitude of the `(1, 0)` mode in R and Z.
    pub fn minor_radius(&self) -> f64 {
        let (r, z) = self
            .modes
            .iter()
            .filter(|m| m.m == 1 && m.n == 0)
            .fold((0.0, 0.0), |(r, z), m| (r + m.rc.hypot(m.rs), z + m.zc.hypot(m.zs)));
        0.5 * (r + z)
    }

    #[inline]
    fn cylindrical(&self, u: f64, v: f64) -> [f64; 6] {
        // R, R_u, R_v, Z, Z_u, Z_v
        let nfp = self.nfp as f64;
        let mut out = [0.0; 6];
        for md in &self.modes {
            let m = md.m as f64;
            let nn = md.n as f64 * nfp;
            let (s, c) = (m * u - nn * v).sin_cos();
            let rv = md.rc * c + md.rs * s;
            let rd = -md.rc * s + md.rs * c;
            let zv = md.zc * c + md.zs * s;
            let zd = -md.zc * s + md.zs * c;
            out[0] += rv;
            out[1] += m * rd;
            out[2] -= nn * rd;
            out[3] += zv;
            out[4] += m * zd;
            out[5] -= nn * zd;
        }
        out
    }

    /// `R(u, v)`.
    pub fn radius(&self, u: f64, v: f64) -> f64 {
        self.cylindrical(u, v)[0]
    }

    /// Position and exact tangents of the series.
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> SurfacePoint {
        let [r, ru, rv, z, zu, zv] = self.cylindrical(u, v);
        let (sv, cv) = v.sin_cos();
        SurfacePoint {
            r: [r * cv, r * sv, z],
            r_u: [ru * cv, ru * sv, zu],
            r_v: [rv * cv - r * sv, rv * sv + r * cv, zv],
        }
    }

    /// `(sin, cos)` of every mode phase `m u - n nfp v`.
    pub(crate) fn phases(&self, u: f64, v: f64, out: &mut Vec<(f64, f64)>) {
        let nfp = self.nfp as f64;
        out.clear();
        out.extend(self.modes.iter().map(|md| (md.m as f64 * u - md.n as f64 * nfp * v).sin_cos()));
    }

    /// [`eval`](Self::eval) from precomputed phases at `(u + du, v + dv)`:
    /// `base` holds the target phases, `off` the offset phases, `tv` and
    /// `dv` the `(sin, cos)` of `v` and of the offset.
    #[inline]
    pub(crate) fn eval_shifted(&self, base: &[(f64, f64)], off: &[(f64, f64)], tv: (f64, f64), dv: (f64, f64)) -> SurfacePoint {
        let nfp = self.nfp as f64;
        let mut o = [0.0; 6];
        for ((md, &(sa, ca)), &(sb, cb)) in self.modes.iter().zip(base).zip(off) {
            let m = md.m as f64;
            let nn = md.n as f64 * nfp;
            let s = sa * cb + ca * sb;
            let c = ca * cb - sa * sb;
            let rd = -md.rc * s + md.rs * c;
            let zd = -md.zc * s + md.zs * c;
            o[0] += md.rc * c + md.rs * s;
            o[1] += m * rd;
            o[2] -= nn * rd;
            o[3] += md.zc * c + md.zs * s;
            o[4] += m * zd;
            o[5] -= nn * zd;
        }
        let [r, ru, rv, z, zu, zv] = o;
        let sv = tv.0 * dv.1 + tv.1 * dv.0;
        let cv = tv.1 * dv.1 - tv.0 * dv.0;
        SurfacePoint {
            r: [r * cv, r * sv, z],
            r_u: [ru * cv, ru * sv, zu],
            r_v: [rv * cv - r * sv, rv * sv + r * cv, zv],
        }
    }

    pub fn eval_second(&self, u: f64, v: f64) -> SurfacePoint2 {
        let nfp = self.nfp as f64;
        let mut c6 = [0.0; 6];
        let mut second = [0.0; 6]; // R_uu, R_uv, R_vv, Z_uu, Z_uv, Z_vv
        for md in &self.modes {
            let m = md.m as f64;
            let nn = md.n as f64 * nfp;
            let (s, c) = (m * u - nn * v).sin_cos();
            let rv = md.rc * c + md.rs * s;
            let rd = -md.rc * s + md.rs * c;
            let zv = md.zc * c + md.zs * s;
            let zd = -md.zc * s + md.zs * c;
            c6[0] += rv;
            c6[1] += m * rd;
            c6[2] -= nn * rd;
            c6[3] += zv;
            c6[4] += m * zd;
            c6[5] -= nn * zd;
            second[0] -= m * m * rv;
            second[1] += m * nn * rv;
            second[2] -= nn * nn * rv;
            second[3] -= m * m * zv;
            second[4] += m * nn * zv;
            second[5] -= nn * nn * zv;
        }
        let [r, ru, rv, z, zu, zv] = c6;
        let [ruu, ruv, rvv, zuu, zuv, zvv] = second;
        let (sv, cv) = v.sin_cos();
        SurfacePoint2 {
            r: [r * cv, r * sv, z],
            r_u: [ru * cv, ru * sv, zu],
            r_v: [rv * cv - r * sv, rv * sv + r * cv, zv],
            r_uu: [ruu * cv, ruu * sv, zuu],
            r_uv: [ruv * cv - ru * sv, ruv * sv + ru * cv, zuv],
            r_vv: [
                rvv * cv - 2.0 * rv * sv - r * cv,
                rvv * sv + 2.0 * rv * cv - r * sv,
                zvv,
            ],
        }
    }

    /// Outward unit normal and area element `g = |r_u x r_v|`.
    pub fn frame(&self, u: f64, v: f64) -> Result<(Vec3, f64)> {
        let p = self.eval(u, v);
        frame_from_tangents(p.r_u, p.r_v, self.orientation).ok_or_else(|| Error::Degenerate {
            u,
            v,
            g: norm(cross(p.r_u, p.r_v)),
        })
    }
}

#[inline]
pub(crate) fn frame_from_tangents(r_u: Vec3, r_v: Vec3, orientation: f64) -> Option<(Vec3, f64)> {
    let c = cross(r_u, r_v);
    let g = norm(c);
    let floor = 1e-14 * (norm(r_u) * norm(r_v)).max(f64::MIN_POSITIVE);
    if !(g >= floor) || g == 0.0 {
        return None;
    }
    Some((scale(c, orientation / g), g))
}

/// Position, tangents and frame evaluated from the series at `(u, v)`.
pub fn surface_eval(surface: &FourierSurface, u: f64, v: f64) -> SurfacePoint {
    surface.eval(u.rem_euclid(TAU), v.rem_euclid(TAU))
}

pub fn surface_frame(surface: &FourierSurface, u: f64, v: f64) -> Result<(Vec3, f64)> {
    surface.frame(u.rem_euclid(TAU), v.rem_euclid(TAU))
}

/// Uniform `nu x nv` tensor grid with precomputed node geometry. Node
/// `(i, j)` sits at `u = 2π(i + shift_u)/nu`, `v = 2π(j + shift_v)/nv` and
/// has flat index `i*nv + j`.
#[derive(Clone, Debug)]
pub struct SurfaceGrid {
    surface: FourierSurface,
    nu: usize,
    nv: usize,
    shift: (f64, f64),
    pub pos: Vec<Vec3>,
    pub r_u: Vec<Vec3>,
    pub r_v: Vec<Vec3>,
    pub normal: Vec<Vec3>,
    pub area: Vec<f64>,
}

pub fn build_grid(surface: &FourierSurface, nu: usize, nv: usize) -> Result<SurfaceGrid> {
    SurfaceGrid::new(surface, nu, nv)
}

impl SurfaceGrid {
    pub fn new(surface: &FourierSurface, nu: usize, nv: usize) -> Result<Self> {
        Self::with_shift(surface, nu, nv, (0.0, 0.0))
    }

    /// Grid whose nodes are displaced by `shift` cells (e.g. `(0.5, 0.5)` for
    /// the half-integer nodes of a staggered rule).
    pub fn with_shift(surface: &FourierSurface, nu: usize, nv: usize, shift: (f64, f64)) -> Result<Self> {
        if nu < 4 || nv < 4 {
            return Err(precondition(format!("grid must be at least 4x4, got {nu}x{nv}")));
        }
        let n = nu * nv;
        let mut grid = SurfaceGrid {
            surface: surface.clone(),
            nu,
            nv,
            shift,
            pos: Vec::with_capacity(n),
            r_u: Vec::with_capacity(n),
            r_v: Vec::with_capacity(n),
            normal: Vec::with_capacity(n),
            area: Vec::with_capacity(n),
        };
        for i in 0..nu {
            let u = grid.u(i);
            for j in 0..nv {
                let v = grid.v(j);
                let p = surface.eval(u, v);
                let radius = surface.radius(u, v);
                if !(radius > 0.0) {
                    return Err(Error::CrossesAxis { u, v, r: radius });
                }
                let (nrm, g) = frame_from_tangents(p.r_u, p.r_v, surface.orientation)
                    .ok_or(Error::Degenerate { u, v, g: norm(cross(p.r_u, p.r_v)) })?;
                grid.pos.push(p.r);
                grid.r_u.push(p.r_u);
                grid.r_v.push(p.r_v);
                grid.normal.push(nrm);
                grid.area.push(g);
            }
        }
        Ok(grid)
    }

    pub fn surface(&self) -> &FourierSurface {
        &self.surface
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn len(&self) -> usize {
        self.nu * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shift(&self) -> (f64, f64) {
        self.shift
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    #[inline]
    pub fn u(&self, i: usize) -> f64 {
        TAU * (i as f64 + self.shift.0) / self.nu as f64
    }

    #[inline]
    pub fn v(&self, j: usize) -> f64 {
        TAU * (j as f64 + self.shift.1) / self.nv as f64
    }

    pub fn hu(&self) -> f64 {
        TAU / self.nu as f64
    }

    pub fn hv(&self) -> f64 {
        TAU / self.nv as f64
    }

    /// Trapezoidal weight of one cell, `h_u h_v`.
    pub fn cell(&self) -> f64 {
        self.hu() * self.hv()
    }

    /// Total area by the trapezoidal sum of `g`.
    pub fn total_area(&self) -> f64 {
        self.area.iter().sum::<f64>() * self.cell()
    }

    /// Number of v-indices by which the grid maps onto itself under the
    /// discrete toroidal symmetry: 1 for axisymmetric surfaces, `nv/nfp`
    /// when `nfp` divides `nv`, otherwise `nv` (no usable symmetry).
    pub fn symmetry_shift(&self) -> usize {
        if self.surface.is_axisymmetric() {
            1
        } else {
            let nfp = self.surface.nfp as usize;
            if self.nv % nfp == 0 {
                self.nv / nfp
            } else {
                self.nv
            }
        }
    }

    /// Check the node invariants: `g > 0`, unit normals orthogonal to both
    /// tangents.
    pub fn check_invariants(&self) -> Result<()> {
        for k in 0..self.len() {
            let n = self.normal[k];
            let g = self.area[k];
            if !(g > 0.0) {
                return Err(Error::Invalid(format!("non-positive area element at node {k}")));
            }
            let nu = dot(n, self.r_u[k]).abs() / norm(self.r_u[k]);
            let nv = dot(n, self.r_v[k]).abs() / norm(self.r_v[k]);
            if nu > 1e-13 || nv > 1e-13 {
                return Err(Error::Invalid(format!("normal not orthogonal to tangents at node {k}")));
            }
            if (norm(n) - 1.0).abs() > 1e-14 {
                return Err(Error::Invalid(format!("normal not unit at node {k}")));
            }
        }
        Ok(())
    }
}

/// Wrap an angle difference into `[-π, π)`.
#[inline]
pub(crate) fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::{rotate_z, sub};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn torus() -> FourierSurface {
        FourierSurface::builtin(BuiltinSurface::CircularTorus)
    }

    fn ellipse() -> FourierSurface {
        FourierSurface::builtin(BuiltinSurface::RotatingEllipse)
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        norm(sub(a, b)) <= tol
    }

    #[test]
    fn torus_points() {
        let s = torus();
        assert!(close(s.eval(0.0, 0.0).r, [2.5, 0.0, 0.0], 1e-15));
        assert!(close(s.eval(PI, 0.0).r, [1.5, 0.0, 0.0], 1e-15));
        let (n, g) = s.frame(0.0, 0.0).unwrap();
        assert!(close(n, [1.0, 0.0, 0.0], 1e-15));
        assert!((g - 0.5 * 2.5).abs() < 1e-15);
        assert_eq!(s.modes().iter().filter(|m| m.rc != 0.0 || m.zs != 0.0).count(), 2);
    }

    #[test]
    fn tangents_match_finite_differences() {
        let s = ellipse();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..200 {
            let (u, v) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let p = s.eval(u, v);
            let fu = scale(sub(s.eval(u + h, v).r, s.eval(u - h, v).r), 0.5 / h);
            let fv = scale(sub(s.eval(u, v + h).r, s.eval(u, v - h).r), 0.5 / h);
            assert!(norm(sub(fu, p.r_u)) <= 1e-8 * norm(p.r_u));
            assert!(norm(sub(fv, p.r_v)) <= 1e-8 * norm(p.r_v));
            let (_, g) = s.frame(u, v).unwrap();
            assert!((g - norm(cross(p.r_u, p.r_v))).abs() <= 1e-14 * g);
        }
    }

    #[test]
    fn field_period_symmetry() {
        let s = ellipse();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let period = TAU / 5.0;
        for _ in 0..100 {
            let (u, v) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let a = rotate_z(s.eval(u, v).r, period);
            assert!(close(s.eval(u, v + period).r, a, 1e-13));
        }
        assert!(s.is_stellarator_symmetric() && !s.is_axisymmetric());
    }

    #[test]
    fn torus_area_and_jacobian_bounds() {
        let g = SurfaceGrid::new(&torus(), 64, 64).unwrap();
        let area: f64 = g.area.iter().sum::<f64>() * g.cell();
        assert!((area - 4.0 * PI * PI).abs() < 1e-12);
        let g = SurfaceGrid::new(&torus(), 16, 64).unwrap();
        assert_eq!(g.len(), 1024);
        assert!(g.area.iter().all(|&a| (0.75 - 1e-14..=1.25 + 1e-14).contains(&a)));
    }

    fn check_invariants(g: &SurfaceGrid) {
        for k in 0..g.len() {
            let n = g.normal[k];
            assert!((norm(n) - 1.0).abs() < 1e-14);
            assert!(dot(n, g.r_u[k]).abs() < 1e-12 * norm(g.r_u[k]));
            assert!(dot(n, g.r_v[k]).abs() < 1e-12 * norm(g.r_v[k]));
            assert!(g.area[k] > 0.0 && g.pos[k].iter().all(|x| x.is_finite()));
        }
        // outward: the normal points away from the magnetic axis on average
        let out: f64 = (0..g.len())
            .map(|k| {
                let p = g.pos[k];
                let rr = (p[0] * p[0] + p[1] * p[1]).sqrt();
                let axis = [p[0] / rr * g.surface().major_radius(), p[1] / rr * g.surface().major_radius(), 0.0];
                dot(g.normal[k], sub(p, axis))
            })
            .sum();
        assert!(out > 0.0);
    }

    #[test]
    fn grid_invariants() {
        check_invariants(&SurfaceGrid::new(&ellipse(), 42, 210).unwrap());
        check_invariants(&SurfaceGrid::new(&ellipse(), 64, 320).unwrap());
        check_invariants(&SurfaceGrid::with_shift(&torus(), 8, 32, (0.5, 0.5)).unwrap());
    }

    #[test]
    fn small_grid_rejected() {
        assert!(matches!(SurfaceGrid::new(&torus(), 3, 16), Err(Error::Precondition(_))));
        assert!(builtin_surface("w7x").is_err());
    }

    #[test]
    fn surface_through_axis_rejected() {
        let s = FourierSurface::new(1, vec![FourierMode::new(0, 0, 0.4, 0.0, 0.0, 0.0), FourierMode::new(1, 0, 0.5, 0.0, 0.0, -0.5)]);
        let bad = s.and_then(|s| SurfaceGrid::new(&s, 8, 8));
        assert!(bad.is_err());
    }
}
