//! Application pipelines: the Green's-identity diagnostic, the two
//! virtual-casing routes, flux-surface construction from current loops and
//! external-field recovery.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::SurfaceGrid;
use crate::grid::{fourier_diff, Axis, GridFunction};
use crate::kernels::{biot_savart_loop, CurrentLoop};
use crate::quad_merkel::merkel_dl_eval;
use crate::quad_pou::{layer_potential_eval, LayerKernel, PouConfig};
use crate::solver::{solve_exterior_neumann, GmresConfig, SolveReport};
use crate::vec3::{add, cross, dot, norm, scale, Vec3};

/// Quadrature scheme for the double layer in the Green's-identity test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MerkelStag,
    MerkelNostag,
    Pou,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::MerkelStag, Scheme::MerkelNostag, Scheme::Pou];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::MerkelStag => "merkel_stag",
            Scheme::MerkelNostag => "merkel_nostag",
            Scheme::Pou => "pou",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merkel_stag" | "merkel-stag" => Ok(Scheme::MerkelStag),
            "merkel_nostag" | "merkel-nostag" => Ok(Scheme::MerkelNostag),
            "pou" => Ok(Scheme::Pou),
            _ => Err(Error::Invalid(format!("unknown scheme `{s}`"))),
        }
    }
}

/// `e(r) = 1 + (1/2π) ∫ n'·(r - r')/|r - r'|³ da'` at every node.
pub fn greens_identity_map(grid: &SurfaceGrid, scheme: Scheme, cfg: &PouConfig) -> Result<GridFunction> {
    let one = GridFunction::constant(grid, 1.0);
    let mut e = match scheme {
        Scheme::Pou => layer_potential_eval(grid, &one, LayerKernel::DoubleLayer, cfg, 1.0 / (2.0 * PI))?,
        Scheme::MerkelStag => merkel_dl_eval(grid, &one, true)?.scaled(2.0),
        Scheme::MerkelNostag => merkel_dl_eval(grid, &one, false)?.scaled(2.0),
    };
    e.data_mut().iter_mut().for_each(|v| *v += 1.0);
    Ok(e)
}

/// `‖e‖∞` of [`greens_identity_map`].
pub fn greens_identity_error(grid: &SurfaceGrid, scheme: Scheme, cfg: &PouConfig) -> Result<f64> {
    Ok(greens_identity_map(grid, scheme, cfg)?.max_abs())
}

/// A vector field sampled on the grid, optionally tagged as tangential.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOnSurface {
    pub b: GridFunction,
    pub bn: Option<GridFunction>,
    /// Declared bound on `‖n·B‖∞` when tagged as a flux surface.
    pub flux_tol: Option<f64>,
}

impl FieldOnSurface {
    pub fn new(grid: &SurfaceGrid, b: GridFunction) -> Result<Self> {
        b.check_grid(grid, 3)?;
        if !b.is_finite() {
            return Err(Error::Invalid("field has non-finite samples".into()));
        }
        Ok(Self { bn: Some(normal_component(grid, &b)), b, flux_tol: None })
    }

    pub fn zeros(grid: &SurfaceGrid) -> Self {
        Self {
            b: GridFunction::zeros(grid.nu(), grid.nv(), 3),
            bn: Some(GridFunction::zeros(grid.nu(), grid.nv(), 1)),
            flux_tol: Some(0.0),
        }
    }

    /// `‖n·B‖∞ / ‖B‖∞`, 0 for a vanishing field.
    pub fn flux_residual(&self, grid: &SurfaceGrid) -> f64 {
        let bn = normal_component(grid, &self.b).max_abs();
        let bmax = self.b.max_norm3();
        if bmax == 0.0 {
            0.0
        } else {
            bn / bmax
        }
    }
}

/// `n·B` at every node.
pub fn normal_component(grid: &SurfaceGrid, b: &GridFunction) -> GridFunction {
    GridFunction::from_nodes(grid, |k| dot(grid.normal[k], b.vec_at(k)))
}

fn surface_current(grid: &SurfaceGrid, field: &FieldOnSurface) -> Result<GridFunction> {
    field.b.check_grid(grid, 3)?;
    let res = field.flux_residual(grid);
    if res > 1e-6 {
        log::warn!("field is not tangential to the surface: |n·B|/|B| = {res:.3e}");
    }
    Ok(GridFunction::from_vectors(grid, |k| cross(grid.normal[k], field.b.vec_at(k))))
}

/// `B_plasma·n = (1/4π) n·PV∫ (n'×B') × (r - r')/|r - r'|³ da'`.
pub fn virtual_casing_bn(grid: &SurfaceGrid, field: &FieldOnSurface, cfg: &PouConfig) -> Result<GridFunction> {
    let j = surface_current(grid, field)?;
    layer_potential_eval(grid, &j, LayerKernel::CasingBn, cfg, 1.0 / (4.0 * PI))
}

/// `B_plasma·n = n·∇×A` with `A = (1/4π) ∫ (n'×B')/|r - r'| da'`, the curl
/// taken from the tangential components by Fourier differentiation:
/// `n·∇×A = [∂_u(A·r_v) - ∂_v(A·r_u)] / g`.
pub fn virtual_casing_via_potential(grid: &SurfaceGrid, field: &FieldOnSurface, cfg: &PouConfig) -> Result<GridFunction> {
    let j = surface_current(grid, field)?;
    let a = layer_potential_eval(grid, &j, LayerKernel::SingleLayer, cfg, 1.0 / (4.0 * PI))?;
    Ok(surface_curl_normal(grid, &a)?)
}

/// `n·∇×A` from tangential data of a 3-component field.
pub fn surface_curl_normal(grid: &SurfaceGrid, a: &GridFunction) -> Result<GridFunction> {
    a.check_grid(grid, 3)?;
    let a_v = GridFunction::from_nodes(grid, |k| dot(a.vec_at(k), grid.r_v[k]));
    let a_u = GridFunction::from_nodes(grid, |k| dot(a.vec_at(k), grid.r_u[k]));
    let d1 = fourier_diff(&a_v, Axis::U)?;
    let d2 = fourier_diff(&a_u, Axis::V)?;
    let o = grid.surface().orientation();
    Ok(GridFunction::from_nodes(grid, |k| o * (d1.at(0, k) - d2.at(0, k)) / grid.area[k]))
}

/// Surface gradient of a scalar from its Fourier derivatives and the
/// inverse first fundamental form.
pub fn tangential_gradient(grid: &SurfaceGrid, phi: &GridFunction) -> Result<GridFunction> {
    phi.check_grid(grid, 1)?;
    let pu = fourier_diff(phi, Axis::U)?;
    let pv = fourier_diff(phi, Axis::V)?;
    Ok(GridFunction::from_vectors(grid, |k| {
        let (ru, rv) = (grid.r_u[k], grid.r_v[k]);
        let (e, f, g) = (dot(ru, ru), dot(ru, rv), dot(rv, rv));
        let det = e * g - f * f;
        let (a, b) = (pu.at(0, k), pv.at(0, k));
        add(scale(ru, (g * a - f * b) / det), scale(rv, (e * b - f * a) / det))
    }))
}

/// Sum of the loop fields at every node.
pub fn loop_field(grid: &SurfaceGrid, loops: &[CurrentLoop]) -> Result<GridFunction> {
    let n = grid.len();
    let vals: Vec<Result<Vec3>> = crate::par::map(n, |k| {
        let mut b = [0.0; 3];
        for lp in loops {
            b = add(b, biot_savart_loop(lp, grid.pos[k])?);
        }
        Ok(b)
    });
    let mut data = vec![0.0; 3 * n];
    for (k, v) in vals.into_iter().enumerate() {
        let v = v?;
        for c in 0..3 {
            data[c * n + k] = v[c];
        }
    }
    GridFunction::from_vec(grid.nu(), grid.nv(), 3, data)
}

/// Smallest distance from any loop sample to any grid node.
pub fn loop_clearance(grid: &SurfaceGrid, loops: &[CurrentLoop]) -> f64 {
    let mut best = f64::INFINITY;
    for lp in loops {
        for p in lp.points() {
            for r in &grid.pos {
                best = best.min(norm(crate::vec3::sub(*p, *r)));
            }
        }
    }
    best
}

/// Add the exterior harmonic field `∇Φ` that cancels the normal component of
/// the loop field, so the sum is tangential to the surface.
pub fn make_flux_surface(
    grid: &SurfaceGrid,
    loops: &[CurrentLoop],
    qcfg: &PouConfig,
    gcfg: &GmresConfig,
) -> Result<(FieldOnSurface, SolveReport)> {
    if loops.is_empty() {
        let rep = SolveReport { iterations: 0, final_residual: 0.0, converged: true, history: vec![] };
        return Ok((FieldOnSurface::zeros(grid), rep));
    }
    let minor = grid.surface().minor_radius();
    let clear = loop_clearance(grid, loops);
    if clear <= 0.05 * minor {
        return Err(Error::Invalid(format!("a loop passes within {clear:.3e} of the surface")));
    }
    let b0 = loop_field(grid, loops)?;
    let mut bn = normal_component(grid, &b0);
    bn.scale(-1.0);
    let (phi, rep) = solve_exterior_neumann(grid, &bn, qcfg, gcfg)?;
    let tg = tangential_gradient(grid, &phi)?;
    let btot = GridFunction::from_vectors(grid, |k| {
        add(add(b0.vec_at(k), tg.vec_at(k)), scale(grid.normal[k], bn.at(0, k)))
    });
    let bmax = b0.max_norm3();
    let field = FieldOnSurface {
        bn: Some(normal_component(grid, &btot)),
        b: btot,
        flux_tol: Some(10.0 * gcfg.tol * bmax),
    };
    Ok((field, rep))
}

/// Which virtual-casing formula to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasingRoute {
    /// Principal-value Biot-Savart integral of the surface current.
    BiotSavart,
    /// Surface curl of the single-layer vector potential.
    VectorPotential,
}

impl CasingRoute {
    pub fn name(self) -> &'static str {
        match self {
            CasingRoute::BiotSavart => "biot_savart",
            CasingRoute::VectorPotential => "vector_potential",
        }
    }
}

impl FromStr for CasingRoute {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biot_savart" | "biot-savart" | "bs" => Ok(CasingRoute::BiotSavart),
            "vector_potential" | "vector-potential" | "potential" => Ok(CasingRoute::VectorPotential),
            _ => Err(Error::Invalid(format!("unknown casing route `{s}`"))),
        }
    }
}

/// `B_plasma·n` by the chosen route.
pub fn plasma_normal_field(grid: &SurfaceGrid, field: &FieldOnSurface, route: CasingRoute, cfg: &PouConfig) -> Result<GridFunction> {
    match route {
        CasingRoute::BiotSavart => virtual_casing_bn(grid, field, cfg),
        CasingRoute::VectorPotential => virtual_casing_via_potential(grid, field, cfg),
    }
}

/// Recover `B_ext·n = -B_plasma·n` from a tangential total field and compare
/// with the direct Biot-Savart field of the external loop. The error is
/// `‖ref - recovered‖∞ / ‖B_tot‖∞`.
pub fn recover_external_field(
    grid: &SurfaceGrid,
    b_tot: &FieldOnSurface,
    external: &CurrentLoop,
    route: CasingRoute,
    cfg: &PouConfig,
) -> Result<(f64, GridFunction)> {
    let mut rec = plasma_normal_field(grid, b_tot, route, cfg)?;
    rec.scale(-1.0);
    let reference = normal_component(grid, &loop_field(grid, std::slice::from_ref(external))?);
    let scale = b_tot.b.max_norm3();
    let diff = reference.max_abs_diff(&rec);
    let err = if scale > 0.0 { diff / scale } else { diff };
    Ok((err, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{BuiltinSurface, FourierSurface};

    #[test]
    fn zero_fields() {
        let g = SurfaceGrid::new(&FourierSurface::builtin(BuiltinSurface::CircularTorus), 16, 64).unwrap();
        let z = FieldOnSurface::zeros(&g);
        let cfg = PouConfig::default();
        assert_eq!(virtual_casing_bn(&g, &z, &cfg).unwrap().max_abs(), 0.0);
        assert_eq!(virtual_casing_via_potential(&g, &z, &cfg).unwrap().max_abs(), 0.0);
        let (f, rep) = make_flux_surface(&g, &[], &cfg, &GmresConfig::default()).unwrap();
        assert_eq!(f.b.max_abs(), 0.0);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("trapezoid".parse::<Scheme>().is_err());
    }
}
