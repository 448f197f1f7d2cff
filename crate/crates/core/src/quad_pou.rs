//! Partition-of-unity singular quadrature.
//!
//! The kernel is split as `K = K χ + K (1 - χ)` with a smooth cutoff `χ`
//! supported in a parameter-space disk of radius `η` around the target. The
//! globally smooth part `K (1 - χ)` is summed with the trapezoidal rule over
//! all grid nodes. The compactly supported part `K χ` is integrated in polar
//! coordinates about the target, where the Jacobian `ρ` cancels the kernel
//! singularity: trapezoidal in the angle, Gauss-Legendre in the radius, with
//! the density carried to the polar nodes by tensor Lagrange interpolation
//! and the surface geometry evaluated from the Fourier series.
//!
//! Patch coordinates use the v-angle rescaled by `h_u/h_v`, so the support
//! is a disk of radius `P = η/h_u` grid points in index space:
//! `Δu = ρ cos θ`, `Δv = ρ sin θ · h_v/h_u`.
//!
//! For repeated application ([`PouOperator`]) the polar rule is pushed
//! through the interpolation stencils once, giving sparse correction weights
//! on a box of grid nodes around each target; the operator is then the dense
//! trapezoidal sum (coincident node dropped) plus these local corrections.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::farfield::{Engine, Kern, Near, NearWeights};
use crate::geom::{frame_from_tangents, wrap_angle, SurfaceGrid};
use crate::grid::{gauss_legendre, interp_with, stencil_1d, GridFunction, Stencil1D, MAX_INTERP_ORDER};
use crate::par;

/// Largest admissible support radius.
pub const MAX_ETA: f64 = FRAC_PI_2;

/// Which surface kernel to integrate. The vector potential is the single
/// layer applied to a 3-component density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKernel {
    /// `1/|r - r'|`.
    SingleLayer,
    /// `n'·(r - r')/|r - r'|^3`.
    DoubleLayer,
    /// `n·[J' × (r - r')]/|r - r'|^3`, a principal-value integral.
    CasingBn,
}

impl LayerKernel {
    pub(crate) fn kern(self) -> Kern {
        match self {
            LayerKernel::SingleLayer => Kern::Single,
            LayerKernel::DoubleLayer => Kern::Double,
            LayerKernel::CasingBn => Kern::Casing,
        }
    }
}

/// Shape of the cutoff `χ` on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffShape {
    /// `exp(-36 x^8)`, truncated at `x = 1` where it is below `1e-15`.
    SuperGaussian,
    /// Plateau on `[0, x0]` then the `exp(-1/s)` transition of [`chi`].
    Bump,
}

impl CutoffShape {
    #[inline]
    pub fn eval(self, x: f64, x0: f64) -> f64 {
        match self {
            CutoffShape::SuperGaussian => {
                if x < 1.0 {
                    let x2 = x * x;
                    let x4 = x2 * x2;
                    (-36.0 * x4 * x4).exp()
                } else {
                    0.0
                }
            }
            CutoffShape::Bump => chi(x, x0),
        }
    }
}

impl FromStr for CutoffShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "super_gaussian" | "super-gaussian" => Ok(CutoffShape::SuperGaussian),
            "bump" => Ok(CutoffShape::Bump),
            _ => Err(Error::Invalid(format!("unknown cutoff shape `{s}`"))),
        }
    }
}

/// How the support radius follows the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// `η` taken from the configuration.
    Fixed,
    /// `η = 4 sqrt(2π h_u)`, clamped to `[8 h_u, π/2]`.
    SqrtH,
    /// `η = P h_u` with `P` grid points per support radius.
    GridPoints,
}

impl FromStr for EtaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(EtaRule::Fixed),
            "sqrt_h" | "sqrt-h" => Ok(EtaRule::SqrtH),
            "grid_points" | "grid-points" => Ok(EtaRule::GridPoints),
            _ => Err(Error::Invalid(format!("unknown eta rule `{s}`"))),
        }
    }
}

impl fmt::Display for EtaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EtaRule::Fixed => "fixed",
            EtaRule::SqrtH => "sqrt_h",
            EtaRule::GridPoints => "grid_points",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PouConfig {
    pub cutoff: CutoffShape,
    pub x0: f64,
    pub eta: f64,
    pub eta_rule: EtaRule,
    /// Support radius in grid points for [`EtaRule::GridPoints`].
    pub patch_points: f64,
    pub p: usize,
    pub n_theta: Option<usize>,
    pub n_rho: Option<usize>,
    /// Relative error injected into the singular part; tests only.
    #[doc(hidden)]
    #[serde(skip)]
    pub kernel_perturbation: f64,
}

impl Default for PouConfig {
    fn default() -> Self {
        Self {
            cutoff: CutoffShape::SuperGaussian,
            x0: 0.3,
            eta: MAX_ETA,
            eta_rule: EtaRule::GridPoints,
            patch_points: 20.0,
            p: 12,
            n_theta: None,
            n_rho: None,
            kernel_perturbation: 0.0,
        }
    }
}

/// Configuration resolved against a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedPou {
    pub eta: f64,
    /// Support radius in grid points, `η / h_u`.
    pub patch: f64,
    pub n_theta: usize,
    pub n_rho: usize,
    pub p: usize,
}

impl PouConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cutoff == CutoffShape::Bump && !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(precondition(format!("x0 = {} must lie in (0, 1)", self.x0)));
        }
        if self.eta_rule == EtaRule::Fixed && !(self.eta > 0.0 && self.eta <= MAX_ETA) {
            return Err(precondition(format!("eta = {} must lie in (0, π/2]", self.eta)));
        }
        if self.eta_rule == EtaRule::GridPoints && !(self.patch_points >= 1.0) {
            return Err(precondition(format!("patch radius {} grid points is too small", self.patch_points)));
        }
        if let Some(n) = self.n_theta {
            if n < 8 || n % 2 != 0 {
                return Err(precondition(format!("n_theta = {n} must be even and at least 8")));
            }
        }
        if let Some(n) = self.n_rho {
            if !(2..=128).contains(&n) {
                return Err(precondition(format!("n_rho = {n} must lie in 2..=128")));
            }
        }
        if !(2..=MAX_INTERP_ORDER).contains(&self.p) {
            return Err(precondition(format!("interpolation order {} must lie in 2..=16", self.p)));
        }
        Ok(())
    }

    pub fn resolve(&self, grid: &SurfaceGrid) -> Result<ResolvedPou> {
        self.validate()?;
        if self.p > grid.nu().min(grid.nv()) {
            return Err(precondition(format!("interpolation order {} exceeds the grid size", self.p)));
        }
        let hu = grid.hu();
        // The v-extent of the support is η h_v / h_u.
        let cap = MAX_ETA.min(MAX_ETA * grid.hu() / grid.hv());
        let eta = match self.eta_rule {
            EtaRule::Fixed => {
                if self.eta > cap * (1.0 + 1e-12) {
                    return Err(precondition(format!("eta = {} exceeds π/2 along v for this grid", self.eta)));
                }
                self.eta
            }
            EtaRule::SqrtH => (4.0 * (TAU * hu).sqrt()).max(8.0 * hu).min(cap),
            EtaRule::GridPoints => (self.patch_points * hu).min(cap),
        };
        let patch = eta / hu;
        let pc = patch.ceil() as usize;
        let mut n_theta = self.n_theta.unwrap_or((4 * pc).max(16));
        n_theta += n_theta % 2;
        let n_rho = self.n_rho.unwrap_or((2 * pc).clamp(8, 128));
        Ok(ResolvedPou { eta, patch, n_theta, n_rho, p: self.p })
    }
}

/// `χ(x)` with plateau `[0, x0]` and the transition
/// `f(1-t)/(f(t)+f(1-t))`, `t = (x-x0)/(1-x0)`, `f(s) = exp(-1/s)`.
pub fn chi(x: f64, x0: f64) -> f64 {
    if x <= x0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let t = (x - x0) / (1.0 - x0);
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let (a, b) = (f(1.0 - t), f(t));
    a / (a + b)
}

struct PolarNode {
    du: f64,
    dv: f64,
    /// `(sin, cos)` of `dv`.
    tv: (f64, f64),
    /// Quadrature weight including Jacobian and cutoff.
    w: f64,
    su: Stencil1D,
    sv: Stencil1D,
}

/// Target-independent polar rule and near-node list for one grid shape.
struct PolarTable {
    res: ResolvedPou,
    nodes: Vec<PolarNode>,
    /// Mode phase offsets, `modes` entries per node.
    phase: Vec<(f64, f64)>,
    /// Grid offsets with `χ > 0` other than the target, with `χ`.
    near: Vec<(isize, isize, f64)>,
    h: usize,
}

impl PolarTable {
    fn new(grid: &SurfaceGrid, cfg: &PouConfig) -> Result<Self> {
        let res = cfg.resolve(grid)?;
        let (hu, hv) = (grid.hu(), grid.hv());
        let aspect = hv / hu;
        let rule = gauss_legendre(res.n_rho)?;
        let wt = TAU / res.n_theta as f64;
        let mut nodes = Vec::with_capacity(res.n_rho * res.n_theta);
        let mut reach = 0isize;
        for (rho, wr) in rule.mapped(0.0, res.eta) {
            let c = cfg.cutoff.eval(rho / res.eta, cfg.x0);
            if c == 0.0 {
                continue;
            }
            for k in 0..res.n_theta {
                let (s, co) = (TAU * k as f64 / res.n_theta as f64).sin_cos();
                let du = rho * co;
                let dv = rho * s * aspect;
                let su = stencil_1d(du / hu, res.p);
                let sv = stencil_1d(dv / hv, res.p);
                for st in [su.start, sv.start] {
                    reach = reach.max(st.abs()).max((st + res.p as isize - 1).abs());
                }
                let w = wr * wt * rho * aspect * c * (1.0 + cfg.kernel_perturbation);
                nodes.push(PolarNode { du, dv, tv: dv.sin_cos(), w, su, sv });
            }
        }
        let pc = res.patch.ceil() as isize;
        let mut near = Vec::new();
        for a in -pc..=pc {
            for b in -pc..=pc {
                if a == 0 && b == 0 {
                    continue;
                }
                let x = ((a * a + b * b) as f64).sqrt() / res.patch;
                let c = cfg.cutoff.eval(x, cfg.x0);
                if c > 0.0 {
                    near.push((a, b, c));
                    reach = reach.max(a.abs()).max(b.abs());
                }
            }
        }
        let h = reach as usize;
        let mut phase = Vec::new();
        let mut scratch = Vec::new();
        for node in &nodes {
            grid.surface().phases(node.du, node.dv, &mut scratch);
            phase.extend_from_slice(&scratch);
        }
        Ok(Self { res, nodes, phase, near, h })
    }

    /// Correction weights for target node `(it, jt)`: the polar rule pushed
    /// through the stencils minus the trapezoidal weights of `K χ`.
    fn weights(&self, grid: &SurfaceGrid, kern: Kern, it: usize, jt: usize, out: &mut NearWeights) {
        let parts = kern.parts();
        if out.h != self.h || out.parts != parts {
            *out = NearWeights::zeros(self.h, parts);
        } else {
            out.w.iter_mut().for_each(|w| *w = 0.0);
        }
        let (nu, nv) = (grid.nu(), grid.nv());
        let tk = grid.index(it, jt);
        let (rt, nt) = (grid.pos[tk], grid.normal[tk]);
        let (ut, vt) = (grid.u(it), grid.v(jt));
        let surface = grid.surface();
        let nm = surface.modes().len();
        let mut base = Vec::with_capacity(nm);
        surface.phases(ut, vt, &mut base);
        let tv = vt.sin_cos();
        let p = self.res.p;
        let side = out.side();
        let hh = self.h as isize;
        let mut k = [0.0; 3];
        for (node, off) in self.nodes.iter().zip(self.phase.chunks_exact(nm.max(1))) {
            let sp = surface.eval_shifted(&base, off, tv, node.tv);
            let Some((ns, g)) = frame_from_tangents(sp.r_u, sp.r_v, surface.orientation()) else { continue };
            kern.eval(rt, nt, sp.r, ns, &mut k);
            let col = (node.sv.start + hh) as usize;
            let sv = &node.sv.w[..p];
            for part in 0..parts {
                let val = node.w * g * k[part];
                let slab = &mut out.w[part * side * side..(part + 1) * side * side];
                for a in 0..p {
                    let va = val * node.su.w[a];
                    let row = (node.su.start + hh) as usize + a;
                    let dst = &mut slab[row * side + col..row * side + col + p];
                    for (d, w) in dst.iter_mut().zip(sv) {
                        *d += va * w;
                    }
                }
            }
        }
        let cell = grid.cell();
        for &(a, b, c) in &self.near {
            let i = (it as isize + a).rem_euclid(nu as isize) as usize;
            let j = (jt as isize + b).rem_euclid(nv as isize) as usize;
            let s = grid.index(i, j);
            kern.eval(rt, nt, grid.pos[s], grid.normal[s], &mut k);
            for part in 0..parts {
                out.add(part, a, b, -c * cell * grid.area[s] * k[part]);
            }
        }
    }
}

fn check_density(grid: &SurfaceGrid, sigma: &GridFunction, kernel: LayerKernel) -> Result<()> {
    if !sigma.matches(grid) {
        return Err(Error::Dimension(format!(
            "density is {}x{}, grid is {}x{}",
            sigma.nu(),
            sigma.nv(),
            grid.nu(),
            grid.nv()
        )));
    }
    if kernel == LayerKernel::CasingBn && sigma.ncomp() != 3 {
        return Err(Error::Dimension("casing kernel needs a 3-component density".into()));
    }
    Ok(())
}

fn kernel_at(kernel: LayerKernel, grid: &SurfaceGrid, t: usize, rs: [f64; 3], ns: [f64; 3], dens: &[f64], out: &mut [f64]) {
    let mut k = [0.0; 3];
    let kern = kernel.kern();
    kern.eval(grid.pos[t], grid.normal[t], rs, ns, &mut k);
    match kern {
        Kern::Casing => out[0] += k[0] * dens[0] + k[1] * dens[1] + k[2] * dens[2],
        _ => {
            for (o, d) in out.iter_mut().zip(dens) {
                *o += k[0] * d;
            }
        }
    }
}

/// Trapezoidal sum of `K (1 - χ) σ' g'` over all grid nodes for one target
/// node, unscaled.
pub fn smooth_part_eval(
    grid: &SurfaceGrid,
    sigma: &GridFunction,
    kernel: LayerKernel,
    target: usize,
    cfg: &PouConfig,
) -> Result<Vec<f64>> {
    check_density(grid, sigma, kernel)?;
    if target >= grid.len() {
        return Err(precondition(format!("target {target} out of range")));
    }
    let res = cfg.resolve(grid)?;
    let (it, jt) = (target / grid.nv(), target % grid.nv());
    let nc = sigma.ncomp();
    let mut out = vec![0.0; kernel.kern().out_comps(nc)];
    let mut acc = vec![0.0; out.len()];
    let mut dens = vec![0.0; nc];
    for i in 0..grid.nu() {
        let a = wrap_index_offset(i, it, grid.nu());
        for j in 0..grid.nv() {
            let s = grid.index(i, j);
            if s == target {
                continue;
            }
            let b = wrap_index_offset(j, jt, grid.nv());
            let x = ((a * a + b * b) as f64).sqrt() / res.patch;
            let w = 1.0 - cfg.cutoff.eval(x, cfg.x0);
            if w == 0.0 {
                continue;
            }
            for (c, d) in dens.iter_mut().enumerate() {
                *d = sigma.at(c, s) * w * grid.area[s] * grid.cell();
            }
            acc.iter_mut().for_each(|v| *v = 0.0);
            kernel_at(kernel, grid, target, grid.pos[s], grid.normal[s], &dens, &mut acc);
            for (o, v) in out.iter_mut().zip(&acc) {
                *o += v;
            }
        }
    }
    Ok(out)
}

/// Signed index offset `i - it` wrapped to `[-n/2, n/2)`.
fn wrap_index_offset(i: usize, it: usize, n: usize) -> isize {
    let d = i as isize - it as isize;
    let n = n as isize;
    (d + n / 2).rem_euclid(n) - n / 2
}

/// Polar-coordinate integral of `K χ σ' g'` over the support around one
/// target node, unscaled.
pub fn singular_part_eval(
    grid: &SurfaceGrid,
    sigma: &GridFunction,
    kernel: LayerKernel,
    target: usize,
    cfg: &PouConfig,
) -> Result<Vec<f64>> {
    check_density(grid, sigma, kernel)?;
    if target >= grid.len() {
        return Err(precondition(format!("target {target} out of range")));
    }
    let table = PolarTable::new(grid, cfg)?;
    let (nu, nv) = (grid.nu(), grid.nv());
    let (it, jt) = (target / nv, target % nv);
    let (ut, vt) = (grid.u(it), grid.v(jt));
    let surface = grid.surface();
    let nc = sigma.ncomp();
    let mut out = vec![0.0; kernel.kern().out_comps(nc)];
    let mut dens = vec![0.0; nc];
    for node in &table.nodes {
        let sp = surface.eval(ut + node.du, vt + node.dv);
        let Some((ns, g)) = frame_from_tangents(sp.r_u, sp.r_v, surface.orientation()) else {
            return Err(Error::Degenerate { u: ut + node.du, v: vt + node.dv, g: 0.0 });
        };
        let su = Stencil1D { start: node.su.start + it as isize, ..node.su };
        let sv = Stencil1D { start: node.sv.start + jt as isize, ..node.sv };
        for (c, d) in dens.iter_mut().enumerate() {
            *d = node.w * g * interp_with(sigma.comp(c), nu, nv, &su, &sv, table.res.p);
        }
        kernel_at(kernel, grid, target, sp.r, ns, &dens, &mut out);
    }
    Ok(out)
}

/// Repeatedly applicable partition-of-unity operator for one grid, kernel
/// and configuration.
pub struct PouOperator<'a> {
    grid: &'a SurfaceGrid,
    kernel: LayerKernel,
    engine: Engine<'a>,
    table: PolarTable,
    cached: Option<Vec<NearWeights>>,
}

/// Above this many bytes the near weights are rebuilt on every application.
pub const WEIGHT_CACHE_LIMIT: usize = 1 << 31;

impl<'a> PouOperator<'a> {
    pub fn new(grid: &'a SurfaceGrid, kernel: LayerKernel, cfg: &PouConfig) -> Result<Self> {
        Self::with_cache_limit(grid, kernel, cfg, WEIGHT_CACHE_LIMIT)
    }

    pub fn with_cache_limit(grid: &'a SurfaceGrid, kernel: LayerKernel, cfg: &PouConfig, limit: usize) -> Result<Self> {
        let table = PolarTable::new(grid, cfg)?;
        let engine = Engine::new(grid, grid, kernel.kern(), true);
        let side = 2 * table.h + 1;
        let bytes = engine.reps().len() * kernel.kern().parts() * side * side * 8;
        let mut op = Self { grid, kernel, engine, table, cached: None };
        if bytes <= limit {
            let kern = kernel.kern();
            let shift = op.engine.shift();
            let reps = op.engine.reps();
            let w = par::map(reps.len(), |k| {
                let t0 = reps[k];
                let mut nw = NearWeights::default();
                op.table.weights(grid, kern, t0 / shift, t0 % shift, &mut nw);
                nw
            });
            op.cached = Some(w);
        }
        Ok(op)
    }

    pub fn resolved(&self) -> ResolvedPou {
        self.table.res
    }

    pub fn is_cached(&self) -> bool {
        self.cached.is_some()
    }

    /// Unscaled layer potential of `sigma` at every node.
    pub fn apply(&self, sigma: &GridFunction) -> Result<GridFunction> {
        check_density(self.grid, sigma, self.kernel)?;
        Ok(match &self.cached {
            Some(w) => self.engine.apply(sigma, Near::Cached(w)),
            None => {
                let kern = self.kernel.kern();
                let shift = self.engine.shift();
                let build = |t0: usize, nw: &mut NearWeights| {
                    self.table.weights(self.grid, kern, t0 / shift, t0 % shift, nw)
                };
                self.engine.apply(sigma, Near::Build(&build))
            }
        })
    }
}

/// `prefactor · ∫ K σ' da'` at every node by the partition-of-unity scheme.
pub fn layer_potential_eval(
    grid: &SurfaceGrid,
    sigma: &GridFunction,
    kernel: LayerKernel,
    cfg: &PouConfig,
    prefactor: f64,
) -> Result<GridFunction> {
    check_density(grid, sigma, kernel)?;
    let op = PouOperator::with_cache_limit(grid, kernel, cfg, 0)?;
    Ok(op.apply(sigma)?.scaled(prefactor))
}

/// Parameter-space distance used by the cutoff, in units of `h_u`.
pub fn patch_distance(grid: &SurfaceGrid, du: f64, dv: f64) -> f64 {
    let a = wrap_angle(du) / grid.hu();
    let b = wrap_angle(dv) / grid.hv();
    (a * a + b * b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{BuiltinSurface, FourierSurface};

    #[test]
    fn chi_values() {
        assert_eq!(chi(0.0, 0.3), 1.0);
        assert_eq!(chi(1.0, 0.3), 0.0);
        assert_eq!(chi(2.0, 0.3), 0.0);
        for x0 in [0.1, 0.3, 0.7] {
            assert!((chi(x0 + (1.0 - x0) / 2.0, x0) - 0.5).abs() < 1e-15);
        }
        let mut prev = 1.0;
        for k in 0..=100 {
            let c = chi(k as f64 / 100.0, 0.3);
            assert!(c <= prev && (0.0..=1.0).contains(&c));
            prev = c;
        }
    }

    #[test]
    fn config_validation() {
        let g = SurfaceGrid::new(&FourierSurface::builtin(BuiltinSurface::CircularTorus), 32, 128).unwrap();
        assert!(PouConfig::default().resolve(&g).is_ok());
        let bad = [
            PouConfig { cutoff: CutoffShape::Bump, x0: 1.0, ..Default::default() },
            PouConfig { eta_rule: EtaRule::Fixed, eta: 2.0, ..Default::default() },
            PouConfig { n_theta: Some(7), ..Default::default() },
            PouConfig { n_rho: Some(200), ..Default::default() },
            PouConfig { p: 1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.resolve(&g).is_err(), "{c:?}");
        }
        let r = PouConfig { eta_rule: EtaRule::SqrtH, ..Default::default() }.resolve(&g).unwrap();
        assert!((r.eta - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn zero_density() {
        let g = SurfaceGrid::new(&FourierSurface::builtin(BuiltinSurface::CircularTorus), 24, 96).unwrap();
        let z = GridFunction::zeros(24, 96, 1);
        let cfg = PouConfig::default();
        assert_eq!(smooth_part_eval(&g, &z, LayerKernel::SingleLayer, 5, &cfg).unwrap(), vec![0.0]);
        assert_eq!(singular_part_eval(&g, &z, LayerKernel::SingleLayer, 5, &cfg).unwrap(), vec![0.0]);
        assert_eq!(layer_potential_eval(&g, &z, LayerKernel::DoubleLayer, &cfg, 1.0).unwrap().max_abs(), 0.0);
    }
}
