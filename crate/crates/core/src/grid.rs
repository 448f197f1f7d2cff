//! Periodic-grid numerics: sampled functions, trapezoidal sums, spectral
//! differentiation and shifting, Gauss-Legendre rules and local tensor
//! Lagrange interpolation with periodic wraparound.

use std::f64::consts::{PI, TAU};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::geom::SurfaceGrid;

pub const MAX_INTERP_ORDER: usize = 16;

/// `ncomp` components sampled on an `nu x nv` periodic grid, stored
/// component-major, then row-major in `(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    nu: usize,
    nv: usize,
    ncomp: usize,
    data: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(nu: usize, nv: usize, ncomp: usize) -> Self {
        Self { nu, nv, ncomp, data: vec![0.0; nu * nv * ncomp] }
    }

    pub fn from_vec(nu: usize, nv: usize, ncomp: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nu * nv * ncomp {
            return Err(Error::Dimension(format!(
                "expected {} values for {nu}x{nv}x{ncomp}, got {}",
                nu * nv * ncomp,
                data.len()
            )));
        }
        Ok(Self { nu, nv, ncomp, data })
    }

    /// Scalar function sampled at the nodes of `grid`.
    pub fn from_fn(grid: &SurfaceGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for i in 0..grid.nu() {
            for j in 0..grid.nv() {
                data.push(f(grid.u(i), grid.v(j)));
            }
        }
        Self { nu: grid.nu(), nv: grid.nv(), ncomp: 1, data }
    }

    /// Scalar function of the flat node index.
    pub fn from_nodes(grid: &SurfaceGrid, f: impl FnMut(usize) -> f64) -> Self {
        Self { nu: grid.nu(), nv: grid.nv(), ncomp: 1, data: (0..grid.len()).map(f).collect() }
    }

    /// Three-component function of the flat node index.
    pub fn from_vectors(grid: &SurfaceGrid, mut f: impl FnMut(usize) -> [f64; 3]) -> Self {
        let n = grid.len();
        let mut data = vec![0.0; 3 * n];
        for k in 0..n {
            let w = f(k);
            for c in 0..3 {
                data[c * n + k] = w[c];
            }
        }
        Self { nu: grid.nu(), nv: grid.nv(), ncomp: 3, data }
    }

    pub fn constant(grid: &SurfaceGrid, value: f64) -> Self {
        Self { nu: grid.nu(), nv: grid.nv(), ncomp: 1, data: vec![value; grid.len()] }
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    /// Number of nodes (not values).
    pub fn nodes(&self) -> usize {
        self.nu * self.nv
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        let n = self.nodes();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.nodes();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Value of component `c` at node `k`.
    #[inline]
    pub fn at(&self, c: usize, k: usize) -> f64 {
        self.data[c * self.nodes() + k]
    }

    /// Vector at node `k` of a three-component function.
    #[inline]
    pub fn vec_at(&self, k: usize) -> [f64; 3] {
        let n = self.nodes();
        [self.data[k], self.data[n + k], self.data[2 * n + k]]
    }

    /// Extract one component as a scalar function.
    pub fn component(&self, c: usize) -> GridFunction {
        Self { nu: self.nu, nv: self.nv, ncomp: 1, data: self.comp(c).to_vec() }
    }

    /// Stack scalar functions into one multi-component function.
    pub fn stack(parts: &[GridFunction]) -> Result<GridFunction> {
        let first = parts.first().ok_or_else(|| Error::Dimension("nothing to stack".into()))?;
        let mut data = Vec::new();
        let mut ncomp = 0;
        for p in parts {
            if p.nu != first.nu || p.nv != first.nv {
                return Err(Error::Dimension("stacked functions must share a grid".into()));
            }
            data.extend_from_slice(&p.data);
            ncomp += p.ncomp;
        }
        Ok(Self { nu: first.nu, nv: first.nv, ncomp, data })
    }

    pub fn matches(&self, grid: &SurfaceGrid) -> bool {
        self.nu == grid.nu() && self.nv == grid.nv()
    }

    pub fn check_grid(&self, grid: &SurfaceGrid, ncomp: usize) -> Result<()> {
        if !self.matches(grid) || self.ncomp != ncomp {
            return Err(Error::Dimension(format!(
                "function is {}x{}x{}, expected {}x{}x{ncomp}",
                self.nu,
                self.nv,
                self.ncomp,
                grid.nu(),
                grid.nv()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale(s);
        self
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &GridFunction) {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x += a * y);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Maximum Euclidean norm over nodes of a three-component function.
    pub fn max_norm3(&self) -> f64 {
        (0..self.nodes()).map(|k| crate::vec3::norm(self.vec_at(k))).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `(2π/Nu)(2π/Nv) Σ f_ij` for a scalar function.
pub fn trapezoid_integrate(f: &GridFunction) -> Result<f64> {
    if f.ncomp != 1 {
        return Err(Error::Dimension("trapezoid_integrate expects a scalar function".into()));
    }
    let w = TAU / f.nu as f64 * TAU / f.nv as f64;
    // fixed-size blocks keep the rounding independent of the data length
    Ok(w * f.data.chunks(1024).map(|c| c.iter().sum::<f64>()).sum::<f64>())
}

/// A one-dimensional rule on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped affinely to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// `n`-point Gauss-Legendre rule by Newton iteration on the three-term
/// recurrence.
pub fn gauss_legendre(n: usize) -> Result<QuadRule1D> {
    if !(1..=128).contains(&n) {
        return Err(precondition(format!("Gauss-Legendre order must be in 1..=128, got {n}")));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule1D { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    U,
    V,
}

/// Apply a per-wavenumber multiplier along one axis of every component.
/// `mult(k, n)` receives the signed wavenumber; the Nyquist index is passed
/// as `k = n/2` and handled by the caller's multiplier.
fn spectral_apply(
    f: &GridFunction,
    axis: Axis,
    mult: impl Fn(i64, usize) -> Complex64,
) -> GridFunction {
    let (nu, nv) = (f.nu, f.nv);
    let len = match axis {
        Axis::U => nu,
        Axis::V => nv,
    };
    let lines = match axis {
        Axis::U => nv,
        Axis::V => nu,
    };
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let factors: Vec<Complex64> = (0..len)
        .map(|idx| {
            let k = if idx <= len / 2 { idx as i64 } else { idx as i64 - len as i64 };
            mult(k, len) / len as f64
        })
        .collect();
    let mut out = f.clone();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let n = f.nodes();
    for c in 0..f.ncomp {
        let src = &f.data[c * n..(c + 1) * n];
        let dst = &mut out.data[c * n..(c + 1) * n];
        for line in 0..lines {
            for (t, b) in buf.iter_mut().enumerate() {
                let k = match axis {
                    Axis::U => t * nv + line,
                    Axis::V => line * nv + t,
                };
                *b = Complex64::new(src[k], 0.0);
            }
            fwd.process(&mut buf);
            buf.iter_mut().zip(&factors).for_each(|(b, m)| *b *= m);
            inv.process(&mut buf);
            for (t, b) in buf.iter().enumerate() {
                let k = match axis {
                    Axis::U => t * nv + line,
                    Axis::V => line * nv + t,
                };
                dst[k] = b.re;
            }
        }
    }
    out
}

/// Spectral derivative along a periodic axis; the Nyquist mode of the
/// derivative is zeroed.
pub fn fourier_diff(f: &GridFunction, axis: Axis) -> Result<GridFunction> {
    if f.nu % 2 != 0 || f.nv % 2 != 0 {
        return Err(precondition(format!("fourier_diff needs even dimensions, got {}x{}", f.nu, f.nv)));
    }
    Ok(spectral_apply(f, axis, |k, n| {
        if 2 * k.unsigned_abs() as usize == n {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, k as f64)
        }
    }))
}

/// Trigonometric interpolant evaluated on the grid displaced by
/// `(shift_u, shift_v)` cells. The Nyquist mode is treated as a real cosine.
pub fn fourier_shift(f: &GridFunction, shift_u: f64, shift_v: f64) -> GridFunction {
    let phase = |delta: f64| {
        move |k: i64, n: usize| {
            let theta = TAU * k as f64 * delta / n as f64;
            if 2 * k.unsigned_abs() as usize == n {
                Complex64::new(theta.cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, theta)
            }
        }
    };
    let g = if shift_u != 0.0 { spectral_apply(f, Axis::U, phase(shift_u)) } else { f.clone() };
    if shift_v != 0.0 {
        spectral_apply(&g, Axis::V, phase(shift_v))
    } else {
        g
    }
}

/// One-dimensional Lagrange stencil: nodes `start .. start + p` (unwrapped
/// indices) and their cardinal weights at the evaluation point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil1D {
    pub start: isize,
    pub w: [f64; MAX_INTERP_ORDER],
}

/// Stencil for a point at fractional index `x`: the `p` consecutive nodes
/// whose center is nearest `x`, ties toward the smaller index.
pub(crate) fn stencil_1d(x: f64, p: usize) -> Stencil1D {
    let rounded = x.round();
    let x = if (x - rounded).abs() <= 1e-12 * rounded.abs().max(1.0) { rounded } else { x };
    let start = (x - 0.5 * p as f64).ceil();
    let t = x - start;
    let mut w = [0.0; MAX_INTERP_ORDER];
    for (j, wj) in w.iter_mut().enumerate().take(p) {
        let mut num = 1.0;
        let mut den = 1.0;
        for m in 0..p {
            if m != j {
                num *= t - m as f64;
                den *= j as f64 - m as f64;
            }
        }
        *wj = num / den;
    }
    Stencil1D { start: start as isize, w }
}

#[inline]
pub(crate) fn wrap_index(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Tensor-product Lagrange interpolation of order `p` of a scalar function
/// on the unshifted grid `(2πi/Nu, 2πj/Nv)` at the given `(u, v)` targets.
pub fn lagrange_interp(f: &GridFunction, targets: &[(f64, f64)], p: usize) -> Result<Vec<f64>> {
    if f.ncomp != 1 {
        return Err(Error::Dimension("lagrange_interp expects a scalar function".into()));
    }
    if !(2..=MAX_INTERP_ORDER).contains(&p) || p > f.nu.min(f.nv) {
        return Err(precondition(format!(
            "interpolation order {p} must be in 2..=16 and at most min(Nu, Nv) = {}",
            f.nu.min(f.nv)
        )));
    }
    let (nu, nv) = (f.nu, f.nv);
    Ok(targets
        .iter()
        .map(|&(u, v)| {
            let su = stencil_1d(u / TAU * nu as f64, p);
            let sv = stencil_1d(v / TAU * nv as f64, p);
            interp_with(&f.data, nu, nv, &su, &sv, p)
        })
        .collect())
}

#[inline]
pub(crate) fn interp_with(data: &[f64], nu: usize, nv: usize, su: &Stencil1D, sv: &Stencil1D, p: usize) -> f64 {
    let mut acc = 0.0;
    for a in 0..p {
        let row = wrap_index(su.start + a as isize, nu) * nv;
        let mut inner = 0.0;
        for b in 0..p {
            inner += sv.w[b] * data[row + wrap_index(sv.start + b as isize, nv)];
        }
        acc += su.w[a] * inner;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{BuiltinSurface, FourierSurface, SurfaceGrid};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plain(nu: usize, nv: usize, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        let mut data = Vec::with_capacity(nu * nv);
        for i in 0..nu {
            for j in 0..nv {
                data.push(f(TAU * i as f64 / nu as f64, TAU * j as f64 / nv as f64));
            }
        }
        GridFunction::from_vec(nu, nv, 1, data).unwrap()
    }

    /// `I_0(1)` by its power series.
    fn bessel_i0_one() -> f64 {
        let (mut term, mut sum) = (1.0f64, 1.0f64);
        for k in 1..30 {
            term /= (4 * k * k) as f64;
            sum += term;
        }
        sum
    }

    // tolerances are relative to the integral
    #[test]
    fn trapezoid_values() {
        assert_abs_diff_eq!(trapezoid_integrate(&plain(16, 16, |_, _| 1.0)).unwrap(), 4.0 * PI * PI, epsilon = 1e-13 * 4.0 * PI * PI);
        assert_abs_diff_eq!(trapezoid_integrate(&plain(32, 32, |u, _| u.sin() + 2.0)).unwrap(), 8.0 * PI * PI, epsilon = 1e-13 * 8.0 * PI * PI);
        let e = trapezoid_integrate(&plain(64, 64, |u, _| u.cos().exp())).unwrap();
        assert_abs_diff_eq!(e, TAU * TAU * bessel_i0_one(), epsilon = 1e-13 * e);
    }

    #[test]
    fn gauss_legendre_rules() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!((r.nodes[0], r.weights[0]), (0.0, 2.0));
        let r = gauss_legendre(2).unwrap();
        assert_abs_diff_eq!(r.nodes[1], 0.5773502691896257, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes[0], -r.nodes[1], epsilon = 1e-16);
        let r = gauss_legendre(16).unwrap();
        assert_abs_diff_eq!(r.integrate(-1.0, 1.0, |x| x.powi(30)), 2.0 / 31.0, epsilon = 1e-14);
        for n in [3, 7, 12, 20, 32] {
            let r = gauss_legendre(n).unwrap();
            assert_abs_diff_eq!(r.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]) && r.weights.iter().all(|&w| w > 0.0));
            for d in 0..2 * n {
                let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d + 1) as f64 };
                assert_abs_diff_eq!(r.integrate(-1.0, 1.0, |x| x.powi(d as i32)), exact, epsilon = 1e-14);
            }
        }
        assert!(gauss_legendre(0).is_err());
    }

    #[test]
    fn fourier_derivatives() {
        let d = fourier_diff(&plain(32, 16, |u, _| (3.0 * u).sin()), Axis::U).unwrap();
        let want = plain(32, 16, |u, _| 3.0 * (3.0 * u).cos());
        assert!(d.max_abs_diff(&want) < 1e-12);
        let d = fourier_diff(&plain(16, 16, |_, _| 4.2), Axis::V).unwrap();
        assert!(d.max_abs() < 1e-15);
        let f = plain(64, 64, |u, v| (u + 2.0 * v).sin().exp());
        let want = plain(64, 64, |u, v| 2.0 * (u + 2.0 * v).cos() * (u + 2.0 * v).sin().exp());
        assert!(fourier_diff(&f, Axis::V).unwrap().max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn fourier_shift_is_translation() {
        let f = plain(24, 32, |u, v| (u - v).cos() + (2.0 * v).sin());
        let g = fourier_shift(&f, 0.5, 0.25);
        let want = plain(24, 32, |u, v| {
            let (u, v) = (u + 0.5 * TAU / 24.0, v + 0.25 * TAU / 32.0);
            (u - v).cos() + (2.0 * v).sin()
        });
        assert!(g.max_abs_diff(&want) < 1e-13);
    }

    #[test]
    fn lagrange_reproduces_polynomials_and_nodes() {
        let (nu, nv, p) = (24, 24, 6);
        let h = TAU / 24.0;
        // stencils around the middle of the grid do not wrap
        let poly = |u: f64, v: f64| {
            let (x, y) = (u - PI, v - PI);
            1.0 + x - 0.5 * y + x * x * y - 0.1 * x.powi(5) + 0.2 * y.powi(5) - x.powi(2) * y.powi(3)
        };
        let f = plain(nu, nv, poly);
        let targets = [(PI + 0.3 * h, PI - 0.2 * h), (PI - 0.45 * h, PI + 0.1 * h), (PI, PI + 0.5 * h)];
        let vals = lagrange_interp(&f, &targets, p).unwrap();
        for (t, v) in targets.iter().zip(vals) {
            assert!((v - poly(t.0, t.1)).abs() < 1e-12);
        }
        let exact = lagrange_interp(&f, &[(5.0 * h, 7.0 * h)], p).unwrap();
        assert_eq!(exact[0], f.at(0, 5 * nv + 7));
    }

    #[test]
    fn lagrange_analytic() {
        let f = plain(64, 64, |u, v| u.sin() * (2.0 * v).cos());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let targets: Vec<(f64, f64)> = (0..500).map(|_| (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU))).collect();
        let vals = lagrange_interp(&f, &targets, 12).unwrap();
        let worst = targets.iter().zip(&vals).map(|(t, v)| (v - t.0.sin() * (2.0 * t.1).cos()).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
        assert!(lagrange_interp(&f, &targets, 17).is_err());
    }

    #[test]
    fn grid_function_shapes() {
        let g = SurfaceGrid::new(&FourierSurface::builtin(BuiltinSurface::CircularTorus), 8, 12).unwrap();
        let f = GridFunction::from_nodes(&g, |k| k as f64);
        assert!(f.check_grid(&g, 1).is_ok() && f.check_grid(&g, 3).is_err());
        assert!(GridFunction::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        let v = GridFunction::from_vectors(&g, |k| g.normal[k]);
        assert_abs_diff_eq!(v.max_norm3(), 1.0, epsilon = 1e-14);
        assert_eq!(GridFunction::stack(&[f.clone(), f.clone()]).unwrap().ncomp(), 2);
    }

    proptest! {
        #[test]
        fn trapezoid_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1usize..5) {
            let f = plain(16, 20, |u, v| (k as f64 * u).cos() * v.sin());
            let g = plain(16, 20, |u, _| 1.0 + u.cos());
            let mut h = f.clone().scaled(a);
            h.axpy(b, &g);
            let lhs = trapezoid_integrate(&h).unwrap();
            let rhs = a * trapezoid_integrate(&f).unwrap() + b * trapezoid_integrate(&g).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn derivative_of_mode(m in 0i32..7, n in 0i32..7) {
            let f = plain(16, 16, |u, v| (m as f64 * u + n as f64 * v).sin());
            let want = plain(16, 16, |u, v| m as f64 * (m as f64 * u + n as f64 * v).cos());
            prop_assert!(fourier_diff(&f, Axis::U).unwrap().max_abs_diff(&want) < 1e-12);
        }
    }
}
