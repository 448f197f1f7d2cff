//! Pointwise singular kernels and Biot-Savart line integrals over closed
//! current loops.
//!
//! Apart from [`laplace_sl`], kernels are returned without their `1/4π` or
//! `1/2π` prefactors; callers scale according to the integral they assemble.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{add, cross, dot, norm, scale, sub, Vec3};

/// Vacuum permeability in SI units. Internally `μ0 = 1`.
pub const MU0_SI: f64 = 4.0e-7 * PI;

#[inline]
fn separation(r: Vec3, r_src: Vec3) -> Result<(Vec3, f64)> {
    let d = sub(r, r_src);
    let dist = norm(d);
    if dist == 0.0 {
        return Err(Error::Coincident);
    }
    Ok((d, dist))
}

/// `1 / (4π |r - r_src|)`.
pub fn laplace_sl(r: Vec3, r_src: Vec3) -> Result<f64> {
    let (_, dist) = separation(r, r_src)?;
    Ok(1.0 / (4.0 * PI * dist))
}

/// `n_src · (r - r_src) / |r - r_src|^3`.
pub fn laplace_dl(r: Vec3, r_src: Vec3, n_src: Vec3) -> Result<f64> {
    let (d, dist) = separation(r, r_src)?;
    Ok(dot(n_src, d) / (dist * dist * dist))
}

/// `n_r · [nxb × (r - r_src)] / |r - r_src|^3`, the virtual-casing normal
/// field integrand.
pub fn casing_bn_kernel(r: Vec3, n_r: Vec3, r_src: Vec3, nxb: Vec3) -> Result<f64> {
    let (d, dist) = separation(r, r_src)?;
    Ok(dot(n_r, cross(nxb, d)) / (dist * dist * dist))
}

/// `nxb / |r - r_src|`, the surface vector-potential integrand.
pub fn vecpot_kernel(r: Vec3, r_src: Vec3, nxb: Vec3) -> Result<Vec3> {
    let (_, dist) = separation(r, r_src)?;
    Ok(scale(nxb, 1.0 / dist))
}

/// One Fourier line of a loop curve: the coefficients of `cos(kt)` and
/// `sin(kt)` for each Cartesian coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMode {
    pub k: u32,
    pub xc: f64,
    pub xs: f64,
    pub yc: f64,
    pub ys: f64,
    pub zc: f64,
    pub zs: f64,
}

/// Closed filament `γ(t)`, `t ∈ [0, 2π)`, carrying a current, sampled at
/// `samples` equispaced parameter values for the line integral.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentLoop {
    current: f64,
    modes: Vec<LoopMode>,
    points: Vec<Vec3>,
    tangents: Vec<Vec3>,
}

pub const DEFAULT_LOOP_SAMPLES: usize = 1024;

impl CurrentLoop {
    pub fn new(current: f64, modes: Vec<LoopMode>, samples: usize) -> Result<Self> {
        if samples < 16 {
            return Err(Error::Invalid(format!("loops need at least 16 samples, got {samples}")));
        }
        if !current.is_finite() {
            return Err(Error::Invalid("loop current must be finite".into()));
        }
        let mut lp = Self { current, modes, points: Vec::new(), tangents: Vec::new() };
        for m in 0..samples {
            let t = TAU * m as f64 / samples as f64;
            let (p, dp) = lp.eval(t);
            if norm(dp) == 0.0 {
                return Err(Error::Invalid(format!("loop tangent vanishes at t = {t}")));
            }
            lp.points.push(p);
            lp.tangents.push(dp);
        }
        Ok(lp)
    }

    /// Circle of the given radius about `axis` through `center`; the current
    /// circulates right-handedly about `axis`.
    pub fn circle(center: Vec3, axis: Vec3, radius: f64, current: f64) -> Result<Self> {
        let a = scale(axis, 1.0 / norm(axis));
        let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let e1 = {
            let t = cross(helper, a);
            scale(t, 1.0 / norm(t))
        };
        let e2 = cross(a, e1);
        let modes = vec![
            LoopMode { k: 0, xc: center[0], xs: 0.0, yc: center[1], ys: 0.0, zc: center[2], zs: 0.0 },
            LoopMode {
                k: 1,
                xc: radius * e1[0],
                xs: radius * e2[0],
                yc: radius * e1[1],
                ys: radius * e2[1],
                zc: radius * e1[2],
                zs: radius * e2[2],
            },
        ];
        Self::new(current, modes, DEFAULT_LOOP_SAMPLES)
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn modes(&self) -> &[LoopMode] {
        &self.modes
    }

    pub fn samples(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Same curve with another current.
    pub fn with_current(&self, current: f64) -> Self {
        Self { current, ..self.clone() }
    }

    /// Same curve with another sample count.
    pub fn resampled(&self, samples: usize) -> Result<Self> {
        Self::new(self.current, self.modes.clone(), samples)
    }

    /// `γ(t)` and `γ'(t)`.
    pub fn eval(&self, t: f64) -> (Vec3, Vec3) {
        let mut p = [0.0; 3];
        let mut dp = [0.0; 3];
        for md in &self.modes {
            let k = md.k as f64;
            let (s, c) = (k * t).sin_cos();
            p = add(p, [md.xc * c + md.xs * s, md.yc * c + md.ys * s, md.zc * c + md.zs * s]);
            dp = add(
                dp,
                scale([-md.xc * s + md.xs * c, -md.yc * s + md.ys * c, -md.zc * s + md.zs * c], k),
            );
        }
        (p, dp)
    }

    /// Smallest distance from `r` to the sampled curve.
    pub fn distance_to(&self, r: Vec3) -> f64 {
        self.points.iter().map(|p| norm(sub(r, *p))).fold(f64::INFINITY, f64::min)
    }
}

/// `(μ0 I / 4π) ∮ dl' × (r - r') / |r - r'|^3` by the trapezoidal rule in
/// the loop parameter, with `μ0 = 1`.
pub fn biot_savart_loop(lp: &CurrentLoop, r: Vec3) -> Result<Vec3> {
    let mut b = [0.0; 3];
    let mut dmin = f64::INFINITY;
    for (p, dl) in lp.points.iter().zip(&lp.tangents) {
        let d = sub(r, *p);
        let dist = norm(d);
        dmin = dmin.min(dist);
        b = add(b, scale(cross(*dl, d), 1.0 / (dist * dist * dist)));
    }
    if !(dmin > 1e-10) {
        return Err(Error::TargetOnLoop(dmin));
    }
    let w = TAU / lp.samples() as f64;
    Ok(scale(b, lp.current * w / (4.0 * PI)))
}

/// Default manufactured-field loop pair for a surface of major radius `R0`
/// and minor radius `a`: a toroidal ring of radius `R0` in `z = 0` inside
/// the surface, and a circle of radius `1.5a` centred at `(R0 + 3a, 0, 0)`
/// in the plane `x = R0 + 3a` outside it. Both carry unit current.
pub fn default_loops(major: f64, minor: f64) -> Result<(CurrentLoop, CurrentLoop)> {
    let inner = CurrentLoop::circle([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], major, 1.0)?;
    let outer = CurrentLoop::circle([major + 3.0 * minor, 0.0, 0.0], [1.0, 0.0, 0.0], 1.5 * minor, 1.0)?;
    Ok((inner, outer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_values() {
        let v = laplace_sl([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]).unwrap();
        assert!((v - 0.07957747154594767).abs() < 1e-17);
        let v2 = laplace_sl([2.0, 0.0, 0.0], [0.0, 0.0, 0.0]).unwrap();
        assert!((v2 - v / 2.0).abs() < 1e-17);
        assert_eq!(laplace_dl([0.0, 0.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(laplace_dl([1.0, 0.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap(), 0.0);
        let c = casing_bn_kernel([0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0; 3], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(c, 1.0);
        let a = vecpot_kernel([2.0, 0.0, 0.0], [0.0; 3], [1.0, -2.0, 4.0]).unwrap();
        assert_eq!(a, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn coincident_points_rejected() {
        assert!(matches!(laplace_sl([1.0; 3], [1.0; 3]), Err(Error::Coincident)));
        assert!(laplace_dl([1.0; 3], [1.0; 3], [1.0, 0.0, 0.0]).is_err());
        assert!(casing_bn_kernel([1.0; 3], [1.0, 0.0, 0.0], [1.0; 3], [0.0, 1.0, 0.0]).is_err());
        assert!(vecpot_kernel([1.0; 3], [1.0; 3], [0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn homogeneity_under_rescaling() {
        let (r, s, n, j) = ([0.3, -0.2, 0.9], [1.1, 0.4, -0.5], [0.0, 0.6, 0.8], [0.2, 0.7, -0.1]);
        let k = 3.0;
        let sc = |x: Vec3| scale(x, k);
        let ratio = laplace_sl(sc(r), sc(s)).unwrap() / laplace_sl(r, s).unwrap();
        assert!((ratio - 1.0 / k).abs() < 1e-14);
        let ratio = laplace_dl(sc(r), sc(s), n).unwrap() / laplace_dl(r, s, n).unwrap();
        assert!((ratio - 1.0 / (k * k)).abs() < 1e-14);
        let ratio = casing_bn_kernel(sc(r), n, sc(s), j).unwrap() / casing_bn_kernel(r, n, s, j).unwrap();
        assert!((ratio - 1.0 / (k * k)).abs() < 1e-14);
        let ratio = vecpot_kernel(sc(r), sc(s), j).unwrap()[0] / vecpot_kernel(r, s, j).unwrap()[0];
        assert!((ratio - 1.0 / k).abs() < 1e-14);
    }

    #[test]
    fn loop_center_and_axis() {
        let a = 0.7;
        let lp = CurrentLoop::circle([0.0; 3], [0.0, 0.0, 1.0], a, 1.0).unwrap();
        let b = biot_savart_loop(&lp, [0.0; 3]).unwrap();
        assert!((b[2] - 1.0 / (2.0 * a)).abs() < 1e-12);
        assert!(b[0].abs() < 1e-14 && b[1].abs() < 1e-14);
        for z in [0.1, 0.5, 2.0] {
            let b = biot_savart_loop(&lp, [0.0, 0.0, z]).unwrap();
            let exact = a * a / (2.0 * (a * a + z * z).powf(1.5));
            assert!((b[2] - exact).abs() < 1e-12 * exact.max(1.0));
        }
    }

    #[test]
    fn loop_far_field_is_dipolar() {
        let a = 0.5;
        let lp = CurrentLoop::circle([0.0; 3], [0.0, 0.0, 1.0], a, 1.0).unwrap();
        let m = [0.0, 0.0, PI * a * a];
        for d in [5.0, 20.0] {
            let r = [d * 0.6, 0.0, d * 0.8];
            let b = biot_savart_loop(&lp, r).unwrap();
            let rh = scale(r, 1.0 / d);
            let dip = scale(sub(scale(rh, 3.0 * dot(m, rh)), m), 1.0 / (4.0 * PI * d * d * d));
            let rel = norm(sub(b, dip)) / norm(dip);
            assert!(rel <= 10.0 * (a / d).powi(2), "d={d} rel={rel}");
        }
    }

    #[test]
    fn loop_target_on_curve() {
        let lp = CurrentLoop::circle([0.0; 3], [0.0, 0.0, 1.0], 1.0, 1.0).unwrap();
        assert!(matches!(biot_savart_loop(&lp, [1.0, 0.0, 0.0]), Err(Error::TargetOnLoop(_))));
        assert!(CurrentLoop::new(1.0, lp.modes().to_vec(), 8).is_err());
    }

    #[test]
    fn loop_resolution_and_divergence() {
        let (_, outer) = default_loops(2.0, 0.5).unwrap();
        let r = [2.6, 0.3, 0.2];
        let b1 = biot_savart_loop(&outer, r).unwrap();
        let b2 = biot_savart_loop(&outer.resampled(2048).unwrap(), r).unwrap();
        assert!(norm(sub(b1, b2)) < 1e-12 * norm(b1));
        let h = 1e-4 * 0.75;
        let mut div = 0.0;
        for c in 0..3 {
            let mut rp = r;
            let mut rm = r;
            rp[c] += h;
            rm[c] -= h;
            div += (biot_savart_loop(&outer, rp).unwrap()[c] - biot_savart_loop(&outer, rm).unwrap()[c]) / (2.0 * h);
        }
        assert!(div.abs() <= 1e-6 * norm(b1));
    }
}
