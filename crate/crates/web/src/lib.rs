//! Browser bindings: cutoff profiles, the Green's identity residual on a
//! surface grid, and its convergence under refinement.

use layerpot::geom::builtin_surface;
use layerpot::physics::{greens_identity_error, greens_identity_map, Scheme};
use layerpot::{CutoffShape, PouConfig, SurfaceGrid};
use wasm_bindgen::prelude::*;

fn js(e: layerpot::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn scheme(name: &str) -> Result<Scheme, JsError> {
    name.parse().map_err(js)
}

/// `n` samples of the cutoff on `[0, 1]`.
#[wasm_bindgen]
pub fn cutoff_profile(shape: &str, x0: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let shape: CutoffShape = shape.parse().map_err(js)?;
    let n = n.max(2);
    Ok((0..n).map(|k| shape.eval(k as f64 / (n - 1) as f64, x0)).collect())
}

/// `log10 |e|` of the Green's identity residual at every node, `i*nv + j`.
#[wasm_bindgen]
pub fn greens_error_map(surface: &str, scheme_name: &str, nu: usize, nv: usize) -> Result<Vec<f64>, JsError> {
    let surface = builtin_surface(surface).map_err(js)?;
    let grid = SurfaceGrid::new(&surface, nu, nv).map_err(js)?;
    let e = greens_identity_map(&grid, scheme(scheme_name)?, &PouConfig::default()).map_err(js)?;
    Ok(e.data().iter().map(|v| v.abs().max(1e-17).log10()).collect())
}

/// Max residual for each `nu` in `nus`, with `nv = aspect * nu`.
#[wasm_bindgen]
pub fn greens_convergence(surface: &str, scheme_name: &str, nus: Vec<usize>, aspect: usize) -> Result<Vec<f64>, JsError> {
    let surface = builtin_surface(surface).map_err(js)?;
    let s = scheme(scheme_name)?;
    let cfg = PouConfig::default();
    nus.iter()
        .map(|&nu| {
            let grid = SurfaceGrid::new(&surface, nu, aspect * nu).map_err(js)?;
            greens_identity_error(&grid, s, &cfg).map_err(js)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_ends() {
        let p = cutoff_profile("bump", 0.3, 11).unwrap();
        assert_eq!(p.len(), 11);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[10].abs() < 1e-15);
    }

    #[test]
    fn error_map_shape() {
        let m = greens_error_map("torus", "merkel_stag", 8, 24).unwrap();
        assert_eq!(m.len(), 8 * 24);
        assert!(m.iter().all(|v| v.is_finite() && *v < 0.0));
    }

    #[test]
    fn merkel_converges() {
        let e = greens_convergence("torus", "merkel_nostag", vec![8, 16], 4).unwrap();
        assert!(e[1] < e[0] / 3.0);
    }
}
