//! Matrix-free GMRES and the exterior Neumann solve.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::geom::SurfaceGrid;
use crate::grid::GridFunction;
use crate::quad_pou::{layer_potential_eval, LayerKernel, PouConfig, PouOperator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmresConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100 }
    }
}

impl GmresConfig {
    pub fn new(tol: f64, max_iter: usize) -> Result<Self> {
        let c = Self { tol, max_iter };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(precondition(format!("GMRES tolerance {} must lie in (0, 1)", self.tol)));
        }
        if !(1..=500).contains(&self.max_iter) {
            return Err(precondition(format!("GMRES max_iter {} must lie in 1..=500", self.max_iter)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Relative residual after each iteration.
    pub history: Vec<f64>,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// GMRES without restarts from a zero initial guess. Arnoldi uses modified
/// Gram-Schmidt with one re-orthogonalization pass; the small least-squares
/// problem is updated with Givens rotations.
pub fn gmres<F>(mut apply: F, rhs: &GridFunction, cfg: &GmresConfig) -> Result<(GridFunction, SolveReport)>
where
    F: FnMut(&GridFunction) -> Result<GridFunction>,
{
    cfg.validate()?;
    let n = rhs.data().len();
    let beta = norm2(rhs.data());
    let mut x = GridFunction::from_vec(rhs.nu(), rhs.nv(), rhs.ncomp(), vec![0.0; n])?;
    if beta == 0.0 {
        return Ok((x, SolveReport { iterations: 0, final_residual: 0.0, converged: true, history: vec![] }));
    }
    let m = cfg.max_iter;
    let mut basis: Vec<Vec<f64>> = vec![rhs.data().iter().map(|v| v / beta).collect()];
    let mut hess: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<(f64, f64)> = Vec::new();
    let mut g = vec![beta];
    let mut history = Vec::new();
    let mut resid = 1.0;
    let mut k = 0;
    while k < m {
        let vk = GridFunction::from_vec(rhs.nu(), rhs.nv(), rhs.ncomp(), basis[k].clone())?;
        let w = apply(&vk)?;
        if w.data().len() != n {
            return Err(Error::Dimension("operator changed the vector length".into()));
        }
        let mut w = w.into_data();
        let mut h = vec![0.0; k + 2];
        for _pass in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = dotp(&w, q);
                h[i] += c;
                w.iter_mut().zip(q).for_each(|(wv, qv)| *wv -= c * qv);
            }
        }
        let hn = norm2(&w);
        h[k + 1] = hn;
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a, b) = (h[i], h[i + 1]);
            h[i] = c * a + s * b;
            h[i + 1] = -s * a + c * b;
        }
        let (a, b) = (h[k], h[k + 1]);
        let r = a.hypot(b);
        let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
        h[k] = r;
        h[k + 1] = 0.0;
        cs.push((c, s));
        let gk = g[k];
        g[k] = c * gk;
        g.push(-s * gk);
        hess.push(h);
        k += 1;
        resid = g[k].abs() / beta;
        history.push(resid);
        if resid <= cfg.tol {
            break;
        }
        if hn < 1e-300 {
            break;
        }
        basis.push(w.iter().map(|v| v / hn).collect());
    }
    // Back substitution for the Krylov coefficients.
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for j in i + 1..k {
            acc -= hess[j][i] * y[j];
        }
        y[i] = if hess[i][i] != 0.0 { acc / hess[i][i] } else { 0.0 };
    }
    {
        let xd = x.data_mut();
        for (j, yj) in y.iter().enumerate() {
            xd.iter_mut().zip(&basis[j]).for_each(|(xv, qv)| *xv += yj * qv);
        }
    }
    let converged = resid <= cfg.tol;
    let report = SolveReport { iterations: k, final_residual: resid, converged, history };
    if !converged && k < m {
        return Err(Error::SolverFailure { iterations: k, residual: resid });
    }
    Ok((x, report))
}

/// Solve `Φ - (1/2π) DL[Φ] = -(1/2π) SL[bn]` on the grid, with both layer
/// potentials by the partition-of-unity scheme.
pub fn solve_exterior_neumann(
    grid: &SurfaceGrid,
    bn: &GridFunction,
    qcfg: &PouConfig,
    gcfg: &GmresConfig,
) -> Result<(GridFunction, SolveReport)> {
    bn.check_grid(grid, 1)?;
    let rhs = layer_potential_eval(grid, bn, LayerKernel::SingleLayer, qcfg, -1.0 / (2.0 * PI))?;
    let dl = PouOperator::new(grid, LayerKernel::DoubleLayer, qcfg)?;
    gmres(|phi| neumann_apply(&dl, phi), &rhs, gcfg)
}

/// `Φ - (1/2π) DL[Φ]`.
pub fn neumann_apply(dl: &PouOperator<'_>, phi: &GridFunction) -> Result<GridFunction> {
    let mut out = phi.clone();
    out.axpy(-1.0 / (2.0 * PI), &dl.apply(phi)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_operator() {
        let rhs = GridFunction::from_vec(2, 3, 1, vec![1.0, -2.0, 3.0, 0.5, 4.0, 1.0]).unwrap();
        let (x, rep) = gmres(|v| Ok(v.clone()), &rhs, &GmresConfig::new(1e-12, 10).unwrap()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!(x.max_abs_diff(&rhs) < 1e-15);
    }

    #[test]
    fn diagonal_operator() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rhs = GridFunction::from_vec(1, 5, 1, b.clone()).unwrap();
        let op = |v: &GridFunction| {
            let d: Vec<f64> = v.data().iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).collect();
            GridFunction::from_vec(1, 5, 1, d)
        };
        let (x, rep) = gmres(op, &rhs, &GmresConfig::new(1e-12, 20).unwrap()).unwrap();
        assert!(rep.iterations <= 5);
        for i in 0..5 {
            assert!((x.data()[i] - b[i] / (i + 1) as f64).abs() < 1e-11);
        }
        for w in rep.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_rhs_and_bad_config() {
        let rhs = GridFunction::zeros(2, 2, 1);
        let (x, rep) = gmres(|v| Ok(v.clone()), &rhs, &GmresConfig::default()).unwrap();
        assert!(rep.converged && x.max_abs() == 0.0);
        assert!(GmresConfig::new(0.0, 10).is_err());
        assert!(GmresConfig::new(1e-3, 0).is_err());
        assert!(GmresConfig::new(1e-3, 501).is_err());
    }

    #[test]
    fn max_iter_not_converged() {
        let rhs = GridFunction::from_vec(1, 4, 1, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let op = |v: &GridFunction| {
            let d: Vec<f64> = v.data().iter().enumerate().map(|(i, x)| (1.0 + 10.0 * i as f64) * x).collect();
            GridFunction::from_vec(1, 4, 1, d)
        };
        let (_, rep) = gmres(op, &rhs, &GmresConfig::new(1e-12, 2).unwrap()).unwrap();
        assert!(!rep.converged && rep.iterations == 2);
    }
}
