//! Dense trapezoidal evaluation of surface kernels on grid targets, reusing
//! the discrete toroidal symmetry of the grid.
//!
//! For a target `t` in the first symmetry block and a rotation `q`, the
//! target `t + qS` (in v-index) sees the source set rotated by `q` blocks,
//! so the kernel row computed once for `t` serves all `nv/S` rotations with
//! the density shifted by `qS` columns. Kernel rows are built one source row
//! at a time to stay in cache.

use crate::geom::SurfaceGrid;
use crate::grid::GridFunction;
use crate::par;
use crate::simd;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Kern {
    /// `1/|d|`, applied to each density component.
    Single,
    /// `n_s·d/|d|^3`, applied to each density component.
    Double,
    /// `n_t·(J×d)/|d|^3` for a 3-component density `J`; scalar output.
    Casing,
}

impl Kern {
    /// Number of kernel components per source.
    pub(crate) fn parts(self) -> usize {
        match self {
            Kern::Casing => 3,
            _ => 1,
        }
    }

    pub(crate) fn out_comps(self, density_comps: usize) -> usize {
        match self {
            Kern::Casing => 1,
            _ => density_comps,
        }
    }

    /// Kernel components at one source point for target `(rt, nt)`.
    #[inline]
    pub(crate) fn eval(self, rt: Vec3, nt: Vec3, rs: Vec3, ns: Vec3, out: &mut [f64; 3]) {
        let d = [rt[0] - rs[0], rt[1] - rs[1], rt[2] - rs[2]];
        let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let inv = 1.0 / d2.sqrt();
        match self {
            Kern::Single => out[0] = inv,
            Kern::Double => out[0] = (ns[0] * d[0] + ns[1] * d[1] + ns[2] * d[2]) * inv * inv * inv,
            Kern::Casing => {
                let i3 = inv * inv * inv;
                out[0] = (d[1] * nt[2] - d[2] * nt[1]) * i3;
                out[1] = (d[2] * nt[0] - d[0] * nt[2]) * i3;
                out[2] = (d[0] * nt[1] - d[1] * nt[0]) * i3;
            }
        }
    }
}

/// Precomputed local correction for one first-block target: weights on the
/// `(2h+1)^2` box of grid nodes around it, one slab per kernel component.
#[derive(Clone, Debug, Default)]
pub(crate) struct NearWeights {
    pub h: usize,
    pub parts: usize,
    pub w: Vec<f64>,
}

impl NearWeights {
    pub(crate) fn zeros(h: usize, parts: usize) -> Self {
        let side = 2 * h + 1;
        Self { h, parts, w: vec![0.0; parts * side * side] }
    }

    #[inline]
    pub(crate) fn side(&self) -> usize {
        2 * self.h + 1
    }

    #[inline]
    pub(crate) fn add(&mut self, part: usize, a: isize, b: isize, val: f64) {
        let side = self.side() as isize;
        let h = self.h as isize;
        let k = part as isize * side * side + (a + h) * side + (b + h);
        self.w[k as usize] += val;
    }
}

/// Local correction for [`Engine::apply`]: cached weights indexed by
/// position in [`Engine::reps`], or a builder called with the block target.
#[derive(Clone, Copy)]
pub(crate) enum Near<'n> {
    None,
    Cached(&'n [NearWeights]),
    Build(&'n (dyn Fn(usize, &mut NearWeights) + Sync)),
}

/// Source node data in structure-of-arrays form.
struct Sources {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    nx: Vec<f64>,
    ny: Vec<f64>,
    nz: Vec<f64>,
    w: Vec<f64>,
}

impl Sources {
    fn new(grid: &SurfaceGrid) -> Self {
        let cell = grid.cell();
        Self {
            x: grid.pos.iter().map(|p| p[0]).collect(),
            y: grid.pos.iter().map(|p| p[1]).collect(),
            z: grid.pos.iter().map(|p| p[2]).collect(),
            nx: grid.normal.iter().map(|p| p[0]).collect(),
            ny: grid.normal.iter().map(|p| p[1]).collect(),
            nz: grid.normal.iter().map(|p| p[2]).collect(),
            w: grid.area.iter().map(|g| g * cell).collect(),
        }
    }
}

/// Index maps of the half-turn `(u, v) -> (-u, -v)` on the source grid.
struct Mirror {
    si: Vec<usize>,
    sj: Vec<usize>,
}

impl Mirror {
    fn new(targets: &SurfaceGrid, sources: &SurfaceGrid) -> Option<Self> {
        if !targets.surface().is_stellarator_symmetric() || targets.shift() != (0.0, 0.0) {
            return None;
        }
        let map = |n: usize, s: f64| -> Option<Vec<usize>> {
            if s == 0.0 {
                Some((0..n).map(|i| (n - i) % n).collect())
            } else if s == 0.5 {
                Some((0..n).map(|i| n - 1 - i).collect())
            } else {
                None
            }
        };
        let (su, sv) = sources.shift();
        Some(Self { si: map(sources.nu(), su)?, sj: map(sources.nv(), sv)? })
    }

    /// `σ(-u, -v)`, with vectors turned by the half-turn `diag(1, -1, -1)`.
    fn density(&self, f: &GridFunction, vector: bool) -> GridFunction {
        let (nu, nv) = (f.nu(), f.nv());
        let mut out = GridFunction::zeros(nu, nv, f.ncomp());
        for c in 0..f.ncomp() {
            let sign = if vector && c > 0 { -1.0 } else { 1.0 };
            let src = f.comp(c);
            let dst = out.comp_mut(c);
            for i in 0..nu {
                for j in 0..nv {
                    dst[i * nv + j] = sign * src[self.si[i] * nv + self.sj[j]];
                }
            }
        }
        out
    }
}

pub(crate) struct Engine<'a> {
    targets: &'a SurfaceGrid,
    src: Sources,
    kern: Kern,
    skip_self: bool,
    shift: usize,
    mirror: Option<Mirror>,
    reps: Vec<usize>,
}

impl<'a> Engine<'a> {
    /// `sources` must have the same dimensions and surface as `targets`;
    /// it may be displaced (staggered). `skip_self` drops the coincident
    /// source of each target.
    pub(crate) fn new(targets: &'a SurfaceGrid, sources: &SurfaceGrid, kern: Kern, skip_self: bool) -> Self {
        Self::build(targets, sources, kern, skip_self, true)
    }

    fn build(targets: &'a SurfaceGrid, sources: &SurfaceGrid, kern: Kern, skip_self: bool, use_mirror: bool) -> Self {
        debug_assert_eq!((targets.nu(), targets.nv()), (sources.nu(), sources.nv()));
        let shift = targets.symmetry_shift();
        let mirror = if use_mirror { Mirror::new(targets, sources) } else { None };
        let nu = targets.nu();
        let reps = (0..nu * shift)
            .filter(|&t0| mirror.is_none() || t0 <= mirror_block(t0, nu, shift))
            .collect();
        Self { targets, src: Sources::new(sources), kern, skip_self, shift, mirror, reps }
    }

    pub(crate) fn shift(&self) -> usize {
        self.shift
    }

    pub(crate) fn rotations(&self) -> usize {
        self.targets.nv() / self.shift
    }

    /// Number of first-block targets, indexed `i*S + j`.
    #[cfg(test)]
    pub(crate) fn block_len(&self) -> usize {
        self.targets.nu() * self.shift
    }

    /// Grid indices of first-block target `t0`.
    pub(crate) fn block_target(&self, t0: usize) -> (usize, usize) {
        (t0 / self.shift, t0 % self.shift)
    }

    /// First-block targets whose rows are actually computed; under the
    /// half-turn symmetry the others are mirror images of these.
    pub(crate) fn reps(&self) -> &[usize] {
        &self.reps
    }

    /// Evaluate at every target, adding the local correction `near` if any.
    pub(crate) fn apply(&self, density: &GridFunction, near: Near<'_>) -> GridFunction {
        let nu = self.targets.nu();
        let nv = self.targets.nv();
        let nc = density.ncomp();
        let m = self.rotations();
        let sh = self.shift;
        let outc = self.kern.out_comps(nc);
        if self.kern == Kern::Casing {
            assert_eq!(nc, 3, "casing kernel needs a 3-component density");
        }
        let mirrored = self.mirror.as_ref().map(|mr| mr.density(density, self.kern == Kern::Casing));
        let lanes = Lanes::new(self, density, mirrored.as_ref());

        let per_rep = par::map_init(
            self.reps.len(),
            || (vec![0.0; self.kern.parts() * nv], NearWeights::default()),
            |(buf, scratch), k| {
                let t0 = self.reps[k];
                let (it, jt) = self.block_target(t0);
                let variants = if self.mirror.is_some() && mirror_block(t0, nu, sh) != t0 { 2 } else { 1 };
                let mut raw = vec![0.0; lanes.raw_len()];
                self.far_rows(it, jt, &lanes, variants, buf, &mut raw);
                match near {
                    Near::None => {}
                    Near::Cached(all) => self.near_sum(it, jt, &lanes, variants, &all[k], &mut raw),
                    Near::Build(f) => {
                        f(t0, scratch);
                        self.near_sum(it, jt, &lanes, variants, scratch, &mut raw);
                    }
                }
                (0..variants).map(|v| lanes.combine(&raw, v)).collect::<Vec<_>>()
            },
        );

        let mut result = GridFunction::zeros(nu, nv, outc);
        let data = result.data_mut();
        let n = nu * nv;
        for (&t0, vals) in self.reps.iter().zip(&per_rep) {
            let (it, jt) = self.block_target(t0);
            for q in 0..m {
                let k = it * nv + jt + q * sh;
                let km = ((nu - it) % nu) * nv + (2 * nv - jt - q * sh) % nv;
                for (v, out) in vals.iter().enumerate() {
                    let k = if v == 0 { k } else { km };
                    for c in 0..outc {
                        data[c * n + k] = out[q * outc + c];
                    }
                }
            }
        }
        result
    }

    fn far_rows(&self, it: usize, jt: usize, lanes: &Lanes, variants: usize, buf: &mut [f64], raw: &mut [f64]) {
        let nu = self.targets.nu();
        let nv = self.targets.nv();
        let parts = self.kern.parts();
        let tk = it * nv + jt;
        let rt = self.targets.pos[tk];
        let nt = self.targets.normal[tk];
        let s = &self.src;
        let mut rows: Vec<&[f64]> = Vec::with_capacity(lanes.raw_len());
        for i in 0..nu {
            let r = i * nv..(i + 1) * nv;
            let (xs, ys, zs, ws) = (&s.x[r.clone()], &s.y[r.clone()], &s.z[r.clone()], &s.w[r.clone()]);
            match self.kern {
                Kern::Single => simd::row_single(rt, xs, ys, zs, ws, &mut buf[..nv]),
                Kern::Double => {
                    let (nx, ny, nz) = (&s.nx[r.clone()], &s.ny[r.clone()], &s.nz[r.clone()]);
                    simd::row_double(rt, xs, ys, zs, nx, ny, nz, ws, &mut buf[..nv]);
                }
                Kern::Casing => {
                    let (b0, rest) = buf.split_at_mut(nv);
                    let (b1, b2) = rest.split_at_mut(nv);
                    simd::row_casing(rt, nt, xs, ys, zs, ws, b0, b1, &mut b2[..nv]);
                }
            }
            if self.skip_self && i == it {
                for p in 0..parts {
                    buf[p * nv + jt] = 0.0;
                }
            }
            for p in 0..parts {
                rows.clear();
                for v in 0..variants {
                    rows.extend(lanes.entries(p).iter().map(|&(l, sh)| &lanes.row(v, l, i)[sh..sh + nv]));
                }
                simd::multi_dot(&buf[p * nv..(p + 1) * nv], &rows, &mut lanes.out(raw, p)[..rows.len()]);
            }
        }
    }

    fn near_sum(&self, it: usize, jt: usize, lanes: &Lanes, variants: usize, nw: &NearWeights, raw: &mut [f64]) {
        let nu = self.targets.nu() as isize;
        let nv = self.targets.nv();
        let side = nw.side();
        let h = nw.h as isize;
        for p in 0..self.kern.parts() {
            for a in 0..side {
                let i = (it as isize + a as isize - h).rem_euclid(nu) as usize;
                let wrow = &nw.w[(p * side + a) * side..(p * side + a + 1) * side];
                let ent = lanes.entries(p);
                let o = lanes.out(raw, p);
                for v in 0..variants {
                    for (k, &(l, sh)) in ent.iter().enumerate() {
                        let j0 = (jt + sh) as isize - h;
                        o[v * ent.len() + k] += wrapped_dot(wrow, lanes.row(v, l, i), j0, nv);
                    }
                }
            }
        }
    }
}

/// Block index of the mirror image of first-block target `t0`.
fn mirror_block(t0: usize, nu: usize, shift: usize) -> usize {
    let (i, j) = (t0 / shift, t0 % shift);
    ((nu - i) % nu) * shift + (shift - j) % shift
}

/// Density rows stored twice over (`[row, row]`) so every cyclic shift is a
/// contiguous slice, and the table of (lane, shift) dot products each
/// kernel part needs. Variant 1 holds the mirrored density.
///
/// The casing density is kept in the global frame: the rotation by `q`
/// blocks only mixes x and y, so it is applied to the five dots
/// `b0·Jx, b0·Jy, b1·Jx, b1·Jy, b2·Jz` afterwards.
struct Lanes {
    data: Vec<f64>,
    nu: usize,
    nv: usize,
    nlanes: usize,
    table: Vec<Vec<(usize, usize)>>,
    /// Start of each part's dots in `raw`: both variants, contiguous.
    offsets: Vec<usize>,
    casing: bool,
    m: usize,
    alpha: f64,
}

impl Lanes {
    fn new(engine: &Engine<'_>, density: &GridFunction, mirrored: Option<&GridFunction>) -> Self {
        let (nu, nv) = (density.nu(), density.nv());
        let m = engine.rotations();
        let sh = engine.shift;
        let nc = density.ncomp();
        let casing = engine.kern == Kern::Casing;
        let mut data = Vec::with_capacity((1 + mirrored.is_some() as usize) * nc * 2 * nu * nv);
        for f in std::iter::once(density).chain(mirrored) {
            for c in 0..nc {
                for r in f.comp(c).chunks_exact(nv) {
                    data.extend_from_slice(r);
                    data.extend_from_slice(r);
                }
            }
        }
        let table: Vec<Vec<(usize, usize)>> = if casing {
            let xy: Vec<(usize, usize)> = (0..m).flat_map(|q| [(0, q * sh), (1, q * sh)]).collect();
            vec![xy.clone(), xy, (0..m).map(|q| (2, q * sh)).collect()]
        } else {
            vec![(0..m).flat_map(|q| (0..nc).map(move |c| (c, q * sh))).collect()]
        };
        let mut offsets = vec![0];
        for t in &table {
            offsets.push(offsets.last().unwrap() + 2 * t.len());
        }
        Self {
            data,
            nu,
            nv,
            nlanes: nc,
            table,
            offsets,
            casing,
            m,
            alpha: std::f64::consts::TAU * sh as f64 / nv as f64,
        }
    }

    #[inline]
    fn entries(&self, p: usize) -> &[(usize, usize)] {
        &self.table[p]
    }

    /// Variant `v`, lane `l`, source row `i`, doubled (length `2 nv`).
    #[inline]
    fn row(&self, v: usize, l: usize, i: usize) -> &[f64] {
        let w = 2 * self.nv;
        let k = ((v * self.nlanes + l) * self.nu + i) * w;
        &self.data[k..k + w]
    }

    fn raw_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Dots of part `p`: variant 0 entries, then variant 1.
    #[inline]
    fn out<'r>(&self, raw: &'r mut [f64], p: usize) -> &'r mut [f64] {
        &mut raw[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Outputs `[q * ncomp + c]` (scalar kernels) or `[q]` (casing) of variant `v` from the raw dots.
    fn combine(&self, raw: &[f64], v: usize) -> Vec<f64> {
        let part = |p: usize| {
            let len = self.table[p].len();
            &raw[self.offsets[p] + v * len..self.offsets[p] + (v + 1) * len]
        };
        if !self.casing {
            return part(0).to_vec();
        }
        let (r0, r1, r2) = (part(0), part(1), part(2));
        (0..self.m)
            .map(|q| {
                let (s, c) = (q as f64 * self.alpha).sin_cos();
                c * (r0[2 * q] + r1[2 * q + 1]) + s * (r0[2 * q + 1] - r1[2 * q]) + r2[q]
            })
            .collect()
    }
}

/// `Σ_b w[b] x[(j0 + b) mod n]` over a doubled row `x` of length `2n`.
#[inline]
fn wrapped_dot(w: &[f64], x: &[f64], j0: isize, n: usize) -> f64 {
    let start = j0.rem_euclid(n as isize) as usize;
    if start + w.len() <= x.len() {
        dot(w, &x[start..start + w.len()])
    } else {
        w.iter().enumerate().map(|(b, &wb)| wb * x[(start + b) % n]).sum()
    }
}

/// Dot product with a fixed blocked summation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
