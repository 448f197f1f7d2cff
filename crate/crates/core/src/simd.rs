//! Hot loops of the dense sums: kernel rows and multi-shift dot products.
//!
//! With AVX-512 available at compile time the reciprocal square root is an
//! `rsqrt14` estimate refined by two Newton steps (about 2 ulp); otherwise
//! plain `sqrt` and division are used.

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod imp {
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn rsqrt(d2: __m512d) -> __m512d {
        let half = _mm512_mul_pd(_mm512_set1_pd(0.5), d2);
        let th = _mm512_set1_pd(1.5);
        let mut y = _mm512_rsqrt14_pd(d2);
        y = _mm512_mul_pd(y, _mm512_fnmadd_pd(half, _mm512_mul_pd(y, y), th));
        _mm512_mul_pd(y, _mm512_fnmadd_pd(half, _mm512_mul_pd(y, y), th))
    }

    #[inline(always)]
    unsafe fn sep(rt: [f64; 3], xs: &[f64], ys: &[f64], zs: &[f64], j: usize) -> [__m512d; 4] {
        let dx = _mm512_sub_pd(_mm512_set1_pd(rt[0]), _mm512_loadu_pd(xs.as_ptr().add(j)));
        let dy = _mm512_sub_pd(_mm512_set1_pd(rt[1]), _mm512_loadu_pd(ys.as_ptr().add(j)));
        let dz = _mm512_sub_pd(_mm512_set1_pd(rt[2]), _mm512_loadu_pd(zs.as_ptr().add(j)));
        let d2 = _mm512_fmadd_pd(dx, dx, _mm512_fmadd_pd(dy, dy, _mm512_mul_pd(dz, dz)));
        [dx, dy, dz, d2]
    }

    pub(super) fn single(rt: [f64; 3], xs: &[f64], ys: &[f64], zs: &[f64], ws: &[f64], out: &mut [f64]) -> usize {
        let k = out.len() / 8 * 8;
        let mut j = 0;
        // SAFETY: all slices have length >= out.len() >= j + 8 inside the loop.
        unsafe {
            while j < k {
                let [_, _, _, d2] = sep(rt, xs, ys, zs, j);
                let w = _mm512_loadu_pd(ws.as_ptr().add(j));
                _mm512_storeu_pd(out.as_mut_ptr().add(j), _mm512_mul_pd(w, rsqrt(d2)));
                j += 8;
            }
        }
        k
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn double(
        rt: [f64; 3],
        xs: &[f64],
        ys: &[f64],
        zs: &[f64],
        nx: &[f64],
        ny: &[f64],
        nz: &[f64],
        ws: &[f64],
        out: &mut [f64],
    ) -> usize {
        let k = out.len() / 8 * 8;
        let mut j = 0;
        // SAFETY: as in `single`.
        unsafe {
            while j < k {
                let [dx, dy, dz, d2] = sep(rt, xs, ys, zs, j);
                let num = _mm512_fmadd_pd(
                    _mm512_loadu_pd(nx.as_ptr().add(j)),
                    dx,
                    _mm512_fmadd_pd(
                        _mm512_loadu_pd(ny.as_ptr().add(j)),
                        dy,
                        _mm512_mul_pd(_mm512_loadu_pd(nz.as_ptr().add(j)), dz),
                    ),
                );
                let y = rsqrt(d2);
                let y3 = _mm512_mul_pd(y, _mm512_mul_pd(y, y));
                let w = _mm512_mul_pd(_mm512_loadu_pd(ws.as_ptr().add(j)), num);
                _mm512_storeu_pd(out.as_mut_ptr().add(j), _mm512_mul_pd(w, y3));
                j += 8;
            }
        }
        k
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn casing(
        rt: [f64; 3],
        nt: [f64; 3],
        xs: &[f64],
        ys: &[f64],
        zs: &[f64],
        ws: &[f64],
        o0: &mut [f64],
        o1: &mut [f64],
        o2: &mut [f64],
    ) -> usize {
        let k = o0.len() / 8 * 8;
        let mut j = 0;
        // SAFETY: as in `single`; the three outputs have equal length.
        unsafe {
            let (n0, n1, n2) = (_mm512_set1_pd(nt[0]), _mm512_set1_pd(nt[1]), _mm512_set1_pd(nt[2]));
            while j < k {
                let [dx, dy, dz, d2] = sep(rt, xs, ys, zs, j);
                let y = rsqrt(d2);
                let f = _mm512_mul_pd(_mm512_loadu_pd(ws.as_ptr().add(j)), _mm512_mul_pd(y, _mm512_mul_pd(y, y)));
                let c0 = _mm512_fmsub_pd(dy, n2, _mm512_mul_pd(dz, n1));
                let c1 = _mm512_fmsub_pd(dz, n0, _mm512_mul_pd(dx, n2));
                let c2 = _mm512_fmsub_pd(dx, n1, _mm512_mul_pd(dy, n0));
                _mm512_storeu_pd(o0.as_mut_ptr().add(j), _mm512_mul_pd(c0, f));
                _mm512_storeu_pd(o1.as_mut_ptr().add(j), _mm512_mul_pd(c1, f));
                _mm512_storeu_pd(o2.as_mut_ptr().add(j), _mm512_mul_pd(c2, f));
                j += 8;
            }
        }
        k
    }

    /// `out[k] += Σ_j b[j] x_k[j]` for up to [`WIDTH`](super::WIDTH) rows
    /// `x_k`, each at least `b.len()` long.
    pub(super) fn multi_dot(b: &[f64], xs: &[&[f64]], out: &mut [f64]) -> usize {
        match xs.len() {
            1 => fixed::<1>(b, xs, out),
            2 => fixed::<2>(b, xs, out),
            3 => fixed::<3>(b, xs, out),
            4 => fixed::<4>(b, xs, out),
            5 => fixed::<5>(b, xs, out),
            6 => fixed::<6>(b, xs, out),
            7 => fixed::<7>(b, xs, out),
            8 => fixed::<8>(b, xs, out),
            9 => fixed::<9>(b, xs, out),
            10 => fixed::<10>(b, xs, out),
            11 => fixed::<11>(b, xs, out),
            12 => fixed::<12>(b, xs, out),
            _ => unreachable!("at most 12 rows per call"),
        }
    }

    #[inline(always)]
    fn fixed<const M: usize>(b: &[f64], xs: &[&[f64]], out: &mut [f64]) -> usize {
        let n = b.len();
        let k = n / 8 * 8;
        assert!(xs.len() == M && out.len() >= M && xs.iter().all(|x| x.len() >= n));
        let ptrs: [*const f64; M] = std::array::from_fn(|q| xs[q].as_ptr());
        // SAFETY: every row has at least n elements and j + 8 <= k <= n.
        unsafe {
            let mut acc = [_mm512_setzero_pd(); M];
            let mut j = 0;
            while j < k {
                let bv = _mm512_loadu_pd(b.as_ptr().add(j));
                for q in 0..M {
                    acc[q] = _mm512_fmadd_pd(bv, _mm512_loadu_pd(ptrs[q].add(j)), acc[q]);
                }
                j += 8;
            }
            for q in 0..M {
                out[q] += _mm512_reduce_add_pd(acc[q]);
            }
        }
        k
    }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
mod imp {
    pub(super) fn single(_: [f64; 3], _: &[f64], _: &[f64], _: &[f64], _: &[f64], _: &mut [f64]) -> usize {
        0
    }
    #[allow(clippy::too_many_arguments)]
    pub(super) fn double(
        _: [f64; 3],
        _: &[f64],
        _: &[f64],
        _: &[f64],
        _: &[f64],
        _: &[f64],
        _: &[f64],
        _: &[f64],
        _: &mut [f64],
    ) -> usize {
        0
    }
    #[allow(clippy::too_many_arguments)]
    pub(super) fn casing(
        _: [f64; 3],
        _: [f64; 3],
        _: &[f64],
        _: &[f64],
        _: &[f64],
        _: &[f64],
        _: &mut [f64],
        _: &mut [f64],
        _: &mut [f64],
    ) -> usize {
        0
    }
    pub(super) fn multi_dot(_: &[f64], _: &[&[f64]], _: &mut [f64]) -> usize {
        0
    }
}

/// Rows per pass of the vector multi-dot.
const WIDTH: usize = 12;

/// `out[j] = w[j] / |rt - s_j|`.
pub(crate) fn row_single(rt: [f64; 3], xs: &[f64], ys: &[f64], zs: &[f64], ws: &[f64], out: &mut [f64]) {
    let k = imp::single(rt, xs, ys, zs, ws, out);
    for j in k..out.len() {
        let dx = rt[0] - xs[j];
        let dy = rt[1] - ys[j];
        let dz = rt[2] - zs[j];
        out[j] = ws[j] / (dx * dx + dy * dy + dz * dz).sqrt();
    }
}

/// `out[j] = w[j] n_j·(rt - s_j) / |rt - s_j|^3`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn row_double(
    rt: [f64; 3],
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    nx: &[f64],
    ny: &[f64],
    nz: &[f64],
    ws: &[f64],
    out: &mut [f64],
) {
    let k = imp::double(rt, xs, ys, zs, nx, ny, nz, ws, out);
    for j in k..out.len() {
        let dx = rt[0] - xs[j];
        let dy = rt[1] - ys[j];
        let dz = rt[2] - zs[j];
        let d2 = dx * dx + dy * dy + dz * dz;
        out[j] = ws[j] * (nx[j] * dx + ny[j] * dy + nz[j] * dz) / (d2 * d2.sqrt());
    }
}

/// `o_c[j] = w[j] ((rt - s_j) × nt)_c / |rt - s_j|^3`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn row_casing(
    rt: [f64; 3],
    nt: [f64; 3],
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    ws: &[f64],
    o0: &mut [f64],
    o1: &mut [f64],
    o2: &mut [f64],
) {
    let k = imp::casing(rt, nt, xs, ys, zs, ws, o0, o1, o2);
    for j in k..o0.len() {
        let dx = rt[0] - xs[j];
        let dy = rt[1] - ys[j];
        let dz = rt[2] - zs[j];
        let d2 = dx * dx + dy * dy + dz * dz;
        let f = ws[j] / (d2 * d2.sqrt());
        o0[j] = (dy * nt[2] - dz * nt[1]) * f;
        o1[j] = (dz * nt[0] - dx * nt[2]) * f;
        o2[j] = (dx * nt[1] - dy * nt[0]) * f;
    }
}

/// `out[k] += Σ_j b[j] x_k[j]` for any number of rows, each at least
/// `b.len()` long.
pub(crate) fn multi_dot(b: &[f64], xs: &[&[f64]], out: &mut [f64]) {
    for (chunk, o) in xs.chunks(WIDTH).zip(out.chunks_mut(WIDTH)) {
        let k = imp::multi_dot(b, chunk, o);
        if k < b.len() {
            for (x, acc) in chunk.iter().zip(o.iter_mut()) {
                let mut t = 0.0;
                for j in k..b.len() {
                    t += b[j] * x[j];
                }
                *acc += t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_match_scalar_formulas() {
        let n = 37;
        let f = |k: usize, a: f64| (0..n).map(|j| ((j * k) as f64 * 0.37 + a).sin() + 2.0).collect::<Vec<f64>>();
        let (xs, ys, zs, ws) = (f(1, 0.1), f(2, 0.2), f(3, 0.3), f(4, 0.4));
        let (nx, ny, nz) = (f(5, 0.5), f(6, 0.6), f(7, 0.7));
        let rt = [-1.0, 0.5, 3.0];
        let nt = [0.6, 0.0, 0.8];
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let (mut c0, mut c1, mut c2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        row_single(rt, &xs, &ys, &zs, &ws, &mut a);
        row_double(rt, &xs, &ys, &zs, &nx, &ny, &nz, &ws, &mut b);
        row_casing(rt, nt, &xs, &ys, &zs, &ws, &mut c0, &mut c1, &mut c2);
        for j in 0..n {
            let d = [rt[0] - xs[j], rt[1] - ys[j], rt[2] - zs[j]];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((a[j] - ws[j] / r).abs() < 1e-15 * a[j].abs());
            let dl = ws[j] * (nx[j] * d[0] + ny[j] * d[1] + nz[j] * d[2]) / (r * r * r);
            assert!((b[j] - dl).abs() < 1e-15 * dl.abs().max(1e-3));
            let cz = ws[j] * (d[0] * nt[1] - d[1] * nt[0]) / (r * r * r);
            assert!((c2[j] - cz).abs() < 1e-15 * cz.abs().max(1e-3));
        }
    }

    #[test]
    fn multi_dot_matches_naive() {
        let b: Vec<f64> = (0..45).map(|j| (j as f64 * 0.3).cos()).collect();
        let rows: Vec<Vec<f64>> = (0..11).map(|k| (0..50).map(|j| ((j + k) as f64 * 0.7).sin()).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[k_off(r)..]).collect();
        let mut out = vec![1.0; 11];
        multi_dot(&b, &refs, &mut out);
        for (k, r) in refs.iter().enumerate() {
            let want: f64 = 1.0 + b.iter().zip(r.iter()).map(|(x, y)| x * y).sum::<f64>();
            assert!((out[k] - want).abs() < 1e-13);
        }
    }

    fn k_off(r: &[f64]) -> usize {
        (r[0].to_bits() % 5) as usize
    }
}
