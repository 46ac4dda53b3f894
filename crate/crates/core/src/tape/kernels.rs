//! Raw loops behind the convolution and padding ops.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Output positions `t` with `0 <= t * stride + off < t_in`, clipped to `t_out`.
#[inline]
fn valid_range(off: isize, stride: usize, t_in: usize, t_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (((-off) + s - 1) / s).min(t_out as isize) };
    let room = t_in as isize - off;
    let hi = if room <= 0 { 0 } else { ((room - 1) / s + 1).min(t_out as isize) };
    (lo as usize, hi.max(lo) as usize)
}

fn view2<T>(buf: &[T], rows: usize, cols: usize, transposed: bool) -> ArrayView2<'_, T> {
    if transposed {
        ArrayView2::from_shape((cols, rows), &buf[..rows * cols])
            .expect("gemm operand")
            .reversed_axes()
    } else {
        ArrayView2::from_shape((rows, cols), &buf[..rows * cols]).expect("gemm operand")
    }
}

/// `c = a · b + beta · c` on row-major buffers. With `ta` (`tb`) set, `a`
/// (`b`) is stored transposed, i.e. as `[k, m]` (`[n, k]`).
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, beta: T, c: &mut [T]) {
    if m == 0 || n == 0 {
        return;
    }
    let av = view2(a, m, k, ta);
    let bv = view2(b, k, n, tb);
    let mut cv = ArrayViewMut2::from_shape((m, n), &mut c[..m * n]).expect("gemm output");
    general_mat_mul(T::one(), &av, &bv, beta, &mut cv);
}

/// Fills `cols` (`[cin_g * kernel, t_out]`) with the input taps seen by every
/// output position of group `grp` of batch row `b`; out-of-range taps are zero.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, b: usize, grp: usize, cols: &mut [T]) {
    let cin_g = g.cin / g.groups;
    for ci in 0..cin_g {
        let x_row = &x[(b * g.cin + grp * cin_g + ci) * g.t_in..][..g.t_in];
        for k in 0..g.kernel {
            let dst = &mut cols[(ci * g.kernel + k) * g.t_out..][..g.t_out];
            let off = (k * g.dilation) as isize - g.padding as isize;
            let (lo, hi) = valid_range(off, g.stride, g.t_in, g.t_out);
            dst[..lo].fill(T::zero());
            dst[hi..].fill(T::zero());
            if lo < hi {
                let start = (lo as isize * g.stride as isize + off) as usize;
                if g.stride == 1 {
                    dst[lo..hi].copy_from_slice(&x_row[start..start + (hi - lo)]);
                } else {
                    for (d, &v) in dst[lo..hi].iter_mut().zip(x_row[start..].iter().step_by(g.stride)) {
                        *d = v;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back onto the input rows.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, b: usize, grp: usize, gx: &mut [T]) {
    let cin_g = g.cin / g.groups;
    for ci in 0..cin_g {
        let gx_row = &mut gx[(b * g.cin + grp * cin_g + ci) * g.t_in..][..g.t_in];
        for k in 0..g.kernel {
            let src = &cols[(ci * g.kernel + k) * g.t_out..][..g.t_out];
            let off = (k * g.dilation) as isize - g.padding as isize;
            let (lo, hi) = valid_range(off, g.stride, g.t_in, g.t_out);
            if lo < hi {
                let start = (lo as isize * g.stride as isize + off) as usize;
                for (d, &v) in gx_row[start..].iter_mut().step_by(g.stride).zip(&src[lo..hi]) {
                    *d += v;
                }
            }
        }
    }
}

/// `x: [B, Cin, T_in]`, `w: [Cout, Cin / groups, K]`, lowered to one matrix
/// product per batch row and group.
pub(crate) fn conv1d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let cout_g = g.cout / g.groups;
    let kk = (g.cin / g.groups) * g.kernel;
    let mut out = vec![T::zero(); g.batch * g.cout * g.t_out];
    let mut cols = vec![T::zero(); kk * g.t_out];
    for b in 0..g.batch {
        for grp in 0..g.groups {
            im2col(x, g, b, grp, &mut cols);
            let co0 = grp * cout_g;
            let block = &mut out[(b * g.cout + co0) * g.t_out..][..cout_g * g.t_out];
            if let Some(bias) = bias {
                for (row, &bv) in block.chunks_mut(g.t_out).zip(&bias[co0..co0 + cout_g]) {
                    row.fill(bv);
                }
            }
            let wg = &w[co0 * kk..(co0 + cout_g) * kk];
            gemm(cout_g, kk, g.t_out, wg, false, &cols, false, T::one(), block);
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Vec<T>>,
    pub w: Option<Vec<T>>,
    pub b: Option<Vec<T>>,
}

pub(crate) fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let cout_g = g.cout / g.groups;
    let kk = (g.cin / g.groups) * g.kernel;
    let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut gb = need.2.then(|| vec![T::zero(); g.cout]);
    let mut cols = vec![T::zero(); kk * g.t_out];
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let co0 = grp * cout_g;
            let g_block = &gout[(b * g.cout + co0) * g.t_out..][..cout_g * g.t_out];
            if let Some(gb) = gb.as_mut() {
                for (d, row) in gb[co0..co0 + cout_g].iter_mut().zip(g_block.chunks(g.t_out)) {
                    *d += row.iter().copied().sum::<T>();
                }
            }
            if let Some(gw) = gw.as_mut() {
                im2col(x, g, b, grp, &mut cols);
                let gwg = &mut gw[co0 * kk..(co0 + cout_g) * kk];
                gemm(cout_g, g.t_out, kk, g_block, false, &cols, true, T::one(), gwg);
            }
            if let Some(gx) = gx.as_mut() {
                let wg = &w[co0 * kk..(co0 + cout_g) * kk];
                gemm(kk, cout_g, g.t_out, wg, true, g_block, false, T::zero(), &mut cols);
                col2im(&cols, g, b, grp, gx);
            }
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}

/// Input positions `t` with `0 <= t * stride + off < t_out`.
#[inline]
fn transpose_range(off: isize, stride: usize, t_in: usize, t_out: usize) -> (usize, usize) {
    // Same arithmetic as the forward conv with roles of the two lengths swapped.
    valid_range(off, stride, t_out, t_in)
}

/// `x: [B, Cin, T]`, `w: [Cin, Cout, K]`; `out[t*s + k - p] += x[t] * w[k]`.
///
/// Computes every (output channel, tap) product with one matrix product per
/// batch row, then overlap-adds the taps into place.
pub(crate) fn conv_transpose1d_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let ck = g.cout * g.kernel;
    let mut out = vec![T::zero(); g.batch * g.cout * g.t_out];
    let mut cols = vec![T::zero(); ck * g.t_in];
    for b in 0..g.batch {
        let xb = &x[b * g.cin * g.t_in..][..g.cin * g.t_in];
        gemm(ck, g.cin, g.t_in, w, true, xb, false, T::zero(), &mut cols);
        for co in 0..g.cout {
            let out_row = &mut out[(b * g.cout + co) * g.t_out..][..g.t_out];
            if let Some(bias) = bias {
                out_row.fill(bias[co]);
            }
            for k in 0..g.kernel {
                let src = &cols[(co * g.kernel + k) * g.t_in..][..g.t_in];
                let off = k as isize - g.padding as isize;
                let (lo, hi) = transpose_range(off, g.stride, g.t_in, g.t_out);
                if lo < hi {
                    let start = (lo as isize * g.stride as isize + off) as usize;
                    for (d, &v) in out_row[start..].iter_mut().step_by(g.stride).zip(&src[lo..hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_transpose1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let ck = g.cout * g.kernel;
    let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut gb = need.2.then(|| vec![T::zero(); g.cout]);
    let mut cols = vec![T::zero(); ck * g.t_in];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let g_row = &gout[(b * g.cout + co) * g.t_out..][..g.t_out];
            if let Some(gb) = gb.as_mut() {
                gb[co] += g_row.iter().copied().sum::<T>();
            }
            for k in 0..g.kernel {
                let dst = &mut cols[(co * g.kernel + k) * g.t_in..][..g.t_in];
                let off = k as isize - g.padding as isize;
                let (lo, hi) = transpose_range(off, g.stride, g.t_in, g.t_out);
                dst[..lo].fill(T::zero());
                dst[hi..].fill(T::zero());
                if lo < hi {
                    let start = (lo as isize * g.stride as isize + off) as usize;
                    for (d, &v) in dst[lo..hi].iter_mut().zip(g_row[start..].iter().step_by(g.stride)) {
                        *d = v;
                    }
                }
            }
        }
        let xb = &x[b * g.cin * g.t_in..][..g.cin * g.t_in];
        if let Some(gw) = gw.as_mut() {
            gemm(g.cin, g.t_in, ck, xb, false, &cols, true, T::one(), gw);
        }
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx[b * g.cin * g.t_in..][..g.cin * g.t_in];
            gemm(g.cin, ck, g.t_in, w, false, &cols, false, T::zero(), gxb);
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}

/// Source index of padded position `j` under reflect padding (no edge repeat).
#[inline]
pub(crate) fn reflect_index(j: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = j;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_covers_exactly_in_bounds_positions() {
        for off in -7isize..7 {
            for stride in 1..4 {
                for t_in in 1..9 {
                    let t_out = 10;
                    let (lo, hi) = valid_range(off, stride, t_in, t_out);
                    for t in 0..t_out {
                        let j = (t * stride) as isize + off;
                        let inside = j >= 0 && j < t_in as isize;
                        assert_eq!(inside, t >= lo && t < hi, "off={off} s={stride} t_in={t_in} t={t}");
                    }
                }
            }
        }
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    /// Direct-sum convolution: `out[b, co, t] = Σ w[co, ci, k] · x[b, grp·cin_g + ci, t·s + k·d - p]`.
    fn direct_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (cin_g, cout_g) = (g.cin / g.groups, g.cout / g.groups);
        let mut out = vec![0.0; g.batch * g.cout * g.t_out];
        for b in 0..g.batch {
            for co in 0..g.cout {
                for t in 0..g.t_out {
                    let mut acc = 0.0;
                    for ci in 0..cin_g {
                        for k in 0..g.kernel {
                            let j = (t * g.stride + k * g.dilation) as isize - g.padding as isize;
                            if j >= 0 && (j as usize) < g.t_in {
                                let xi = (b * g.cin + (co / cout_g) * cin_g + ci) * g.t_in + j as usize;
                                acc += w[(co * cin_g + ci) * g.kernel + k] * x[xi];
                            }
                        }
                    }
                    out[(b * g.cout + co) * g.t_out + t] = acc;
                }
            }
        }
        out
    }

    fn direct_conv_transpose(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.cout * g.t_out];
        for b in 0..g.batch {
            for ci in 0..g.cin {
                for co in 0..g.cout {
                    for t in 0..g.t_in {
                        for k in 0..g.kernel {
                            let j = (t * g.stride + k) as isize - g.padding as isize;
                            if j >= 0 && (j as usize) < g.t_out {
                                out[(b * g.cout + co) * g.t_out + j as usize] +=
                                    x[(b * g.cin + ci) * g.t_in + t] * w[(ci * g.cout + co) * g.kernel + k];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum()
    }

    fn geometries() -> Vec<ConvGeom> {
        let mut v = Vec::new();
        for &(groups, stride, dilation, kernel, padding) in
            &[(1, 1, 1, 3, 1), (2, 2, 1, 5, 2), (1, 3, 2, 3, 0), (4, 2, 1, 5, 2), (1, 1, 3, 3, 3), (1, 1, 1, 1, 0)]
        {
            let (cin, cout, t_in) = (4, 8, 23);
            let span = (kernel - 1) * dilation + 1;
            let t_out = (t_in + 2 * padding - span) / stride + 1;
            v.push(ConvGeom { batch: 2, cin, cout, t_in, t_out, kernel, stride, dilation, padding, groups });
        }
        v
    }

    #[test]
    fn lowered_conv_matches_direct_sum_and_its_adjoints() {
        let mut seed = 1;
        for g in geometries() {
            let x: Vec<f64> = (0..g.batch * g.cin * g.t_in).map(|_| lcg(&mut seed)).collect();
            let w: Vec<f64> = (0..g.cout * (g.cin / g.groups) * g.kernel).map(|_| lcg(&mut seed)).collect();
            let gout: Vec<f64> = (0..g.batch * g.cout * g.t_out).map(|_| lcg(&mut seed)).collect();
            let y = conv1d_forward(&x, &w, None, &g);
            let want = direct_conv(&x, &w, &g);
            assert!(y.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), "{g:?}");
            // The conv is bilinear, so <gout, conv(x, w)> = <gx, x> = <gw, w>.
            let grads = conv1d_backward(&x, &w, &gout, &g, (true, true, true));
            let lhs = dot(&gout, &y);
            assert!((dot(&grads.x.unwrap(), &x) - lhs).abs() < 1e-10, "{g:?}");
            assert!((dot(&grads.w.unwrap(), &w) - lhs).abs() < 1e-10, "{g:?}");
        }
    }

    #[test]
    fn lowered_transpose_conv_matches_direct_sum_and_its_adjoints() {
        let mut seed = 2;
        for &(stride, kernel, padding) in &[(1, 3, 1), (2, 4, 1), (4, 8, 2), (3, 3, 0)] {
            let (cin, cout, t_in) = (3, 5, 11);
            let t_out = (t_in - 1) * stride + kernel - 2 * padding;
            let g = ConvGeom { batch: 2, cin, cout, t_in, t_out, kernel, stride, dilation: 1, padding, groups: 1 };
            let x: Vec<f64> = (0..2 * cin * t_in).map(|_| lcg(&mut seed)).collect();
            let w: Vec<f64> = (0..cin * cout * kernel).map(|_| lcg(&mut seed)).collect();
            let gout: Vec<f64> = (0..2 * cout * t_out).map(|_| lcg(&mut seed)).collect();
            let y = conv_transpose1d_forward(&x, &w, None, &g);
            let want = direct_conv_transpose(&x, &w, &g);
            assert!(y.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), "{g:?}");
            let grads = conv_transpose1d_backward(&x, &w, &gout, &g, (true, true, true));
            let lhs = dot(&gout, &y);
            assert!((dot(&grads.x.unwrap(), &x) - lhs).abs() < 1e-10, "{g:?}");
            assert!((dot(&grads.w.unwrap(), &w) - lhs).abs() < 1e-10, "{g:?}");
        }
    }

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        let idx: Vec<usize> = (-3..8).map(|j| reflect_index(j, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }
}
